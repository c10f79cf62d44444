#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "fedmark/commands.hpp"
#include "fedmark/error.hpp"
#include "fedmark/kernels.hpp"

namespace fedmark::cli {

namespace fs = std::filesystem;

void write_file_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string resolve_out_dir(const std::optional<std::string>& flag, const std::string& from_config) {
    if (flag && !flag->empty()) return *flag;
    if (!from_config.empty()) return from_config;
    if (const char* env = std::getenv("FEDMARK_OUT"); env && *env) return env;
    return "fedmark_out";
}

namespace {

std::string csv_number(double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
}

exp::ExperimentConfig load_or_default(const std::optional<std::string>& path) {
    if (path) return exp::load_config(*path);
    exp::ExperimentConfig cfg;
    cfg.validate();
    return cfg;
}

}  // namespace

int cmd_simulate(const SimulateOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        exp::ExperimentConfig cfg = load_or_default(opts.config);
        if (opts.seed) cfg.seed = *opts.seed;
        if (opts.stage) {
            if (*opts.stage == "full") cfg.stages = exp::StageSelection::full;
            else if (*opts.stage == "pretrain-only") cfg.stages = exp::StageSelection::pretrain_only;
            else if (*opts.stage == "unsupervised") cfg.stages = exp::StageSelection::unsupervised;
            else throw ConfigError("--stage: expected full, pretrain-only or unsupervised, got \"" + *opts.stage + "\"");
        }
        if (opts.workers < 1) throw ConfigError("--workers must be >= 1");
        kernels::set_worker_count(opts.workers);
        const std::string dir = resolve_out_dir(opts.out, cfg.out_dir);

        const auto result = exp::run_three_stage(cfg);
        const fs::path base(dir);
        write_file_atomic((base / "config.effective.toml").string(), exp::dump_config(cfg));
        write_file_atomic((base / "round_times.csv").string(), exp::round_times_csv(result));
        write_file_atomic((base / "trace.csv").string(), result.trace_csv);
        write_file_atomic((base / "failures.csv").string(), result.failures_csv);
        std::ostringstream groups;
        groups << "subject_id,group\n";
        for (const auto& d : result.detections) {
            groups << d.node_id << ',' << data::to_string(d.group) << '\n';
            std::ostringstream det;
            det << "t_s,class_idx\n";
            for (std::size_t i = 0; i < d.t_s.size(); ++i) det << csv_number(d.t_s[i]) << ',' << d.predicted[i] << '\n';
            write_file_atomic((base / "detections" / (d.node_id + ".csv")).string(), det.str());
        }
        write_file_atomic((base / "groups.csv").string(), groups.str());
        // Written last: its presence marks a complete run.
        write_file_atomic((base / "metrics.jsonl").string(), exp::metrics_jsonl(result));

        const auto& s = result.summary;
        out << "pretrained-only accuracy  " << s.pretrained_only << '\n'
            << "supervised-only accuracy  " << s.supervised_only << '\n'
            << "after unsupervised FL     " << s.after_unsupervised << '\n'
            << "three-stage accuracy      " << s.three_stage << '\n';
        if (cfg.imbalance_ablation)
            out << "tail accuracy balanced+KD " << s.balanced_tail << " vs plain " << s.plain_tail << '\n';
        out << "metrics written to " << (base / "metrics.jsonl").string() << '\n';
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "simulate failed: " << e.what() << '\n';
        return 1;
    }
}

int cmd_analyze(const AnalyzeOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        const ActivityTable table =
            opts.activity_table ? ActivityTable::load(*opts.activity_table) : ActivityTable::desk_default();
        const auto groups = bio::parse_groups_csv(read_file(opts.groups_file), opts.groups_file);
        if (groups.empty()) throw DataError(opts.groups_file + ": no subjects listed");
        bio::ExtractConfig ex;
        ex.sample_period_s = opts.sample_period_s;
        std::vector<bio::BiomarkerFeatureRow> rows;
        for (const auto& [id, group] : groups) {
            const std::string path = (fs::path(opts.detections_dir) / (id + ".csv")).string();
            const auto timeline = bio::parse_detections_csv(read_file(path), path);
            for (const auto& d : timeline)
                if (d.class_idx > table.classes())
                    throw DataError(path + ": class index " + std::to_string(d.class_idx) + " exceeds the table's " +
                                    std::to_string(table.classes()) + " classes");
            rows.push_back(bio::extract_features(id, group, timeline, table.classes(), ex));
        }
        const auto report = bio::analyze_cohort(rows, table.class_names, opts.settings);

        const fs::path base(resolve_out_dir(opts.out, ""));
        write_file_atomic((base / "features.csv").string(), bio::features_csv(report));
        write_file_atomic((base / "anova.csv").string(), bio::anova_csv(report));
        write_file_atomic((base / "levene.csv").string(), bio::levene_csv(report));
        for (const auto& d : report.diagnoses)
            write_file_atomic((base / ("confusion_" + std::string(bio::to_string(d.task)) + ".json")).string(),
                              bio::confusion_json(d));
        nlohmann::ordered_json summary;
        std::vector<std::string> critical;
        for (const auto& t : report.tests)
            if (t.critical) critical.push_back(t.name);
        summary["subjects"] = report.rows.size();
        summary["alpha"] = opts.settings.alpha;
        summary["critical_features"] = critical;
        summary["levene_mean_p"] = report.levene_mean_p;
        nlohmann::ordered_json acc = nlohmann::ordered_json::object();
        for (const auto& d : report.diagnoses) acc[std::string(bio::to_string(d.task))] = d.accuracy;
        summary["diagnosis_accuracy"] = acc;
        summary["skipped_tasks"] = report.skipped_tasks;
        summary["warnings"] = report.warnings;
        write_file_atomic((base / "analysis_summary.json").string(), summary.dump(2) + "\n");

        out << "critical features (p < " << opts.settings.alpha << "):";
        for (const auto& c : critical) out << ' ' << c;
        out << (critical.empty() ? " none\n" : "\n");
        out << "Levene mean p " << report.levene_mean_p << '\n';
        for (const auto& d : report.diagnoses) out << "diagnosis " << bio::to_string(d.task) << " accuracy " << d.accuracy << '\n';
        for (const auto& w : report.warnings) err << "warning: " << w << '\n';
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "analyze failed: " << e.what() << '\n';
        return 1;
    }
}

int cmd_netsim(const NetsimOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        exp::ExperimentConfig cfg = load_or_default(opts.config);
        if (opts.seed) cfg.seed = *opts.seed;
        if (!(opts.hours > 0.0)) throw ConfigError("--hours must be > 0");
        if (opts.compute_s < 0.0) throw ConfigError("--compute must be >= 0");
        const std::size_t nodes = opts.nodes ? opts.nodes : cfg.cohort.subjects;
        double payload = 0.0;
        if (opts.payload_bytes) {
            if (*opts.payload_bytes < 0.0) throw ConfigError("--payload-bytes must be >= 0");
            payload = *opts.payload_bytes;
        } else {
            fl::ModelSpec spec = cfg.model;
            spec.classes = cfg.activity_table.empty() ? ActivityTable::desk_default().classes()
                                                      : ActivityTable::load(cfg.activity_table).classes();
            std::mt19937_64 shape_only(0);
            payload = static_cast<double>(fl::payload_bytes(fl::ModelBundle::init(spec, shape_only), true));
        }
        const double horizon = opts.hours * 3600.0;
        std::mt19937_64 trng(cfg.seed);
        const sim::BandwidthTrace trace(cfg.trace, horizon, trng());

        std::ostringstream rounds;
        rounds.precision(17);
        rounds << "round,start_s,hour,period,completion_s\n";
        double night_sum = 0.0, day_sum = 0.0;
        std::size_t night_n = 0, day_n = 0;
        sim::RoundConfig rc = cfg.network;
        rc.broadcast_bytes = payload;
        std::size_t r = 0;
        for (double start = cfg.start_hour * 3600.0; start < cfg.start_hour * 3600.0 + horizon;
             start += cfg.round_interval_s) {
            std::vector<sim::NodeRoundInput> inputs;
            for (std::size_t i = 0; i < nodes; ++i) {
                std::ostringstream id;
                id << "node" << (i < 10 ? "0" : "") << i;
                inputs.push_back({id.str(), opts.compute_s, payload});
            }
            const auto t = sim::simulate_round(inputs, trace, start, rc);
            const double hour = std::fmod(start, 86400.0) / 3600.0;
            const bool day = hour >= cfg.trace.day_start_h && hour < cfg.trace.day_end_h;
            (day ? day_sum : night_sum) += t.completion_s;
            (day ? day_n : night_n) += 1;
            rounds << ++r << ',' << start << ',' << hour << ',' << (day ? "day" : "night") << ',' << t.completion_s << '\n';
        }
        const double ratio = (night_n && day_n) ? (night_sum / static_cast<double>(night_n)) /
                                                      (day_sum / static_cast<double>(day_n))
                                                : std::nan("");

        const fs::path base(resolve_out_dir(opts.out, cfg.out_dir));
        write_file_atomic((base / "netsim_trace.csv").string(),
                          sim::trace_csv(trace, cfg.start_hour * 3600.0, cfg.start_hour * 3600.0 + horizon,
                                         cfg.trace.resolution_s));
        write_file_atomic((base / "netsim_rounds.csv").string(), rounds.str());
        nlohmann::ordered_json summary;
        summary["payload_bytes"] = payload;
        summary["nodes"] = nodes;
        summary["rounds"] = r;
        summary["night_rounds"] = night_n;
        summary["day_rounds"] = day_n;
        summary["night_day_round_time_ratio"] = std::isfinite(ratio) ? nlohmann::ordered_json(ratio) : nullptr;
        write_file_atomic((base / "netsim_summary.json").string(), summary.dump(2) + "\n");
        out << "rounds " << r << ", payload " << payload << " bytes\n"
            << "night/day mean round time ratio " << ratio << '\n';
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "netsim failed: " << e.what() << '\n';
        return 1;
    }
}

std::string pipeline_table(const sim::PipelineSpec& spec) {
    const double seq = sim::pipeline_throughput(spec, sim::PipelineMode::sequential);
    const double pipe = sim::pipeline_throughput(spec, sim::PipelineMode::pipelined);
    std::ostringstream o;
    o.precision(6);
    o << std::fixed << "mode,fps\nsequential," << seq << "\npipelined," << pipe << "\nratio," << pipe / seq << '\n';
    return o.str();
}

int cmd_pipeline(const PipelineOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        opts.spec.validate();
        const std::string table = pipeline_table(opts.spec);
        out << table;
        if (opts.out) write_file_atomic((fs::path(*opts.out) / "pipeline.csv").string(), table);
        return 0;
    } catch (const std::exception& e) {
        err << "pipeline: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace fedmark::cli
