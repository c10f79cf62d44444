#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "fedmark/commands.hpp"
#include "fedmark/error.hpp"
#include "fedmark/kernels.hpp"
#include "fedmark_checks.hpp"

namespace {

std::vector<double> split_doubles(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw CLI::ValidationError("--pre", "not a number: \"" + item + "\"");
        out.push_back(v);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace fedmark;
    CLI::App app{"fedmark: federated multimodal activity recognition and digital-biomarker simulator"};
    app.require_subcommand(1);

    cli::SimulateOptions sim;
    std::uint64_t sim_seed = 0;
    std::string sim_stage;
    auto* simulate = app.add_subcommand("simulate", "Run the three-stage FL experiment and write metrics");
    simulate->add_option("--config", sim.config, "Experiment config (TOML subset)")->check(CLI::ExistingFile);
    auto* sim_seed_opt = simulate->add_option("--seed", sim_seed, "Override the config seed");
    auto* sim_stage_opt = simulate->add_option("--stage", sim_stage, "full | pretrain-only | unsupervised");
    simulate->add_option("--workers", sim.workers, "Worker threads (never changes results)")->check(CLI::PositiveNumber);
    simulate->add_option("--out", sim.out, "Output directory (falls back to FEDMARK_OUT)");

    cli::AnalyzeOptions ana;
    std::optional<std::string> ana_config;
    double ana_alpha = 0.0;
    auto* analyze = app.add_subcommand("analyze", "Extract biomarkers from detection timelines and test them");
    analyze->add_option("--detections", ana.detections_dir, "Directory of <subject>.csv timelines")
        ->required()->check(CLI::ExistingDirectory);
    analyze->add_option("--groups", ana.groups_file, "CSV with subject_id,group")->required()->check(CLI::ExistingFile);
    analyze->add_option("--config", ana_config, "Experiment config supplying [analysis] and the activity table")
        ->check(CLI::ExistingFile);
    analyze->add_option("--activity-table", ana.activity_table, "Activity table file")->check(CLI::ExistingFile);
    analyze->add_option("--sample-period", ana.sample_period_s, "Detection sample period in seconds")
        ->check(CLI::PositiveNumber);
    auto* alpha_opt = analyze->add_option("--alpha", ana_alpha, "Significance level")->check(CLI::Range(0.0, 1.0));
    analyze->add_option("--seed", ana.settings.seed, "Seed for fold assignment and network init");
    analyze->add_option("--workers", sim.workers, "Accepted for symmetry; analysis is serial");
    analyze->add_option("--out", ana.out, "Output directory (falls back to FEDMARK_OUT)");

    cli::NetsimOptions net;
    auto* netsim = app.add_subcommand("netsim", "Simulate round completion times over a bandwidth trace");
    netsim->add_option("--config", net.config, "Experiment config for [trace], [network] and the cohort")
        ->check(CLI::ExistingFile);
    netsim->add_option("--seed", net.seed, "Override the config seed");
    netsim->add_option("--hours", net.hours, "Simulated horizon in hours")->check(CLI::PositiveNumber);
    netsim->add_option("--payload-bytes", net.payload_bytes, "Upload/broadcast size (default: model size)")
        ->check(CLI::NonNegativeNumber);
    netsim->add_option("--compute", net.compute_s, "Per-node local compute seconds")->check(CLI::NonNegativeNumber);
    netsim->add_option("--nodes", net.nodes, "Node count (default: cohort size)");
    netsim->add_option("--workers", sim.workers, "Accepted for symmetry; netsim is serial");
    netsim->add_option("--out", net.out, "Output directory (falls back to FEDMARK_OUT)");

    cli::PipelineOptions pipe;
    std::string pre_text;
    auto* pipeline = app.add_subcommand("pipeline", "Sequential vs pipelined on-device throughput");
    pipeline->add_option("--collect", pipe.spec.collect_s, "Collection stage seconds")->check(CLI::NonNegativeNumber);
    pipeline->add_option("--pre", pre_text, "Preprocess seconds: one value or depth,radar,audio");
    pipeline->add_option("--infer", pipe.spec.infer_s, "Inference stage seconds")->check(CLI::NonNegativeNumber);
    pipeline->add_option("--out", pipe.out, "Also write pipeline.csv here");

    std::string filter;
    bool all = false;
    auto* selftest = app.add_subcommand("selftest", "Run the oracle suites and print one line per check");
    selftest->add_flag("--all", all, "Include the slow experiment-level checks");
    selftest->add_option("--only", filter, "Comma-separated check numbers");
    selftest->add_option("--workers", sim.workers, "Worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
        if (!pre_text.empty()) {
            const auto v = split_doubles(pre_text);
            if (v.size() == 1) pipe.spec.preprocess_s = {v[0], v[0], v[0]};
            else if (v.size() == 3) pipe.spec.preprocess_s = {v[0], v[1], v[2]};
            else throw CLI::ValidationError("--pre", "expected one value or three comma-separated values");
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (*simulate) {
        if (*sim_seed_opt) sim.seed = sim_seed;
        if (*sim_stage_opt) sim.stage = sim_stage;
        return cli::cmd_simulate(sim, std::cout, std::cerr);
    }
    if (*analyze) {
        try {
            if (ana_config) {
                const auto cfg = exp::load_config(*ana_config);
                ana.settings.alpha = cfg.analysis.alpha;
                ana.settings.diagnose = {cfg.analysis.folds, cfg.analysis.hidden_width, cfg.analysis.epochs,
                                         cfg.analysis.learning_rate};
                if (!ana.activity_table && !cfg.activity_table.empty()) ana.activity_table = cfg.activity_table;
            }
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << '\n';
            return 2;
        }
        if (*alpha_opt) ana.settings.alpha = ana_alpha;
        return cli::cmd_analyze(ana, std::cout, std::cerr);
    }
    if (*netsim) return cli::cmd_netsim(net, std::cout, std::cerr);
    if (*pipeline) return cli::cmd_pipeline(pipe, std::cout, std::cerr);
    if (*selftest) {
        kernels::set_worker_count(sim.workers);
        return fedmark::checks::run_from_cli(filter, all, std::cout);
    }
    return 1;
}
