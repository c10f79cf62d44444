#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "fedmark/error.hpp"
#include "fedmark/experiment.hpp"
#include "fedmark/textconfig.hpp"

namespace fedmark::exp {

namespace {

enum class Check { any, positive, nonneg, probability, unit_open };

bool passes(double v, Check c) {
    switch (c) {
        case Check::any: return std::isfinite(v);
        case Check::positive: return std::isfinite(v) && v > 0.0;
        case Check::nonneg: return std::isfinite(v) && v >= 0.0;
        case Check::probability: return v >= 0.0 && v <= 1.0;
        case Check::unit_open: return v > 0.0 && v <= 1.0;
    }
    return false;
}

const char* describe(Check c) {
    switch (c) {
        case Check::any: return "must be finite";
        case Check::positive: return "must be > 0";
        case Check::nonneg: return "must be >= 0";
        case Check::probability: return "must lie in [0, 1]";
        case Check::unit_open: return "must lie in (0, 1]";
    }
    return "";
}

template <typename E>
struct Choice {
    E& value;
    std::vector<std::pair<std::string, E>> options;

    std::string name() const {
        for (const auto& [n, e] : options)
            if (e == value) return n;
        return "?";
    }
};

// Every configurable key, in file order. Readers and writers share it so the
// parser and the dump can never drift apart.
template <typename V>
void visit(ExperimentConfig& c, V& v) {
    v.section("experiment");
    v.u64("seed", c.seed);
    v.str("activity_table", c.activity_table);
    v.choice("stages", Choice<StageSelection>{c.stages, {{"full", StageSelection::full},
                                                         {"pretrain-only", StageSelection::pretrain_only},
                                                         {"unsupervised", StageSelection::unsupervised}}});
    v.flag("baselines", c.baselines);
    v.flag("imbalance_ablation", c.imbalance_ablation);
    v.num("node_days", c.node_days, Check::positive);
    v.num("test_days", c.test_days, Check::positive);
    v.num("server_days", c.server_days, Check::positive);
    v.num("server_dirichlet_alpha", c.server_dirichlet_alpha, Check::positive);
    v.flag("server_shift", c.server_shift);
    v.num("start_hour", c.start_hour, Check::nonneg);
    v.num("round_interval_s", c.round_interval_s, Check::positive);
    v.num("compute_s_per_sample", c.compute_s_per_sample, Check::nonneg);
    v.str("out_dir", c.out_dir);

    v.section("world");
    v.num("prototype_scale", c.world.prototype_scale, Check::positive);
    v.num("noise_sigma", c.world.noise_sigma, Check::nonneg);
    v.num("sample_period_s", c.world.sample_period_s, Check::positive);
    v.num("routine_min_s", c.world.routine_min_s, Check::positive);
    v.num("routine_max_s", c.world.routine_max_s, Check::positive);
    v.num("episode_min_s", c.world.episode_min_s, Check::positive);
    v.num("episode_max_s", c.world.episode_max_s, Check::positive);

    v.section("cohort");
    v.size("subjects", c.cohort.subjects, 1);
    v.num("dirichlet_alpha", c.cohort.dirichlet_alpha, Check::positive);
    v.num("label_fraction", c.cohort.label_fraction, Check::probability);
    v.num("log_fraction", c.cohort.log_fraction, Check::probability);
    v.num("presence_prob", c.cohort.presence_prob, Check::probability);
    v.num("scale_lo", c.cohort.scale_lo, Check::positive);
    v.num("scale_hi", c.cohort.scale_hi, Check::positive);
    v.num("offset_abs", c.cohort.offset_abs, Check::nonneg);
    v.num("missing_modality_prob", c.cohort.missing_modality_prob, Check::probability);
    v.size("richness_nc", c.cohort.richness_nc, 1);
    v.size("richness_mci", c.cohort.richness_mci, 1);
    v.size("richness_ad", c.cohort.richness_ad, 1);
    v.num("ad_sedentary_tilt", c.cohort.ad_sedentary_tilt, Check::positive);
    v.sizes("sedentary_classes", c.cohort.sedentary_classes);

    v.section("selection");
    v.num("window_start_h", c.selection.window_start_h, Check::nonneg);
    v.num("window_end_h", c.selection.window_end_h, Check::positive);
    v.num("rate", c.selection.rate, Check::unit_open);
    v.flag("drop_absent", c.selection.drop_absent);

    v.section("model");
    v.size("encoder_hidden", c.model.encoder_hidden, 1);
    v.size("embed_dim", c.model.embed_dim, 1);
    v.size("classifier_hidden", c.model.classifier_hidden, 1);

    v.section("pretrain");
    v.size("epochs", c.pretrain.epochs, 0);
    v.num("learning_rate", c.pretrain.learning_rate, Check::positive);
    v.size("batch_size", c.pretrain.batch_size, 1);

    v.section("supervised_baseline");
    v.size("epochs", c.supervised_baseline.epochs, 0);
    v.num("learning_rate", c.supervised_baseline.learning_rate, Check::positive);
    v.size("batch_size", c.supervised_baseline.batch_size, 1);

    v.section("unsupervised");
    v.size("rounds", c.unsup_rounds, 0);
    v.size("local_epochs", c.unsup.local_epochs, 0);
    v.num("learning_rate", c.unsup.learning_rate, Check::positive);
    v.size("batch_size", c.unsup.batch_size, 1);
    v.num("temperature", c.unsup.temperature, Check::positive);

    v.section("weak");
    v.size("rounds", c.weak_rounds, 0);
    v.size("local_epochs", c.weak.local_epochs, 0);
    v.num("learning_rate", c.weak.learning_rate, Check::positive);
    v.size("batch_size", c.weak.batch_size, 1);
    v.flag("balanced", c.weak.balanced);
    v.num("kd_temperature", c.weak.kd.temperature, Check::positive);
    v.num("kd_weight", c.weak.kd.weight, Check::probability);
    v.size("permutation_budget", c.weak.permutation.budget, 0);
    v.size("exhaustive_max", c.weak.permutation.exhaustive_max, 1);
    v.choice("permutation_sampling",
             Choice<weak::PermutationSampling>{c.weak.permutation.sampling,
                                               {{"uniform", weak::PermutationSampling::uniform},
                                                {"guided", weak::PermutationSampling::guided}}});

    v.section("fl");
    v.num("participation", c.participation, Check::unit_open);

    v.section("network");
    v.num("aggregation_s", c.network.aggregation_s, Check::nonneg);
    v.num("retry_s", c.network.retry_s, Check::positive);
    v.num("max_wait_s", c.network.max_wait_s, Check::positive);

    v.section("trace");
    v.num("base_night", c.trace.base_night, Check::probability);
    v.num("base_day", c.trace.base_day, Check::probability);
    v.num("day_start_h", c.trace.day_start_h, Check::nonneg);
    v.num("day_end_h", c.trace.day_end_h, Check::positive);
    v.nums("dip_hours", c.trace.dip_hours);
    v.num("dip_sigma_s", c.trace.dip_sigma_s, Check::positive);
    v.num("dip_depth", c.trace.dip_depth, Check::nonneg);
    v.num("noise_sigma", c.trace.noise_sigma, Check::nonneg);
    v.num("noise_rho", c.trace.noise_rho, Check::nonneg);
    v.num("resolution_s", c.trace.resolution_s, Check::positive);

    v.section("failures");
    v.flag("enabled", c.failures);
    v.num("rate_lo_per_day", c.failure.rate_lo_per_day, Check::positive);
    v.num("rate_hi_per_day", c.failure.rate_hi_per_day, Check::positive);
    v.num("repair_lo_s", c.failure.repair_lo_s, Check::positive);
    v.num("repair_hi_s", c.failure.repair_hi_s, Check::positive);

    v.section("pipeline");
    v.num("collect_s", c.pipeline.collect_s, Check::positive);
    v.triple("preprocess_s", c.pipeline.preprocess_s);
    v.num("infer_s", c.pipeline.infer_s, Check::positive);

    v.section("analysis");
    v.num("alpha", c.analysis.alpha, Check::unit_open);
    v.size("folds", c.analysis.folds, 2);
    v.size("hidden_width", c.analysis.hidden_width, 1);
    v.size("epochs", c.analysis.epochs, 1);
    v.num("learning_rate", c.analysis.learning_rate, Check::positive);
}

class Reader {
public:
    explicit Reader(const textconfig::Document& doc) : doc_(doc) {}

    void section(const std::string& name) {
        close();
        seen_.insert(name);
        const textconfig::Table* t = doc_.table(name);
        table_ = t ? *t : textconfig::Table{name, 0, {}};
        reader_.emplace(table_, doc_.source);
    }
    void close() {
        if (reader_) reader_->finish();
    }

    void num(std::string_view key, double& v, Check c) {
        v = r().get_double(key, v);
        if (r().has(key) && !passes(v, c)) r().fail(key, describe(c));
    }
    void size(std::string_view key, std::size_t& v, std::size_t min) {
        const auto x = r().get_int(key, static_cast<std::int64_t>(v));
        if (x < static_cast<std::int64_t>(min)) r().fail(key, "must be >= " + std::to_string(min));
        v = static_cast<std::size_t>(x);
    }
    void u64(std::string_view key, std::uint64_t& v) {
        const auto x = r().get_int(key, static_cast<std::int64_t>(v));
        if (x < 0) r().fail(key, "must be >= 0");
        v = static_cast<std::uint64_t>(x);
    }
    void flag(std::string_view key, bool& v) { v = r().get_bool(key, v); }
    void str(std::string_view key, std::string& v) { v = r().get_string(key, v); }
    void nums(std::string_view key, std::vector<double>& v) { v = r().get_doubles(key, v); }
    void sizes(std::string_view key, std::vector<std::size_t>& v) {
        std::vector<std::int64_t> fallback(v.begin(), v.end());
        const auto xs = r().get_ints(key, fallback);
        v.clear();
        for (auto x : xs) {
            if (x < 1) r().fail(key, "entries must be >= 1");
            v.push_back(static_cast<std::size_t>(x));
        }
    }
    void triple(std::string_view key, std::array<double, kModalityCount>& v) {
        const auto xs = r().get_doubles(key, {v.begin(), v.end()});
        if (xs.size() != kModalityCount) r().fail(key, "expected three values (depth, radar, audio)");
        for (std::size_t i = 0; i < kModalityCount; ++i) {
            if (!(xs[i] > 0.0)) r().fail(key, "entries must be > 0");
            v[i] = xs[i];
        }
    }
    template <typename E>
    void choice(std::string_view key, Choice<E> ch) {
        const std::string s = r().get_string(key, ch.name());
        for (const auto& [n, e] : ch.options)
            if (n == s) {
                ch.value = e;
                return;
            }
        std::string allowed;
        for (const auto& [n, e] : ch.options) allowed += (allowed.empty() ? "" : ", ") + n;
        r().fail(key, "unknown value \"" + s + "\" (expected one of " + allowed + ")");
    }

    const std::set<std::string>& seen() const { return seen_; }

private:
    textconfig::TableReader& r() { return *reader_; }

    const textconfig::Document& doc_;
    textconfig::Table table_;
    std::optional<textconfig::TableReader> reader_;
    std::set<std::string> seen_;
};

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"' || ch == '\\') out += '\\';
        if (ch == '\n') {
            out += "\\n";
            continue;
        }
        out += ch;
    }
    return out + "\"";
}

std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, r.ptr);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

class Writer {
public:
    void section(const std::string& name) { out_ << (out_.tellp() > 0 ? "\n" : "") << '[' << name << "]\n"; }
    void num(std::string_view key, double& v, Check) { line(key, fmt(v)); }
    void size(std::string_view key, std::size_t& v, std::size_t) { line(key, std::to_string(v)); }
    void u64(std::string_view key, std::uint64_t& v) { line(key, std::to_string(v)); }
    void flag(std::string_view key, bool& v) { line(key, v ? "true" : "false"); }
    void str(std::string_view key, std::string& v) { line(key, quote(v)); }
    void nums(std::string_view key, std::vector<double>& v) { list(key, v, fmt); }
    void sizes(std::string_view key, std::vector<std::size_t>& v) {
        list(key, v, [](std::size_t x) { return std::to_string(x); });
    }
    void triple(std::string_view key, std::array<double, kModalityCount>& v) { list(key, v, fmt); }
    template <typename E>
    void choice(std::string_view key, Choice<E> ch) { line(key, quote(ch.name())); }

    std::ostringstream& out() { return out_; }

private:
    void line(std::string_view key, const std::string& value) { out_ << key << " = " << value << '\n'; }
    template <typename C, typename F>
    void list(std::string_view key, const C& xs, F f) {
        std::string s = "[";
        for (const auto& x : xs) s += (s.size() > 1 ? ", " : "") + f(x);
        line(key, s + "]");
    }

    std::ostringstream out_;
};

NodeOverride read_node(const textconfig::Table& t, const std::string& source) {
    textconfig::TableReader r(t, source);
    NodeOverride o;
    o.id = r.get_string("id", "");
    if (r.has("group")) {
        const std::string g = r.get_string("group", "");
        o.group = data::parse_group(g);
        if (!o.group) r.fail("group", "unknown group \"" + g + "\" (expected NC, MCI or AD)");
    }
    if (r.has("modalities")) {
        ModalitySet s;
        for (const auto& name : r.get_strings("modalities", {})) {
            const auto m = parse_modality(name);
            if (!m) r.fail("modalities", "unknown modality \"" + name + "\"");
            s.insert(*m);
        }
        if (s.empty()) r.fail("modalities", "a node needs at least one modality");
        o.modalities = s;
    }
    auto opt_num = [&](std::string_view key, std::optional<double>& dst, Check c) {
        if (!r.has(key)) return;
        dst = r.get_double(key, 0.0);
        if (!passes(*dst, c)) r.fail(key, describe(c));
    };
    opt_num("dirichlet_alpha", o.dirichlet_alpha, Check::positive);
    opt_num("label_fraction", o.label_fraction, Check::probability);
    opt_num("log_fraction", o.log_fraction, Check::probability);
    if (r.has("activity_richness")) {
        const auto x = r.get_int("activity_richness", 1);
        if (x < 1) r.fail("activity_richness", "must be >= 1");
        o.activity_richness = static_cast<std::size_t>(x);
    }
    r.finish();
    return o;
}

sim::Band read_band(const textconfig::Table& t, const std::string& source) {
    textconfig::TableReader r(t, source);
    sim::Band b;
    b.name = r.get_string("name", "");
    if (b.name.empty()) r.fail("name", "band needs a name");
    b.uplink_mbps = r.get_double("uplink_mbps", 0.0);
    if (!(b.uplink_mbps > 0.0)) r.fail("uplink_mbps", "required and must be > 0");
    b.downlink_mbps = r.get_double("downlink_mbps", 0.0);
    if (!(b.downlink_mbps > 0.0)) r.fail("downlink_mbps", "required and must be > 0");
    r.finish();
    return b;
}

}  // namespace

void ExperimentConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    need(node_days > 0.0 && test_days > 0.0 && server_days > 0.0, "node_days, test_days and server_days must be > 0");
    need(cohort.scale_lo <= cohort.scale_hi, "[cohort] scale_lo must not exceed scale_hi");
    need(world.routine_min_s <= world.routine_max_s, "[world] routine_min_s must not exceed routine_max_s");
    need(world.episode_min_s <= world.episode_max_s, "[world] episode_min_s must not exceed episode_max_s");
    need(selection.window_start_h < selection.window_end_h && selection.window_end_h <= 24.0,
         "[selection] need window_start_h < window_end_h <= 24");
    need(participation > 0.0 && participation <= 1.0, "[fl] participation must lie in (0, 1]");
    need(unsup.batch_size >= 2, "[unsupervised] batch_size must be >= 2 (contrastive pairs)");
    need(round_interval_s > 0.0, "round_interval_s must be > 0");
    weak.kd.validate();
    trace.validate();
    if (failures) failure.validate();
    pipeline.validate();
    for (const auto& b : network.bands) b.validate();
    need(!network.bands.empty(), "[[band]] list must not be empty");
    std::set<std::string> ids;
    for (const auto& n : nodes)
        need(n.id.empty() || ids.insert(n.id).second, "duplicate node id " + n.id);
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
    const auto doc = textconfig::parse(text, source);
    ExperimentConfig cfg;
    cfg.source = source;
    if (!doc.root.entries.empty())
        throw ConfigError(source + ":" + std::to_string(doc.root.entries.front().second.line) + ": key \"" +
                          doc.root.entries.front().first + "\" must live inside a [section]");
    Reader reader(doc);
    visit(cfg, reader);
    reader.close();
    for (const auto& t : doc.tables)
        if (!reader.seen().count(t.name))
            throw ConfigError(source + ":" + std::to_string(t.line) + ": unknown section [" + t.name + "]");
    for (const auto& [name, tables] : doc.table_arrays) {
        if (name == "node") {
            for (const auto& t : tables) cfg.nodes.push_back(read_node(t, source));
        } else if (name == "band") {
            cfg.network.bands.clear();
            for (const auto& t : tables) cfg.network.bands.push_back(read_band(t, source));
        } else {
            throw ConfigError(source + ":" + std::to_string(tables.front().line) + ": unknown table array [[" +
                              name + "]]");
        }
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string dump_config(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    Writer w;
    visit(cfg, w);
    auto& out = w.out();
    for (const auto& b : cfg.network.bands)
        out << "\n[[band]]\nname = " << quote(b.name) << "\nuplink_mbps = " << fmt(b.uplink_mbps)
            << "\ndownlink_mbps = " << fmt(b.downlink_mbps) << '\n';
    for (const auto& n : cfg.nodes) {
        out << "\n[[node]]\nid = " << quote(n.id) << '\n';
        if (n.group) out << "group = " << quote(std::string(data::to_string(*n.group))) << '\n';
        if (n.modalities) {
            out << "modalities = [";
            bool first = true;
            for (ModalityId m : n.modalities->members()) {
                out << (first ? "" : ", ") << quote(std::string(to_string(m)));
                first = false;
            }
            out << "]\n";
        }
        if (n.dirichlet_alpha) out << "dirichlet_alpha = " << fmt(*n.dirichlet_alpha) << '\n';
        if (n.label_fraction) out << "label_fraction = " << fmt(*n.label_fraction) << '\n';
        if (n.log_fraction) out << "log_fraction = " << fmt(*n.log_fraction) << '\n';
        if (n.activity_richness) out << "activity_richness = " << *n.activity_richness << '\n';
    }
    return out.str();
}

}  // namespace fedmark::exp
