#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fedmark/error.hpp"
#include "fedmark/experiment.hpp"
#include "fedmark/kernels.hpp"
#include "fedmark/weak_labels.hpp"

namespace fedmark::exp {

namespace {

constexpr double kDay = 86400.0;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

enum class Stream : std::uint64_t {
    world = 1, cohort, node_data, server_data, init, pretrain, baseline,
    unsup, weak, failures, trace, participation, projection
};

// Independent generator for (stream, a, b): every random decision in the
// experiment is keyed by what it is for, never by execution order.
std::mt19937_64 stream_rng(std::uint64_t seed, Stream s, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t k = mix(seed);
    k = mix(k ^ static_cast<std::uint64_t>(s));
    k = mix(k ^ a);
    k = mix(k ^ (b + 0x5bd1e995ULL));
    return std::mt19937_64(k);
}

double mean_finite(const std::vector<double>& xs) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double x : xs)
        if (std::isfinite(x)) {
            sum += x;
            ++n;
        }
    return n ? sum / static_cast<double>(n) : kNaN;
}

struct Node {
    fl::NodeState state;
    data::SubjectProfile profile;
    std::vector<std::size_t> train_counts;
    std::vector<data::MultiModalSample> labeled;
    std::vector<sim::FailureEvent> failures;
};

Record eval_record(std::string stage, const std::string& node_id, const fl::EvalResult& r, double t) {
    Record rec;
    rec.stage = std::move(stage);
    rec.node_id = node_id;
    rec.accuracy = r.overall;
    rec.per_class = r.per_class;
    rec.head_acc = r.head;
    rec.tail_acc = r.tail;
    rec.t_s = t;
    return rec;
}

data::SubjectProfile apply_override(data::SubjectProfile p, const NodeOverride& o, std::size_t classes) {
    if (!o.id.empty()) p.subject_id = o.id;
    if (o.group) p.group = *o.group;
    if (o.modalities) p.modalities = *o.modalities;
    if (o.dirichlet_alpha) p.dirichlet_alpha = *o.dirichlet_alpha;
    if (o.label_fraction) p.label_fraction = *o.label_fraction;
    if (o.log_fraction) p.log_fraction = *o.log_fraction;
    if (o.activity_richness) p.activity_richness = std::min(*o.activity_richness, classes);
    p.validate(classes);
    return p;
}

class Runner {
public:
    explicit Runner(const ExperimentConfig& cfg) : cfg_(cfg) {}

    ExperimentResult run();

private:
    void build_world();
    void build_nodes();
    void pretrain();
    void baselines();
    void unsupervised_stage();
    fl::ModelBundle weak_stage(const fl::WeakConfig& wcfg, bool ablation, bool timed,
                               std::vector<fl::ModelBundle>& local_models);
    sim::RoundTiming time_round(const std::vector<sim::NodeRoundInput>& inputs, std::size_t broadcast_bytes);
    double next_round_start(std::size_t round_index) const;

    const ExperimentConfig& cfg_;
    ActivityTable table_;
    data::World world_;
    std::vector<Node> nodes_;
    fl::ModelBundle global_;
    Tensor projection_;
    std::optional<sim::BandwidthTrace> trace_;
    double clock_ = 0.0;
    std::size_t rounds_done_ = 0;
    ExperimentResult out_;
};

void Runner::build_world() {
    table_ = cfg_.activity_table.empty() ? ActivityTable::desk_default() : ActivityTable::load(cfg_.activity_table);
    data::WorldConfig wc = cfg_.world;
    wc.classes = table_.classes();
    auto rng = stream_rng(cfg_.seed, Stream::world);
    world_ = data::World::draw(wc, table_.weak_map, rng);
}

void Runner::build_nodes() {
    const std::size_t classes = table_.classes();
    data::CohortSpec spec = cfg_.cohort;
    if (!cfg_.nodes.empty()) spec.subjects = cfg_.nodes.size();
    auto crng = stream_rng(cfg_.seed, Stream::cohort);
    auto profiles = data::draw_cohort(spec, classes, crng);
    for (std::size_t i = 0; i < cfg_.nodes.size(); ++i)
        profiles[i] = apply_override(std::move(profiles[i]), cfg_.nodes[i], classes);

    nodes_.resize(profiles.size());
    const double cut = cfg_.node_days * kDay;
    const double horizon_days = std::ceil(cfg_.start_hour / 24.0 +
                                          static_cast<double>(cfg_.unsup_rounds + cfg_.weak_rounds + 2) *
                                              (cfg_.round_interval_s + cfg_.network.max_wait_s) / kDay) + 1.0;
    const long n = static_cast<long>(nodes_.size());
#pragma omp parallel for schedule(dynamic)
    for (long ii = 0; ii < n; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        Node& node = nodes_[i];
        node.profile = profiles[i];
        auto& st = node.state;
        st.node_id = node.profile.subject_id;
        st.index = i;
        st.group = node.profile.group;
        st.available = node.profile.modalities;

        auto rng = stream_rng(cfg_.seed, Stream::node_data, i);
        auto stream = data::generate_selected_stream(node.profile, world_, cut + cfg_.test_days * kDay,
                                                     cfg_.selection, rng);
        for (auto& s : stream.samples) {
            if (s.timestamp < cut) st.unlabeled_store.push_back(std::move(s));
            else st.test_set.push_back(std::move(s));
        }
        for (const auto& e : stream.log) {
            if (e.start_s >= cut) continue;
            st.log.push_back({e.start_s, std::min(e.end_s, cut), e.coarse_label});
        }
        st.weak_store = weak::associate(st.log, st.unlabeled_store, table_.weak_map, cfg_.weak.batch_size);
        node.train_counts.assign(classes, 0);
        for (std::size_t k = 0; k < st.unlabeled_store.size(); ++k) {
            const auto& s = st.unlabeled_store[k];
            ++node.train_counts[s.activity - 1];
            if (s.fine_label) {
                st.labeled_store.push_back(k);
                node.labeled.push_back(s);
            }
        }
        if (cfg_.failures) {
            for (ModalityId m : node.profile.modalities.members()) {
                auto frng = stream_rng(cfg_.seed, Stream::failures, i, index_of(m));
                const auto proc = sim::SensorFailureProcess::draw(m, cfg_.failure, frng);
                auto ev = sim::failure_schedule(proc, horizon_days, frng);
                node.failures.insert(node.failures.end(), ev.begin(), ev.end());
            }
            std::sort(node.failures.begin(), node.failures.end(), [](const auto& a, const auto& b) {
                return a.down_s != b.down_s ? a.down_s < b.down_s : index_of(a.sensor) < index_of(b.sensor);
            });
        }
    }
    for (const auto& node : nodes_) {
        if (node.state.test_set.empty()) throw DataError("node " + node.state.node_id + " has an empty test set");
        out_.summary.failure_events += node.failures.size();
    }

    std::ostringstream fcsv;
    fcsv << "node_id,sensor,down_s,up_s\n";
    for (const auto& node : nodes_) {
        const std::string body = sim::failures_csv(node.failures);
        std::istringstream lines(body);
        std::string line;
        std::getline(lines, line);  // header
        while (std::getline(lines, line)) fcsv << node.state.node_id << ',' << line << '\n';
    }
    out_.failures_csv = fcsv.str();

    auto trng = stream_rng(cfg_.seed, Stream::trace);
    trace_.emplace(cfg_.trace, horizon_days * kDay, trng());
    out_.trace_csv = sim::trace_csv(*trace_, 0.0, horizon_days * kDay, cfg_.trace.resolution_s);
}

void Runner::pretrain() {
    data::SubjectProfile server;
    server.subject_id = "server";
    server.dirichlet_alpha = cfg_.server_dirichlet_alpha;
    server.activity_richness = table_.classes();
    server.label_fraction = 1.0;
    server.log_fraction = 0.0;
    server.presence_prob = 1.0;
    auto rng = stream_rng(cfg_.seed, Stream::server_data);
    if (cfg_.server_shift)
        server.shift = data::DomainShift::draw(rng, cfg_.cohort.scale_lo, cfg_.cohort.scale_hi, cfg_.cohort.offset_abs);
    const auto pool = data::generate_selected_stream(server, world_, cfg_.server_days * kDay, cfg_.selection, rng).samples;
    if (pool.empty()) throw DataError("server labeled pool is empty");

    fl::ModelSpec spec = cfg_.model;
    spec.classes = table_.classes();
    auto irng = stream_rng(cfg_.seed, Stream::init);
    global_ = fl::ModelBundle::init(spec, irng);
    auto prng = stream_rng(cfg_.seed, Stream::projection);
    projection_ = loss::make_fusion_projection(spec.embed_dim, prng);

    auto trng = stream_rng(cfg_.seed, Stream::pretrain);
    Record rec;
    rec.stage = "pretrain";
    rec.loss = fl::train_supervised(global_, pool, cfg_.pretrain, trng);
    rec.note = "server pool " + std::to_string(pool.size()) + " samples";
    out_.records.push_back(rec);
    global_.version = 0;

    std::vector<double> acc;
    for (const auto& node : nodes_) {
        const auto r = fl::evaluate(global_, node.state.test_set, node.train_counts);
        out_.records.push_back(eval_record("pretrained_only", node.state.node_id, r, 0.0));
        acc.push_back(r.overall);
    }
    out_.summary.pretrained_only = mean_finite(acc);
}

void Runner::baselines() {
    fl::ModelSpec spec = cfg_.model;
    spec.classes = table_.classes();
    std::vector<fl::EvalResult> results(nodes_.size());
    const long n = static_cast<long>(nodes_.size());
#pragma omp parallel for schedule(dynamic)
    for (long ii = 0; ii < n; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        auto rng = stream_rng(cfg_.seed, Stream::baseline, i);
        auto model = fl::ModelBundle::init(spec, rng);
        if (!nodes_[i].labeled.empty()) fl::train_supervised(model, nodes_[i].labeled, cfg_.supervised_baseline, rng);
        results[i] = fl::evaluate(model, nodes_[i].state.test_set, nodes_[i].train_counts);
    }
    std::vector<double> acc;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        out_.records.push_back(eval_record("supervised_only", nodes_[i].state.node_id, results[i], 0.0));
        acc.push_back(results[i].overall);
    }
    out_.summary.supervised_only = mean_finite(acc);
}

double Runner::next_round_start(std::size_t round_index) const {
    const double scheduled = cfg_.start_hour * 3600.0 + static_cast<double>(round_index) * cfg_.round_interval_s;
    return std::max(scheduled, clock_);
}

sim::RoundTiming Runner::time_round(const std::vector<sim::NodeRoundInput>& inputs, std::size_t broadcast_bytes) {
    sim::RoundConfig rc = cfg_.network;
    rc.broadcast_bytes = static_cast<double>(broadcast_bytes);
    const double start = next_round_start(rounds_done_);
    auto timing = sim::simulate_round(inputs, *trace_, start, rc);
    for (const auto& t : timing.nodes) out_.summary.dropped_uploads += t.dropped ? 1 : 0;
    clock_ = start + timing.completion_s;
    ++rounds_done_;
    out_.rounds.push_back(timing);
    return timing;
}

std::vector<bool> participants(const ExperimentConfig& cfg, Stream stage, std::size_t round, std::size_t nodes) {
    auto rng = stream_rng(cfg.seed, Stream::participation, static_cast<std::uint64_t>(stage), round);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<bool> out(nodes);
    for (std::size_t i = 0; i < nodes; ++i) out[i] = u(rng) < cfg.participation;
    return out;
}

void Runner::unsupervised_stage() {
    for (std::size_t r = 1; r <= cfg_.unsup_rounds; ++r) {
        const double start = next_round_start(rounds_done_);
        const double end = start + cfg_.round_interval_s;
        const auto live = participants(cfg_, Stream::unsup, r, nodes_.size());
        std::vector<fl::UnsupRoundResult> results(nodes_.size());
        const long n = static_cast<long>(nodes_.size());
#pragma omp parallel for schedule(dynamic)
        for (long ii = 0; ii < n; ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            if (!live[i]) {
                results[i].skipped = true;
                results[i].skip_reason = "not selected";
                continue;
            }
            const auto& node = nodes_[i];
            const ModalitySet usable = sim::available_during(node.failures, node.state.available, start, end);
            auto rng = stream_rng(cfg_.seed, Stream::unsup, r, i);
            results[i] = fl::local_unsup_round(node.state, global_, usable, cfg_.unsup, projection_, rng);
        }

        std::vector<fl::EncoderUpdate> updates;
        std::vector<sim::NodeRoundInput> inputs;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (results[i].skipped) {
                ++out_.summary.skipped_node_rounds;
                continue;
            }
            fl::ModelBundle carrier = global_;
            carrier.encoders = results[i].update.encoders;
            std::size_t samples = 0;
            for (ModalityId m : results[i].update.counts.keys())
                samples = std::max(samples, results[i].update.counts.at(m));
            inputs.push_back({nodes_[i].state.node_id,
                              cfg_.compute_s_per_sample * static_cast<double>(samples * cfg_.unsup.local_epochs),
                              static_cast<double>(fl::payload_bytes(carrier, false))});
            updates.push_back(results[i].update);
        }
        const auto timing = time_round(inputs, fl::payload_bytes(global_, false));
        std::vector<bool> dropped(nodes_.size(), false);
        for (const auto& t : timing.nodes)
            if (t.dropped)
                for (std::size_t i = 0; i < nodes_.size(); ++i)
                    if (nodes_[i].state.node_id == t.node_id) dropped[i] = true;
        std::erase_if(updates, [&](const fl::EncoderUpdate& u) -> bool {
            for (std::size_t i = 0; i < nodes_.size(); ++i)
                if (nodes_[i].state.node_id == u.node_id) return dropped[i];
            return false;
        });
        if (!updates.empty()) {
            global_.encoders = fl::modality_wise_fedavg(updates, global_.encoders);
            ++global_.version;
        }

        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            Record rec;
            rec.stage = "unsupervised_fl";
            rec.round = r;
            rec.node_id = nodes_[i].state.node_id;
            rec.t_s = clock_;
            if (results[i].skipped) rec.note = "skipped: " + results[i].skip_reason;
            else if (dropped[i]) rec.note = "dropped: upload did not complete";
            else rec.loss = results[i].loss_after;
            out_.records.push_back(rec);
        }
        Record round;
        round.stage = "unsupervised_fl";
        round.round = r;
        round.round_time_s = timing.completion_s;
        round.t_s = clock_;
        out_.records.push_back(round);
    }
}

fl::ModelBundle Runner::weak_stage(const fl::WeakConfig& wcfg, bool ablation, bool timed,
                                   std::vector<fl::ModelBundle>& local_models) {
    fl::ModelBundle global = global_;
    local_models.assign(nodes_.size(), global);
    const std::string stage = ablation ? "weak_fl_plain" : "weak_fl";
    std::size_t untimed_rounds = rounds_done_;
    for (std::size_t r = 1; r <= cfg_.weak_rounds; ++r) {
        const std::size_t round_index = timed ? rounds_done_ : untimed_rounds++;
        const double start = std::max(cfg_.start_hour * 3600.0 + static_cast<double>(round_index) * cfg_.round_interval_s,
                                      timed ? clock_ : 0.0);
        const double end = start + cfg_.round_interval_s;
        const auto live = participants(cfg_, Stream::weak, r, nodes_.size());
        std::vector<fl::WeakRoundResult> results(nodes_.size());
        const long n = static_cast<long>(nodes_.size());
#pragma omp parallel for schedule(dynamic)
        for (long ii = 0; ii < n; ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            if (!live[i]) {
                results[i].skipped = true;
                results[i].skip_reason = "not selected";
                continue;
            }
            const auto& node = nodes_[i];
            const ModalitySet usable = sim::available_during(node.failures, node.state.available, start, end);
            // The ablation replays the same draws so the comparison is paired.
            auto rng = stream_rng(cfg_.seed, Stream::weak, r, i);
            results[i] = fl::local_weak_round(node.state, global, usable, wcfg, rng);
        }

        std::vector<bool> dropped(nodes_.size(), false);
        std::optional<sim::RoundTiming> timing;
        if (timed) {
            std::vector<sim::NodeRoundInput> inputs;
            for (std::size_t i = 0; i < nodes_.size(); ++i) {
                if (results[i].skipped) {
                    ++out_.summary.skipped_node_rounds;
                    continue;
                }
                fl::ModelBundle carrier = results[i].model;
                for (ModalityId m : kAllModalities)
                    if (!results[i].counts.contains(m)) carrier.encoders.erase(m);
                inputs.push_back({nodes_[i].state.node_id,
                                  cfg_.compute_s_per_sample *
                                      static_cast<double>(results[i].classifier_count * wcfg.local_epochs),
                                  static_cast<double>(fl::payload_bytes(carrier, true))});
            }
            timing = time_round(inputs, fl::payload_bytes(global, true));
            for (const auto& t : timing->nodes)
                if (t.dropped)
                    for (std::size_t i = 0; i < nodes_.size(); ++i)
                        if (nodes_[i].state.node_id == t.node_id) dropped[i] = true;
        }

        std::vector<fl::WeakRoundResult> kept;
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (results[i].skipped || dropped[i]) continue;
            local_models[i] = results[i].model;
            kept.push_back(results[i]);
            ids.push_back(nodes_[i].state.node_id);
        }
        global = fl::aggregate_weak(kept, global, ids);

        const double t = timed ? clock_ : out_.records.empty() ? 0.0 : out_.records.back().t_s;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            Record rec;
            rec.stage = stage;
            rec.round = r;
            rec.node_id = nodes_[i].state.node_id;
            rec.t_s = t;
            if (results[i].skipped) rec.note = "skipped: " + results[i].skip_reason;
            else if (dropped[i]) rec.note = "dropped: upload did not complete";
            else rec.loss = results[i].loss;
            out_.records.push_back(rec);
        }
        if (timing) {
            Record round;
            round.stage = stage;
            round.round = r;
            round.round_time_s = timing->completion_s;
            round.t_s = t;
            out_.records.push_back(round);
        }
    }
    return global;
}

ExperimentResult Runner::run() {
    cfg_.validate();
    const int saved_levels = omp_get_max_active_levels();
    omp_set_max_active_levels(1);
    build_world();
    build_nodes();
    {
        fl::ModelSpec spec = cfg_.model;
        spec.classes = table_.classes();
        std::mt19937_64 shape_only(0);
        const auto probe = fl::ModelBundle::init(spec, shape_only);
        out_.summary.payload_bytes_encoders = fl::payload_bytes(probe, false);
        out_.summary.payload_bytes_full = fl::payload_bytes(probe, true);
    }
    pretrain();
    if (cfg_.baselines) baselines();
    else out_.summary.supervised_only = kNaN;
    out_.summary.three_stage = out_.summary.three_stage_global = kNaN;
    out_.summary.after_unsupervised = kNaN;
    out_.summary.balanced_tail = out_.summary.balanced_overall = kNaN;
    out_.summary.plain_tail = out_.summary.plain_overall = kNaN;

    fl::ModelBundle final_model = global_;
    std::vector<fl::ModelBundle> locals(nodes_.size(), global_);
    if (cfg_.stages != StageSelection::pretrain_only) {
        unsupervised_stage();
        std::vector<double> acc2;
        for (const auto& node : nodes_) {
            const auto r = fl::evaluate(global_, node.state.test_set, node.train_counts);
            out_.records.push_back(eval_record("after_unsupervised_fl", node.state.node_id, r, clock_));
            acc2.push_back(r.overall);
        }
        out_.summary.after_unsupervised = mean_finite(acc2);
        final_model = global_;
        locals.assign(nodes_.size(), global_);
        if (cfg_.stages == StageSelection::full) {
            const fl::ModelBundle stage2 = global_;
            final_model = weak_stage(cfg_.weak, false, true, locals);

            std::vector<double> acc, acc_global, tail, overall;
            for (std::size_t i = 0; i < nodes_.size(); ++i) {
                const auto r = fl::evaluate(locals[i], nodes_[i].state.test_set, nodes_[i].train_counts);
                const auto g = fl::evaluate(final_model, nodes_[i].state.test_set, nodes_[i].train_counts);
                out_.records.push_back(eval_record("three_stage", nodes_[i].state.node_id, r, clock_));
                acc.push_back(r.overall);
                acc_global.push_back(g.overall);
                tail.push_back(r.tail);
            }
            out_.summary.three_stage = mean_finite(acc);
            out_.summary.three_stage_global = mean_finite(acc_global);
            out_.summary.balanced_overall = out_.summary.three_stage;
            out_.summary.balanced_tail = mean_finite(tail);

            if (cfg_.imbalance_ablation) {
                fl::WeakConfig plain = cfg_.weak;
                plain.balanced = false;
                plain.kd.weight = 0.0;
                std::vector<fl::ModelBundle> plain_locals;
                const fl::ModelBundle keep = global_;
                global_ = stage2;
                weak_stage(plain, true, false, plain_locals);
                global_ = keep;
                std::vector<double> ptail, pall;
                for (std::size_t i = 0; i < nodes_.size(); ++i) {
                    const auto r = fl::evaluate(plain_locals[i], nodes_[i].state.test_set, nodes_[i].train_counts);
                    out_.records.push_back(eval_record("weak_fl_plain_eval", nodes_[i].state.node_id, r, clock_));
                    ptail.push_back(r.tail);
                    pall.push_back(r.overall);
                }
                out_.summary.plain_tail = mean_finite(ptail);
                out_.summary.plain_overall = mean_finite(pall);
            }
        }
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        NodeDetections d;
        d.node_id = nodes_[i].state.node_id;
        d.group = nodes_[i].state.group;
        const auto pred = fl::predict(locals[i], nodes_[i].state.test_set);
        for (std::size_t k = 0; k < pred.size(); ++k) {
            d.t_s.push_back(nodes_[i].state.test_set[k].timestamp);
            d.predicted.push_back(pred[k] + 1);
        }
        out_.detections.push_back(std::move(d));
    }

    std::vector<double> night, day;
    for (const auto& rt : out_.rounds) {
        const double hour = std::fmod(rt.start_s, kDay) / 3600.0;
        const bool is_day = hour >= cfg_.trace.day_start_h && hour < cfg_.trace.day_end_h;
        (is_day ? day : night).push_back(rt.completion_s);
    }
    out_.summary.night_day_ratio = (night.empty() || day.empty()) ? kNaN : mean_finite(night) / mean_finite(day);
    omp_set_max_active_levels(saved_levels);
    return std::move(out_);
}

}  // namespace

ExperimentResult run_three_stage(const ExperimentConfig& cfg) {
    Runner runner(cfg);
    return runner.run();
}

}  // namespace fedmark::exp
