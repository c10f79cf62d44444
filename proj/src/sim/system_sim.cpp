#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fedmark/error.hpp"
#include "fedmark/system_sim.hpp"

namespace fedmark::sim {

namespace {
constexpr double kDay = 86400.0;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

void Band::validate() const {
    if (name.empty()) throw ParameterError("band needs a name");
    if (!(uplink_mbps > 0.0) || !(downlink_mbps > 0.0))
        throw ParameterError("band " + name + ": rates must be positive");
}

std::vector<Band> default_bands() { return {{"B3", 21.0, 18.0}, {"B40", 6.0, 20.0}}; }

const Band& select_band(Demand demand, const std::vector<Band>& bands) {
    if (bands.empty()) throw ParameterError("select_band: no bands");
    const Band* best = &bands.front();
    for (const Band& b : bands) {
        b.validate();
        const double r = b.rate(demand), br = best->rate(demand);
        if (r > br || (r == br && b.name < best->name)) best = &b;
    }
    return *best;
}

double transmission_time(double payload_bytes, double rate_mbps) {
    if (payload_bytes < 0.0) throw ParameterError("transmission_time: negative payload");
    if (!(rate_mbps > 0.0)) throw ConnectivityError("transmission_time: no bandwidth");
    return payload_bytes * 8.0 / (rate_mbps * 1e6);
}

void TraceConfig::validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(base_night) || !unit(base_day)) throw ParameterError("trace: baselines must lie in [0, 1]");
    if (!(dip_sigma_s > 0.0) || dip_depth < 0.0) throw ParameterError("trace: dip sigma > 0, depth >= 0");
    if (noise_sigma < 0.0 || noise_rho < 0.0 || noise_rho >= 1.0)
        throw ParameterError("trace: noise_sigma >= 0 and noise_rho in [0, 1)");
    if (!(resolution_s > 0.0)) throw ParameterError("trace: resolution_s must be positive");
    if (!(day_start_h >= 0.0 && day_start_h < day_end_h && day_end_h <= 24.0))
        throw ParameterError("trace: need 0 <= day_start_h < day_end_h <= 24");
}

BandwidthTrace::BandwidthTrace(TraceConfig cfg, double horizon_s, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (!(horizon_s > 0.0)) throw ParameterError("trace: horizon must be positive");
    const auto steps = static_cast<std::size_t>(std::ceil(horizon_s / cfg_.resolution_s));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double innovation = cfg_.noise_sigma * std::sqrt(1.0 - cfg_.noise_rho * cfg_.noise_rho);
    noise_.resize(steps);
    double e = cfg_.noise_sigma * n01(rng);
    for (std::size_t k = 0; k < steps; ++k) {
        if (k > 0) e = cfg_.noise_rho * e + innovation * n01(rng);
        noise_[k] = e;
    }
}

BandwidthTrace BandwidthTrace::constant(double factor, double resolution_s) {
    if (factor < 0.0 || factor > 1.0) throw ParameterError("trace: constant factor must lie in [0, 1]");
    TraceConfig cfg;
    cfg.base_day = cfg.base_night = factor;
    cfg.dip_depth = 0.0;
    cfg.noise_sigma = 0.0;
    cfg.resolution_s = resolution_s;
    BandwidthTrace t(cfg, resolution_s, 0);
    t.constant_ = factor;
    return t;
}

double BandwidthTrace::baseline(double t_s) const {
    const double tod = std::fmod(std::fmod(t_s, kDay) + kDay, kDay);
    const double hour = tod / 3600.0;
    double v = (hour >= cfg_.day_start_h && hour < cfg_.day_end_h) ? cfg_.base_day : cfg_.base_night;
    for (double h : cfg_.dip_hours) {
        double dt = std::abs(tod - h * 3600.0);
        dt = std::min(dt, kDay - dt);
        const double z = dt / cfg_.dip_sigma_s;
        v -= cfg_.dip_depth * std::exp(-0.5 * z * z);
    }
    return v;
}

double BandwidthTrace::factor(double t_s) const {
    if (constant_ >= 0.0) return constant_;
    const double k = std::floor(t_s / cfg_.resolution_s);
    const auto n = static_cast<long long>(noise_.size());
    const auto idx = static_cast<std::size_t>(((static_cast<long long>(k) % n) + n) % n);
    return std::clamp(baseline(k * cfg_.resolution_s) + noise_[idx], 0.0, 1.0);
}

double BandwidthTrace::transfer_time(double bytes, double rate_mbps, double t0, double max_wait_s) const {
    if (bytes < 0.0) throw ParameterError("transfer_time: negative payload");
    if (!(rate_mbps > 0.0)) throw ConnectivityError("transfer_time: band rate must be positive");
    if (bytes == 0.0) return 0.0;
    if (constant_ >= 0.0) {
        if (constant_ == 0.0) return kInf;
        const double t = transmission_time(bytes, rate_mbps * constant_);
        return t <= max_wait_s ? t : kInf;
    }
    double remaining = bytes * 8.0;
    double t = t0;
    while (t - t0 <= max_wait_s) {
        const double step_end = (std::floor(t / cfg_.resolution_s) + 1.0) * cfg_.resolution_s;
        const double bps = rate_mbps * 1e6 * factor(t);
        if (bps > 0.0) {
            const double can = bps * (step_end - t);
            if (can >= remaining) {
                const double done = t + remaining / bps - t0;
                return done <= max_wait_s ? done : kInf;
            }
            remaining -= can;
        }
        t = step_end;
    }
    return kInf;
}

std::string trace_csv(const BandwidthTrace& trace, double t0_s, double t1_s, double step_s) {
    if (!(step_s > 0.0)) throw ParameterError("trace_csv: step must be positive");
    std::ostringstream out;
    out.precision(17);
    out << "t_s,value\n";
    const auto rows = static_cast<std::size_t>(std::ceil((t1_s - t0_s) / step_s - 1e-9));
    for (std::size_t i = 0; i < rows; ++i) {
        const double t = t0_s + static_cast<double>(i) * step_s;
        out << t << ',' << trace.factor(t) << '\n';
    }
    return out.str();
}

bool EventQueue::Later::operator()(const Event& a, const Event& b) const {
    if (a.t_s != b.t_s) return a.t_s > b.t_s;
    if (a.kind != b.kind) return a.kind > b.kind;
    return a.node_id > b.node_id;
}

Event EventQueue::pop() {
    if (heap_.empty()) throw ParameterError("EventQueue::pop on empty queue");
    Event e = heap_.top();
    heap_.pop();
    return e;
}

RoundTiming simulate_round(const std::vector<NodeRoundInput>& nodes, const BandwidthTrace& trace,
                           double start_s, const RoundConfig& cfg) {
    if (cfg.aggregation_s < 0.0 || !(cfg.retry_s > 0.0) || !(cfg.max_wait_s > 0.0))
        throw ParameterError("round: aggregation_s >= 0, retry_s > 0, max_wait_s > 0");
    const Band& up = select_band(Demand::upload, cfg.bands);
    const Band& down = select_band(Demand::download, cfg.bands);

    RoundTiming out;
    out.start_s = start_s;
    std::vector<NodeRoundInput> sorted = nodes;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.node_id < b.node_id; });
    EventQueue queue;
    for (const auto& n : sorted) {
        if (n.compute_s < 0.0) throw ParameterError("round: compute time of " + n.node_id + " is negative");
        NodeRoundTiming t;
        t.node_id = n.node_id;
        t.compute_s = n.compute_s;
        out.nodes.push_back(t);
        queue.push({start_s + n.compute_s, EventKind::compute_done, n.node_id});
    }
    auto slot = [&](const std::string& id) -> std::size_t {
        const auto it = std::lower_bound(sorted.begin(), sorted.end(), id,
                                         [](const auto& n, const std::string& key) { return n.node_id < key; });
        return static_cast<std::size_t>(it - sorted.begin());
    };

    while (!queue.empty()) {
        const Event e = queue.pop();
        const std::size_t i = slot(e.node_id);
        NodeRoundTiming& t = out.nodes[i];
        switch (e.kind) {
            case EventKind::compute_done:
            case EventKind::retry: {
                const double waited = e.t_s - (start_s + t.compute_s);
                if (sorted[i].upload_bytes > 0.0 && trace.factor(e.t_s) == 0.0) {
                    if (waited + cfg.retry_s > cfg.max_wait_s) {
                        t.dropped = true;
                    } else {
                        ++t.retries;
                        queue.push({e.t_s + cfg.retry_s, EventKind::retry, e.node_id});
                    }
                    break;
                }
                const double dt = trace.transfer_time(sorted[i].upload_bytes, up.uplink_mbps, e.t_s,
                                                      cfg.max_wait_s - waited);
                if (std::isinf(dt)) {
                    t.dropped = true;
                    break;
                }
                queue.push({e.t_s + dt, EventKind::upload_done, e.node_id});
                break;
            }
            case EventKind::upload_done:
                t.finish_s = e.t_s - start_s;
                t.upload_s = t.finish_s - t.compute_s;
                break;
            case EventKind::aggregate_done:
                break;
        }
    }

    double last = 0.0;
    for (const auto& t : out.nodes)
        if (!t.dropped) last = std::max(last, t.finish_s);
    out.aggregation_s = cfg.aggregation_s;
    const double bstart = start_s + last + cfg.aggregation_s;
    out.broadcast_s = trace.transfer_time(cfg.broadcast_bytes, down.downlink_mbps, bstart, 10.0 * cfg.max_wait_s);
    if (std::isinf(out.broadcast_s)) throw ConnectivityError("round: broadcast never completes");
    out.completion_s = last + out.aggregation_s + out.broadcast_s;
    return out;
}

void FailureConfig::validate() const {
    if (!(rate_lo_per_day > 0.0) || rate_hi_per_day < rate_lo_per_day)
        throw ParameterError("failures: need 0 < rate_lo <= rate_hi");
    if (!(repair_lo_s > 0.0) || repair_hi_s < repair_lo_s)
        throw ParameterError("failures: need 0 < repair_lo <= repair_hi");
}

void SensorFailureProcess::validate() const {
    if (!(rate_per_day > 0.0)) throw ParameterError("failure process: rate must be positive");
    if (!(repair_lo_s > 0.0) || repair_hi_s < repair_lo_s)
        throw ParameterError("failure process: need 0 < repair_lo <= repair_hi");
}

SensorFailureProcess SensorFailureProcess::draw(ModalityId sensor, const FailureConfig& cfg,
                                                std::mt19937_64& rng) {
    cfg.validate();
    std::uniform_real_distribution<double> rate(cfg.rate_lo_per_day, cfg.rate_hi_per_day);
    return {sensor, rate(rng), cfg.repair_lo_s, cfg.repair_hi_s};
}

std::vector<FailureEvent> failure_schedule(const SensorFailureProcess& process, double days,
                                           std::mt19937_64& rng) {
    process.validate();
    if (days < 0.0) throw ParameterError("failure_schedule: days must be nonnegative");
    const double horizon = days * kDay;
    std::exponential_distribution<double> gap(process.rate_per_day / kDay);
    std::uniform_real_distribution<double> repair(process.repair_lo_s, process.repair_hi_s);
    std::vector<FailureEvent> out;
    double t = 0.0;
    while (true) {
        t += gap(rng);
        if (t >= horizon) break;
        const double r = repair(rng);
        out.push_back({process.sensor, t, std::min(t + r, horizon)});
        t += r;
    }
    return out;
}

ModalitySet available_during(const std::vector<FailureEvent>& events, const ModalitySet& base,
                             double t0_s, double t1_s) {
    ModalitySet out = base;
    for (const auto& e : events)
        if (e.down_s < t1_s && e.up_s > t0_s) out.erase(e.sensor);
    return out;
}

std::string failures_csv(const std::vector<FailureEvent>& events) {
    std::ostringstream out;
    out.precision(17);
    out << "sensor,down_s,up_s\n";
    for (const auto& e : events) out << to_string(e.sensor) << ',' << e.down_s << ',' << e.up_s << '\n';
    return out.str();
}

double PipelineSpec::preprocess_stage() const {
    return *std::max_element(preprocess_s.begin(), preprocess_s.end());
}

void PipelineSpec::validate() const {
    bool ok = collect_s > 0.0 && infer_s > 0.0;
    for (double p : preprocess_s) ok = ok && p > 0.0;
    if (!ok) throw ParameterError("pipeline: every stage duration must be positive");
}

double pipeline_throughput(const PipelineSpec& spec, PipelineMode mode) {
    spec.validate();
    const double pre = spec.preprocess_stage();
    if (mode == PipelineMode::sequential) return 1.0 / (spec.collect_s + pre + spec.infer_s);
    return 1.0 / std::max({spec.collect_s, pre, spec.infer_s});
}

}  // namespace fedmark::sim
