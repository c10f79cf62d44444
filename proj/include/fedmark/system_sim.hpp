#pragma once

#include <array>
#include <cstdint>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "fedmark/modality.hpp"

namespace fedmark::sim {

enum class Demand { upload, download };

struct Band {
    std::string name;
    double uplink_mbps = 0.0;
    double downlink_mbps = 0.0;

    double rate(Demand d) const { return d == Demand::upload ? uplink_mbps : downlink_mbps; }
    void validate() const;
};

// B3 21 up / 18 down (downlink assumed), B40 6 up / 20 down.
std::vector<Band> default_bands();

// Highest nominal rate in the demanded direction; ties go to the smaller name.
const Band& select_band(Demand demand, const std::vector<Band>& bands);

// Seconds to move `payload_bytes` at `rate_mbps` (10^6 bit/s). Zero or
// negative rate throws ConnectivityError.
double transmission_time(double payload_bytes, double rate_mbps);

struct TraceConfig {
    double base_night = 0.9;
    double base_day = 0.75;
    double day_start_h = 7.0;
    double day_end_h = 22.0;
    std::vector<double> dip_hours = {12.0, 17.0, 19.0};
    double dip_sigma_s = 1800.0;
    double dip_depth = 0.3;
    double noise_sigma = 0.05;  // stationary std of the AR(1) term
    double noise_rho = 0.9;     // per-step autocorrelation
    double resolution_s = 60.0;

    void validate() const;
};

// Multiplicative bandwidth factor over simulated time. The AR(1) noise is
// tabulated once per resolution step over `horizon_s` and repeats after it.
class BandwidthTrace {
public:
    BandwidthTrace(TraceConfig cfg, double horizon_s, std::uint64_t seed);
    static BandwidthTrace constant(double factor, double resolution_s = 60.0);

    double factor(double t_s) const;
    // Deterministic part (baseline minus mealtime dips), before noise and clamping.
    double baseline(double t_s) const;
    const TraceConfig& config() const { return cfg_; }
    double resolution() const { return cfg_.resolution_s; }

    // Seconds needed to move `bytes` starting at `t0` with nominal `rate_mbps`
    // scaled by the trace; the rate is piecewise constant per resolution step.
    // Returns infinity when the transfer cannot finish within `max_wait_s`.
    double transfer_time(double bytes, double rate_mbps, double t0, double max_wait_s) const;

private:
    TraceConfig cfg_;
    std::vector<double> noise_;
    double constant_ = -1.0;
};

std::string trace_csv(const BandwidthTrace& trace, double t0_s, double t1_s, double step_s);

// ---------------------------------------------------------------------------

enum class EventKind { compute_done = 0, upload_done = 1, retry = 2, aggregate_done = 3 };

struct Event {
    double t_s = 0.0;
    EventKind kind = EventKind::compute_done;
    std::string node_id;
};

// Min-queue on (time, kind, node_id).
class EventQueue {
public:
    void push(Event e) { heap_.push(std::move(e)); }
    Event pop();
    bool empty() const { return heap_.empty(); }
    std::size_t size() const { return heap_.size(); }

private:
    struct Later {
        bool operator()(const Event& a, const Event& b) const;
    };
    std::priority_queue<Event, std::vector<Event>, Later> heap_;
};

struct NodeRoundInput {
    std::string node_id;
    double compute_s = 0.0;
    double upload_bytes = 0.0;
};

struct RoundConfig {
    double aggregation_s = 1.0;
    double broadcast_bytes = 0.0;
    double retry_s = 60.0;
    double max_wait_s = 3600.0;  // a node that cannot upload within this is dropped
    std::vector<Band> bands = default_bands();
};

struct NodeRoundTiming {
    std::string node_id;
    double compute_s = 0.0;
    double upload_s = 0.0;
    double finish_s = 0.0;  // relative to round start
    std::size_t retries = 0;
    bool dropped = false;
};

struct RoundTiming {
    double start_s = 0.0;
    double completion_s = 0.0;  // duration of the whole round
    double aggregation_s = 0.0;
    double broadcast_s = 0.0;
    std::vector<NodeRoundTiming> nodes;  // sorted by node_id
};

RoundTiming simulate_round(const std::vector<NodeRoundInput>& nodes, const BandwidthTrace& trace,
                           double start_s, const RoundConfig& cfg);

// ---------------------------------------------------------------------------

struct FailureConfig {
    double rate_lo_per_day = 2.0;
    double rate_hi_per_day = 6.0;
    double repair_lo_s = 60.0;
    double repair_hi_s = 600.0;

    void validate() const;
};

struct SensorFailureProcess {
    ModalityId sensor = ModalityId::depth;
    double rate_per_day = 2.0;
    double repair_lo_s = 60.0;
    double repair_hi_s = 600.0;

    static SensorFailureProcess draw(ModalityId sensor, const FailureConfig& cfg, std::mt19937_64& rng);
    void validate() const;
};

struct FailureEvent {
    ModalityId sensor = ModalityId::depth;
    double down_s = 0.0;
    double up_s = 0.0;
};

// Poisson arrivals; the next failure is drawn from the previous repair time.
std::vector<FailureEvent> failure_schedule(const SensorFailureProcess& process, double days,
                                           std::mt19937_64& rng);

// Modalities of `base` with no failure overlapping [t0, t1).
ModalitySet available_during(const std::vector<FailureEvent>& events, const ModalitySet& base,
                             double t0_s, double t1_s);

std::string failures_csv(const std::vector<FailureEvent>& events);

// ---------------------------------------------------------------------------

enum class PipelineMode { sequential, pipelined };

struct PipelineSpec {
    double collect_s = 0.05;
    std::array<double, kModalityCount> preprocess_s = {0.03, 0.03, 0.03};
    double infer_s = 0.1058;

    double preprocess_stage() const;
    void validate() const;
};

// Preprocessing of the three modalities always runs in a parallel pool, so
// its stage time is the slowest modality in both modes.
double pipeline_throughput(const PipelineSpec& spec, PipelineMode mode);

}  // namespace fedmark::sim
