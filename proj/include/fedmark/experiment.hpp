#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedmark/activity.hpp"
#include "fedmark/datagen.hpp"
#include "fedmark/fl.hpp"
#include "fedmark/system_sim.hpp"

namespace fedmark::exp {

// Optional explicit node definition; anything left unset comes from the cohort draw.
struct NodeOverride {
    std::string id;
    std::optional<data::Group> group;
    std::optional<ModalitySet> modalities;
    std::optional<double> dirichlet_alpha;
    std::optional<double> label_fraction;
    std::optional<double> log_fraction;
    std::optional<std::size_t> activity_richness;
};

struct AnalysisConfig {
    double alpha = 0.05;
    std::size_t folds = 3;
    std::size_t hidden_width = 16;
    std::size_t epochs = 200;
    double learning_rate = 0.05;
};

enum class StageSelection { full, pretrain_only, unsupervised };

struct ExperimentConfig {
    std::uint64_t seed = 7;
    std::string source = "<defaults>";
    std::string activity_table;  // empty = built-in eight-class table
    StageSelection stages = StageSelection::full;
    bool baselines = true;           // supervised-only models per node
    bool imbalance_ablation = false; // plain-CE weak FL from the same stage-2 model

    double node_days = 3.0;
    double test_days = 1.0;
    double server_days = 1.0;
    double server_dirichlet_alpha = 1e6;
    bool server_shift = true;  // server data sits in its own shifted domain

    data::WorldConfig world;
    data::CohortSpec cohort;
    std::vector<NodeOverride> nodes;
    data::SelectionPolicy selection;

    fl::ModelSpec model;
    fl::SupervisedConfig pretrain{30, 0.05, 16};
    fl::SupervisedConfig supervised_baseline{200, 0.05, 16};
    std::size_t unsup_rounds = 20;
    fl::UnsupConfig unsup;
    std::size_t weak_rounds = 20;
    fl::WeakConfig weak;
    double participation = 1.0;

    double start_hour = 0.0;
    double round_interval_s = 1800.0;
    double compute_s_per_sample = 0.05;
    sim::TraceConfig trace;
    sim::RoundConfig network;
    bool failures = true;
    sim::FailureConfig failure;
    sim::PipelineSpec pipeline;

    AnalysisConfig analysis;
    std::string out_dir;

    void validate() const;
};

// Parses the experiment file format; errors are ConfigError with "file:line: ".
ExperimentConfig parse_config(std::string_view text, const std::string& source);
ExperimentConfig load_config(const std::string& path);
// Canonical text of the effective configuration (same grammar as the input).
std::string dump_config(const ExperimentConfig& cfg);

struct Record {
    std::string stage;
    std::optional<std::size_t> round;
    std::optional<std::string> node_id;
    std::optional<double> loss;
    std::optional<double> accuracy;
    std::vector<double> per_class;
    std::optional<double> head_acc;
    std::optional<double> tail_acc;
    std::optional<double> round_time_s;
    std::optional<std::string> note;
    double t_s = 0.0;
};

struct Summary {
    double pretrained_only = 0.0;
    double supervised_only = 0.0;
    double after_unsupervised = 0.0;  // global model right after stage 2
    double three_stage = 0.0;
    double three_stage_global = 0.0;
    double balanced_tail = 0.0;
    double balanced_overall = 0.0;
    double plain_tail = 0.0;
    double plain_overall = 0.0;
    double night_day_ratio = 0.0;
    std::size_t payload_bytes_encoders = 0;
    std::size_t payload_bytes_full = 0;
    std::size_t skipped_node_rounds = 0;
    std::size_t dropped_uploads = 0;
    std::size_t failure_events = 0;
};

struct NodeDetections {
    std::string node_id;
    data::Group group = data::Group::NC;
    std::vector<double> t_s;
    std::vector<std::size_t> predicted;  // 1-based
};

struct ExperimentResult {
    std::vector<Record> records;
    Summary summary;
    std::vector<sim::RoundTiming> rounds;
    std::vector<NodeDetections> detections;
    std::string trace_csv;
    std::string failures_csv;
};

ExperimentResult run_three_stage(const ExperimentConfig& cfg);

// JSON-lines: one object per record followed by the summary record.
std::string metrics_jsonl(const ExperimentResult& result);
std::string round_times_csv(const ExperimentResult& result);

}  // namespace fedmark::exp
