#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "fedmark/biomarker.hpp"
#include "fedmark/experiment.hpp"
#include "fedmark/system_sim.hpp"

namespace fedmark::cli {

// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// --out, else the config's out_dir, else $FEDMARK_OUT, else "fedmark_out".
std::string resolve_out_dir(const std::optional<std::string>& flag, const std::string& from_config);

struct SimulateOptions {
    std::optional<std::string> config;  // built-in defaults when unset
    std::optional<std::uint64_t> seed;
    std::optional<std::string> stage;   // full | pretrain-only | unsupervised
    std::optional<std::string> out;
    int workers = 1;
};

struct AnalyzeOptions {
    std::string detections_dir;
    std::string groups_file;
    std::optional<std::string> activity_table;
    std::optional<std::string> out;
    std::optional<double> sample_period_s;
    bio::AnalysisSettings settings;
};

struct NetsimOptions {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    double hours = 24.0;
    std::optional<double> payload_bytes;  // default: serialized bundle size
    double compute_s = 30.0;
    std::size_t nodes = 0;                // 0: cohort size from the config
};

struct PipelineOptions {
    sim::PipelineSpec spec;
    std::optional<std::string> out;
};

// Each returns a process exit code; diagnostics go to `err`, summaries to `out`.
int cmd_simulate(const SimulateOptions& opts, std::ostream& out, std::ostream& err);
int cmd_analyze(const AnalyzeOptions& opts, std::ostream& out, std::ostream& err);
int cmd_netsim(const NetsimOptions& opts, std::ostream& out, std::ostream& err);
int cmd_pipeline(const PipelineOptions& opts, std::ostream& out, std::ostream& err);

std::string pipeline_table(const sim::PipelineSpec& spec);

}  // namespace fedmark::cli
