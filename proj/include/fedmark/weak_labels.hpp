#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedmark/activity.hpp"
#include "fedmark/datagen.hpp"
#include "fedmark/losses.hpp"
#include "fedmark/tensor.hpp"

namespace fedmark::weak {

// Consecutive samples from one log entry plus the fine labels that entry
// licenses. Indices refer to the sample vector passed to associate().
struct WeakBatch {
    std::size_t entry = 0;
    std::vector<std::size_t> sample_indices;  // strictly increasing timestamps
    std::vector<std::size_t> label_multiset;  // 1-based fine labels, same length
};

const std::vector<std::size_t>& map_coarse_to_fine(const ActivityLogEntry& entry,
                                                   const WeakLabelMap& map);

// Samples with start <= t < end for each entry, chunked into runs of at most
// batch_size. Each chunk's multiset cycles the entry's mapped set (ascending)
// to the chunk length. Samples outside every entry are dropped.
std::vector<WeakBatch> associate(const std::vector<ActivityLogEntry>& log,
                                 const std::vector<data::MultiModalSample>& stream,
                                 const WeakLabelMap& map, std::size_t batch_size);

// Entries must satisfy start < end and must not overlap.
void validate_log(const std::vector<ActivityLogEntry>& log);

// CSV with header `start_s,end_s,coarse_label`.
std::vector<ActivityLogEntry> parse_activity_log_csv(const std::string& text,
                                                     const std::string& source = "<log>");
std::vector<ActivityLogEntry> read_activity_log_csv(const std::string& path);

enum class PermutationSampling {
    uniform,  // uniformly shuffled arrangements
    guided,   // half uniform, half Gumbel-perturbed greedy arrangements under the current logits
};

struct PermutationConfig {
    std::size_t budget = 32;           // sampled arrangements beyond the identity when B > 5
    std::size_t exhaustive_max = 5;    // enumerate every arrangement up to this batch size
    PermutationSampling sampling = PermutationSampling::guided;
};

struct PermutationLoss {
    double loss = 0.0;
    Tensor grad;
    std::vector<std::size_t> best_assignment;  // 0-based labels per sample
    std::size_t evaluated = 0;                 // arrangements scored, identity included
};

// Minimum mean cross-entropy over arrangements of `labels` (0-based) across the
// batch rows: the identity plus either every distinct arrangement (small B) or
// up to `budget` distinct sampled ones. Ties keep the earliest arrangement.
PermutationLoss permutation_ce_loss(const Tensor& logits, std::span<const std::size_t> labels,
                                    const PermutationConfig& cfg, std::mt19937_64& rng);

}  // namespace fedmark::weak
