#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "fedmark/modality.hpp"
#include "fedmark/tensor.hpp"

namespace fedmark::loss {

struct LossAndGrad {
    double loss = 0.0;
    Tensor grad;
};

// Row-wise softmax of logits / temperature.
Tensor softmax_rows(const Tensor& logits, double temperature = 1.0);

// Mean cross-entropy over the batch; labels are 0-based class indices.
LossAndGrad cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// Per-sample weighted mean cross-entropy: (1/B) sum_i w[y_i] * CE_i.
LossAndGrad weighted_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                                   std::span<const double> class_weights);

struct ClassCounts {
    std::vector<std::size_t> counts;

    std::size_t classes() const { return counts.size(); }
    void validate() const;
};

// Normalized inverse-frequency weights over the classes with a nonzero count:
// w_c = K * (1/n_c) / sum_j (1/n_j), K = number of such classes. Classes with
// zero count get weight 0. Uniform nonzero counts give exactly 1.
std::vector<double> balanced_weights(const ClassCounts& counts);

LossAndGrad balanced_ce(const Tensor& logits, std::span<const std::size_t> labels,
                        const ClassCounts& counts);

struct KDConfig {
    double temperature = 2.0;
    double weight = 0.5;  // lambda_kd in [0, 1]

    void validate() const;
};

// T^2 * mean_b KL(softmax(teacher/T) || softmax(student/T)); gradient is with
// respect to the student logits.
LossAndGrad kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                    const KDConfig& cfg);

// (1 - lambda) * balanced + lambda * kd
double combined_weak_stage_loss(double balanced, double kd, double lambda_kd);

// ---------------------------------------------------------------------------
// Fusion-based feature augmentation and the contrastive fusion loss.

struct FusionRecipe {
    enum class Kind { concat_project, weighted_sum };
    Kind kind = Kind::weighted_sum;
    // Per-modality weights for weighted_sum; ignored for concat_project.
    std::array<double, kModalityCount> weights{};

    static FusionRecipe concat();
    static FusionRecipe weighted(std::array<double, kModalityCount> w);
    static FusionRecipe one_hot(ModalityId m);
};

struct ContrastiveConfig {
    double temperature = 0.1;
    std::vector<FusionRecipe> recipes;
    // Fixed [kModalityCount * d, d] projection used by concat_project recipes.
    // Absent modalities contribute zero blocks to the concatenation.
    Tensor projection;

    std::size_t fusions() const { return recipes.size(); }
    void validate() const;
};

// The default four-view recipe set: concat-project, uniform weighted sum,
// a random simplex draw, and a one-hot on a random present modality.
ContrastiveConfig default_contrastive_config(const ModalitySet& present, std::size_t embed_dim,
                                             double temperature, const Tensor& projection,
                                             std::mt19937_64& rng);

// Seeded projection for concat_project, entries uniform in +-1/sqrt(3d).
Tensor make_fusion_projection(std::size_t embed_dim, std::mt19937_64& rng);

struct FusedFeatureSet {
    Tensor features;                     // [N*P, d], unit rows
    std::vector<std::size_t> source_ids; // length N*P; entry s = i*P + r has source i
    std::size_t fusions_per_sample = 0;

    std::size_t sources() const { return fusions_per_sample ? source_ids.size() / fusions_per_sample : 0; }
};

using EmbeddingMap = ModalityMap<Tensor>;

FusedFeatureSet fuse_features(const EmbeddingMap& embeddings, const ContrastiveConfig& cfg);

// Gradient of a loss w.r.t. each modality embedding, given its gradient w.r.t.
// the fused (normalized) features.
EmbeddingMap fuse_features_backward(const EmbeddingMap& embeddings, const ContrastiveConfig& cfg,
                                    const Tensor& fused_grad);

// Contrastive fusion loss over an arbitrary feature matrix. The sum runs over
// every anchor s; positives share its source id; the denominator covers every
// other row. Throws ConfigError when some anchor has no positive.
LossAndGrad contrastive_fusion_loss(const Tensor& features, std::span<const std::size_t> source_ids,
                                    double temperature);

// Checked entry point: rows of `fs.features` must be unit norm.
LossAndGrad contrastive_fusion_loss(const FusedFeatureSet& fs, double temperature);

}  // namespace fedmark::loss
