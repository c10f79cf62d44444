#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fedmark/datagen.hpp"
#include "fedmark/losses.hpp"
#include "fedmark/modality.hpp"
#include "fedmark/nn.hpp"
#include "fedmark/weak_labels.hpp"

namespace fedmark::fl {

enum class StageId { pretrain, unsupervised_fl, weak_fl };
std::string_view to_string(StageId s);

struct ModelSpec {
    std::size_t encoder_hidden = 32;
    std::size_t embed_dim = 16;
    std::size_t classifier_hidden = 32;
    std::size_t classes = 8;
};

// One encoder per modality (input -> hidden relu -> embed, L2-normalized) and
// a two-layer classifier over the concatenated embeddings. Absent modalities
// contribute zero blocks to the concatenation.
struct ModelBundle {
    ModalityMap<nn::DenseNet> encoders;
    nn::DenseNet classifier;
    std::uint64_t version = 0;

    static ModelBundle init(const ModelSpec& spec, std::mt19937_64& rng);
    std::size_t embed_dim() const;
    std::size_t classes() const { return classifier.output_dim(); }

    friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

// Flat little-endian float64 payload: for depth, radar, audio (those present)
// then the classifier, each layer's weight then bias in row-major order.
std::vector<std::uint8_t> serialize(const ModelBundle& bundle, bool include_classifier = true);
ModelBundle deserialize(const std::vector<std::uint8_t>& bytes, const ModelSpec& spec,
                        const ModalitySet& encoders, bool include_classifier = true);
std::size_t payload_bytes(const ModelBundle& bundle, bool include_classifier = true);

// Per-modality input batch; each tensor is [batch, modality_dim].
using InputBatch = ModalityMap<Tensor>;

// Stacks the modalities in `use` (which every sample must carry).
InputBatch make_batch(const std::vector<data::MultiModalSample>& samples,
                      std::span<const std::size_t> indices, const ModalitySet& use);
// Modalities carried by every listed sample, intersected with `allowed`.
ModalitySet common_modalities(const std::vector<data::MultiModalSample>& samples,
                              std::span<const std::size_t> indices, const ModalitySet& allowed);

struct BundleTrace {
    ModalityMap<nn::ForwardTrace> encoder;
    ModalityMap<Tensor> raw;        // encoder outputs before normalization
    loss::EmbeddingMap embeddings;  // normalized
    nn::ForwardTrace classifier;
    const Tensor& logits() const { return classifier.result(); }
};

BundleTrace forward_embeddings(const ModelBundle& bundle, const InputBatch& inputs);
BundleTrace forward_bundle(const ModelBundle& bundle, const InputBatch& inputs);
Tensor predict_logits(const ModelBundle& bundle, const InputBatch& inputs);

struct BundleGrads {
    ModalityMap<nn::NetGrads> encoders;
    std::optional<nn::NetGrads> classifier;
};

// Backpropagates gradients w.r.t. the normalized embeddings into the encoders.
void backward_embeddings(const ModelBundle& bundle, const BundleTrace& trace,
                         const loss::EmbeddingMap& embedding_grads, BundleGrads& out);
// Full backward from d loss / d logits.
BundleGrads backward_bundle(const ModelBundle& bundle, const BundleTrace& trace,
                            const Tensor& logit_grad);
void apply_sgd(ModelBundle& bundle, const BundleGrads& grads, double learning_rate);

// ---------------------------------------------------------------------------

struct SupervisedConfig {
    std::size_t epochs = 30;
    double learning_rate = 0.05;
    std::size_t batch_size = 16;
};

// Plain cross-entropy on fine labels; returns the last epoch's mean loss.
double train_supervised(ModelBundle& bundle, const std::vector<data::MultiModalSample>& samples,
                        const SupervisedConfig& cfg, std::mt19937_64& rng);

struct UnsupConfig {
    std::size_t local_epochs = 1;
    double learning_rate = 0.01;
    std::size_t batch_size = 16;
    double temperature = 0.1;
};

struct WeakConfig {
    std::size_t local_epochs = 10;
    double learning_rate = 0.01;
    std::size_t batch_size = 16;
    bool balanced = true;
    loss::KDConfig kd;
    weak::PermutationConfig permutation;
};

struct NodeState {
    std::string node_id;
    std::size_t index = 0;
    data::Group group = data::Group::NC;
    ModalitySet available = ModalitySet::all();
    std::vector<data::MultiModalSample> unlabeled_store;  // every selected sample
    std::vector<std::size_t> labeled_store;               // indices with a fine label
    std::vector<ActivityLogEntry> log;
    std::vector<weak::WeakBatch> weak_store;              // indices into unlabeled_store
    std::vector<data::MultiModalSample> test_set;
    ModelBundle local_model;
    double clock = 0.0;

    // Counts of the licensed weak labels, index 0 = class 1.
    loss::ClassCounts weak_label_counts(std::size_t classes) const;
};

struct EncoderUpdate {
    std::string node_id;
    ModalityMap<nn::DenseNet> encoders;
    ModalityMap<std::size_t> counts;
};

struct UnsupRoundResult {
    bool skipped = false;
    std::string skip_reason;
    EncoderUpdate update;
    double loss_before = 0.0;  // mean Eq-1 loss per anchor over the node's batches
    double loss_after = 0.0;
};

// Mean contrastive fusion loss per anchor over the node's unlabeled data,
// evaluated with a fixed recipe set drawn from `rng`.
double local_contrastive_loss(const ModelBundle& bundle, const NodeState& node,
                              const ModalitySet& usable, const UnsupConfig& cfg,
                              const Tensor& projection, std::mt19937_64& rng);

UnsupRoundResult local_unsup_round(const NodeState& node, const ModelBundle& global,
                                   const ModalitySet& usable, const UnsupConfig& cfg,
                                   const Tensor& projection, std::mt19937_64& rng);

// Count-weighted average per modality over the updates that carry it.
// Modalities nobody submitted keep `previous`.
ModalityMap<nn::DenseNet> modality_wise_fedavg(const std::vector<EncoderUpdate>& updates,
                                               const ModalityMap<nn::DenseNet>& previous);

struct WeakRoundResult {
    bool skipped = false;
    std::string skip_reason;
    ModelBundle model;
    ModalityMap<std::size_t> counts;
    std::size_t classifier_count = 0;
    double loss = 0.0;  // mean combined loss over the last epoch
};

WeakRoundResult local_weak_round(const NodeState& node, const ModelBundle& global,
                                 const ModalitySet& usable, const WeakConfig& cfg,
                                 std::mt19937_64& rng);

// Modality-wise averaging of encoders plus a count-weighted classifier average.
ModelBundle aggregate_weak(const std::vector<WeakRoundResult>& results, const ModelBundle& previous,
                           const std::vector<std::string>& node_ids);

struct EvalResult {
    double overall = 0.0;
    std::vector<double> per_class;          // NaN where the test set has no support
    std::vector<std::size_t> support;
    double head = 0.0;                      // NaN when no head class has support
    double tail = 0.0;
    std::size_t total = 0;
};

// Head = the four most frequent classes of `train_counts`, tail = the four
// least frequent, ranking only classes with a nonzero count (ties by class
// index). With fewer than eight such classes each side takes half of them.
// Accuracies are macro over classes with test support; overall is pooled.
EvalResult evaluate(const ModelBundle& bundle, const std::vector<data::MultiModalSample>& test_set,
                    const std::vector<std::size_t>& train_counts);
EvalResult evaluate_predictions(const std::vector<std::size_t>& predicted,
                                const std::vector<std::size_t>& truth, std::size_t classes,
                                const std::vector<std::size_t>& train_counts);

std::vector<std::size_t> predict(const ModelBundle& bundle,
                                 const std::vector<data::MultiModalSample>& samples);

}  // namespace fedmark::fl
