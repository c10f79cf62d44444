#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "fedmark/error.hpp"
#include "fedmark/fl.hpp"

namespace fedmark::fl {

std::string_view to_string(StageId s) {
    switch (s) {
        case StageId::pretrain: return "pretrain";
        case StageId::unsupervised_fl: return "unsupervised_fl";
        case StageId::weak_fl: return "weak_fl";
    }
    return "?";
}

ModelBundle ModelBundle::init(const ModelSpec& spec, std::mt19937_64& rng) {
    ModelBundle b;
    for (ModalityId m : kAllModalities) {
        nn::LayerSpec ls{{modality_dim(m), spec.encoder_hidden, spec.embed_dim},
                         {nn::Activation::relu, nn::Activation::identity}};
        b.encoders.set(m, nn::DenseNet::init(ls, rng));
    }
    nn::LayerSpec cs{{kModalityCount * spec.embed_dim, spec.classifier_hidden, spec.classes},
                     {nn::Activation::relu, nn::Activation::identity}};
    b.classifier = nn::DenseNet::init(cs, rng);
    return b;
}

std::size_t ModelBundle::embed_dim() const {
    return classifier.input_dim() / kModalityCount;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "payload encoding assumes a little-endian host");

void append_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
    const std::size_t bytes = t.size() * sizeof(double);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, t.data().data(), bytes);
}

void append_net(std::vector<std::uint8_t>& out, const nn::DenseNet& net) {
    for (const auto& l : net.layers()) {
        append_tensor(out, l.weight);
        append_tensor(out, l.bias);
    }
}

void read_net(const std::vector<std::uint8_t>& bytes, std::size_t& pos, nn::DenseNet& net) {
    for (auto& l : net.layers()) {
        for (Tensor* t : {&l.weight, &l.bias}) {
            const std::size_t n = t->size() * sizeof(double);
            if (pos + n > bytes.size()) throw ShapeError("deserialize: payload too short");
            std::memcpy(t->data().data(), bytes.data() + pos, n);
            pos += n;
        }
    }
}

}  // namespace

std::vector<std::uint8_t> serialize(const ModelBundle& bundle, bool include_classifier) {
    std::vector<std::uint8_t> out;
    for (ModalityId m : bundle.encoders.keys()) append_net(out, bundle.encoders.at(m));
    if (include_classifier) append_net(out, bundle.classifier);
    return out;
}

ModelBundle deserialize(const std::vector<std::uint8_t>& bytes, const ModelSpec& spec,
                        const ModalitySet& encoders, bool include_classifier) {
    std::mt19937_64 shape_only(0);
    ModelBundle b = ModelBundle::init(spec, shape_only);
    for (ModalityId m : kAllModalities)
        if (!encoders.contains(m)) b.encoders.erase(m);
    std::size_t pos = 0;
    for (ModalityId m : b.encoders.keys()) read_net(bytes, pos, b.encoders.at(m));
    if (include_classifier) read_net(bytes, pos, b.classifier);
    if (pos != bytes.size()) throw ShapeError("deserialize: trailing bytes in payload");
    return b;
}

std::size_t payload_bytes(const ModelBundle& bundle, bool include_classifier) {
    std::size_t n = 0;
    for (ModalityId m : bundle.encoders.keys()) n += bundle.encoders.at(m).parameter_count();
    if (include_classifier) n += bundle.classifier.parameter_count();
    return n * sizeof(double);
}

ModalitySet common_modalities(const std::vector<data::MultiModalSample>& samples,
                              std::span<const std::size_t> indices, const ModalitySet& allowed) {
    ModalitySet out = allowed;
    for (std::size_t i : indices)
        for (ModalityId m : kAllModalities)
            if (!samples[i].modality_data.contains(m)) out.erase(m);
    return out;
}

InputBatch make_batch(const std::vector<data::MultiModalSample>& samples,
                      std::span<const std::size_t> indices, const ModalitySet& use) {
    InputBatch batch;
    for (ModalityId m : use.members()) {
        const std::size_t dim = modality_dim(m);
        Tensor x({indices.size(), dim});
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const Tensor* src = samples[indices[r]].modality_data.find(m);
            if (!src) throw ModalityError("make_batch: sample lacks " + std::string(to_string(m)));
            if (src->size() != dim) throw ShapeError("make_batch: wrong feature width");
            std::copy(src->data().begin(), src->data().end(), x.row(r).begin());
        }
        batch.set(m, std::move(x));
    }
    return batch;
}

BundleTrace forward_embeddings(const ModelBundle& bundle, const InputBatch& inputs) {
    BundleTrace t;
    for (ModalityId m : inputs.keys()) {
        const nn::DenseNet* enc = bundle.encoders.find(m);
        if (!enc) throw ModalityError("bundle has no encoder for " + std::string(to_string(m)));
        auto trace = nn::forward_trace(*enc, inputs.at(m));
        t.raw.set(m, trace.result());
        t.embeddings.set(m, nn::l2_normalize(trace.result()));
        t.encoder.set(m, std::move(trace));
    }
    return t;
}

namespace {

Tensor concat_embeddings(const loss::EmbeddingMap& emb, std::size_t d) {
    const auto keys = emb.keys();
    if (keys.empty()) throw ModalityError("no modality to classify from");
    const std::size_t batch = emb.at(keys.front()).rows();
    Tensor cat({batch, kModalityCount * d});
    for (ModalityId m : keys) {
        const Tensor& e = emb.at(m);
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t c = 0; c < d; ++c) cat.at(r, index_of(m) * d + c) = e.at(r, c);
    }
    return cat;
}

}  // namespace

BundleTrace forward_bundle(const ModelBundle& bundle, const InputBatch& inputs) {
    BundleTrace t = forward_embeddings(bundle, inputs);
    t.classifier = nn::forward_trace(bundle.classifier, concat_embeddings(t.embeddings, bundle.embed_dim()));
    return t;
}

Tensor predict_logits(const ModelBundle& bundle, const InputBatch& inputs) {
    return forward_bundle(bundle, inputs).logits();
}

void backward_embeddings(const ModelBundle& bundle, const BundleTrace& trace,
                         const loss::EmbeddingMap& embedding_grads, BundleGrads& out) {
    for (ModalityId m : embedding_grads.keys()) {
        const Tensor g_raw = nn::l2_normalize_backward(trace.raw.at(m), embedding_grads.at(m));
        out.encoders.set(m, nn::backward(bundle.encoders.at(m), trace.encoder.at(m), g_raw));
    }
}

BundleGrads backward_bundle(const ModelBundle& bundle, const BundleTrace& trace,
                            const Tensor& logit_grad) {
    BundleGrads out;
    out.classifier = nn::backward(bundle.classifier, trace.classifier, logit_grad);
    const std::size_t d = bundle.embed_dim();
    const Tensor& g_cat = out.classifier->input;
    loss::EmbeddingMap emb_grads;
    for (ModalityId m : trace.embeddings.keys()) {
        Tensor g({g_cat.rows(), d});
        for (std::size_t r = 0; r < g_cat.rows(); ++r)
            for (std::size_t c = 0; c < d; ++c) g.at(r, c) = g_cat.at(r, index_of(m) * d + c);
        emb_grads.set(m, std::move(g));
    }
    backward_embeddings(bundle, trace, emb_grads, out);
    return out;
}

void apply_sgd(ModelBundle& bundle, const BundleGrads& grads, double learning_rate) {
    for (ModalityId m : grads.encoders.keys())
        nn::sgd_step_inplace(bundle.encoders.at(m), grads.encoders.at(m), learning_rate);
    if (grads.classifier) nn::sgd_step_inplace(bundle.classifier, *grads.classifier, learning_rate);
}

}  // namespace fedmark::fl
