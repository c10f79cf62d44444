#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>

#include "fedmark/error.hpp"
#include "fedmark/fl.hpp"

namespace fedmark::fl {

namespace {

std::vector<std::vector<std::size_t>> shuffled_chunks(std::vector<std::size_t> pool,
                                                      std::size_t batch_size, std::size_t min_size,
                                                      std::mt19937_64& rng) {
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t at = 0; at < pool.size(); at += batch_size) {
        const std::size_t end = std::min(pool.size(), at + batch_size);
        if (end - at < min_size) break;
        out.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(at),
                         pool.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

std::size_t argmax_row(const Tensor& t, std::size_t r) {
    const auto row = t.row(r);
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::size_t truth_of(const data::MultiModalSample& s) {
    const std::size_t label = s.fine_label ? *s.fine_label : s.activity;
    if (label == 0) throw DataError("evaluation sample carries no label");
    return label - 1;
}

// Unlabeled samples that carry every modality in `usable`.
std::vector<std::size_t> unsup_pool(const NodeState& node, const ModalitySet& usable) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < node.unlabeled_store.size(); ++i) {
        const auto& s = node.unlabeled_store[i];
        bool ok = true;
        for (ModalityId m : usable.members()) ok = ok && s.modality_data.contains(m);
        if (ok) pool.push_back(i);
    }
    return pool;
}

double contrastive_pass(const ModelBundle& bundle, const NodeState& node,
                        const std::vector<std::size_t>& pool, const ModalitySet& usable,
                        const loss::ContrastiveConfig& ccfg, std::size_t batch_size) {
    double total = 0.0;
    std::size_t anchors = 0;
    for (std::size_t at = 0; at < pool.size(); at += batch_size) {
        const std::size_t end = std::min(pool.size(), at + batch_size);
        if (end - at < 2) break;
        std::span<const std::size_t> idx(pool.data() + at, end - at);
        const auto trace = forward_embeddings(bundle, make_batch(node.unlabeled_store, idx, usable));
        const auto fused = loss::fuse_features(trace.embeddings, ccfg);
        total += loss::contrastive_fusion_loss(fused, ccfg.temperature).loss;
        anchors += fused.source_ids.size();
    }
    return anchors ? total / static_cast<double>(anchors) : 0.0;
}

}  // namespace

loss::ClassCounts NodeState::weak_label_counts(std::size_t classes) const {
    loss::ClassCounts c;
    c.counts.assign(classes, 0);
    for (const auto& b : weak_store)
        for (std::size_t label : b.label_multiset) {
            if (label == 0 || label > classes) throw DataError("weak label out of range");
            ++c.counts[label - 1];
        }
    return c;
}

double train_supervised(ModelBundle& bundle, const std::vector<data::MultiModalSample>& samples,
                        const SupervisedConfig& cfg, std::mt19937_64& rng) {
    if (cfg.batch_size == 0 || !(cfg.learning_rate > 0.0))
        throw ParameterError("supervised: batch_size and learning_rate must be positive");
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].fine_label) pool.push_back(i);
    if (pool.empty()) throw DataError("supervised: no labeled samples");

    double last = 0.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double sum = 0.0;
        std::size_t seen = 0;
        for (const auto& chunk : shuffled_chunks(pool, cfg.batch_size, 1, rng)) {
            const ModalitySet use = common_modalities(samples, chunk, ModalitySet::all());
            if (use.empty()) continue;
            std::vector<std::size_t> labels;
            for (std::size_t i : chunk) labels.push_back(*samples[i].fine_label - 1);
            const auto trace = forward_bundle(bundle, make_batch(samples, chunk, use));
            const auto ce = loss::cross_entropy(trace.logits(), labels);
            apply_sgd(bundle, backward_bundle(bundle, trace, ce.grad), cfg.learning_rate);
            sum += ce.loss * static_cast<double>(chunk.size());
            seen += chunk.size();
        }
        last = seen ? sum / static_cast<double>(seen) : 0.0;
    }
    return last;
}

double local_contrastive_loss(const ModelBundle& bundle, const NodeState& node,
                              const ModalitySet& usable, const UnsupConfig& cfg,
                              const Tensor& projection, std::mt19937_64& rng) {
    const auto ccfg = loss::default_contrastive_config(usable, bundle.embed_dim(), cfg.temperature,
                                                       projection, rng);
    return contrastive_pass(bundle, node, unsup_pool(node, usable), usable, ccfg, cfg.batch_size);
}

UnsupRoundResult local_unsup_round(const NodeState& node, const ModelBundle& global,
                                   const ModalitySet& usable_in, const UnsupConfig& cfg,
                                   const Tensor& projection, std::mt19937_64& rng) {
    UnsupRoundResult res;
    res.update.node_id = node.node_id;
    ModalitySet usable;
    for (ModalityId m : usable_in.members())
        if (node.available.contains(m) && global.encoders.contains(m)) usable.insert(m);
    if (usable.empty()) {
        res.skipped = true;
        res.skip_reason = "no usable modality";
        return res;
    }
    const auto pool = unsup_pool(node, usable);
    if (pool.size() < 2) {
        res.skipped = true;
        res.skip_reason = "too few unlabeled samples";
        return res;
    }

    const auto ccfg = loss::default_contrastive_config(usable, global.embed_dim(), cfg.temperature,
                                                       projection, rng);
    ModelBundle local = global;
    res.loss_before = contrastive_pass(local, node, pool, usable, ccfg, cfg.batch_size);
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        for (const auto& chunk : shuffled_chunks(pool, cfg.batch_size, 2, rng)) {
            const auto trace = forward_embeddings(local, make_batch(node.unlabeled_store, chunk, usable));
            const auto fused = loss::fuse_features(trace.embeddings, ccfg);
            auto lg = loss::contrastive_fusion_loss(fused, ccfg.temperature);
            // Per-anchor mean keeps the step size independent of the batch size.
            const double scale = 1.0 / static_cast<double>(fused.source_ids.size());
            for (double& g : lg.grad.data()) g *= scale;
            BundleGrads grads;
            backward_embeddings(local, trace, loss::fuse_features_backward(trace.embeddings, ccfg, lg.grad),
                                grads);
            apply_sgd(local, grads, cfg.learning_rate);
        }
    }
    res.loss_after = contrastive_pass(local, node, pool, usable, ccfg, cfg.batch_size);
    for (ModalityId m : usable.members()) {
        res.update.encoders.set(m, local.encoders.at(m));
        res.update.counts.set(m, pool.size());
    }
    return res;
}

namespace {

// Sum_k w_k * net_k, accumulated in the given order.
nn::DenseNet weighted_average(const std::vector<const nn::DenseNet*>& nets,
                              const std::vector<double>& weights) {
    nn::DenseNet out = *nets.front();
    for (std::size_t l = 0; l < out.layers().size(); ++l) {
        auto& layer = out.layers()[l];
        for (Tensor* dst : {&layer.weight, &layer.bias}) {
            const bool is_weight = dst == &layer.weight;
            auto values = dst->data();
            for (std::size_t i = 0; i < values.size(); ++i) {
                double acc = 0.0;
                for (std::size_t k = 0; k < nets.size(); ++k) {
                    const auto& src = nets[k]->layers()[l];
                    acc += weights[k] * (is_weight ? src.weight : src.bias)[i];
                }
                values[i] = acc;
            }
        }
    }
    return out;
}

void require_same_architecture(const nn::DenseNet& a, const nn::DenseNet& b) {
    if (a.layers().size() != b.layers().size()) throw ShapeError("aggregation: layer count mismatch");
    for (std::size_t l = 0; l < a.layers().size(); ++l) {
        require_same_shape(a.layers()[l].weight, b.layers()[l].weight, "aggregation weight");
        require_same_shape(a.layers()[l].bias, b.layers()[l].bias, "aggregation bias");
    }
}

nn::DenseNet count_weighted(const std::vector<const nn::DenseNet*>& nets,
                            const std::vector<std::size_t>& counts) {
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    std::vector<double> w;
    for (std::size_t n : counts) w.push_back(static_cast<double>(n) / total);
    for (const auto* n : nets) require_same_architecture(*nets.front(), *n);
    return weighted_average(nets, w);
}

}  // namespace

ModalityMap<nn::DenseNet> modality_wise_fedavg(const std::vector<EncoderUpdate>& updates,
                                               const ModalityMap<nn::DenseNet>& previous) {
    std::vector<const EncoderUpdate*> ordered;
    for (const auto& u : updates) ordered.push_back(&u);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const EncoderUpdate* a, const EncoderUpdate* b) { return a->node_id < b->node_id; });

    ModalityMap<nn::DenseNet> out = previous;
    for (ModalityId m : kAllModalities) {
        std::vector<const nn::DenseNet*> nets;
        std::vector<std::size_t> counts;
        for (const auto* u : ordered) {
            const nn::DenseNet* net = u->encoders.find(m);
            if (!net) continue;
            const std::size_t* n = u->counts.find(m);
            if (!n) throw CountError("aggregation: update for " + std::string(to_string(m)) + " has no count");
            if (*n == 0) continue;
            nets.push_back(net);
            counts.push_back(*n);
        }
        if (nets.empty()) continue;
        if (const nn::DenseNet* prev = previous.find(m)) require_same_architecture(*prev, *nets.front());
        out.set(m, count_weighted(nets, counts));
    }
    return out;
}

WeakRoundResult local_weak_round(const NodeState& node, const ModelBundle& global,
                                 const ModalitySet& usable_in, const WeakConfig& cfg,
                                 std::mt19937_64& rng) {
    cfg.kd.validate();
    WeakRoundResult res;
    ModalitySet usable;
    for (ModalityId m : usable_in.members())
        if (node.available.contains(m) && global.encoders.contains(m)) usable.insert(m);
    if (usable.empty()) {
        res.skipped = true;
        res.skip_reason = "no usable modality";
        return res;
    }
    if (node.weak_store.empty()) {
        res.skipped = true;
        res.skip_reason = "no weakly labeled data";
        return res;
    }

    const auto counts = node.weak_label_counts(global.classes());
    const ModelBundle& teacher = global;
    ModelBundle local = global;
    std::vector<std::size_t> order(node.weak_store.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::size_t used = 0;
    ModalityMap<std::size_t> per_modality;
    // The teacher is frozen for the round, so its logits are computed once per batch.
    std::vector<std::optional<Tensor>> teacher_logits(node.weak_store.size());
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b : order) {
            const auto& wb = node.weak_store[b];
            const ModalitySet use = common_modalities(node.unlabeled_store, wb.sample_indices, usable);
            if (use.empty()) continue;
            const InputBatch inputs = make_batch(node.unlabeled_store, wb.sample_indices, use);
            const auto trace = forward_bundle(local, inputs);
            std::vector<std::size_t> labels;
            for (std::size_t l : wb.label_multiset) labels.push_back(l - 1);
            const auto perm = weak::permutation_ce_loss(trace.logits(), labels, cfg.permutation, rng);

            const auto base = cfg.balanced ? loss::balanced_ce(trace.logits(), perm.best_assignment, counts)
                                           : loss::cross_entropy(trace.logits(), perm.best_assignment);
            const double lambda = cfg.kd.weight;
            Tensor grad = base.grad;
            double kd_value = 0.0;
            if (lambda > 0.0) {
                if (!teacher_logits[b]) teacher_logits[b] = predict_logits(teacher, inputs);
                const auto kd = loss::kd_loss(trace.logits(), *teacher_logits[b], cfg.kd);
                kd_value = kd.loss;
                for (std::size_t i = 0; i < grad.size(); ++i)
                    grad[i] = (1.0 - lambda) * base.grad[i] + lambda * kd.grad[i];
            }
            apply_sgd(local, backward_bundle(local, trace, grad), cfg.learning_rate);

            const std::size_t n = wb.sample_indices.size();
            sum += loss::combined_weak_stage_loss(base.loss, kd_value, lambda) * static_cast<double>(n);
            seen += n;
            if (epoch == 0) {
                used += n;
                for (ModalityId m : use.members())
                    per_modality.set(m, (per_modality.contains(m) ? per_modality.at(m) : 0) + n);
            }
        }
        res.loss = seen ? sum / static_cast<double>(seen) : 0.0;
    }
    if (used == 0) {
        res.skipped = true;
        res.skip_reason = "no weak batch shares a usable modality";
        return res;
    }
    res.model = std::move(local);
    res.counts = per_modality;
    res.classifier_count = used;
    return res;
}

ModelBundle aggregate_weak(const std::vector<WeakRoundResult>& results, const ModelBundle& previous,
                           const std::vector<std::string>& node_ids) {
    if (node_ids.size() != results.size()) throw ParameterError("aggregate_weak: one node id per result");
    std::vector<EncoderUpdate> updates;
    std::vector<std::pair<std::string, const WeakRoundResult*>> live;
    for (std::size_t k = 0; k < results.size(); ++k) {
        if (results[k].skipped) continue;
        EncoderUpdate u;
        u.node_id = node_ids[k];
        for (ModalityId m : results[k].counts.keys()) u.encoders.set(m, results[k].model.encoders.at(m));
        u.counts = results[k].counts;
        updates.push_back(std::move(u));
        live.emplace_back(node_ids[k], &results[k]);
    }
    ModelBundle out = previous;
    if (live.empty()) return out;
    out.encoders = modality_wise_fedavg(updates, previous.encoders);

    std::stable_sort(live.begin(), live.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<const nn::DenseNet*> nets;
    std::vector<std::size_t> counts;
    for (const auto& [id, r] : live) {
        nets.push_back(&r->model.classifier);
        counts.push_back(r->classifier_count);
    }
    require_same_architecture(previous.classifier, *nets.front());
    out.classifier = count_weighted(nets, counts);
    out.version = previous.version + 1;
    return out;
}

std::vector<std::size_t> predict(const ModelBundle& bundle,
                                 const std::vector<data::MultiModalSample>& samples) {
    std::vector<std::size_t> out(samples.size(), 0);
    // Group by modality set so each group runs as one batch.
    std::map<std::string, std::vector<std::size_t>> groups;
    std::map<std::string, ModalitySet> sets;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        ModalitySet s;
        for (ModalityId m : kAllModalities)
            if (samples[i].modality_data.contains(m) && bundle.encoders.contains(m)) s.insert(m);
        if (s.empty()) throw ModalityError("predict: sample shares no modality with the model");
        const std::string key = to_string(s);
        groups[key].push_back(i);
        sets[key] = s;
    }
    for (const auto& [key, idx] : groups) {
        const Tensor logits = predict_logits(bundle, make_batch(samples, idx, sets.at(key)));
        for (std::size_t r = 0; r < idx.size(); ++r) out[idx[r]] = argmax_row(logits, r);
    }
    return out;
}

EvalResult evaluate_predictions(const std::vector<std::size_t>& predicted,
                                const std::vector<std::size_t>& truth, std::size_t classes,
                                const std::vector<std::size_t>& train_counts) {
    if (predicted.size() != truth.size()) throw ShapeError("evaluate: prediction/truth length mismatch");
    if (train_counts.size() != classes) throw ShapeError("evaluate: train_counts length != classes");
    if (truth.empty()) throw DataError("evaluate: empty test set");
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    EvalResult r;
    r.total = truth.size();
    r.support.assign(classes, 0);
    std::vector<std::size_t> correct(classes, 0);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= classes) throw DataError("evaluate: label out of range");
        ++r.support[truth[i]];
        if (predicted[i] == truth[i]) {
            ++correct[truth[i]];
            ++hits;
        }
    }
    r.overall = static_cast<double>(hits) / static_cast<double>(truth.size());
    r.per_class.assign(classes, nan);
    for (std::size_t c = 0; c < classes; ++c)
        if (r.support[c]) r.per_class[c] = static_cast<double>(correct[c]) / static_cast<double>(r.support[c]);

    // Only classes the node has seen in training are ranked; k keeps head and tail disjoint.
    std::vector<std::size_t> rank;
    for (std::size_t c = 0; c < classes; ++c)
        if (train_counts[c] > 0) rank.push_back(c);
    std::stable_sort(rank.begin(), rank.end(),
                     [&](std::size_t a, std::size_t b) { return train_counts[a] > train_counts[b]; });
    const std::size_t k = std::min<std::size_t>(4, rank.size() / 2);
    auto macro = [&](auto first, auto last) {
        double sum = 0.0;
        std::size_t n = 0;
        for (auto it = first; it != last; ++it)
            if (r.support[*it]) {
                sum += r.per_class[*it];
                ++n;
            }
        return n ? sum / static_cast<double>(n) : nan;
    };
    r.head = macro(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(k));
    r.tail = macro(rank.end() - static_cast<std::ptrdiff_t>(k), rank.end());
    return r;
}

EvalResult evaluate(const ModelBundle& bundle, const std::vector<data::MultiModalSample>& test_set,
                    const std::vector<std::size_t>& train_counts) {
    std::vector<std::size_t> truth;
    for (const auto& s : test_set) truth.push_back(truth_of(s));
    return evaluate_predictions(predict(bundle, test_set), truth, bundle.classes(), train_counts);
}

}  // namespace fedmark::fl
