#include "fedmark/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedmark/error.hpp"
#include "fedmark/kernels.hpp"
#include "fedmark/nn.hpp"

namespace fedmark::loss {

namespace {

void check_labels(const Tensor& logits, std::span<const std::size_t> labels, const char* what) {
    require_rank2(logits, what);
    if (labels.size() != logits.rows())
        throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(logits.rows()) + " rows");
    for (std::size_t y : labels)
        if (y >= logits.cols()) throw ShapeError(std::string(what) + ": label out of range");
}

// log-sum-exp of a row scaled by 1/temperature
double row_lse(std::span<const double> row, double temperature) {
    double mx = -INFINITY;
    for (double v : row) mx = std::max(mx, v / temperature);
    double s = 0.0;
    for (double v : row) s += std::exp(v / temperature - mx);
    return mx + std::log(s);
}

}  // namespace

Tensor softmax_rows(const Tensor& logits, double temperature) {
    require_rank2(logits, "softmax_rows");
    Tensor out(logits.shape());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto in = logits.row(r);
        const double lse = row_lse(in, temperature);
        auto o = out.row(r);
        for (std::size_t c = 0; c < in.size(); ++c) o[c] = std::exp(in[c] / temperature - lse);
    }
    return out;
}

LossAndGrad weighted_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                                   std::span<const double> class_weights) {
    check_labels(logits, labels, "cross_entropy");
    if (class_weights.size() != logits.cols()) throw ShapeError("cross_entropy: weight count");
    const std::size_t batch = logits.rows();
    const double inv_b = 1.0 / static_cast<double>(batch);
    LossAndGrad out{0.0, Tensor(logits.shape())};
    for (std::size_t i = 0; i < batch; ++i) {
        auto row = logits.row(i);
        const double lse = row_lse(row, 1.0);
        const double w = class_weights[labels[i]];
        out.loss += w * (lse - row[labels[i]]);
        auto g = out.grad.row(i);
        for (std::size_t c = 0; c < row.size(); ++c) g[c] = w * std::exp(row[c] - lse) * inv_b;
        g[labels[i]] -= w * inv_b;
    }
    out.loss *= inv_b;
    return out;
}

LossAndGrad cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    require_rank2(logits, "cross_entropy");
    const std::vector<double> ones(logits.cols(), 1.0);
    return weighted_cross_entropy(logits, labels, ones);
}

void ClassCounts::validate() const {
    if (std::none_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }))
        throw CountError("ClassCounts: every class count is zero");
}

std::vector<double> balanced_weights(const ClassCounts& counts) {
    counts.validate();
    std::vector<double> w(counts.classes(), 0.0);
    std::size_t present = 0;
    std::size_t first = 0;
    bool uniform = true;
    double inv_sum = 0.0;
    for (std::size_t c = 0; c < counts.classes(); ++c) {
        const std::size_t n = counts.counts[c];
        if (n == 0) continue;
        if (present == 0) first = n;
        uniform = uniform && n == first;
        ++present;
        inv_sum += 1.0 / static_cast<double>(n);
    }
    for (std::size_t c = 0; c < counts.classes(); ++c) {
        const std::size_t n = counts.counts[c];
        if (n == 0) continue;
        // Equal counts make the formula exactly 1; skip the rounding of the sum.
        w[c] = uniform ? 1.0
                       : static_cast<double>(present) / static_cast<double>(n) / inv_sum;
    }
    return w;
}

LossAndGrad balanced_ce(const Tensor& logits, std::span<const std::size_t> labels,
                        const ClassCounts& counts) {
    require_rank2(logits, "balanced_ce");
    if (counts.classes() != logits.cols())
        throw ShapeError("balanced_ce: class count does not match logits");
    const auto w = balanced_weights(counts);
    for (std::size_t y : labels) {
        if (y < counts.classes() && counts.counts[y] == 0)
            throw CountError("balanced_ce: label " + std::to_string(y) + " has zero count");
    }
    return weighted_cross_entropy(logits, labels, w);
}

void KDConfig::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("kd temperature must be > 0");
    if (!(weight >= 0.0 && weight <= 1.0)) throw ConfigError("kd weight must lie in [0, 1]");
}

LossAndGrad kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                    const KDConfig& cfg) {
    cfg.validate();
    require_rank2(student_logits, "kd_loss");
    require_same_shape(student_logits, teacher_logits, "kd_loss");
    const double t = cfg.temperature;
    const std::size_t batch = student_logits.rows();
    LossAndGrad out{0.0, Tensor(student_logits.shape())};
    for (std::size_t i = 0; i < batch; ++i) {
        auto s = student_logits.row(i);
        auto q = teacher_logits.row(i);
        const double lse_s = row_lse(s, t);
        const double lse_q = row_lse(q, t);
        double kl = 0.0;
        auto g = out.grad.row(i);
        for (std::size_t c = 0; c < s.size(); ++c) {
            const double log_pt = q[c] / t - lse_q;
            const double log_ps = s[c] / t - lse_s;
            const double pt = std::exp(log_pt);
            kl += pt * (log_pt - log_ps);
            g[c] = t / static_cast<double>(batch) * (std::exp(log_ps) - pt);
        }
        out.loss += kl;
    }
    out.loss = std::max(0.0, out.loss * t * t / static_cast<double>(batch));
    return out;
}

double combined_weak_stage_loss(double balanced, double kd, double lambda_kd) {
    return (1.0 - lambda_kd) * balanced + lambda_kd * kd;
}

// ---------------------------------------------------------------------------

FusionRecipe FusionRecipe::concat() { return {Kind::concat_project, {}}; }

FusionRecipe FusionRecipe::weighted(std::array<double, kModalityCount> w) {
    return {Kind::weighted_sum, w};
}

FusionRecipe FusionRecipe::one_hot(ModalityId m) {
    std::array<double, kModalityCount> w{};
    w[index_of(m)] = 1.0;
    return {Kind::weighted_sum, w};
}

void ContrastiveConfig::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be > 0");
    if (recipes.size() < 2) throw ConfigError("contrastive fusion needs at least 2 recipes");
}

Tensor make_fusion_projection(std::size_t embed_dim, std::mt19937_64& rng) {
    const std::size_t in = kModalityCount * embed_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor p({in, embed_dim});
    for (double& v : p.data()) v = u(rng);
    return p;
}

ContrastiveConfig default_contrastive_config(const ModalitySet& present, std::size_t embed_dim,
                                             double temperature, const Tensor& projection,
                                             std::mt19937_64& rng) {
    if (present.empty()) throw ModalityError("fusion needs at least one present modality");
    const auto members = present.members();
    ContrastiveConfig cfg;
    cfg.temperature = temperature;
    cfg.projection = projection;
    if (projection.rank() != 2 || projection.rows() != kModalityCount * embed_dim)
        throw ShapeError("fusion projection has the wrong shape");

    cfg.recipes.push_back(FusionRecipe::concat());

    std::array<double, kModalityCount> uniform{};
    for (ModalityId m : members) uniform[index_of(m)] = 1.0 / static_cast<double>(members.size());
    cfg.recipes.push_back(FusionRecipe::weighted(uniform));

    std::exponential_distribution<double> expo(1.0);
    std::array<double, kModalityCount> simplex{};
    double total = 0.0;
    for (ModalityId m : members) total += simplex[index_of(m)] = expo(rng);
    for (ModalityId m : members) simplex[index_of(m)] /= total;
    cfg.recipes.push_back(FusionRecipe::weighted(simplex));

    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    cfg.recipes.push_back(FusionRecipe::one_hot(members[pick(rng)]));
    return cfg;
}

namespace {

struct EmbeddingShape {
    std::size_t n = 0;
    std::size_t d = 0;
};

EmbeddingShape check_embeddings(const EmbeddingMap& embeddings) {
    const auto keys = embeddings.keys();
    if (keys.empty()) throw ModalityError("fuse_features: no modality embeddings");
    EmbeddingShape sh;
    for (ModalityId m : keys) {
        const Tensor& e = embeddings.at(m);
        require_rank2(e, "fuse_features");
        if (sh.n == 0) {
            sh = {e.rows(), e.cols()};
        } else if (e.rows() != sh.n || e.cols() != sh.d) {
            throw ShapeError("fuse_features: embeddings disagree on shape");
        }
    }
    return sh;
}

void check_recipe(const FusionRecipe& r, const EmbeddingMap& embeddings) {
    if (r.kind != FusionRecipe::Kind::weighted_sum) return;
    for (ModalityId m : kAllModalities) {
        if (r.weights[index_of(m)] != 0.0 && !embeddings.contains(m))
            throw ModalityError("fusion recipe references absent modality " +
                                std::string(to_string(m)));
    }
}

// Unnormalized fused features, laid out s = i*P + r.
Tensor fuse_raw(const EmbeddingMap& embeddings, const ContrastiveConfig& cfg, EmbeddingShape sh) {
    const std::size_t p_count = cfg.fusions();
    Tensor raw({sh.n * p_count, sh.d});
    bool need_concat = false;
    for (const auto& r : cfg.recipes) {
        check_recipe(r, embeddings);
        need_concat = need_concat || r.kind == FusionRecipe::Kind::concat_project;
    }
    Tensor projected;
    if (need_concat) {
        if (cfg.projection.rank() != 2 || cfg.projection.rows() != kModalityCount * sh.d ||
            cfg.projection.cols() != sh.d)
            throw ShapeError("fuse_features: projection must be [3d, d]");
        Tensor cat({sh.n, kModalityCount * sh.d});
        for (ModalityId m : embeddings.keys()) {
            const Tensor& e = embeddings.at(m);
            for (std::size_t i = 0; i < sh.n; ++i)
                for (std::size_t c = 0; c < sh.d; ++c) cat.at(i, index_of(m) * sh.d + c) = e.at(i, c);
        }
        projected = Tensor({sh.n, sh.d});
        kernels::parallel::matmul(cat.data(), cfg.projection.data(), projected.data(), sh.n,
                                  kModalityCount * sh.d, sh.d);
    }
    for (std::size_t r = 0; r < p_count; ++r) {
        const auto& recipe = cfg.recipes[r];
        for (std::size_t i = 0; i < sh.n; ++i) {
            auto out = raw.row(i * p_count + r);
            if (recipe.kind == FusionRecipe::Kind::concat_project) {
                auto src = projected.row(i);
                std::copy(src.begin(), src.end(), out.begin());
                continue;
            }
            for (ModalityId m : embeddings.keys()) {
                const double w = recipe.weights[index_of(m)];
                if (w == 0.0) continue;
                auto e = embeddings.at(m).row(i);
                for (std::size_t c = 0; c < sh.d; ++c) out[c] += w * e[c];
            }
        }
    }
    return raw;
}

}  // namespace

FusedFeatureSet fuse_features(const EmbeddingMap& embeddings, const ContrastiveConfig& cfg) {
    cfg.validate();
    const auto sh = check_embeddings(embeddings);
    FusedFeatureSet fs;
    fs.fusions_per_sample = cfg.fusions();
    fs.features = nn::l2_normalize(fuse_raw(embeddings, cfg, sh));
    fs.source_ids.resize(sh.n * cfg.fusions());
    for (std::size_t s = 0; s < fs.source_ids.size(); ++s) fs.source_ids[s] = s / cfg.fusions();
    return fs;
}

EmbeddingMap fuse_features_backward(const EmbeddingMap& embeddings, const ContrastiveConfig& cfg,
                                    const Tensor& fused_grad) {
    cfg.validate();
    const auto sh = check_embeddings(embeddings);
    const Tensor raw = fuse_raw(embeddings, cfg, sh);
    const Tensor g_raw = nn::l2_normalize_backward(raw, fused_grad);
    const std::size_t p_count = cfg.fusions();

    EmbeddingMap grads;
    for (ModalityId m : embeddings.keys()) grads.set(m, Tensor({sh.n, sh.d}));

    Tensor g_proj_out;  // gradient w.r.t. the projected concat, summed over concat recipes
    for (std::size_t r = 0; r < p_count; ++r) {
        const auto& recipe = cfg.recipes[r];
        if (recipe.kind == FusionRecipe::Kind::concat_project) {
            if (g_proj_out.empty()) g_proj_out = Tensor({sh.n, sh.d});
            for (std::size_t i = 0; i < sh.n; ++i) {
                auto src = g_raw.row(i * p_count + r);
                auto dst = g_proj_out.row(i);
                for (std::size_t c = 0; c < sh.d; ++c) dst[c] += src[c];
            }
            continue;
        }
        for (ModalityId m : embeddings.keys()) {
            const double w = recipe.weights[index_of(m)];
            if (w == 0.0) continue;
            Tensor& gm = grads.at(m);
            for (std::size_t i = 0; i < sh.n; ++i) {
                auto src = g_raw.row(i * p_count + r);
                auto dst = gm.row(i);
                for (std::size_t c = 0; c < sh.d; ++c) dst[c] += w * src[c];
            }
        }
    }
    if (!g_proj_out.empty()) {
        Tensor g_cat({sh.n, kModalityCount * sh.d});
        kernels::parallel::matmul_nt(g_proj_out.data(), cfg.projection.data(), g_cat.data(), sh.n,
                                     sh.d, kModalityCount * sh.d);
        for (ModalityId m : embeddings.keys()) {
            Tensor& gm = grads.at(m);
            for (std::size_t i = 0; i < sh.n; ++i)
                for (std::size_t c = 0; c < sh.d; ++c) gm.at(i, c) += g_cat.at(i, index_of(m) * sh.d + c);
        }
    }
    return grads;
}

LossAndGrad contrastive_fusion_loss(const Tensor& features, std::span<const std::size_t> source_ids,
                                    double temperature) {
    require_rank2(features, "contrastive_fusion_loss");
    if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be > 0");
    const std::size_t s_count = features.rows();
    const std::size_t d = features.cols();
    if (source_ids.size() != s_count) throw ShapeError("contrastive_fusion_loss: source id count");
    if (s_count < 2) throw ConfigError("contrastive_fusion_loss needs at least two features");

    std::vector<std::size_t> positives(s_count, 0);
    for (std::size_t s = 0; s < s_count; ++s)
        for (std::size_t p = 0; p < s_count; ++p)
            if (p != s && source_ids[p] == source_ids[s]) ++positives[s];
    for (std::size_t s = 0; s < s_count; ++s)
        if (positives[s] == 0)
            throw ConfigError("contrastive_fusion_loss: feature " + std::to_string(s) +
                              " has no positive partner");

    Tensor sim({s_count, s_count});
    kernels::parallel::matmul_nt(features.data(), features.data(), sim.data(), s_count, d, s_count);

    // coef[s][a] = d loss / d (v_s . v_a / tau), diagonal unused
    Tensor coef({s_count, s_count});
    std::vector<double> row_loss(s_count, 0.0);
    const long rows = static_cast<long>(s_count);
#pragma omp parallel for schedule(static) if (kernels::worker_count() > 1 && s_count * s_count * d >= kernels::kParallelWorkThreshold)
    for (long ss = 0; ss < rows; ++ss) {
        const auto s = static_cast<std::size_t>(ss);
        auto srow = sim.row(s);
        double mx = -INFINITY;
        for (std::size_t a = 0; a < s_count; ++a)
            if (a != s) mx = std::max(mx, srow[a] / temperature);
        double z = 0.0;
        for (std::size_t a = 0; a < s_count; ++a)
            if (a != s) z += std::exp(srow[a] / temperature - mx);
        const double lse = mx + std::log(z);
        const double inv_p = 1.0 / static_cast<double>(positives[s]);
        double pos_sum = 0.0;
        auto crow = coef.row(s);
        for (std::size_t a = 0; a < s_count; ++a) {
            if (a == s) continue;
            double c = std::exp(srow[a] / temperature - lse);
            if (source_ids[a] == source_ids[s]) {
                pos_sum += srow[a] / temperature;
                c -= inv_p;
            }
            crow[a] = c;
        }
        row_loss[s] = lse - inv_p * pos_sum;
    }

    LossAndGrad out;
    for (double l : row_loss) out.loss += l;

    // grad V = (coef + coef^T) V / tau
    Tensor sym({s_count, s_count});
    for (std::size_t s = 0; s < s_count; ++s)
        for (std::size_t a = 0; a < s_count; ++a)
            sym.at(s, a) = (coef.at(s, a) + coef.at(a, s)) / temperature;
    out.grad = Tensor({s_count, d});
    kernels::parallel::matmul(sym.data(), features.data(), out.grad.data(), s_count, s_count, d);
    return out;
}

LossAndGrad contrastive_fusion_loss(const FusedFeatureSet& fs, double temperature) {
    require_rank2(fs.features, "contrastive_fusion_loss");
    for (std::size_t r = 0; r < fs.features.rows(); ++r) {
        double sq = 0.0;
        for (double v : fs.features.row(r)) sq += v * v;
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-9)
            throw DegenerateInputError("contrastive_fusion_loss: row " + std::to_string(r) +
                                       " is not unit norm");
    }
    return contrastive_fusion_loss(fs.features, fs.source_ids, temperature);
}

}  // namespace fedmark::loss
