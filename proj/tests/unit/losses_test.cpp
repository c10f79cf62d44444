#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedmark/error.hpp"
#include "fedmark/losses.hpp"
#include "fedmark/nn.hpp"
#include "oracles.hpp"

using namespace fedmark;
using loss::FusionRecipe;

namespace {

Tensor gaussian(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Tensor t = Tensor::zeros(r, c);
    for (double& v : t.data()) v = n(rng);
    return t;
}

double row_norm(const Tensor& t, std::size_t r) {
    double s = 0.0;
    for (double v : t.row(r)) s += v * v;
    return std::sqrt(s);
}

}  // namespace

TEST(FuseFeatures, SingleModalityTwoOneHotRecipesCopiesEmbedding) {
    loss::EmbeddingMap emb;
    emb.set(ModalityId::radar, nn::l2_normalize(gaussian(3, 4, 1)));
    loss::ContrastiveConfig cfg;
    cfg.recipes = {FusionRecipe::one_hot(ModalityId::radar), FusionRecipe::one_hot(ModalityId::radar)};
    const auto fs = loss::fuse_features(emb, cfg);
    ASSERT_EQ(fs.features.rows(), 6u);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 4; ++c) {
            EXPECT_NEAR(fs.features.at(2 * i, c), emb.at(ModalityId::radar).at(i, c), 1e-15);
            EXPECT_EQ(fs.features.at(2 * i, c), fs.features.at(2 * i + 1, c));
        }
    EXPECT_EQ(fs.source_ids, (std::vector<std::size_t>{0, 0, 1, 1, 2, 2}));
}

TEST(FuseFeatures, HalfHalfWeightedSumIsNormalizedAverage) {
    loss::EmbeddingMap emb;
    const Tensor e1 = nn::l2_normalize(gaussian(2, 3, 2)), e2 = nn::l2_normalize(gaussian(2, 3, 3));
    emb.set(ModalityId::depth, e1);
    emb.set(ModalityId::audio, e2);
    loss::ContrastiveConfig cfg;
    cfg.recipes = {FusionRecipe::weighted({0.5, 0.0, 0.5}), FusionRecipe::one_hot(ModalityId::depth)};
    const auto fs = loss::fuse_features(emb, cfg);
    for (std::size_t i = 0; i < 2; ++i) {
        Tensor avg = Tensor::zeros(1, 3);
        for (std::size_t c = 0; c < 3; ++c) avg.at(0, c) = 0.5 * e1.at(i, c) + 0.5 * e2.at(i, c);
        const auto expect = nn::l2_normalize(avg);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(fs.features.at(2 * i, c), expect.at(0, c), 1e-15);
    }
}

TEST(FuseFeatures, ConcatProjectMatchesHandMatrixProduct) {
    const std::size_t d = 2;
    std::mt19937_64 rng(5);
    const Tensor proj = loss::make_fusion_projection(d, rng);
    loss::EmbeddingMap emb;
    emb.set(ModalityId::depth, Tensor::from_rows({{0.6, 0.8}}));
    emb.set(ModalityId::audio, Tensor::from_rows({{1.0, 0.0}}));
    loss::ContrastiveConfig cfg;
    cfg.projection = proj;
    cfg.recipes = {FusionRecipe::concat(), FusionRecipe::one_hot(ModalityId::depth)};
    const auto fs = loss::fuse_features(emb, cfg);
    // Concatenation is [depth | radar (zeros) | audio].
    const double cat[6] = {0.6, 0.8, 0.0, 0.0, 1.0, 0.0};
    double y[2] = {0.0, 0.0};
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < 6; ++i) y[j] += cat[i] * proj.at(i, j);
    const double n = std::hypot(y[0], y[1]);
    EXPECT_NEAR(fs.features.at(0, 0), y[0] / n, 1e-14);
    EXPECT_NEAR(fs.features.at(0, 1), y[1] / n, 1e-14);
}

TEST(FuseFeatures, RecipeOnAbsentModalityThrows) {
    loss::EmbeddingMap emb;
    emb.set(ModalityId::depth, nn::l2_normalize(gaussian(2, 3, 1)));
    loss::ContrastiveConfig cfg;
    cfg.recipes = {FusionRecipe::one_hot(ModalityId::depth), FusionRecipe::one_hot(ModalityId::radar)};
    EXPECT_THROW(loss::fuse_features(emb, cfg), ModalityError);
}

TEST(FuseFeatures, RowsAreUnitAndDependOnlyOnOwnSample) {
    std::mt19937_64 rng(7);
    const Tensor proj = loss::make_fusion_projection(4, rng);
    const auto cfg = loss::default_contrastive_config(ModalitySet::all(), 4, 0.1, proj, rng);
    loss::EmbeddingMap emb;
    for (ModalityId m : kAllModalities) emb.set(m, nn::l2_normalize(gaussian(5, 4, 10 + index_of(m))));
    const auto a = loss::fuse_features(emb, cfg);
    for (std::size_t r = 0; r < a.features.rows(); ++r) EXPECT_NEAR(row_norm(a.features, r), 1.0, 1e-12);
    // Perturb sample 2 only.
    auto changed = emb;
    changed.at(ModalityId::radar).at(2, 1) += 0.5;
    const auto b = loss::fuse_features(changed, cfg);
    for (std::size_t s = 0; s < a.features.rows(); ++s) {
        if (a.source_ids[s] == 2) continue;
        for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(a.features.at(s, c), b.features.at(s, c));
    }
}

TEST(FuseFeatures, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    const Tensor proj = loss::make_fusion_projection(3, rng);
    const auto cfg = loss::default_contrastive_config(ModalitySet::all(), 3, 0.5, proj, rng);
    loss::EmbeddingMap emb;
    for (ModalityId m : kAllModalities) emb.set(m, gaussian(2, 3, 20 + index_of(m)));
    const Tensor up = gaussian(2 * cfg.fusions(), 3, 30);
    const auto grads = loss::fuse_features_backward(emb, cfg, up);
    for (ModalityId m : kAllModalities) {
        const auto fd = oracle::numeric_gradient(
            [&](const oracle::Vec& v) {
                auto e = emb;
                e.at(m) = Tensor(emb.at(m).shape(), v);
                const auto fs = loss::fuse_features(e, cfg);
                double s = 0.0;
                for (std::size_t i = 0; i < up.size(); ++i) s += fs.features[i] * up[i];
                return s;
            },
            emb.at(m).values());
        EXPECT_LE(oracle::relative_error(grads.at(m).values(), fd), 1e-4) << to_string(m);
    }
}

TEST(Contrastive, SymmetricCaseIsFourLnThree) {
    const Tensor f = Tensor::from_rows({{0, 1}, {0, 1}, {0, 1}, {0, 1}});
    const std::vector<std::size_t> ids = {0, 0, 1, 1};
    EXPECT_NEAR(loss::contrastive_fusion_loss(f, ids, 0.1).loss, 4.0 * std::log(3.0), 1e-12);
}

TEST(Contrastive, MatchesBruteForceOnSmallInstance) {
    const Tensor f = nn::l2_normalize(gaussian(6, 4, 42));
    const std::vector<std::size_t> ids = {0, 0, 1, 1, 2, 2};
    const double ref = oracle::contrastive_triple_sum(oracle::to_mat(f), ids, 0.1);
    EXPECT_NEAR(loss::contrastive_fusion_loss(f, ids, 0.1).loss, ref, 1e-9);
}

TEST(Contrastive, InvariantUnderGlobalRotation) {
    const Tensor f = nn::l2_normalize(gaussian(6, 2, 3));
    const std::vector<std::size_t> ids = {0, 0, 1, 1, 2, 2};
    const double th = 0.7;
    Tensor g = f;
    for (std::size_t r = 0; r < 6; ++r) {
        g.at(r, 0) = std::cos(th) * f.at(r, 0) - std::sin(th) * f.at(r, 1);
        g.at(r, 1) = std::sin(th) * f.at(r, 0) + std::cos(th) * f.at(r, 1);
    }
    for (double tau : {0.1, 0.3})
        EXPECT_NEAR(loss::contrastive_fusion_loss(f, ids, tau).loss, loss::contrastive_fusion_loss(g, ids, tau).loss,
                    1e-12);
}

TEST(Contrastive, AnchorWithoutPositiveThrows) {
    const Tensor f = nn::l2_normalize(gaussian(3, 2, 1));
    const std::vector<std::size_t> ids = {0, 0, 1};
    EXPECT_THROW(loss::contrastive_fusion_loss(f, ids, 0.1), ConfigError);
}

TEST(Contrastive, CheckedOverloadRejectsNonUnitRows) {
    loss::FusedFeatureSet fs;
    fs.features = Tensor::from_rows({{2, 0}, {0, 1}, {1, 0}, {0, 1}});
    fs.source_ids = {0, 0, 1, 1};
    fs.fusions_per_sample = 2;
    EXPECT_THROW(loss::contrastive_fusion_loss(fs, 0.1), Error);
}

TEST(Contrastive, GradientDescentPullsPositivesTogether) {
    // N = 4 sources, P = 2 views, free features renormalized after each step.
    Tensor f = nn::l2_normalize(gaussian(8, 3, 77));
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < 8; ++i) ids.push_back(i / 2);
    auto stats = [&](const Tensor& t) {
        double pos = 0.0, neg = 0.0;
        std::size_t np = 0, nn_ = 0;
        for (std::size_t a = 0; a < 8; ++a)
            for (std::size_t b = 0; b < 8; ++b) {
                if (a == b) continue;
                double d = 0.0;
                for (std::size_t c = 0; c < 3; ++c) d += t.at(a, c) * t.at(b, c);
                (ids[a] == ids[b] ? pos : neg) += d;
                ++(ids[a] == ids[b] ? np : nn_);
            }
        return std::pair{pos / np, neg / nn_};
    };
    const auto before = stats(f);
    for (int step = 0; step < 200; ++step) {
        const auto lg = loss::contrastive_fusion_loss(f, ids, 0.5);
        for (std::size_t i = 0; i < f.size(); ++i) f[i] -= 0.05 * lg.grad[i];
        f = nn::l2_normalize(f);
    }
    const auto after = stats(f);
    EXPECT_GT(after.first, before.first);
    EXPECT_LT(after.second, before.second);
}

TEST(BalancedCe, UniformCountsEqualPlainCrossEntropyBitwise) {
    const Tensor logits = gaussian(6, 4, 3);
    const std::vector<std::size_t> labels = {0, 1, 2, 3, 1, 0};
    const auto plain = loss::cross_entropy(logits, labels);
    const auto bal = loss::balanced_ce(logits, labels, {{5, 5, 5, 5}});
    EXPECT_EQ(plain.loss, bal.loss);
    EXPECT_EQ(plain.grad, bal.grad);
}

TEST(BalancedCe, TwoClassWeights) {
    const auto w = loss::balanced_weights({{1, 3}});
    EXPECT_DOUBLE_EQ(w[0], 1.5);
    EXPECT_DOUBLE_EQ(w[1], 0.5);
}

TEST(BalancedCe, ZeroCountClassesGetZeroWeight) {
    const auto w = loss::balanced_weights({{2, 0, 2}});
    EXPECT_EQ(w[1], 0.0);
    EXPECT_DOUBLE_EQ(w[0] + w[2], 2.0);
}

TEST(BalancedCe, LabelInZeroCountClassThrows) {
    const std::vector<std::size_t> labels = {1};
    EXPECT_THROW(loss::balanced_ce(gaussian(1, 3, 1), labels, {{1, 0, 1}}), CountError);
    EXPECT_THROW((loss::ClassCounts{{0, 0}}.validate()), CountError);
}

TEST(BalancedCe, MatchesWeightedFormula) {
    const Tensor logits = gaussian(3, 2, 9);
    const std::vector<std::size_t> labels = {0, 1, 1};
    const auto bal = loss::balanced_ce(logits, labels, {{1, 3}});
    const auto m = oracle::to_mat(logits);
    double expect = 0.0;
    const double w[2] = {1.5, 0.5};
    for (std::size_t i = 0; i < 3; ++i) expect += w[labels[i]] * oracle::mean_cross_entropy({m[i]}, {labels[i]});
    EXPECT_NEAR(bal.loss, expect / 3.0, 1e-14);
}

TEST(Kd, IdenticalLogitsGiveZero) {
    const Tensor z = gaussian(4, 5, 2);
    const auto r = loss::kd_loss(z, z, {2.0, 0.5});
    EXPECT_NEAR(r.loss, 0.0, 1e-15);
    for (double g : r.grad.values()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Kd, HandKlValue) {
    const Tensor student = Tensor::from_rows({{std::log(3.0), 0.0}});
    const Tensor teacher = Tensor::from_rows({{0.0, 0.0}});
    const double expect = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
    EXPECT_NEAR(loss::kd_loss(student, teacher, {1.0, 0.5}).loss, expect, 1e-12);
    EXPECT_NEAR(expect, 0.143841, 1e-6);
}

TEST(Kd, NonNegativeOnRandomPairs) {
    for (std::uint64_t s = 0; s < 50; ++s)
        EXPECT_GE(loss::kd_loss(gaussian(3, 4, s), gaussian(3, 4, s + 1000), {1.5, 0.5}).loss, 0.0);
}

TEST(Kd, ShapeMismatchThrows) {
    EXPECT_THROW(loss::kd_loss(gaussian(2, 3, 1), gaussian(2, 4, 1), {}), ShapeError);
}

TEST(Kd, ConfigValidation) {
    EXPECT_THROW((loss::KDConfig{0.0, 0.5}.validate()), ConfigError);
    EXPECT_THROW((loss::KDConfig{1.0, 1.5}.validate()), ConfigError);
}

TEST(CombinedLoss, Arithmetic) {
    EXPECT_DOUBLE_EQ(loss::combined_weak_stage_loss(2.0, 1.0, 0.5), 1.5);
    EXPECT_DOUBLE_EQ(loss::combined_weak_stage_loss(2.0, 1.0, 0.0), 2.0);
    EXPECT_DOUBLE_EQ(loss::combined_weak_stage_loss(2.0, 1.0, 1.0), 1.0);
}

TEST(Gradients, AllLossesMatchFiniteDifferencesOverTenSeeds) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Tensor z = gaussian(5, 4, seed, 1.5);
        const std::vector<std::size_t> y = {0, 1, 3, 3, 2};
        auto check = [&](const Tensor& grad, auto f) {
            const auto fd = oracle::numeric_gradient([&](const oracle::Vec& v) { return f(Tensor(z.shape(), v)); },
                                                     z.values());
            EXPECT_LE(oracle::relative_error(grad.values(), fd), 1e-4) << "seed " << seed;
        };
        check(loss::cross_entropy(z, y).grad, [&](const Tensor& t) { return loss::cross_entropy(t, y).loss; });
        const loss::ClassCounts counts{{3, 1, 7, 2}};
        check(loss::balanced_ce(z, y, counts).grad, [&](const Tensor& t) { return loss::balanced_ce(t, y, counts).loss; });
        const Tensor teacher = gaussian(5, 4, seed + 50);
        check(loss::kd_loss(z, teacher, {2.0, 0.5}).grad,
              [&](const Tensor& t) { return loss::kd_loss(t, teacher, {2.0, 0.5}).loss; });
        const std::vector<double> w = {0.2, 1.0, 3.0, 0.7};
        check(loss::weighted_cross_entropy(z, y, w).grad,
              [&](const Tensor& t) { return loss::weighted_cross_entropy(t, y, w).loss; });
    }
}

TEST(Softmax, RowsSumToOneAndTemperatureFlattens) {
    const Tensor z = gaussian(3, 5, 4, 3.0);
    const auto p1 = loss::softmax_rows(z, 1.0), p4 = loss::softmax_rows(z, 4.0);
    for (std::size_t r = 0; r < 3; ++r) {
        double s = 0.0, m1 = 0.0, m4 = 0.0;
        for (std::size_t c = 0; c < 5; ++c) {
            s += p1.at(r, c);
            m1 = std::max(m1, p1.at(r, c));
            m4 = std::max(m4, p4.at(r, c));
        }
        EXPECT_NEAR(s, 1.0, 1e-14);
        EXPECT_LE(m4, m1);
    }
}
