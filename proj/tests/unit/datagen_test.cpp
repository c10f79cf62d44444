#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "fedmark/datagen.hpp"
#include "fedmark/error.hpp"
#include "json.hpp"

using namespace fedmark;
using data::MultiModalSample;

namespace {

data::World desk_world(std::uint64_t seed, double scale = 1.0) {
    data::WorldConfig wc;
    wc.prototype_scale = scale;
    std::mt19937_64 rng(seed);
    return data::World::draw(wc, ActivityTable::desk_default().weak_map, rng);
}

data::SubjectProfile profile(double alpha = 1.0) {
    data::SubjectProfile p;
    p.subject_id = "s";
    p.dirichlet_alpha = alpha;
    return p;
}

bool same_sample(const MultiModalSample& a, const MultiModalSample& b) {
    if (a.timestamp != b.timestamp || a.human_present != b.human_present || a.fine_label != b.fine_label ||
        a.coarse_label != b.coarse_label || a.activity != b.activity)
        return false;
    if (a.modality_data.keys() != b.modality_data.keys()) return false;
    for (ModalityId m : a.modality_data.keys())
        if (a.modality_data.at(m).values() != b.modality_data.at(m).values()) return false;
    return true;
}

}  // namespace

TEST(Selection, StrideFromRate) {
    data::SelectionPolicy p;
    EXPECT_EQ(p.stride(), 100u);
    p.rate = 1.0;
    EXPECT_EQ(p.stride(), 1u);
    p.rate = 0.0;
    EXPECT_THROW(p.stride(), ConfigError);
    p.rate = 1.5;
    EXPECT_THROW(p.stride(), ConfigError);
}

TEST(Selection, WindowIsHalfOpen) {
    data::SelectionPolicy p;
    EXPECT_FALSE(data::in_window(7 * 3600.0 - 2.0, p));
    EXPECT_TRUE(data::in_window(7 * 3600.0, p));
    EXPECT_TRUE(data::in_window(19 * 3600.0 - 2.0, p));
    EXPECT_FALSE(data::in_window(19 * 3600.0, p));
    EXPECT_TRUE(data::in_window(86400.0 + 12 * 3600.0, p));
    EXPECT_FALSE(data::in_window(86400.0 + 3 * 3600.0, p));
}

TEST(Selection, FiltersComposeInOrder) {
    std::vector<MultiModalSample> s(10);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i].timestamp = 8 * 3600.0 + 2.0 * static_cast<double>(i);
        s[i].human_present = i % 3 != 0;
    }
    data::SelectionPolicy p;
    p.rate = 0.5;
    const auto kept = data::select_data(s, p);
    // stride 2 keeps 0, 2, 4, 6, 8; presence then drops 0 and 6
    ASSERT_EQ(kept.size(), 3u);
    EXPECT_EQ(kept[0].timestamp, s[2].timestamp);
    EXPECT_EQ(kept[1].timestamp, s[4].timestamp);
    EXPECT_EQ(kept[2].timestamp, s[8].timestamp);
    p.drop_absent = false;
    EXPECT_EQ(data::select_data(s, p).size(), 5u);
}

TEST(Datagen, StreamHasOneSamplePerPeriod) {
    const auto world = desk_world(1);
    std::mt19937_64 rng(5);
    const auto st = data::generate_subject_stream(profile(), world, 3600.0, rng);
    ASSERT_EQ(st.samples.size(), 1800u);
    for (std::size_t i = 0; i < st.samples.size(); ++i)
        EXPECT_DOUBLE_EQ(st.samples[i].timestamp, 2.0 * static_cast<double>(i));
}

TEST(Datagen, SelectedStreamMatchesFilteredFullStream) {
    const auto world = desk_world(2);
    data::SelectionPolicy policy;
    policy.rate = 0.05;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        std::mt19937_64 a(seed), b(seed);
        const auto full = data::generate_subject_stream(profile(0.5), world, 2 * 86400.0, a);
        const auto sel = data::generate_selected_stream(profile(0.5), world, 2 * 86400.0, policy, b);
        const auto expect = data::select_data(full.samples, policy);
        ASSERT_EQ(sel.samples.size(), expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) ASSERT_TRUE(same_sample(sel.samples[i], expect[i])) << i;
        EXPECT_EQ(sel.log, full.log);
    }
}

TEST(Datagen, HugeConcentrationIsNearUniform) {
    const auto world = desk_world(3);
    auto p = profile(1e6);
    p.activity_richness = 5;
    std::mt19937_64 rng(9);
    const auto st = data::generate_subject_stream(p, world, 60.0, rng);
    std::size_t nonzero = 0;
    for (double v : st.class_probs)
        if (v > 0.0) {
            ++nonzero;
            EXPECT_NEAR(v, 0.2, 0.02 * 0.2);
        }
    EXPECT_EQ(nonzero, 5u);
}

TEST(Datagen, RichnessBoundsObservedClasses) {
    const auto world = desk_world(4);
    for (std::size_t richness : {1u, 3u, 8u}) {
        auto p = profile(1.0);
        p.activity_richness = richness;
        std::mt19937_64 rng(richness);
        const auto st = data::generate_subject_stream(p, world, 86400.0, rng);
        std::set<std::size_t> seen;
        for (const auto& s : st.samples) seen.insert(s.activity);
        EXPECT_LE(seen.size(), richness);
        for (std::size_t c : seen) EXPECT_GT(st.class_probs[c - 1], 0.0);
    }
}

TEST(Datagen, LabelsAreRetainedAtTheConfiguredRate) {
    const auto world = desk_world(5);
    auto p = profile();
    p.label_fraction = 0.1;
    p.presence_prob = 1.0;
    std::mt19937_64 rng(11);
    const auto st = data::generate_subject_stream(p, world, 86400.0, rng);
    std::size_t labeled = 0;
    for (const auto& s : st.samples)
        if (s.fine_label) {
            ++labeled;
            EXPECT_EQ(*s.fine_label, s.activity);
        }
    const double n = static_cast<double>(st.samples.size());
    const double sd = std::sqrt(n * 0.1 * 0.9);
    EXPECT_NEAR(static_cast<double>(labeled), 0.1 * n, 5.0 * sd);
}

TEST(Datagen, CoarseLabelsAgreeWithActivityAndLog) {
    const auto world = desk_world(6);
    std::mt19937_64 rng(13);
    const auto st = data::generate_subject_stream(profile(), world, 2 * 86400.0, rng);
    ASSERT_FALSE(st.log.empty());
    for (std::size_t i = 1; i < st.log.size(); ++i) EXPECT_LE(st.log[i - 1].end_s, st.log[i].start_s);
    std::size_t coarse = 0;
    for (const auto& s : st.samples) {
        if (!s.coarse_label) continue;
        ++coarse;
        const auto& fine = world.routines.fine_labels(*s.coarse_label);
        EXPECT_TRUE(std::binary_search(fine.begin(), fine.end(), s.activity));
        const bool inside = std::any_of(st.log.begin(), st.log.end(), [&](const ActivityLogEntry& e) {
            return e.coarse_label == *s.coarse_label && s.timestamp >= e.start_s && s.timestamp < e.end_s;
        });
        EXPECT_TRUE(inside);
    }
    EXPECT_GT(coarse, 0u);
}

TEST(Datagen, NoLogWhenLogFractionIsZero) {
    const auto world = desk_world(7);
    auto p = profile();
    p.log_fraction = 0.0;
    std::mt19937_64 rng(1);
    const auto st = data::generate_subject_stream(p, world, 86400.0, rng);
    EXPECT_TRUE(st.log.empty());
    for (const auto& s : st.samples) EXPECT_FALSE(s.coarse_label);
}

TEST(Datagen, FeaturesFollowPrototypePlusShift) {
    data::WorldConfig wc;
    wc.noise_sigma = 0.0;
    std::mt19937_64 wrng(8);
    const auto world = data::World::draw(wc, ActivityTable::desk_default().weak_map, wrng);
    auto p = profile();
    p.presence_prob = 0.5;
    std::mt19937_64 srng(3);
    p.shift = data::DomainShift::draw(srng, 0.5, 2.0, 1.0);
    std::mt19937_64 rng(4);
    const auto st = data::generate_subject_stream(p, world, 600.0, rng);
    bool saw_absent = false;
    for (const auto& s : st.samples) {
        for (ModalityId m : kAllModalities) {
            const auto x = s.modality_data.at(m).values();
            const auto proto = world.prototypes.at(m).row(s.activity - 1);
            for (std::size_t k = 0; k < x.size(); ++k) {
                const double signal = s.human_present ? proto[k] : 0.0;
                EXPECT_DOUBLE_EQ(x[k], p.shift.scale.at(m)[k] * signal + p.shift.offset.at(m)[k]);
            }
        }
        saw_absent = saw_absent || !s.human_present;
    }
    EXPECT_TRUE(saw_absent);
}

TEST(Datagen, MissingModalityIsAbsentFromSamples) {
    const auto world = desk_world(9);
    auto p = profile();
    p.modalities = ModalitySet{ModalityId::depth};
    std::mt19937_64 rng(2);
    const auto st = data::generate_subject_stream(p, world, 120.0, rng);
    for (const auto& s : st.samples) {
        EXPECT_TRUE(s.modality_data.contains(ModalityId::depth));
        EXPECT_FALSE(s.modality_data.contains(ModalityId::radar));
        EXPECT_FALSE(s.modality_data.contains(ModalityId::audio));
    }
}

TEST(Datagen, SameSeedSameStream) {
    const auto world = desk_world(10);
    std::mt19937_64 a(77), b(77);
    const auto x = data::generate_subject_stream(profile(0.3), world, 7200.0, a);
    const auto y = data::generate_subject_stream(profile(0.3), world, 7200.0, b);
    ASSERT_EQ(x.samples.size(), y.samples.size());
    for (std::size_t i = 0; i < x.samples.size(); ++i) EXPECT_TRUE(same_sample(x.samples[i], y.samples[i]));
}

TEST(Datagen, ProfileValidation) {
    auto p = profile();
    EXPECT_NO_THROW(p.validate(8));
    p.dirichlet_alpha = 0.0;
    EXPECT_THROW(p.validate(8), ConfigError);
    p = profile();
    p.label_fraction = 1.5;
    EXPECT_THROW(p.validate(8), ConfigError);
    p = profile();
    p.activity_richness = 9;
    EXPECT_THROW(p.validate(8), ConfigError);
    p = profile();
    p.class_tilt = {1.0, 2.0};
    EXPECT_THROW(p.validate(8), ConfigError);
    const auto world = desk_world(1);
    std::mt19937_64 rng(1);
    EXPECT_THROW(data::generate_subject_stream(profile(), world, 0.0, rng), ConfigError);
}

TEST(Datagen, WorldRejectsBadConfig) {
    std::mt19937_64 rng(1);
    data::WorldConfig wc;
    wc.classes = 1;
    EXPECT_THROW(data::World::draw(wc, {}, rng), ConfigError);
    wc = {};
    wc.classes = 5;
    EXPECT_THROW(data::World::draw(wc, ActivityTable::desk_default().weak_map, rng), ConfigError);
    wc = {};
    wc.routine_max_s = 10.0;
    EXPECT_THROW(data::World::draw(wc, {}, rng), ConfigError);
}

TEST(Datagen, ZeroScaleGivesZeroPrototypes) {
    const auto world = desk_world(3, 0.0);
    for (ModalityId m : kAllModalities) {
        const auto& p = world.prototypes.at(m);
        EXPECT_EQ(p.rows(), 8u);
        EXPECT_EQ(p.cols(), modality_dim(m));
        for (double v : p.data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(Datagen, ClassDistributionCountsLabels) {
    std::vector<MultiModalSample> s(5);
    s[0].fine_label = 1;
    s[1].fine_label = 3;
    s[2].fine_label = 3;
    const auto d = data::class_distribution(s, 3);
    EXPECT_EQ(d.counts, (std::vector<std::size_t>{1, 0, 2}));
    EXPECT_EQ(d.total(), 3u);
    s[3].fine_label = 4;
    EXPECT_THROW(data::class_distribution(s, 3), DataError);
}

TEST(Cohort, IdsGroupsAndRichness) {
    data::CohortSpec spec;
    spec.subjects = 12;
    std::mt19937_64 rng(1);
    const auto c = data::draw_cohort(spec, 8, rng);
    ASSERT_EQ(c.size(), 12u);
    EXPECT_EQ(c[0].subject_id, "node00");
    EXPECT_EQ(c[11].subject_id, "node11");
    const data::Group cycle[] = {data::Group::NC, data::Group::MCI, data::Group::AD};
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_EQ(c[i].group, cycle[i % 3]);
        EXPECT_EQ(c[i].activity_richness, c[i].group == data::Group::AD ? 6u : 8u);
        if (c[i].group == data::Group::AD) {
            ASSERT_EQ(c[i].class_tilt.size(), 8u);
            EXPECT_EQ(c[i].class_tilt[1], 2.0);
            EXPECT_EQ(c[i].class_tilt[0], 1.0);
        }
        for (ModalityId m : kAllModalities)
            for (double v : c[i].shift.scale.at(m)) {
                EXPECT_GE(v, 0.5);
                EXPECT_LE(v, 2.0);
            }
    }
}

TEST(Cohort, MissingModalityProbabilityOne) {
    data::CohortSpec spec;
    spec.subjects = 4;
    spec.missing_modality_prob = 1.0;
    std::mt19937_64 rng(1);
    for (const auto& p : data::draw_cohort(spec, 8, rng))
        EXPECT_EQ(p.modalities.members(), std::vector<ModalityId>{ModalityId::depth});
}

TEST(Groups, RoundTrip) {
    for (auto g : {data::Group::NC, data::Group::MCI, data::Group::AD})
        EXPECT_EQ(data::parse_group(data::to_string(g)), g);
    EXPECT_FALSE(data::parse_group("nc"));
}

TEST(Export, JsonLinesOnePerSample) {
    const auto world = desk_world(2);
    std::mt19937_64 rng(3);
    const auto st = data::generate_subject_stream(profile(), world, 20.0, rng);
    const auto text = data::to_jsonl(st.samples);
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), st.samples.size());
    const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
    EXPECT_EQ(first["t_s"], 0.0);
    EXPECT_EQ(first["depth"].size(), modality_dim(ModalityId::depth));
}
