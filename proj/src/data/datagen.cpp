#include "fedmark/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fedmark/error.hpp"
#include "json.hpp"

namespace fedmark::data {

std::string_view to_string(Group g) {
    switch (g) {
        case Group::NC: return "NC";
        case Group::MCI: return "MCI";
        case Group::AD: return "AD";
    }
    return "?";
}

std::optional<Group> parse_group(std::string_view s) {
    for (Group g : {Group::NC, Group::MCI, Group::AD})
        if (to_string(g) == s) return g;
    return std::nullopt;
}

DomainShift DomainShift::identity() {
    DomainShift s;
    for (ModalityId m : kAllModalities) {
        s.scale.set(m, std::vector<double>(modality_dim(m), 1.0));
        s.offset.set(m, std::vector<double>(modality_dim(m), 0.0));
    }
    return s;
}

DomainShift DomainShift::draw(std::mt19937_64& rng, double scale_lo, double scale_hi,
                              double offset_abs) {
    DomainShift s;
    std::uniform_real_distribution<double> scale(scale_lo, scale_hi);
    std::uniform_real_distribution<double> offset(-offset_abs, offset_abs);
    for (ModalityId m : kAllModalities) {
        std::vector<double> sc(modality_dim(m));
        std::vector<double> off(modality_dim(m));
        for (double& v : sc) v = scale(rng);
        for (double& v : off) v = offset(rng);
        s.scale.set(m, std::move(sc));
        s.offset.set(m, std::move(off));
    }
    return s;
}

void SubjectProfile::validate(std::size_t classes) const {
    if (!(dirichlet_alpha > 0.0)) throw ConfigError(subject_id + ": dirichlet_alpha must be > 0");
    if (!(label_fraction >= 0.0 && label_fraction <= 1.0))
        throw ConfigError(subject_id + ": label_fraction must lie in [0, 1]");
    if (!(log_fraction >= 0.0 && log_fraction <= 1.0))
        throw ConfigError(subject_id + ": log_fraction must lie in [0, 1]");
    if (!(presence_prob >= 0.0 && presence_prob <= 1.0))
        throw ConfigError(subject_id + ": presence_prob must lie in [0, 1]");
    if (activity_richness < 1 || activity_richness > classes)
        throw ConfigError(subject_id + ": activity_richness must lie in 1..classes");
    if (!class_tilt.empty() && class_tilt.size() != classes)
        throw ConfigError(subject_id + ": class_tilt needs one entry per class");
    if (modalities.empty()) throw ConfigError(subject_id + ": no modalities available");
}

World World::draw(const WorldConfig& cfg, WeakLabelMap routines, std::mt19937_64& rng) {
    if (cfg.classes < 2) throw ConfigError("world needs at least two classes");
    if (!(cfg.sample_period_s > 0.0)) throw ConfigError("sample period must be > 0");
    if (!(cfg.routine_min_s > 0.0 && cfg.routine_max_s >= cfg.routine_min_s))
        throw ConfigError("routine duration range is invalid");
    if (!(cfg.episode_min_s > 0.0 && cfg.episode_max_s >= cfg.episode_min_s))
        throw ConfigError("episode duration range is invalid");
    if (routines.classes() != 0 && routines.classes() != cfg.classes)
        throw ConfigError("routine map and world disagree on the class count");
    World w;
    w.config = cfg;
    w.routines = std::move(routines);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (ModalityId m : kAllModalities) {
        Tensor p({cfg.classes, modality_dim(m)});
        for (double& v : p.data()) v = cfg.prototype_scale * unit(rng);
        w.prototypes.set(m, std::move(p));
    }
    return w;
}

std::size_t SelectionPolicy::stride() const {
    if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("selection rate must lie in (0, 1]");
    return static_cast<std::size_t>(std::floor(1.0 / rate + 1e-9));
}

bool in_window(double timestamp, const SelectionPolicy& policy) {
    const double day = 86400.0;
    double tod = std::fmod(timestamp, day);
    if (tod < 0) tod += day;
    return tod >= policy.window_start_h * 3600.0 && tod < policy.window_end_h * 3600.0;
}

namespace {

struct Episode {
    std::size_t begin = 0;  // sample index, inclusive
    std::size_t end = 0;    // exclusive
    std::size_t activity = 0;
    std::optional<std::size_t> log_entry;
};

struct Timeline {
    std::uint64_t sample_key = 0;
    std::size_t count = 0;
    std::vector<Episode> episodes;
    std::vector<ActivityLogEntry> log;
    std::vector<double> class_probs;
};

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<double> draw_class_probs(const SubjectProfile& p, std::size_t classes,
                                     std::mt19937_64& rng) {
    std::vector<std::size_t> order(classes);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> probs(classes, 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < p.activity_richness; ++k) {
        const std::size_t c = order[k];
        const double tilt = p.class_tilt.empty() ? 1.0 : p.class_tilt[c];
        std::gamma_distribution<double> gamma(p.dirichlet_alpha * tilt, 1.0);
        probs[c] = gamma(rng);
        total += probs[c];
    }
    if (!(total > 0.0)) {
        // every gamma draw underflowed; fall back to the first richness class
        probs[order[0]] = 1.0;
        total = 1.0;
    }
    for (double& v : probs) v /= total;
    return probs;
}

std::size_t draw_index(const std::vector<double>& weights, std::mt19937_64& rng) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::uniform_real_distribution<double> u(0.0, total);
    double x = u(rng);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        if (x < weights[i]) return i;
        x -= weights[i];
    }
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return i;
    return 0;
}

Timeline build_timeline(const SubjectProfile& profile, const World& world, double duration_s,
                        std::mt19937_64& rng) {
    profile.validate(world.classes());
    if (!(duration_s > 0.0)) throw ConfigError("stream duration must be > 0");
    const auto& cfg = world.config;
    Timeline tl;
    tl.sample_key = rng();
    tl.count = static_cast<std::size_t>(std::floor(duration_s / cfg.sample_period_s + 1e-9));
    tl.class_probs = draw_class_probs(profile, world.classes(), rng);

    // Routine groups: classes sharing a home coarse label, then singletons
    // for classes the routine map does not cover (never logged).
    struct RoutineGroup {
        std::optional<std::string> coarse;
        std::vector<std::size_t> classes;  // 0-based
        std::vector<double> weights;
    };
    std::vector<RoutineGroup> groups;
    for (const auto& [coarse, fine] : world.routines.entries()) {
        RoutineGroup g{coarse, {}, {}};
        for (std::size_t c = 0; c < world.classes(); ++c)
            if (world.routines.home_of(c + 1) == coarse) {
                g.classes.push_back(c);
                g.weights.push_back(tl.class_probs[c]);
            }
        if (!g.classes.empty()) groups.push_back(std::move(g));
    }
    for (std::size_t c = 0; c < world.classes(); ++c)
        if (!world.routines.home_of(c + 1)) groups.push_back({std::nullopt, {c}, {tl.class_probs[c]}});
    std::vector<double> group_mass;
    for (const auto& g : groups)
        group_mass.push_back(std::accumulate(g.weights.begin(), g.weights.end(), 0.0));

    const auto samples_of = [&](double seconds) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(seconds / cfg.sample_period_s)));
    };
    std::uniform_int_distribution<std::size_t> routine_len(samples_of(cfg.routine_min_s),
                                                           samples_of(cfg.routine_max_s));
    std::uniform_int_distribution<std::size_t> episode_len(samples_of(cfg.episode_min_s),
                                                           samples_of(cfg.episode_max_s));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::size_t cursor = 0;
    while (cursor < tl.count) {
        const auto& g = groups[draw_index(group_mass, rng)];
        const std::size_t r_end = std::min(tl.count, cursor + routine_len(rng));
        std::optional<std::size_t> entry;
        if (g.coarse && unit(rng) < profile.log_fraction) {
            tl.log.push_back({static_cast<double>(cursor) * cfg.sample_period_s,
                              static_cast<double>(r_end) * cfg.sample_period_s, *g.coarse});
            entry = tl.log.size() - 1;
        }
        while (cursor < r_end) {
            const std::size_t e_end = std::min(r_end, cursor + episode_len(rng));
            const std::size_t c = g.classes[draw_index(g.weights, rng)];
            tl.episodes.push_back({cursor, e_end, c + 1, entry});
            cursor = e_end;
        }
    }
    return tl;
}

struct SampleDraws {
    bool present = true;
    bool labeled = false;
};

// Per-sample randomness comes from a generator keyed by (stream key, index),
// so any subset of samples can be materialized independently.
class SampleSource {
public:
    SampleSource(const SubjectProfile& profile, const World& world, const Timeline& tl)
        : profile_(profile), world_(world), tl_(tl) {}

    SampleDraws draws(std::size_t index, std::mt19937_64& gen) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        SampleDraws d;
        d.present = u(gen) < profile_.presence_prob;
        d.labeled = u(gen) < profile_.label_fraction;
        (void)index;
        return d;
    }

    std::mt19937_64 generator(std::size_t index) const {
        return std::mt19937_64(splitmix(tl_.sample_key ^ splitmix(index)));
    }

    MultiModalSample make(std::size_t index, const Episode& ep) const {
        auto gen = generator(index);
        const SampleDraws d = draws(index, gen);
        MultiModalSample s;
        s.timestamp = static_cast<double>(index) * world_.config.sample_period_s;
        s.human_present = d.present;
        s.activity = ep.activity;
        if (d.present && d.labeled) s.fine_label = ep.activity;
        if (ep.log_entry) s.coarse_label = tl_.log[*ep.log_entry].coarse_label;
        std::normal_distribution<double> noise(0.0, world_.config.noise_sigma);
        for (ModalityId m : profile_.modalities.members()) {
            const std::size_t dim = modality_dim(m);
            const auto proto = world_.prototypes.at(m).row(ep.activity - 1);
            const auto& scale = profile_.shift.scale.at(m);
            const auto& offset = profile_.shift.offset.at(m);
            std::vector<double> x(dim);
            for (std::size_t k = 0; k < dim; ++k) {
                const double signal = d.present ? proto[k] : 0.0;
                x[k] = scale[k] * (signal + noise(gen)) + offset[k];
            }
            s.modality_data.set(m, Tensor::vector(std::move(x)));
        }
        return s;
    }

    bool present(std::size_t index) const {
        auto gen = generator(index);
        return draws(index, gen).present;
    }

private:
    const SubjectProfile& profile_;
    const World& world_;
    const Timeline& tl_;
};

}  // namespace

SubjectStream generate_subject_stream(const SubjectProfile& profile, const World& world,
                                      double duration_s, std::mt19937_64& rng) {
    const Timeline tl = build_timeline(profile, world, duration_s, rng);
    const SampleSource source(profile, world, tl);
    SubjectStream out;
    out.subject_id = profile.subject_id;
    out.log = tl.log;
    out.class_probs = tl.class_probs;
    out.samples.reserve(tl.count);
    for (const Episode& ep : tl.episodes)
        for (std::size_t i = ep.begin; i < ep.end; ++i) out.samples.push_back(source.make(i, ep));
    return out;
}

SubjectStream generate_selected_stream(const SubjectProfile& profile, const World& world,
                                       double duration_s, const SelectionPolicy& policy,
                                       std::mt19937_64& rng) {
    const Timeline tl = build_timeline(profile, world, duration_s, rng);
    const SampleSource source(profile, world, tl);
    const std::size_t stride = policy.stride();
    SubjectStream out;
    out.subject_id = profile.subject_id;
    out.log = tl.log;
    out.class_probs = tl.class_probs;
    std::size_t in_window_rank = 0;
    for (const Episode& ep : tl.episodes) {
        for (std::size_t i = ep.begin; i < ep.end; ++i) {
            const double t = static_cast<double>(i) * world.config.sample_period_s;
            if (!in_window(t, policy)) continue;
            const bool keep = in_window_rank % stride == 0;
            ++in_window_rank;
            if (!keep) continue;
            if (policy.drop_absent && !source.present(i)) continue;
            out.samples.push_back(source.make(i, ep));
        }
    }
    return out;
}

std::vector<MultiModalSample> filter_window(const std::vector<MultiModalSample>& stream,
                                            const SelectionPolicy& policy) {
    std::vector<MultiModalSample> out;
    for (const auto& s : stream)
        if (in_window(s.timestamp, policy)) out.push_back(s);
    return out;
}

std::vector<MultiModalSample> filter_stride(const std::vector<MultiModalSample>& stream,
                                            const SelectionPolicy& policy) {
    const std::size_t stride = policy.stride();
    std::vector<MultiModalSample> out;
    for (std::size_t i = 0; i < stream.size(); i += stride) out.push_back(stream[i]);
    return out;
}

std::vector<MultiModalSample> filter_presence(const std::vector<MultiModalSample>& stream) {
    std::vector<MultiModalSample> out;
    for (const auto& s : stream)
        if (s.human_present) out.push_back(s);
    return out;
}

std::vector<MultiModalSample> select_data(const std::vector<MultiModalSample>& stream,
                                          const SelectionPolicy& policy) {
    auto kept = filter_stride(filter_window(stream, policy), policy);
    return policy.drop_absent ? filter_presence(kept) : kept;
}

std::size_t ClassDistribution::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

ClassDistribution class_distribution(const std::vector<MultiModalSample>& stream,
                                     std::size_t classes) {
    ClassDistribution d{std::vector<std::size_t>(classes, 0)};
    for (const auto& s : stream) {
        if (!s.fine_label) continue;
        if (*s.fine_label < 1 || *s.fine_label > classes)
            throw DataError("class_distribution: label " + std::to_string(*s.fine_label) +
                            " outside 1.." + std::to_string(classes));
        ++d.counts[*s.fine_label - 1];
    }
    return d;
}

std::vector<SubjectProfile> draw_cohort(const CohortSpec& spec, std::size_t classes,
                                        std::mt19937_64& rng) {
    std::vector<SubjectProfile> out;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Group cycle[] = {Group::NC, Group::MCI, Group::AD};
    for (std::size_t i = 0; i < spec.subjects; ++i) {
        SubjectProfile p;
        std::ostringstream id;
        id << spec.id_prefix << (i < 10 ? "0" : "") << i;
        p.subject_id = id.str();
        p.group = cycle[i % 3];
        p.dirichlet_alpha = spec.dirichlet_alpha;
        p.label_fraction = spec.label_fraction;
        p.log_fraction = spec.log_fraction;
        p.presence_prob = spec.presence_prob;
        p.shift = DomainShift::draw(rng, spec.scale_lo, spec.scale_hi, spec.offset_abs);
        p.modalities = ModalitySet::all();
        for (ModalityId m : {ModalityId::radar, ModalityId::audio})
            if (u(rng) < spec.missing_modality_prob) p.modalities.erase(m);
        const std::size_t richness = p.group == Group::NC    ? spec.richness_nc
                                     : p.group == Group::MCI ? spec.richness_mci
                                                             : spec.richness_ad;
        p.activity_richness = std::min(richness, classes);
        if (p.group == Group::AD && spec.ad_sedentary_tilt != 1.0) {
            p.class_tilt.assign(classes, 1.0);
            for (std::size_t c : spec.sedentary_classes)
                if (c >= 1 && c <= classes) p.class_tilt[c - 1] = spec.ad_sedentary_tilt;
        }
        p.validate(classes);
        out.push_back(std::move(p));
    }
    return out;
}

std::string to_jsonl(const std::vector<MultiModalSample>& samples) {
    std::string out;
    for (const auto& s : samples) {
        nlohmann::ordered_json j;
        j["t_s"] = s.timestamp;
        j["human_present"] = s.human_present;
        j["fine_label"] = s.fine_label ? nlohmann::ordered_json(*s.fine_label) : nlohmann::ordered_json();
        j["coarse_label"] = s.coarse_label ? nlohmann::ordered_json(*s.coarse_label) : nlohmann::ordered_json();
        for (ModalityId m : s.modality_data.keys())
            j[std::string(to_string(m))] = s.modality_data.at(m).values();
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace fedmark::data
