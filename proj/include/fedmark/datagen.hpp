#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fedmark/activity.hpp"
#include "fedmark/modality.hpp"
#include "fedmark/tensor.hpp"

namespace fedmark::data {

enum class Group { NC, MCI, AD };

std::string_view to_string(Group g);
std::optional<Group> parse_group(std::string_view s);

// Per-modality diagonal scale and offset applied after noise.
struct DomainShift {
    ModalityMap<std::vector<double>> scale;
    ModalityMap<std::vector<double>> offset;

    static DomainShift identity();
    static DomainShift draw(std::mt19937_64& rng, double scale_lo, double scale_hi, double offset_abs);
};

struct SubjectProfile {
    std::string subject_id;
    Group group = Group::NC;
    double dirichlet_alpha = 1.0;
    DomainShift shift = DomainShift::identity();
    ModalitySet modalities = ModalitySet::all();
    double label_fraction = 0.02;
    std::size_t activity_richness = 8;
    // Multiplies the Dirichlet concentration per class (empty = all ones).
    std::vector<double> class_tilt;
    // Probability that a routine is written to the activity log.
    double log_fraction = 0.5;
    double presence_prob = 0.95;

    void validate(std::size_t classes) const;
};

struct WorldConfig {
    std::size_t classes = 8;
    double prototype_scale = 0.15;
    double noise_sigma = 0.3;
    double sample_period_s = 2.0;
    double routine_min_s = 600.0;
    double routine_max_s = 3600.0;
    double episode_min_s = 60.0;
    double episode_max_s = 300.0;
};

// State shared by every subject of one experiment: the class prototypes and
// the routine structure used to lay out timelines and activity logs.
struct World {
    WorldConfig config;
    ModalityMap<Tensor> prototypes;  // [classes, modality_dim]
    WeakLabelMap routines;

    std::size_t classes() const { return config.classes; }

    // Prototypes are drawn from a unit Gaussian and multiplied by prototype_scale.
    static World draw(const WorldConfig& cfg, WeakLabelMap routines, std::mt19937_64& rng);
};

struct MultiModalSample {
    double timestamp = 0.0;
    ModalityMap<Tensor> modality_data;  // 1-D tensors
    bool human_present = true;
    std::optional<std::size_t> fine_label;  // 1-based when present
    std::optional<std::string> coarse_label;
    // Ground-truth class (1-based) kept by the simulator for evaluation and
    // detection timelines. Training code never reads it.
    std::size_t activity = 0;
};

struct SubjectStream {
    std::string subject_id;
    std::vector<MultiModalSample> samples;
    std::vector<ActivityLogEntry> log;
    std::vector<double> class_probs;  // realized categorical, index 0 = class 1
};

struct SelectionPolicy {
    double window_start_h = 7.0;
    double window_end_h = 19.0;
    double rate = 0.01;
    bool drop_absent = true;

    std::size_t stride() const;
};

// One sample every sample_period_s over [0, duration_s).
SubjectStream generate_subject_stream(const SubjectProfile& profile, const World& world,
                                      double duration_s, std::mt19937_64& rng);

// Same result as select_data(generate_subject_stream(...).samples, policy)
// without materializing the samples the policy discards.
SubjectStream generate_selected_stream(const SubjectProfile& profile, const World& world,
                                       double duration_s, const SelectionPolicy& policy,
                                       std::mt19937_64& rng);

// Time-of-day window, then stride, then presence. Order is preserved.
std::vector<MultiModalSample> select_data(const std::vector<MultiModalSample>& stream,
                                          const SelectionPolicy& policy);
std::vector<MultiModalSample> filter_window(const std::vector<MultiModalSample>& stream,
                                            const SelectionPolicy& policy);
std::vector<MultiModalSample> filter_stride(const std::vector<MultiModalSample>& stream,
                                            const SelectionPolicy& policy);
std::vector<MultiModalSample> filter_presence(const std::vector<MultiModalSample>& stream);

bool in_window(double timestamp, const SelectionPolicy& policy);

struct ClassDistribution {
    std::vector<std::size_t> counts;  // index 0 = class 1

    std::size_t total() const;
};

// Counts of labeled samples per class.
ClassDistribution class_distribution(const std::vector<MultiModalSample>& stream,
                                     std::size_t classes);

// Cohort-level knobs from which per-subject profiles are drawn.
struct CohortSpec {
    std::size_t subjects = 20;
    std::string id_prefix = "node";
    double dirichlet_alpha = 1.0;
    double label_fraction = 0.02;
    double log_fraction = 0.5;
    double presence_prob = 0.95;
    double scale_lo = 0.5;
    double scale_hi = 2.0;
    double offset_abs = 1.0;
    // Probability that a subject lacks each non-depth modality.
    double missing_modality_prob = 0.0;
    // Classes with nonzero mass per group.
    std::size_t richness_nc = 8;
    std::size_t richness_mci = 8;
    std::size_t richness_ad = 6;
    // Concentration multiplier on the sedentary classes for AD subjects.
    double ad_sedentary_tilt = 2.0;
    std::vector<std::size_t> sedentary_classes = {2, 3};
};

std::vector<SubjectProfile> draw_cohort(const CohortSpec& spec, std::size_t classes,
                                        std::mt19937_64& rng);

// JSON-lines export, one object per sample.
std::string to_jsonl(const std::vector<MultiModalSample>& samples);

}  // namespace fedmark::data
