#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedmark/datagen.hpp"

namespace fedmark::bio {

// One 2-second (by default) detection.
struct Detection {
    double t_s = 0.0;
    std::size_t class_idx = 0;  // 1-based
};

struct BiomarkerFeatureRow {
    std::string subject_id;
    data::Group group = data::Group::NC;
    std::vector<double> duration_frac;  // index 0 = class 1
    std::vector<double> freq_rate;      // episodes per recorded second
    double recording_period_s = 0.0;

    // duration_frac followed by freq_rate.
    std::vector<double> features() const;
};

struct ExtractConfig {
    // Seconds covered by one detection. Unset: the smallest positive gap
    // between consecutive timestamps (2 s for a single detection).
    std::optional<double> sample_period_s;
    // A gap longer than gap_factor * period ends an episode.
    double gap_factor = 1.5;
};

// Episodes are maximal runs of one label without a gap. Recording period is
// last - first + one sample period.
BiomarkerFeatureRow extract_features(const std::string& subject_id, data::Group group,
                                     std::vector<Detection> timeline, std::size_t classes,
                                     const ExtractConfig& cfg = {});

std::vector<std::string> feature_names(const std::vector<std::string>& class_names);

// ---------------------------------------------------------------------------

struct BoxCoxFit {
    double lambda = 1.0;
    double shift = 0.0;
    double log_likelihood = 0.0;
};

inline constexpr double kBoxCoxEpsilon = 1e-6;

// Grid search over lambda = -5.00, -4.99, ..., 5.00 (ties keep the smaller lambda).
BoxCoxFit boxcox_fit(const std::vector<double>& xs);
// Profile log-likelihood of the transformed sample at `lambda` (inputs already shifted).
double boxcox_log_likelihood(const std::vector<double>& shifted, double lambda);
double boxcox_transform(double x, double lambda);
std::vector<double> boxcox_apply(const std::vector<double>& xs, const BoxCoxFit& fit);

// ---------------------------------------------------------------------------

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
// P(F <= x) for F(d1, d2).
double f_cdf(double x, double d1, double d2);
// P(F > x), evaluated directly rather than as 1 - f_cdf.
double f_sf(double x, double d1, double d2);

struct AnovaResult {
    double F = 0.0;
    std::size_t df_between = 0;
    std::size_t df_within = 0;
    double p_value = 1.0;
};

struct LeveneResult {
    double W = 0.0;
    double p_value = 1.0;
    std::string center = "median";
};

using Groups = std::vector<std::vector<double>>;

AnovaResult oneway_anova(const Groups& groups);
LeveneResult levene_test(const Groups& groups);

// Indices whose p-value is strictly below alpha.
std::vector<std::size_t> select_critical(const std::vector<AnovaResult>& results, double alpha = 0.05);

// ---------------------------------------------------------------------------

enum class DiagnosisTask { nc_vs_mci, nonad_vs_ad, nc_mci_ad };
std::string_view to_string(DiagnosisTask t);
std::vector<std::string> task_labels(DiagnosisTask t);
std::optional<std::size_t> task_label(DiagnosisTask t, data::Group g);

struct DiagnoseConfig {
    std::size_t folds = 3;
    std::size_t hidden_width = 16;
    std::size_t epochs = 200;
    double learning_rate = 0.05;
};

struct DiagnoseResult {
    DiagnosisTask task = DiagnosisTask::nc_mci_ad;
    std::vector<std::string> labels;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    double accuracy = 0.0;
    std::vector<std::size_t> fold_of;                 // per row of the task subset, sorted by subject id
    std::vector<std::string> subject_ids;
};

// Stratified assignment: subjects of each class, sorted by id, are shuffled
// with `seed` and dealt round-robin into `folds` folds.
std::vector<std::size_t> stratified_folds(const std::vector<std::string>& subject_ids,
                                          const std::vector<std::size_t>& labels, std::size_t folds,
                                          std::uint64_t seed);

DiagnoseResult diagnose_cv(const std::vector<std::vector<double>>& features,
                           const std::vector<std::string>& subject_ids,
                           const std::vector<data::Group>& groups, DiagnosisTask task,
                           const DiagnoseConfig& cfg, std::uint64_t seed);
DiagnoseResult diagnose_cv(const std::vector<BiomarkerFeatureRow>& rows, DiagnosisTask task,
                           const DiagnoseConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct FeatureTest {
    std::string name;
    bool constant = false;  // no variation at all: not transformed, p = 1
    BoxCoxFit boxcox;
    LeveneResult levene;
    AnovaResult anova;
    bool critical = false;
};

struct AnalysisReport {
    std::vector<BiomarkerFeatureRow> rows;
    std::vector<std::string> feature_names;
    std::vector<FeatureTest> tests;
    double levene_mean_p = 0.0;
    std::vector<DiagnoseResult> diagnoses;
    std::vector<std::string> skipped_tasks;  // "task: reason"
    std::vector<std::string> warnings;
};

struct AnalysisSettings {
    double alpha = 0.05;
    DiagnoseConfig diagnose;
    std::uint64_t seed = 7;
};

// Box-Cox per feature, Levene check, ANOVA against the grouping, critical
// selection, then diagnosis cross-validation for each task the cohort supports.
AnalysisReport analyze_cohort(std::vector<BiomarkerFeatureRow> rows,
                              const std::vector<std::string>& class_names,
                              const AnalysisSettings& settings);

// CSV helpers. Parse errors name the source, row and column.
std::vector<Detection> parse_detections_csv(const std::string& text, const std::string& source);
std::vector<std::pair<std::string, data::Group>> parse_groups_csv(const std::string& text,
                                                                  const std::string& source);
std::string features_csv(const AnalysisReport& report);
std::string anova_csv(const AnalysisReport& report);
std::string levene_csv(const AnalysisReport& report);
std::string confusion_json(const DiagnoseResult& result);

}  // namespace fedmark::bio
