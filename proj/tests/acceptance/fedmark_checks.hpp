#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedmark/experiment.hpp"

namespace fedmark::checks {

struct CheckResult {
    bool pass = false;
    std::string detail;
};

struct Check {
    int id = 0;
    std::string name;
    bool slow = false;  // runs whole experiments
    std::function<CheckResult()> run;
};

const std::vector<Check>& registry();

// Tolerances and seed sets, shared with the unit tests.
inline constexpr double kGradRelTol = 1e-4;
inline constexpr double kContrastiveAbsTol = 1e-9;
inline constexpr double kAggregationTol = 1e-12;
inline constexpr double kStaircaseGap = 0.05;
inline constexpr double kStaircaseSeconds = 300.0;
inline constexpr double kTailGain = 0.10;
inline constexpr double kOverallSlack = 0.02;
inline constexpr double kAnovaFTol = 1e-12;
inline constexpr double kAnovaPTol = 1e-9;
inline constexpr double kPlantedHitRate = 0.95;

// The benchmark configurations: library defaults, and the same with
// dirichlet_alpha = 0.1 plus the plain-CE ablation.
exp::ExperimentConfig reference_config();
exp::ExperimentConfig skewed_config();

// Prints "[PASS|FAIL] <id> <name>: <detail> (<seconds>s)" per selected check
// and returns 0 iff every selected check passed. `only` is a comma list of ids.
int run_from_cli(const std::string& only, bool include_slow, std::ostream& out);

}  // namespace fedmark::checks
