#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedmark/biomarker.hpp"
#include "fedmark/error.hpp"

namespace fedmark::bio {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lentz's continued fraction for the incomplete beta function.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    return h;
}

double mean_sorted(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ParameterError("incomplete_beta: a and b must be positive");
    if (std::isnan(x)) throw ParameterError("incomplete_beta: x is NaN");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

namespace {
void check_dof(double x, double d1, double d2) {
    if (!(d1 >= 1.0) || !(d2 >= 1.0) || !std::isfinite(d1) || !std::isfinite(d2))
        throw ParameterError("F distribution: degrees of freedom must be >= 1");
    if (std::isnan(x) || x < 0.0) throw ParameterError("F distribution: x must be >= 0");
}
}  // namespace

double f_cdf(double x, double d1, double d2) {
    check_dof(x, d1, d2);
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    return incomplete_beta(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2));
}

double f_sf(double x, double d1, double d2) {
    check_dof(x, d1, d2);
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    return incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x));
}

AnovaResult oneway_anova(const Groups& groups) {
    if (groups.size() < 2) throw DataError("anova: need at least two groups");
    std::size_t n = 0;
    for (const auto& g : groups) {
        if (g.size() < 2) throw DataError("anova: every group needs at least two samples");
        for (double x : g)
            if (!std::isfinite(x)) throw DataError("anova: non-finite observation");
        n += g.size();
    }
    std::vector<double> means;
    for (const auto& g : groups) means.push_back(mean_sorted(g));
    const bool equal_means = std::all_of(means.begin(), means.end(), [&](double m) { return m == means[0]; });

    double grand = 0.0;
    for (std::size_t i = 0; i < groups.size(); ++i) grand += static_cast<double>(groups[i].size()) * means[i];
    grand /= static_cast<double>(n);
    double ssb = 0.0, ssw = 0.0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (!equal_means) ssb += static_cast<double>(groups[i].size()) * (means[i] - grand) * (means[i] - grand);
        std::vector<double> dev;
        for (double x : groups[i]) dev.push_back((x - means[i]) * (x - means[i]));
        std::sort(dev.begin(), dev.end());
        for (double d : dev) ssw += d;
    }
    AnovaResult r;
    r.df_between = groups.size() - 1;
    r.df_within = n - groups.size();
    if (ssw == 0.0) {
        if (ssb == 0.0) throw UndefinedStatisticError("anova: no variation within or between groups");
        r.F = kInf;
        r.p_value = 0.0;
        return r;
    }
    r.F = (ssb / static_cast<double>(r.df_between)) / (ssw / static_cast<double>(r.df_within));
    r.p_value = f_sf(r.F, static_cast<double>(r.df_between), static_cast<double>(r.df_within));
    return r;
}

LeveneResult levene_test(const Groups& groups) {
    if (groups.size() < 2) throw DataError("levene: need at least two groups");
    Groups dev;
    for (const auto& g : groups) {
        if (g.size() < 2) throw DataError("levene: every group needs at least two samples");
        const double med = median(g);
        std::vector<double> z;
        for (double x : g) z.push_back(std::abs(x - med));
        dev.push_back(std::move(z));
    }
    LeveneResult r;
    try {
        const auto a = oneway_anova(dev);
        r.W = a.F;
        r.p_value = a.p_value;
    } catch (const UndefinedStatisticError&) {
        // every deviation identical: spreads are equal
        r.W = 0.0;
        r.p_value = 1.0;
    }
    return r;
}

std::vector<std::size_t> select_critical(const std::vector<AnovaResult>& results, double alpha) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < results.size(); ++i)
        if (results[i].p_value < alpha) out.push_back(i);
    return out;
}

double boxcox_transform(double x, double lambda) {
    if (!(x > 0.0)) throw DataError("boxcox: inputs must be positive after the shift");
    const double lx = std::log(x);
    return lambda == 0.0 ? lx : std::expm1(lambda * lx) / lambda;
}

double boxcox_log_likelihood(const std::vector<double>& shifted, double lambda) {
    const auto n = static_cast<double>(shifted.size());
    double sum_log = 0.0, mean = 0.0;
    std::vector<double> y;
    y.reserve(shifted.size());
    for (double x : shifted) {
        sum_log += std::log(x);
        y.push_back(boxcox_transform(x, lambda));
        mean += y.back();
    }
    mean /= n;
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= n;
    if (!(var > 0.0) || !std::isfinite(var)) return -kInf;
    return (lambda - 1.0) * sum_log - 0.5 * n * std::log(var);
}

BoxCoxFit boxcox_fit(const std::vector<double>& xs) {
    if (xs.size() < 3) throw DataError("boxcox: need at least three values");
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    if (!std::isfinite(*lo) || !std::isfinite(*hi)) throw DataError("boxcox: non-finite input");
    if (*lo == *hi) throw DegenerateInputError("boxcox: constant input, lambda undefined");
    BoxCoxFit fit;
    fit.shift = std::max(0.0, kBoxCoxEpsilon - *lo);
    std::vector<double> shifted;
    for (double x : xs) shifted.push_back(x + fit.shift);
    fit.log_likelihood = -kInf;
    for (int i = 0; i <= 1000; ++i) {
        const double lambda = static_cast<double>(i - 500) / 100.0;
        const double ll = boxcox_log_likelihood(shifted, lambda);
        if (ll > fit.log_likelihood) {
            fit.log_likelihood = ll;
            fit.lambda = lambda;
        }
    }
    if (!std::isfinite(fit.log_likelihood)) throw DegenerateInputError("boxcox: likelihood undefined");
    return fit;
}

std::vector<double> boxcox_apply(const std::vector<double>& xs, const BoxCoxFit& fit) {
    std::vector<double> out;
    out.reserve(xs.size());
    for (double x : xs) out.push_back(boxcox_transform(x + fit.shift, fit.lambda));
    return out;
}

}  // namespace fedmark::bio
