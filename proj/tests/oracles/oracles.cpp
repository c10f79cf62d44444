#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace fedmark::oracle {

double contrastive_triple_sum(const Mat& v, const std::vector<std::size_t>& ids, double tau) {
    const std::size_t n = v.size();
    auto dot = [&](std::size_t i, std::size_t j) {
        long double s = 0.0L;
        for (std::size_t k = 0; k < v[i].size(); ++k) s += static_cast<long double>(v[i][k]) * v[j][k];
        return s;
    };
    long double total = 0.0L;
    for (std::size_t s = 0; s < n; ++s) {
        long double denom = 0.0L;
        for (std::size_t a = 0; a < n; ++a)
            if (a != s) denom += std::exp(dot(s, a) / tau);
        std::size_t positives = 0;
        long double inner = 0.0L;
        for (std::size_t p = 0; p < n; ++p) {
            if (p == s || ids[p] != ids[s]) continue;
            ++positives;
            inner += std::log(std::exp(dot(s, p) / tau) / denom);
        }
        if (positives == 0) throw std::invalid_argument("anchor without positive");
        total += -inner / static_cast<long double>(positives);
    }
    return static_cast<double>(total);
}

double mean_cross_entropy(const Mat& logits, const std::vector<std::size_t>& labels) {
    long double total = 0.0L;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        long double z = 0.0L;
        for (double x : logits[i]) z += std::exp(static_cast<long double>(x));
        total += -std::log(std::exp(static_cast<long double>(logits[i][labels[i]])) / z);
    }
    return static_cast<double>(total / static_cast<long double>(logits.size()));
}

double exhaustive_permutation_min(const Mat& logits, std::vector<std::size_t> labels) {
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    double best = INFINITY;
    do {
        std::vector<std::size_t> arranged(labels.size());
        for (std::size_t i = 0; i < order.size(); ++i) arranged[i] = labels[order[i]];
        best = std::min(best, mean_cross_entropy(logits, arranged));
    } while (std::next_permutation(order.begin(), order.end()));
    return best;
}

Vec numeric_gradient(const std::function<double(const Vec&)>& f, Vec x, double h) {
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double relative_error(const Vec& a, const Vec& b, double floor) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), floor);
}

AnovaRef anova_sums_of_squares(const std::vector<Vec>& groups) {
    long double grand = 0.0L;
    std::size_t n = 0;
    for (const auto& g : groups)
        for (double x : g) {
            grand += x;
            ++n;
        }
    grand /= static_cast<long double>(n);
    long double ssb = 0.0L, ssw = 0.0L;
    for (const auto& g : groups) {
        long double mean = 0.0L;
        for (double x : g) mean += x;
        mean /= static_cast<long double>(g.size());
        ssb += static_cast<long double>(g.size()) * (mean - grand) * (mean - grand);
        for (double x : g) ssw += (x - mean) * (x - mean);
    }
    const double dfb = static_cast<double>(groups.size() - 1);
    const double dfw = static_cast<double>(n - groups.size());
    AnovaRef r;
    r.ssb = static_cast<double>(ssb);
    r.ssw = static_cast<double>(ssw);
    r.F = static_cast<double>((ssb / dfb) / (ssw / dfw));
    boost::math::fisher_f dist(dfb, dfw);
    r.p = boost::math::cdf(boost::math::complement(dist, r.F));
    return r;
}

AnovaRef brown_forsythe(const std::vector<Vec>& groups) {
    std::vector<Vec> dev;
    for (auto g : groups) {
        std::sort(g.begin(), g.end());
        const std::size_t m = g.size();
        const double med = m % 2 ? g[m / 2] : 0.5 * (g[m / 2 - 1] + g[m / 2]);
        Vec d;
        for (double x : g) d.push_back(std::fabs(x - med));
        dev.push_back(d);
    }
    return anova_sums_of_squares(dev);
}

double pooled_t_test_p(const Vec& a, const Vec& b) {
    auto mean = [](const Vec& v) { return std::accumulate(v.begin(), v.end(), 0.0L) / v.size(); };
    const long double ma = mean(a), mb = mean(b);
    long double ss = 0.0L;
    for (double x : a) ss += (x - ma) * (x - ma);
    for (double x : b) ss += (x - mb) * (x - mb);
    const double df = static_cast<double>(a.size() + b.size() - 2);
    const long double sp2 = ss / df;
    const double t = static_cast<double>((ma - mb) / std::sqrt(sp2 * (1.0L / a.size() + 1.0L / b.size())));
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

double f_cdf_simpson(double x, double d1, double d2, std::size_t intervals) {
    if (x <= 0.0) return 0.0;
    const double log_beta = std::lgamma(d1 / 2) + std::lgamma(d2 / 2) - std::lgamma((d1 + d2) / 2);
    auto density = [&](double t) {
        const double lg = 0.5 * d1 * std::log(d1 / d2) + (0.5 * d1 - 1.0) * std::log(t) -
                          0.5 * (d1 + d2) * std::log1p(d1 * t / d2) - log_beta;
        return std::exp(lg);
    };
    // t = u / (1 - u) with u = w^2; dt = 2w dw / (1 - w^2)^2. The integrand
    // behaves like w^(d1 - 1) at 0, so it is finite for d1 >= 1.
    auto g = [&](double w) {
        if (w <= 0.0) {
            if (d1 == 1.0) return 2.0 * std::exp(0.5 * std::log(d1 / d2) - log_beta);
            return 0.0;
        }
        const double u = w * w;
        return density(u / (1.0 - u)) * 2.0 * w / ((1.0 - u) * (1.0 - u));
    };
    const double upper = std::sqrt(x / (1.0 + x));
    if (intervals % 2) ++intervals;
    const double h = upper / static_cast<double>(intervals);
    double sum = g(0.0) + g(upper);
    for (std::size_t i = 1; i < intervals; ++i) sum += (i % 2 ? 4.0 : 2.0) * g(h * static_cast<double>(i));
    return sum * h / 3.0;
}

double boxcox_loglik_direct(const Vec& xs, double lambda) {
    const double n = static_cast<double>(xs.size());
    Vec y;
    long double sum_log = 0.0L;
    for (double x : xs) {
        y.push_back(lambda == 0.0 ? std::log(x) : (std::pow(x, lambda) - 1.0) / lambda);
        sum_log += std::log(static_cast<long double>(x));
    }
    const long double mean = std::accumulate(y.begin(), y.end(), 0.0L) / n;
    long double var = 0.0L;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= n;
    return static_cast<double>((lambda - 1.0) * sum_log - n / 2.0 * std::log(var));
}

Vec plain_fedavg(const std::vector<Vec>& params, const std::vector<std::size_t>& counts) {
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    Vec out(params.front().size(), 0.0);
    for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += static_cast<double>(counts[k]) / total * params[k][i];
    return out;
}

Vec flatten(const nn::DenseNet& net) {
    Vec out;
    for (const auto& l : net.layers()) {
        out.insert(out.end(), l.weight.values().begin(), l.weight.values().end());
        out.insert(out.end(), l.bias.values().begin(), l.bias.values().end());
    }
    return out;
}

Mat to_mat(const Tensor& t) {
    Mat m(t.rows(), Vec(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    return m;
}

Tensor to_tensor(const Mat& m) {
    Tensor t = Tensor::zeros(m.size(), m.front().size());
    for (std::size_t r = 0; r < m.size(); ++r)
        for (std::size_t c = 0; c < m[r].size(); ++c) t.at(r, c) = m[r][c];
    return t;
}

// ---------------------------------------------------------------------------

namespace {

struct ClassPlan {
    std::size_t detections = 0;
    std::size_t episodes = 0;
};

std::vector<bio::Detection> lay_out(const std::vector<ClassPlan>& plan, double period, double span) {
    struct Run {
        std::size_t cls;
        std::size_t len;
    };
    std::vector<Run> runs;
    for (std::size_t c = 0; c < plan.size(); ++c) {
        const auto& p = plan[c];
        if (p.detections == 0) continue;
        const std::size_t base = p.detections / p.episodes, extra = p.detections % p.episodes;
        for (std::size_t e = 0; e < p.episodes; ++e) runs.push_back({c + 1, base + (e < extra ? 1 : 0)});
    }
    // Runs are separated by a gap of five periods so each one is its own episode.
    std::vector<bio::Detection> out;
    double t = 0.0;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        if (r + 1 == runs.size()) t = span - period * static_cast<double>(runs[r].len);
        for (std::size_t i = 0; i < runs[r].len; ++i) {
            out.push_back({t, runs[r].cls});
            t += period;
        }
        t += 5.0 * period;
    }
    if (out.back().t_s >= span || (out.size() > 1 && out[out.size() - 2].t_s >= out.back().t_s))
        throw std::logic_error("planted cohort: span too short for the drawn plan");
    return out;
}

}  // namespace

PlantedCohort planted_cohort(const PlantedCohortSpec& spec, const std::vector<std::string>& class_names) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<std::size_t> det(150, 1500);
    const std::size_t C = spec.classes, n = spec.per_group, k = spec.planted_class - 1;

    std::vector<std::vector<ClassPlan>> pool(n, std::vector<ClassPlan>(C));
    for (auto& subject : pool)
        for (auto& cp : subject) {
            cp.detections = det(rng);
            cp.episodes = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
        }

    PlantedCohort cohort;
    cohort.planted_feature = "frequency_" + class_names.at(k);
    const data::Group groups[3] = {data::Group::NC, data::Group::MCI, data::Group::AD};
    std::vector<std::pair<data::Group, std::vector<ClassPlan>>> subjects;
    for (std::size_t g = 0; g < 3; ++g) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::normal_distribution<double> eps(spec.episode_means.at(g), spec.episode_sd);
        for (std::size_t i : order) {
            auto plan = pool[i];
            const double drawn = std::round(eps(rng));
            plan[k].episodes = static_cast<std::size_t>(std::clamp(drawn, 1.0, 100.0));
            subjects.emplace_back(groups[g], std::move(plan));
        }
    }
    // Interleave groups under the id order.
    std::vector<std::size_t> ids(subjects.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        std::ostringstream name;
        name << "subj" << (ids[s] < 10 ? "0" : "") << ids[s];
        cohort.subject_ids.push_back(name.str());
        cohort.groups.push_back(subjects[s].first);
        cohort.timelines.push_back(lay_out(subjects[s].second, spec.sample_period_s, spec.span_s));
    }
    return cohort;
}

std::string detections_csv(const std::vector<bio::Detection>& timeline) {
    std::ostringstream o;
    o.precision(17);
    o << "t_s,class_idx\n";
    for (const auto& d : timeline) o << d.t_s << ',' << d.class_idx << '\n';
    return o.str();
}

std::string groups_csv(const PlantedCohort& cohort) {
    std::ostringstream o;
    o << "subject_id,group\n";
    for (std::size_t i = 0; i < cohort.subject_ids.size(); ++i)
        o << cohort.subject_ids[i] << ',' << data::to_string(cohort.groups[i]) << '\n';
    return o.str();
}

}  // namespace fedmark::oracle
