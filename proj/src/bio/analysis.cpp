#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "fedmark/biomarker.hpp"
#include "fedmark/error.hpp"
#include "fedmark/losses.hpp"
#include "fedmark/nn.hpp"

namespace fedmark::bio {

std::vector<double> BiomarkerFeatureRow::features() const {
    std::vector<double> out = duration_frac;
    out.insert(out.end(), freq_rate.begin(), freq_rate.end());
    return out;
}

std::vector<std::string> feature_names(const std::vector<std::string>& class_names) {
    std::vector<std::string> out;
    for (const auto& c : class_names) out.push_back("duration_" + c);
    for (const auto& c : class_names) out.push_back("frequency_" + c);
    return out;
}

BiomarkerFeatureRow extract_features(const std::string& subject_id, data::Group group,
                                     std::vector<Detection> timeline, std::size_t classes,
                                     const ExtractConfig& cfg) {
    if (timeline.empty()) throw DataError("extract_features: empty timeline for " + subject_id);
    std::stable_sort(timeline.begin(), timeline.end(),
                     [](const Detection& a, const Detection& b) { return a.t_s < b.t_s; });
    for (const auto& d : timeline)
        if (d.class_idx == 0 || d.class_idx > classes)
            throw DataError("extract_features: class index out of range for " + subject_id);

    double period = 2.0;
    if (cfg.sample_period_s) {
        period = *cfg.sample_period_s;
    } else {
        double best = 0.0;
        for (std::size_t i = 1; i < timeline.size(); ++i) {
            const double gap = timeline[i].t_s - timeline[i - 1].t_s;
            if (gap > 0.0 && (best == 0.0 || gap < best)) best = gap;
        }
        if (best > 0.0) period = best;
    }
    if (!(period > 0.0)) throw ParameterError("extract_features: sample period must be positive");

    BiomarkerFeatureRow row;
    row.subject_id = subject_id;
    row.group = group;
    row.recording_period_s = timeline.back().t_s - timeline.front().t_s + period;
    row.duration_frac.assign(classes, 0.0);
    row.freq_rate.assign(classes, 0.0);
    std::vector<std::size_t> counts(classes, 0), episodes(classes, 0);
    for (std::size_t i = 0; i < timeline.size(); ++i) {
        const std::size_t c = timeline[i].class_idx - 1;
        ++counts[c];
        const bool continues = i > 0 && timeline[i - 1].class_idx == timeline[i].class_idx &&
                               timeline[i].t_s - timeline[i - 1].t_s <= cfg.gap_factor * period;
        if (!continues) ++episodes[c];
    }
    for (std::size_t c = 0; c < classes; ++c) {
        row.duration_frac[c] = static_cast<double>(counts[c]) * period / row.recording_period_s;
        row.freq_rate[c] = static_cast<double>(episodes[c]) / row.recording_period_s;
    }
    return row;
}

std::string_view to_string(DiagnosisTask t) {
    switch (t) {
        case DiagnosisTask::nc_vs_mci: return "NC_vs_MCI";
        case DiagnosisTask::nonad_vs_ad: return "nonAD_vs_AD";
        case DiagnosisTask::nc_mci_ad: return "NC_MCI_AD";
    }
    return "?";
}

std::vector<std::string> task_labels(DiagnosisTask t) {
    switch (t) {
        case DiagnosisTask::nc_vs_mci: return {"NC", "MCI"};
        case DiagnosisTask::nonad_vs_ad: return {"nonAD", "AD"};
        case DiagnosisTask::nc_mci_ad: return {"NC", "MCI", "AD"};
    }
    return {};
}

std::optional<std::size_t> task_label(DiagnosisTask t, data::Group g) {
    switch (t) {
        case DiagnosisTask::nc_vs_mci:
            if (g == data::Group::AD) return std::nullopt;
            return g == data::Group::NC ? 0 : 1;
        case DiagnosisTask::nonad_vs_ad: return g == data::Group::AD ? 1 : 0;
        case DiagnosisTask::nc_mci_ad:
            return g == data::Group::NC ? 0 : g == data::Group::MCI ? 1 : 2;
    }
    return std::nullopt;
}

std::vector<std::size_t> stratified_folds(const std::vector<std::string>& subject_ids,
                                          const std::vector<std::size_t>& labels, std::size_t folds,
                                          std::uint64_t seed) {
    if (subject_ids.size() != labels.size()) throw ShapeError("folds: ids and labels differ in length");
    if (folds < 2) throw FoldError("folds: need at least two folds");
    std::vector<std::size_t> order(subject_ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return subject_ids[a] < subject_ids[b]; });
    const std::size_t classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::size_t> fold_of(subject_ids.size(), 0);
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i : order)
            if (labels[i] == c) members.push_back(i);
        if (members.size() < folds)
            throw FoldError("folds: class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                            " subjects, fewer than " + std::to_string(folds) + " folds");
        std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + c);
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t j = 0; j < members.size(); ++j) fold_of[members[j]] = j % folds;
    }
    return fold_of;
}

namespace {

Tensor rows_to_tensor(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& idx,
                      const std::vector<double>& mean, const std::vector<double>& sd) {
    Tensor t({idx.size(), mean.size()});
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < mean.size(); ++c) t.at(r, c) = (x[idx[r]][c] - mean[c]) / sd[c];
    return t;
}

}  // namespace

DiagnoseResult diagnose_cv(const std::vector<std::vector<double>>& features,
                           const std::vector<std::string>& subject_ids,
                           const std::vector<data::Group>& groups, DiagnosisTask task,
                           const DiagnoseConfig& cfg, std::uint64_t seed) {
    if (features.size() != subject_ids.size() || features.size() != groups.size())
        throw ShapeError("diagnose: features, ids and groups differ in length");
    if (cfg.hidden_width == 0 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0))
        throw ParameterError("diagnose: hidden_width, epochs and learning_rate must be positive");

    DiagnoseResult res;
    res.task = task;
    res.labels = task_labels(task);
    const std::size_t classes = res.labels.size();

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < features.size(); ++i)
        if (task_label(task, groups[i])) keep.push_back(i);
    std::stable_sort(keep.begin(), keep.end(),
                     [&](std::size_t a, std::size_t b) { return subject_ids[a] < subject_ids[b]; });
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    for (std::size_t i : keep) {
        x.push_back(features[i]);
        y.push_back(*task_label(task, groups[i]));
        res.subject_ids.push_back(subject_ids[i]);
    }
    if (x.empty()) throw FoldError("diagnose: no subjects for task " + std::string(to_string(task)));
    const std::size_t dim = x.front().size();
    for (const auto& row : x)
        if (row.size() != dim) throw ShapeError("diagnose: ragged feature rows");
    for (std::size_t c = 0; c < classes; ++c)
        if (std::count(y.begin(), y.end(), c) == 0)
            throw FoldError("diagnose: class " + res.labels[c] + " has no subjects");

    res.fold_of = stratified_folds(res.subject_ids, y, cfg.folds, seed);
    res.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
    std::size_t correct = 0;
    for (std::size_t f = 0; f < cfg.folds; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < x.size(); ++i) (res.fold_of[i] == f ? test : train).push_back(i);
        std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
        for (std::size_t i : train)
            for (std::size_t c = 0; c < dim; ++c) mean[c] += x[i][c];
        for (double& m : mean) m /= static_cast<double>(train.size());
        for (std::size_t i : train)
            for (std::size_t c = 0; c < dim; ++c) sd[c] += (x[i][c] - mean[c]) * (x[i][c] - mean[c]);
        for (double& s : sd) {
            s = std::sqrt(s / static_cast<double>(train.size()));
            if (!(s > 1e-12)) s = 1.0;
        }
        const Tensor xtr = rows_to_tensor(x, train, mean, sd);
        std::vector<std::size_t> ytr;
        for (std::size_t i : train) ytr.push_back(y[i]);

        std::mt19937_64 rng(seed ^ (0xd1b54a32d192ed03ULL * (f + 1)));
        nn::DenseNet net = nn::DenseNet::init(
            {{dim, cfg.hidden_width, classes}, {nn::Activation::relu, nn::Activation::identity}}, rng);
        for (std::size_t e = 0; e < cfg.epochs; ++e) {
            const auto trace = nn::forward_trace(net, xtr);
            const auto ce = loss::cross_entropy(trace.result(), ytr);
            nn::sgd_step_inplace(net, nn::backward(net, trace, ce.grad), cfg.learning_rate);
        }
        const Tensor logits = nn::forward(net, rows_to_tensor(x, test, mean, sd));
        for (std::size_t r = 0; r < test.size(); ++r) {
            const auto row = logits.row(r);
            const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            ++res.confusion[y[test[r]]][pred];
            correct += pred == y[test[r]] ? 1 : 0;
        }
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(x.size());
    return res;
}

DiagnoseResult diagnose_cv(const std::vector<BiomarkerFeatureRow>& rows, DiagnosisTask task,
                           const DiagnoseConfig& cfg, std::uint64_t seed) {
    std::vector<std::vector<double>> x;
    std::vector<std::string> ids;
    std::vector<data::Group> groups;
    for (const auto& r : rows) {
        x.push_back(r.features());
        ids.push_back(r.subject_id);
        groups.push_back(r.group);
    }
    return diagnose_cv(x, ids, groups, task, cfg, seed);
}

AnalysisReport analyze_cohort(std::vector<BiomarkerFeatureRow> rows, const std::vector<std::string>& class_names,
                              const AnalysisSettings& settings) {
    if (rows.empty()) throw DataError("analyze: no subjects");
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
    AnalysisReport rep;
    rep.feature_names = feature_names(class_names);
    const std::size_t dim = rep.feature_names.size();
    for (const auto& r : rows)
        if (r.features().size() != dim) throw ShapeError("analyze: feature row width does not match the class table");

    // Groups with fewer than two subjects cannot enter the tests.
    std::vector<data::Group> usable;
    for (data::Group g : {data::Group::NC, data::Group::MCI, data::Group::AD}) {
        const auto n = std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.group == g; });
        if (n >= 2) usable.push_back(g);
        else if (n == 1) rep.warnings.push_back("group " + std::string(data::to_string(g)) + " has one subject; left out of the tests");
    }
    if (usable.size() < 2) throw DataError("analyze: need at least two groups with two or more subjects");

    std::vector<AnovaResult> anovas;
    double levene_sum = 0.0;
    std::size_t levene_n = 0;
    for (std::size_t j = 0; j < dim; ++j) {
        FeatureTest t;
        t.name = rep.feature_names[j];
        std::vector<double> values;
        std::vector<data::Group> owner;
        for (const auto& r : rows)
            if (std::find(usable.begin(), usable.end(), r.group) != usable.end()) {
                values.push_back(r.features()[j]);
                owner.push_back(r.group);
            }
        t.constant = std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); });
        if (!t.constant) {
            t.boxcox = boxcox_fit(values);
            const auto y = boxcox_apply(values, t.boxcox);
            Groups groups;
            for (data::Group g : usable) {
                std::vector<double> gv;
                for (std::size_t i = 0; i < y.size(); ++i)
                    if (owner[i] == g) gv.push_back(y[i]);
                groups.push_back(std::move(gv));
            }
            t.levene = levene_test(groups);
            levene_sum += t.levene.p_value;
            ++levene_n;
            try {
                t.anova = oneway_anova(groups);
            } catch (const UndefinedStatisticError&) {
                t.anova = AnovaResult{0.0, usable.size() - 1, values.size() - usable.size(), 1.0};
            }
        } else {
            t.anova = AnovaResult{0.0, usable.size() - 1, values.size() - usable.size(), 1.0};
        }
        anovas.push_back(t.anova);
        rep.tests.push_back(std::move(t));
    }
    for (std::size_t j : select_critical(anovas, settings.alpha)) rep.tests[j].critical = true;
    rep.levene_mean_p = levene_n ? levene_sum / static_cast<double>(levene_n) : 1.0;
    if (levene_n && rep.levene_mean_p <= 0.05)
        rep.warnings.push_back("mean Levene p <= 0.05: equal-variance assumption is doubtful; ANOVA reported anyway");

    for (DiagnosisTask task : {DiagnosisTask::nc_vs_mci, DiagnosisTask::nonad_vs_ad, DiagnosisTask::nc_mci_ad}) {
        try {
            rep.diagnoses.push_back(diagnose_cv(rows, task, settings.diagnose, settings.seed));
        } catch (const FoldError& e) {
            rep.skipped_tasks.push_back(std::string(to_string(task)) + ": " + e.what());
        }
    }
    rep.rows = std::move(rows);
    return rep;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

[[noreturn]] void csv_fail(const std::string& source, std::size_t row, std::size_t col, const std::string& name,
                           const std::string& msg) {
    throw DataError(source + ": row " + std::to_string(row) + ", column " + std::to_string(col) + " (" + name +
                    "): " + msg);
}

std::vector<std::vector<std::string>> read_table(const std::string& text, const std::string& source,
                                                 const std::vector<std::string>& header) {
    std::istringstream in(text);
    std::string line;
    std::size_t row = 0;
    std::vector<std::vector<std::string>> out;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++row;
        line = trim(line);
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        for (auto& c : cells) c = trim(c);
        if (!have_header) {
            for (std::size_t c = 0; c < header.size(); ++c)
                if (c >= cells.size() || cells[c] != header[c])
                    csv_fail(source, row, c + 1, header[c], "expected header \"" + header[c] + "\"");
            if (cells.size() != header.size())
                csv_fail(source, row, header.size() + 1, "?", "unexpected extra header column");
            have_header = true;
            continue;
        }
        if (cells.size() != header.size())
            csv_fail(source, row, std::min(cells.size(), header.size()) + 1,
                     header[std::min(cells.size(), header.size() - 1)],
                     "expected " + std::to_string(header.size()) + " columns, found " + std::to_string(cells.size()));
        cells.push_back(std::to_string(row));
        out.push_back(std::move(cells));
    }
    if (!have_header) throw DataError(source + ": missing header line");
    return out;
}

}  // namespace

std::vector<Detection> parse_detections_csv(const std::string& text, const std::string& source) {
    std::vector<Detection> out;
    for (const auto& cells : read_table(text, source, {"t_s", "class_idx"})) {
        const std::size_t row = std::stoul(cells.back());
        Detection d;
        std::size_t used = 0;
        try {
            d.t_s = std::stod(cells[0], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != cells[0].size() || cells[0].empty() || !std::isfinite(d.t_s))
            csv_fail(source, row, 1, "t_s", "not a number: \"" + cells[0] + "\"");
        long long c = 0;
        try {
            c = std::stoll(cells[1], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != cells[1].size() || cells[1].empty() || c < 1)
            csv_fail(source, row, 2, "class_idx", "expected a positive integer, got \"" + cells[1] + "\"");
        d.class_idx = static_cast<std::size_t>(c);
        out.push_back(d);
    }
    return out;
}

std::vector<std::pair<std::string, data::Group>> parse_groups_csv(const std::string& text, const std::string& source) {
    std::vector<std::pair<std::string, data::Group>> out;
    for (const auto& cells : read_table(text, source, {"subject_id", "group"})) {
        const std::size_t row = std::stoul(cells.back());
        if (cells[0].empty()) csv_fail(source, row, 1, "subject_id", "empty subject id");
        const auto g = data::parse_group(cells[1]);
        if (!g) csv_fail(source, row, 2, "group", "unknown group \"" + cells[1] + "\" (expected NC, MCI or AD)");
        out.emplace_back(cells[0], *g);
    }
    return out;
}

namespace {
std::string num(double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
}
}  // namespace

std::string features_csv(const AnalysisReport& report) {
    std::ostringstream out;
    out << "subject_id,group,recording_period_s";
    for (const auto& n : report.feature_names) out << ',' << n;
    out << '\n';
    for (const auto& r : report.rows) {
        out << r.subject_id << ',' << data::to_string(r.group) << ',' << num(r.recording_period_s);
        for (double v : r.features()) out << ',' << num(v);
        out << '\n';
    }
    return out.str();
}

std::string anova_csv(const AnalysisReport& report) {
    std::ostringstream out;
    out << "feature,F,p,critical,boxcox_lambda,constant\n";
    for (const auto& t : report.tests)
        out << t.name << ',' << num(t.anova.F) << ',' << num(t.anova.p_value) << ',' << (t.critical ? 1 : 0) << ','
            << num(t.boxcox.lambda) << ',' << (t.constant ? 1 : 0) << '\n';
    return out.str();
}

std::string levene_csv(const AnalysisReport& report) {
    std::ostringstream out;
    out << "feature,W,p\n";
    for (const auto& t : report.tests) out << t.name << ',' << num(t.levene.W) << ',' << num(t.levene.p_value) << '\n';
    return out.str();
}

std::string confusion_json(const DiagnoseResult& result) {
    nlohmann::ordered_json j;
    j["task"] = std::string(to_string(result.task));
    j["labels"] = result.labels;
    j["confusion"] = result.confusion;
    j["accuracy"] = result.accuracy;
    return j.dump(2) + "\n";
}

}  // namespace fedmark::bio
