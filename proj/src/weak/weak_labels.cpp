#include "fedmark/weak_labels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fedmark/error.hpp"

namespace fedmark::weak {

const std::vector<std::size_t>& map_coarse_to_fine(const ActivityLogEntry& entry,
                                                   const WeakLabelMap& map) {
    return map.fine_labels(entry.coarse_label);
}

void validate_log(const std::vector<ActivityLogEntry>& log) {
    std::vector<const ActivityLogEntry*> sorted;
    for (const auto& e : log) {
        if (!(e.start_s < e.end_s))
            throw DataError("activity log entry '" + e.coarse_label + "' has start >= end");
        sorted.push_back(&e);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b) { return a->start_s < b->start_s; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i]->start_s < sorted[i - 1]->end_s)
            throw DataError("activity log entries overlap at t=" + std::to_string(sorted[i]->start_s));
}

std::vector<WeakBatch> associate(const std::vector<ActivityLogEntry>& log,
                                 const std::vector<data::MultiModalSample>& stream,
                                 const WeakLabelMap& map, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("associate: batch_size must be >= 1");
    validate_log(log);
    for (std::size_t i = 1; i < stream.size(); ++i)
        if (stream[i].timestamp <= stream[i - 1].timestamp)
            throw DataError("associate: stream timestamps must be strictly increasing");

    std::vector<std::size_t> order(log.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return log[a].start_s < log[b].start_s; });

    std::vector<WeakBatch> batches;
    for (std::size_t e : order) {
        const auto& entry = log[e];
        const auto& fine = map_coarse_to_fine(entry, map);
        auto first = std::lower_bound(stream.begin(), stream.end(), entry.start_s,
                                      [](const auto& s, double t) { return s.timestamp < t; });
        std::vector<std::size_t> inside;
        for (auto it = first; it != stream.end() && it->timestamp < entry.end_s; ++it)
            inside.push_back(static_cast<std::size_t>(it - stream.begin()));
        for (std::size_t begin = 0; begin < inside.size(); begin += batch_size) {
            WeakBatch b;
            b.entry = e;
            const std::size_t end = std::min(inside.size(), begin + batch_size);
            for (std::size_t k = begin; k < end; ++k) {
                b.sample_indices.push_back(inside[k]);
                b.label_multiset.push_back(fine[(k - begin) % fine.size()]);
            }
            batches.push_back(std::move(b));
        }
    }
    return batches;
}

std::vector<ActivityLogEntry> parse_activity_log_csv(const std::string& text,
                                                     const std::string& source) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<ActivityLogEntry> out;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(line_no);
        if (!header) {
            if (line != "start_s,end_s,coarse_label")
                throw DataError(where + ": expected header 'start_s,end_s,coarse_label'");
            header = true;
            continue;
        }
        std::vector<std::string> cols;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cols.push_back(cell);
        if (cols.size() != 3) throw DataError(where + ": expected 3 columns, got " + std::to_string(cols.size()));
        ActivityLogEntry e;
        try {
            std::size_t used = 0;
            e.start_s = std::stod(cols[0], &used);
            if (used != cols[0].size()) throw std::invalid_argument("trailing");
            e.end_s = std::stod(cols[1], &used);
            if (used != cols[1].size()) throw std::invalid_argument("trailing");
        } catch (const std::logic_error&) {
            throw DataError(where + ": start_s/end_s must be numbers");
        }
        e.coarse_label = cols[2];
        if (e.coarse_label.empty()) throw DataError(where + ", column 3: empty coarse_label");
        if (!(e.start_s < e.end_s)) throw DataError(where + ": start_s must be < end_s");
        out.push_back(std::move(e));
    }
    if (!header) throw DataError(source + ": missing header");
    validate_log(out);
    return out;
}

std::vector<ActivityLogEntry> read_activity_log_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_activity_log_csv(ss.str(), path);
}

namespace {

// Greedy arrangement under Gumbel-perturbed log-probabilities: repeatedly
// take the best remaining (sample, label) pair with label capacity left.
std::vector<std::size_t> guided_arrangement(const Tensor& log_probs,
                                            std::span<const std::size_t> labels,
                                            std::mt19937_64& rng) {
    const std::size_t batch = labels.size();
    std::vector<std::size_t> distinct(labels.begin(), labels.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<std::size_t> capacity(distinct.size(), 0);
    for (std::size_t y : labels)
        ++capacity[static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), y) - distinct.begin())];

    struct Cand {
        double score;
        std::size_t sample;
        std::size_t label_slot;
    };
    std::vector<Cand> cands;
    std::uniform_real_distribution<double> u(1e-300, 1.0);
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t k = 0; k < distinct.size(); ++k)
            cands.push_back({log_probs.at(i, distinct[k]) - std::log(-std::log(u(rng))), i, k});
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
    std::vector<std::size_t> out(batch, 0);
    std::vector<bool> done(batch, false);
    for (const Cand& c : cands) {
        if (done[c.sample] || capacity[c.label_slot] == 0) continue;
        out[c.sample] = distinct[c.label_slot];
        done[c.sample] = true;
        --capacity[c.label_slot];
    }
    return out;
}

}  // namespace

PermutationLoss permutation_ce_loss(const Tensor& logits, std::span<const std::size_t> labels,
                                    const PermutationConfig& cfg, std::mt19937_64& rng) {
    require_rank2(logits, "permutation_ce_loss");
    const std::size_t batch = logits.rows();
    if (labels.size() != batch)
        throw ShapeError("permutation_ce_loss: " + std::to_string(labels.size()) +
                         " labels for a batch of " + std::to_string(batch));
    for (std::size_t y : labels)
        if (y >= logits.cols()) throw ShapeError("permutation_ce_loss: label out of range");

    // log-softmax once; every arrangement is then a sum of table lookups
    Tensor log_probs = loss::softmax_rows(logits);
    for (double& v : log_probs.data()) v = std::log(v);
    const auto score = [&](const std::vector<std::size_t>& arr) {
        double s = 0.0;
        for (std::size_t i = 0; i < batch; ++i) s -= log_probs.at(i, arr[i]);
        return s / static_cast<double>(batch);
    };

    const std::vector<std::size_t> identity(labels.begin(), labels.end());
    PermutationLoss out;
    out.best_assignment = identity;
    double best = score(identity);
    out.evaluated = 1;
    const auto consider = [&](const std::vector<std::size_t>& arr) {
        ++out.evaluated;
        const double s = score(arr);
        if (s < best) {
            best = s;
            out.best_assignment = arr;
        }
    };

    if (batch <= cfg.exhaustive_max) {
        std::vector<std::size_t> arr = identity;
        std::sort(arr.begin(), arr.end());
        do {
            if (arr != identity) consider(arr);
        } while (std::next_permutation(arr.begin(), arr.end()));
    } else if (cfg.budget > 0) {
        std::set<std::vector<std::size_t>> seen{identity};
        std::vector<std::size_t> arr = identity;
        const std::size_t max_tries = 20 * cfg.budget;
        std::size_t sampled = 0;
        for (std::size_t tries = 0; tries < max_tries && sampled < cfg.budget; ++tries) {
            const bool guided = cfg.sampling == PermutationSampling::guided && tries % 2 == 1;
            if (guided) {
                arr = guided_arrangement(log_probs, identity, rng);
            } else {
                arr = identity;
                std::shuffle(arr.begin(), arr.end(), rng);
            }
            if (!seen.insert(arr).second) continue;
            ++sampled;
            consider(arr);
        }
    }

    auto ce = loss::cross_entropy(logits, out.best_assignment);
    out.loss = ce.loss;
    out.grad = std::move(ce.grad);
    return out;
}

}  // namespace fedmark::weak
