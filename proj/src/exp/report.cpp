#include <cmath>
#include <sstream>

#include "json.hpp"

#include "fedmark/experiment.hpp"

namespace fedmark::exp {

namespace {

using json = nlohmann::ordered_json;

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json to_json(const Record& r) {
    json j;
    j["t_s"] = r.t_s;
    j["stage"] = r.stage;
    if (r.round) j["round"] = *r.round;
    if (r.node_id) j["node_id"] = *r.node_id;
    if (r.loss) j["loss"] = number(*r.loss);
    if (r.accuracy) j["accuracy"] = number(*r.accuracy);
    if (!r.per_class.empty()) {
        json pc = json::array();
        for (double v : r.per_class) pc.push_back(number(v));
        j["per_class"] = pc;
    }
    if (r.head_acc) j["head_acc"] = number(*r.head_acc);
    if (r.tail_acc) j["tail_acc"] = number(*r.tail_acc);
    if (r.round_time_s) j["round_time_s"] = number(*r.round_time_s);
    if (r.note) j["note"] = *r.note;
    return j;
}

}  // namespace

std::string metrics_jsonl(const ExperimentResult& result) {
    std::ostringstream out;
    double last_t = 0.0;
    for (const auto& r : result.records) {
        out << to_json(r).dump() << '\n';
        last_t = r.t_s;
    }
    const Summary& s = result.summary;
    json j;
    j["t_s"] = last_t;
    j["stage"] = "summary";
    j["pretrained_only_acc"] = number(s.pretrained_only);
    j["supervised_only_acc"] = number(s.supervised_only);
    j["after_unsupervised_acc"] = number(s.after_unsupervised);
    j["three_stage_acc"] = number(s.three_stage);
    j["three_stage_global_acc"] = number(s.three_stage_global);
    j["balanced_kd_tail_acc"] = number(s.balanced_tail);
    j["balanced_kd_overall_acc"] = number(s.balanced_overall);
    j["plain_tail_acc"] = number(s.plain_tail);
    j["plain_overall_acc"] = number(s.plain_overall);
    j["night_day_round_time_ratio"] = number(s.night_day_ratio);
    j["payload_bytes_encoders"] = s.payload_bytes_encoders;
    j["payload_bytes_full"] = s.payload_bytes_full;
    j["rounds"] = result.rounds.size();
    j["skipped_node_rounds"] = s.skipped_node_rounds;
    j["dropped_uploads"] = s.dropped_uploads;
    j["failure_events"] = s.failure_events;
    out << j.dump() << '\n';
    return out.str();
}

std::string round_times_csv(const ExperimentResult& result) {
    std::ostringstream out;
    out.precision(17);
    out << "round,start_s,completion_s,aggregation_s,broadcast_s,nodes,dropped\n";
    for (std::size_t i = 0; i < result.rounds.size(); ++i) {
        const auto& r = result.rounds[i];
        std::size_t dropped = 0;
        for (const auto& n : r.nodes) dropped += n.dropped ? 1 : 0;
        out << i + 1 << ',' << r.start_s << ',' << r.completion_s << ',' << r.aggregation_s << ','
            << r.broadcast_s << ',' << r.nodes.size() << ',' << dropped << '\n';
    }
    return out.str();
}

}  // namespace fedmark::exp
