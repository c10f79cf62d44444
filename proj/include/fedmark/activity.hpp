#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedmark/textconfig.hpp"

namespace fedmark {

// Maps coarse activity-log labels ("having_a_meal") to sets of fine class
// indices. Fine classes are 1-based, as in the activity table.
class WeakLabelMap {
public:
    using Entry = std::pair<std::string, std::vector<std::size_t>>;

    WeakLabelMap() = default;
    WeakLabelMap(std::vector<Entry> entries, std::size_t classes);

    // Reads `coarse_label = [i, j, ...]` lines from a table.
    static WeakLabelMap from_table(const textconfig::Table& table, std::size_t classes,
                                   const std::string& source);

    bool contains(std::string_view coarse) const;
    // Sorted ascending, deduplicated. Throws MappingError for unknown labels.
    const std::vector<std::size_t>& fine_labels(std::string_view coarse) const;
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t classes() const { return classes_; }

    // First coarse label (in table order) whose set contains `fine`.
    std::optional<std::string> home_of(std::size_t fine) const;

private:
    std::vector<Entry> entries_;
    std::size_t classes_ = 0;
};

// Activity class names plus the weak-label map, loaded from a data file with
// a [classes] table (names = [...]) and a [weak_label_map] table.
struct ActivityTable {
    std::vector<std::string> class_names;  // class i is class_names[i - 1]
    WeakLabelMap weak_map;

    std::size_t classes() const { return class_names.size(); }
    std::optional<std::size_t> class_index(std::string_view name) const;
    const std::string& name_of(std::size_t fine) const { return class_names.at(fine - 1); }

    static ActivityTable from_document(const textconfig::Document& doc);
    static ActivityTable load(const std::string& path);

    // The eight-class desk-scale table (same content as data/activity_table_desk8.toml).
    static ActivityTable desk_default();
};

}  // namespace fedmark

namespace fedmark {

// One entry of a subject's activity log: a coarse label over [start_s, end_s).
struct ActivityLogEntry {
    double start_s = 0.0;
    double end_s = 0.0;
    std::string coarse_label;

    friend bool operator==(const ActivityLogEntry&, const ActivityLogEntry&) = default;
};

}  // namespace fedmark
