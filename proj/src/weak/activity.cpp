#include "fedmark/activity.hpp"

#include <algorithm>

#include "fedmark/error.hpp"

namespace fedmark {

WeakLabelMap::WeakLabelMap(std::vector<Entry> entries, std::size_t classes)
    : entries_(std::move(entries)), classes_(classes) {
    for (auto& [coarse, fine] : entries_) {
        if (coarse.empty()) throw MappingError("weak label map: empty coarse label");
        if (fine.empty()) throw MappingError("weak label map: '" + coarse + "' maps to nothing");
        std::sort(fine.begin(), fine.end());
        fine.erase(std::unique(fine.begin(), fine.end()), fine.end());
        for (std::size_t f : fine)
            if (f < 1 || f > classes_)
                throw MappingError("weak label map: '" + coarse + "' references class " +
                                   std::to_string(f) + " outside 1.." + std::to_string(classes_));
    }
    for (std::size_t i = 0; i < entries_.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (entries_[i].first == entries_[j].first)
                throw MappingError("weak label map: duplicate coarse label '" + entries_[i].first + "'");
}

WeakLabelMap WeakLabelMap::from_table(const textconfig::Table& table, std::size_t classes,
                                      const std::string& source) {
    std::vector<Entry> entries;
    for (const auto& [key, value] : table.entries) {
        const auto* arr = std::get_if<textconfig::Array>(&value.data);
        if (!arr)
            throw ConfigError(source + ":" + std::to_string(value.line) + ": '" + key +
                              "' must be an array of class indices");
        std::vector<std::size_t> fine;
        for (const auto& item : *arr) {
            const auto* i = std::get_if<std::int64_t>(&item.data);
            if (!i || *i < 1)
                throw ConfigError(source + ":" + std::to_string(value.line) + ": '" + key +
                                  "' must list positive class indices");
            fine.push_back(static_cast<std::size_t>(*i));
        }
        entries.emplace_back(key, std::move(fine));
    }
    return WeakLabelMap(std::move(entries), classes);
}

bool WeakLabelMap::contains(std::string_view coarse) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry& e) { return e.first == coarse; });
}

const std::vector<std::size_t>& WeakLabelMap::fine_labels(std::string_view coarse) const {
    for (const auto& e : entries_)
        if (e.first == coarse) return e.second;
    throw MappingError("unknown coarse label '" + std::string(coarse) + "'");
}

std::optional<std::string> WeakLabelMap::home_of(std::size_t fine) const {
    for (const auto& [coarse, set] : entries_)
        if (std::binary_search(set.begin(), set.end(), fine)) return coarse;
    return std::nullopt;
}

std::optional<std::size_t> ActivityTable::class_index(std::string_view name) const {
    for (std::size_t i = 0; i < class_names.size(); ++i)
        if (class_names[i] == name) return i + 1;
    return std::nullopt;
}

ActivityTable ActivityTable::from_document(const textconfig::Document& doc) {
    const textconfig::Table* classes = doc.table("classes");
    if (!classes) throw ConfigError(doc.source + ": missing [classes] table");
    textconfig::TableReader reader(*classes, doc.source);
    ActivityTable t;
    t.class_names = reader.get_strings("names", {});
    reader.finish();
    if (t.class_names.empty()) throw ConfigError(doc.source + ": [classes] names is empty");
    const textconfig::Table* map = doc.table("weak_label_map");
    if (!map) throw ConfigError(doc.source + ": missing [weak_label_map] table");
    t.weak_map = WeakLabelMap::from_table(*map, t.classes(), doc.source);
    return t;
}

ActivityTable ActivityTable::load(const std::string& path) {
    return from_document(textconfig::parse_file(path));
}

ActivityTable ActivityTable::desk_default() {
    ActivityTable t;
    t.class_names = {"walking",  "sitting",  "standing",     "eating",
                     "cleaning", "grooming", "wiping_hands", "exercising"};
    t.weak_map = WeakLabelMap(
        {
            {"having_a_meal", {2, 4}},
            {"household", {1, 3}},
            {"grooming_hygiene", {6, 7}},
            {"chores_exercise", {5, 8}},
        },
        t.classes());
    return t;
}

}  // namespace fedmark
