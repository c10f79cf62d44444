#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

// Reader for the TOML subset used by experiment configs and data tables:
//
//   # comment
//   key = 1            integers
//   key = 0.5          floats (also 1e-3)
//   key = true         booleans
//   key = "text"       strings (\" \\ \n escapes)
//   key = [1, 2, 3]    single-line arrays of scalars
//   [section]          table
//   [[section]]        array of tables
//
// Every value remembers its source line so errors can point at it.

namespace fedmark::textconfig {

struct Value;
using Array = std::vector<Value>;

struct Value {
    std::variant<std::int64_t, double, bool, std::string, Array> data;
    int line = 0;

    bool is_int() const { return std::holds_alternative<std::int64_t>(data); }
    bool is_number() const { return is_int() || std::holds_alternative<double>(data); }
    bool is_bool() const { return std::holds_alternative<bool>(data); }
    bool is_string() const { return std::holds_alternative<std::string>(data); }
    bool is_array() const { return std::holds_alternative<Array>(data); }
};

struct Table {
    std::string name;  // empty for the root table
    int line = 0;
    std::vector<std::pair<std::string, Value>> entries;

    const Value* find(std::string_view key) const;
};

struct Document {
    std::string source;
    Table root;
    std::vector<Table> tables;                            // [name]
    std::map<std::string, std::vector<Table>> table_arrays;  // [[name]]

    const Table* table(std::string_view name) const;
};

// Throws ConfigError("<source>:<line>: message") on malformed input.
Document parse(std::string_view text, std::string source = "<config>");
Document parse_file(const std::string& path);

// Typed access over one table that remembers which keys were read, so
// finish() can reject the rest.
class TableReader {
public:
    TableReader(const Table& table, std::string source);

    bool has(std::string_view key) const;
    double get_double(std::string_view key, double fallback);
    std::int64_t get_int(std::string_view key, std::int64_t fallback);
    bool get_bool(std::string_view key, bool fallback);
    std::string get_string(std::string_view key, std::string fallback);
    std::vector<double> get_doubles(std::string_view key, std::vector<double> fallback);
    std::vector<std::int64_t> get_ints(std::string_view key, std::vector<std::int64_t> fallback);
    std::vector<std::string> get_strings(std::string_view key, std::vector<std::string> fallback);

    // Keys present but not yet consumed, in file order.
    std::vector<std::string> unread() const;
    // Throws ConfigError naming the first unknown key.
    void finish() const;

    [[noreturn]] void fail(std::string_view key, const std::string& message) const;
    std::string where(std::string_view key) const;

private:
    const Value* take(std::string_view key);

    const Table* table_;
    std::string source_;
    std::set<std::string, std::less<>> read_;
};

}  // namespace fedmark::textconfig
