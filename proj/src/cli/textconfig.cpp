#include "fedmark/textconfig.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fedmark/error.hpp"

namespace fedmark::textconfig {

const Value* Table::find(std::string_view key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return &v;
    return nullptr;
}

const Table* Document::table(std::string_view name) const {
    for (const auto& t : tables)
        if (t.name == name) return &t;
    return nullptr;
}

namespace {

class LineParser {
public:
    LineParser(std::string_view text, const std::string& source, int line)
        : text_(text), source_(source), line_(line) {}

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError(source_ + ":" + std::to_string(line_) + ": " + msg);
    }

    void skip_ws() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
    }

    bool at_end_or_comment() {
        skip_ws();
        return pos_ >= text_.size() || text_[pos_] == '#';
    }

    std::string key() {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_' ||
                text_[pos_] == '-' || text_[pos_] == '.'))
            ++pos_;
        if (pos_ == start) fail("expected a key");
        return std::string(text_.substr(start, pos_ - start));
    }

    void expect(char c) {
        skip_ws();
        if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    Value value() {
        skip_ws();
        if (pos_ >= text_.size()) fail("missing value");
        Value v;
        v.line = line_;
        const char c = text_[pos_];
        if (c == '"') {
            v.data = string_literal();
        } else if (c == '[') {
            ++pos_;
            Array arr;
            skip_ws();
            if (pos_ < text_.size() && text_[pos_] == ']') {
                ++pos_;
            } else {
                for (;;) {
                    Value item = value();
                    if (item.is_array()) fail("nested arrays are not supported");
                    arr.push_back(std::move(item));
                    skip_ws();
                    if (pos_ < text_.size() && text_[pos_] == ',') {
                        ++pos_;
                        skip_ws();
                        if (pos_ < text_.size() && text_[pos_] == ']') {
                            ++pos_;
                            break;
                        }
                        continue;
                    }
                    expect(']');
                    break;
                }
            }
            v.data = std::move(arr);
        } else if (text_.substr(pos_, 4) == "true") {
            pos_ += 4;
            v.data = true;
        } else if (text_.substr(pos_, 5) == "false") {
            pos_ += 5;
            v.data = false;
        } else {
            v.data = number();
        }
        return v;
    }

private:
    std::string string_literal() {
        ++pos_;
        std::string out;
        while (pos_ < text_.size() && text_[pos_] != '"') {
            char c = text_[pos_++];
            if (c == '\\') {
                if (pos_ >= text_.size()) fail("unterminated escape");
                const char e = text_[pos_++];
                switch (e) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    default: fail(std::string("unknown escape \\") + e);
                }
            }
            out += c;
        }
        if (pos_ >= text_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    std::variant<std::int64_t, double, bool, std::string, Array> number() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.' ||
                text_[pos_] == '-' || text_[pos_] == '+' || text_[pos_] == '_'))
            ++pos_;
        std::string tok(text_.substr(start, pos_ - start));
        std::erase(tok, '_');
        if (tok.empty()) fail("expected a value");
        const bool floating = tok.find_first_of(".eE") != std::string::npos ||
                              tok == "inf" || tok == "nan";
        if (!floating) {
            std::int64_t iv = 0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
            if (ec == std::errc() && p == tok.data() + tok.size()) return iv;
            fail("malformed integer '" + tok + "'");
        }
        double dv = 0.0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), dv);
        if (ec != std::errc() || p != tok.data() + tok.size()) fail("malformed number '" + tok + "'");
        return dv;
    }

    std::string_view text_;
    const std::string& source_;
    int line_;
    std::size_t pos_ = 0;
};

}  // namespace

Document parse(std::string_view text, std::string source) {
    Document doc;
    doc.source = std::move(source);
    Table* current = &doc.root;
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        start = end + 1;

        LineParser lp(line, doc.source, line_no);
        if (lp.at_end_or_comment()) {
            if (end == text.size()) break;
            continue;
        }
        std::size_t first = line.find_first_not_of(" \t");
        if (line[first] == '[') {
            const bool is_array = line.substr(first, 2) == "[[";
            const std::size_t open = first + (is_array ? 2 : 1);
            const std::size_t close = line.find(is_array ? "]]" : "]", open);
            if (close == std::string_view::npos) lp.fail("unterminated table header");
            std::string name(line.substr(open, close - open));
            while (!name.empty() && name.back() == ' ') name.pop_back();
            while (!name.empty() && name.front() == ' ') name.erase(name.begin());
            if (name.empty()) lp.fail("empty table name");
            LineParser rest(line.substr(close + (is_array ? 2 : 1)), doc.source, line_no);
            if (!rest.at_end_or_comment()) lp.fail("trailing characters after table header");
            Table t;
            t.name = name;
            t.line = line_no;
            if (is_array) {
                auto& list = doc.table_arrays[name];
                list.push_back(std::move(t));
                current = &list.back();
            } else {
                if (doc.table(name)) lp.fail("duplicate table [" + name + "]");
                doc.tables.push_back(std::move(t));
                current = &doc.tables.back();
            }
        } else {
            std::string key = lp.key();
            lp.expect('=');
            Value v = lp.value();
            if (!lp.at_end_or_comment()) lp.fail("trailing characters after value");
            if (current->find(key)) lp.fail("duplicate key '" + key + "'");
            current->entries.emplace_back(std::move(key), std::move(v));
        }
        if (end == text.size()) break;
    }
    return doc;
}

Document parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

TableReader::TableReader(const Table& table, std::string source)
    : table_(&table), source_(std::move(source)) {}

bool TableReader::has(std::string_view key) const { return table_->find(key) != nullptr; }

std::string TableReader::where(std::string_view key) const {
    const Value* v = table_->find(key);
    const int line = v ? v->line : table_->line;
    std::string sect = table_->name.empty() ? "" : "[" + table_->name + "] ";
    return source_ + ":" + std::to_string(line) + ": " + sect + std::string(key);
}

void TableReader::fail(std::string_view key, const std::string& message) const {
    throw ConfigError(where(key) + ": " + message);
}

const Value* TableReader::take(std::string_view key) {
    const Value* v = table_->find(key);
    if (v) read_.insert(std::string(key));
    return v;
}

double TableReader::get_double(std::string_view key, double fallback) {
    const Value* v = take(key);
    if (!v) return fallback;
    if (const auto* i = std::get_if<std::int64_t>(&v->data)) return static_cast<double>(*i);
    if (const auto* d = std::get_if<double>(&v->data)) return *d;
    fail(key, "expected a number");
}

std::int64_t TableReader::get_int(std::string_view key, std::int64_t fallback) {
    const Value* v = take(key);
    if (!v) return fallback;
    if (const auto* i = std::get_if<std::int64_t>(&v->data)) return *i;
    fail(key, "expected an integer");
}

bool TableReader::get_bool(std::string_view key, bool fallback) {
    const Value* v = take(key);
    if (!v) return fallback;
    if (const auto* b = std::get_if<bool>(&v->data)) return *b;
    fail(key, "expected true or false");
}

std::string TableReader::get_string(std::string_view key, std::string fallback) {
    const Value* v = take(key);
    if (!v) return fallback;
    if (const auto* s = std::get_if<std::string>(&v->data)) return *s;
    fail(key, "expected a string");
}

std::vector<double> TableReader::get_doubles(std::string_view key, std::vector<double> fallback) {
    const Value* v = take(key);
    if (!v) return fallback;
    const auto* arr = std::get_if<Array>(&v->data);
    if (!arr) fail(key, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& item : *arr) {
        if (const auto* i = std::get_if<std::int64_t>(&item.data)) out.push_back(static_cast<double>(*i));
        else if (const auto* d = std::get_if<double>(&item.data)) out.push_back(*d);
        else fail(key, "expected an array of numbers");
    }
    return out;
}

std::vector<std::int64_t> TableReader::get_ints(std::string_view key,
                                                std::vector<std::int64_t> fallback) {
    const Value* v = take(key);
    if (!v) return fallback;
    const auto* arr = std::get_if<Array>(&v->data);
    if (!arr) fail(key, "expected an array of integers");
    std::vector<std::int64_t> out;
    for (const auto& item : *arr) {
        const auto* i = std::get_if<std::int64_t>(&item.data);
        if (!i) fail(key, "expected an array of integers");
        out.push_back(*i);
    }
    return out;
}

std::vector<std::string> TableReader::get_strings(std::string_view key,
                                                  std::vector<std::string> fallback) {
    const Value* v = take(key);
    if (!v) return fallback;
    const auto* arr = std::get_if<Array>(&v->data);
    if (!arr) fail(key, "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& item : *arr) {
        const auto* s = std::get_if<std::string>(&item.data);
        if (!s) fail(key, "expected an array of strings");
        out.push_back(*s);
    }
    return out;
}

std::vector<std::string> TableReader::unread() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : table_->entries)
        if (!read_.contains(k)) out.push_back(k);
    return out;
}

void TableReader::finish() const {
    const auto extra = unread();
    if (!extra.empty()) fail(extra.front(), "unknown key");
}

}  // namespace fedmark::textconfig
