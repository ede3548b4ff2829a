#pragma once

// Sectioned key=value text used by experiment configs and checkpoint metadata.
//
//   # comment
//   [section]
//   key = value
//
// Keys before the first header belong to the unnamed section "". Whitespace
// around keys and values is trimmed; '#' starts a comment anywhere on a line.

#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "orthograd/error.hpp"

namespace orthograd {

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_double(std::string_view text, const std::string& where) {
    const std::string t(trim(text));
    double v = 0.0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc{} || res.ptr != t.data() + t.size())
        throw ParseError(where + ": expected a number, got '" + t + "'");
    return v;
}

inline std::int64_t parse_int(std::string_view text, const std::string& where) {
    const std::string t(trim(text));
    std::int64_t v = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc{} || res.ptr != t.data() + t.size())
        throw ParseError(where + ": expected an integer, got '" + t + "'");
    return v;
}

inline bool parse_bool(std::string_view text, const std::string& where) {
    const std::string t(trim(text));
    if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
    if (t == "0" || t == "false" || t == "no" || t == "off") return false;
    throw ParseError(where + ": expected a boolean, got '" + t + "'");
}

}  // namespace detail

class KvDocument {
public:
    struct Entry {
        std::string value;
        int line = 0;
    };
    using Section = std::map<std::string, Entry>;

    // Parses until EOF or until a line equal to `stop_line` (exclusive).
    static KvDocument parse(std::istream& in, const std::string& source, const std::string& stop_line = {}) {
        KvDocument doc;
        doc.source_ = source;
        std::string current;
        doc.order_.push_back("");
        std::string raw;
        int lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            if (!stop_line.empty() && detail::trim(raw) == stop_line) {
                doc.stopped_ = true;
                break;
            }
            std::string_view line(raw);
            if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const std::string where = source + ":" + std::to_string(lineno);
            if (line.front() == '[') {
                if (line.back() != ']') throw ParseError(where + ": unterminated section header");
                current = std::string(detail::trim(line.substr(1, line.size() - 2)));
                if (!doc.sections_.count(current)) doc.order_.push_back(current);
                doc.sections_[current];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) throw ParseError(where + ": expected key = value");
            const std::string key(detail::trim(line.substr(0, eq)));
            if (key.empty()) throw ParseError(where + ": empty key");
            auto& sec = doc.sections_[current];
            if (sec.count(key)) throw ParseError(where + ": duplicate key '" + key + "'");
            sec[key] = Entry{std::string(detail::trim(line.substr(eq + 1))), lineno};
        }
        return doc;
    }

    static KvDocument parse_string(const std::string& text, const std::string& source) {
        std::istringstream in(text);
        return parse(in, source);
    }

    bool stopped() const noexcept { return stopped_; }
    const std::string& source() const noexcept { return source_; }

    bool has_section(const std::string& name) const { return sections_.count(name) > 0; }

    std::vector<std::string> section_names() const { return order_; }

    const Section* section(const std::string& name) const {
        const auto it = sections_.find(name);
        return it == sections_.end() ? nullptr : &it->second;
    }

    std::optional<std::string> get(const std::string& sec, const std::string& key) const {
        const Section* s = section(sec);
        if (!s) return std::nullopt;
        const auto it = s->find(key);
        if (it == s->end()) return std::nullopt;
        return it->second.value;
    }

    std::string where(const std::string& sec, const std::string& key) const {
        const Section* s = section(sec);
        if (s) {
            const auto it = s->find(key);
            if (it != s->end()) return source_ + ":" + std::to_string(it->second.line);
        }
        return source_ + ": [" + sec + "] " + key;
    }

    std::string require(const std::string& sec, const std::string& key) const {
        auto v = get(sec, key);
        if (!v) throw ParseError(source_ + ": missing key '" + key + "' in section [" + sec + "]");
        return *v;
    }

    double get_double(const std::string& sec, const std::string& key, double fallback) const {
        auto v = get(sec, key);
        return v ? detail::parse_double(*v, where(sec, key)) : fallback;
    }
    std::int64_t get_int(const std::string& sec, const std::string& key, std::int64_t fallback) const {
        auto v = get(sec, key);
        return v ? detail::parse_int(*v, where(sec, key)) : fallback;
    }
    bool get_bool(const std::string& sec, const std::string& key, bool fallback) const {
        auto v = get(sec, key);
        return v ? detail::parse_bool(*v, where(sec, key)) : fallback;
    }
    std::string get_string(const std::string& sec, const std::string& key, const std::string& fallback) const {
        auto v = get(sec, key);
        return v ? *v : fallback;
    }

    // Rejects keys outside `allowed` so typos in configs fail loudly.
    void check_keys(const std::string& sec, const std::vector<std::string>& allowed) const {
        const Section* s = section(sec);
        if (!s) return;
        for (const auto& [key, entry] : *s) {
            bool ok = false;
            for (const auto& a : allowed) ok = ok || a == key;
            if (!ok)
                throw ParseError(source_ + ":" + std::to_string(entry.line) + ": unknown key '" + key +
                                 "' in section [" + sec + "]");
        }
    }

private:
    std::string source_;
    std::map<std::string, Section> sections_;
    std::vector<std::string> order_;
    bool stopped_ = false;
};

}  // namespace orthograd
