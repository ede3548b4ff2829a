#pragma once

// Accuracy reports, the unlearning impact score, and the key=value results
// document consumed by `orthograd compare`.
//
// Results document: optional '#' comment lines, then one record per line of
// space-separated key=value pairs in this fixed order:
//
//   method seed retain_size epoch A_u A_r A_test A_p_test uis stop_epoch stopped_early
//
// Reals are printed with 6 significant digits ("%.6g"); stopped_early is 0 or 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "orthograd/data.hpp"
#include "orthograd/error.hpp"
#include "orthograd/kvtext.hpp"
#include "orthograd/method.hpp"

namespace orthograd {

struct AccuracyReport {
    double A_u = 0.0;
    double A_r = 0.0;
    double A_test = 0.0;
    std::size_t epoch = 0;
    std::string method;
    std::uint64_t seed = 0;
};

// Mean of the relative test-accuracy change and the relative gap between the
// unlearned model's forget-set accuracy and the pretrained test accuracy.
inline double uis(double a_p_test, double a_u_test, double a_u_u) {
    detail::require(a_p_test > 0.0, "uis: pretrained test accuracy must be positive");
    return (std::abs(a_p_test - a_u_test) / a_p_test + std::abs(a_p_test - a_u_u) / a_p_test) / 2.0;
}

struct UISRecord {
    double A_p_test = 0.0;
    AccuracyReport report;
    double uis = 0.0;
};

inline UISRecord make_uis_record(double a_p_test, const AccuracyReport& report) {
    return {a_p_test, report, uis(a_p_test, report.A_test, report.A_u)};
}

// Works for any model type with an evaluate_accuracy overload.
template <typename Model>
AccuracyReport evaluate_splits(const Model& model, const Splits& splits) {
    AccuracyReport r;
    r.A_u = evaluate_accuracy(model, splits.forget);
    r.A_r = evaluate_accuracy(model, splits.retain);
    r.A_test = evaluate_accuracy(model, splits.test);
    return r;
}

struct ResultRecord {
    std::string method;
    std::uint64_t seed = 0;
    std::size_t retain_size = 0;
    std::size_t epoch = 0;
    double A_u = 0.0;
    double A_r = 0.0;
    double A_test = 0.0;
    double A_p_test = 0.0;
    double uis = 0.0;
    std::size_t stop_epoch = 0;
    bool stopped_early = false;
};

inline ResultRecord make_result_record(const UISRecord& u, std::size_t retain_size, std::size_t stop_epoch,
                                       bool stopped_early) {
    ResultRecord r;
    r.method = u.report.method;
    r.seed = u.report.seed;
    r.retain_size = retain_size;
    r.epoch = u.report.epoch;
    r.A_u = u.report.A_u;
    r.A_r = u.report.A_r;
    r.A_test = u.report.A_test;
    r.A_p_test = u.A_p_test;
    r.uis = u.uis;
    r.stop_epoch = stop_epoch;
    r.stopped_early = stopped_early;
    return r;
}

inline auto record_key(const ResultRecord& r) {
    return std::make_tuple(method_rank(r.method), r.method, r.retain_size, r.seed, r.epoch);
}

inline void sort_records(std::vector<ResultRecord>& records) {
    std::stable_sort(records.begin(), records.end(),
                     [](const ResultRecord& a, const ResultRecord& b) { return record_key(a) < record_key(b); });
}

namespace detail {

inline std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string fmt_fixed(double v, int digits) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace detail

inline std::string format_record(const ResultRecord& r) {
    std::string s;
    s += "method=" + r.method;
    s += " seed=" + std::to_string(r.seed);
    s += " retain_size=" + std::to_string(r.retain_size);
    s += " epoch=" + std::to_string(r.epoch);
    s += " A_u=" + detail::fmt6(r.A_u);
    s += " A_r=" + detail::fmt6(r.A_r);
    s += " A_test=" + detail::fmt6(r.A_test);
    s += " A_p_test=" + detail::fmt6(r.A_p_test);
    s += " uis=" + detail::fmt6(r.uis);
    s += " stop_epoch=" + std::to_string(r.stop_epoch);
    s += " stopped_early=" + std::string(r.stopped_early ? "1" : "0");
    return s;
}

inline ResultRecord parse_record(const std::string& line, const std::string& where) {
    static const std::vector<std::string> keys = {"method", "seed",     "retain_size", "epoch",
                                                  "A_u",    "A_r",      "A_test",      "A_p_test",
                                                  "uis",    "stop_epoch", "stopped_early"};
    std::istringstream in(line);
    std::string token;
    std::size_t idx = 0;
    ResultRecord r;
    while (in >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) throw ParseError(where + ": expected key=value, got '" + token + "'");
        const std::string key = token.substr(0, eq);
        const std::string value = token.substr(eq + 1);
        if (idx >= keys.size() || key != keys[idx])
            throw ParseError(where + ": unexpected key '" + key + "'" +
                             (idx < keys.size() ? " (expected '" + keys[idx] + "')" : ""));
        switch (idx) {
            case 0: r.method = value; break;
            case 1: r.seed = static_cast<std::uint64_t>(detail::parse_int(value, where)); break;
            case 2: r.retain_size = static_cast<std::size_t>(detail::parse_int(value, where)); break;
            case 3: r.epoch = static_cast<std::size_t>(detail::parse_int(value, where)); break;
            case 4: r.A_u = detail::parse_double(value, where); break;
            case 5: r.A_r = detail::parse_double(value, where); break;
            case 6: r.A_test = detail::parse_double(value, where); break;
            case 7: r.A_p_test = detail::parse_double(value, where); break;
            case 8: r.uis = detail::parse_double(value, where); break;
            case 9: r.stop_epoch = static_cast<std::size_t>(detail::parse_int(value, where)); break;
            case 10: r.stopped_early = detail::parse_bool(value, where); break;
        }
        ++idx;
    }
    if (idx != keys.size()) throw ParseError(where + ": missing key '" + keys[idx] + "'");
    if (r.method.empty()) throw ParseError(where + ": empty method");
    return r;
}

inline std::vector<ResultRecord> read_results(std::istream& in, const std::string& source) {
    std::vector<ResultRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        out.push_back(parse_record(std::string(t), source + ":" + std::to_string(lineno)));
    }
    return out;
}

inline std::vector<ResultRecord> load_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open results file '" + path + "'");
    return read_results(in, path);
}

enum class ReportFormat { keyvalue, table };

inline constexpr const char* kResultsHeader = "# orthograd results v1";

// Records are sorted (method, retain size, seed, epoch) before writing, so
// the bytes depend only on the record set.
inline void write_report(std::ostream& out, std::vector<ResultRecord> records, ReportFormat format) {
    sort_records(records);
    if (format == ReportFormat::keyvalue) {
        out << kResultsHeader << '\n';
        for (const auto& r : records) out << format_record(r) << '\n';
        return;
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-22s %6s %7s %6s %8s %8s %8s %8s %8s %5s %8s\n", "method", "seed", "N_r",
                  "epoch", "A_u", "A_r", "A_test", "A_p_test", "UIS", "stop", "early");
    out << buf;
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%-22s %6llu %7zu %6zu %8.2f %8.2f %8.2f %8.2f %8.4f %5zu %8s\n",
                      r.method.c_str(), static_cast<unsigned long long>(r.seed), r.retain_size, r.epoch, r.A_u,
                      r.A_r, r.A_test, r.A_p_test, r.uis, r.stop_epoch, r.stopped_early ? "yes" : "no");
        out << buf;
    }
}

inline void emit_report(const std::vector<ResultRecord>& records, const std::string& path, ReportFormat format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write report '" + path + "'");
    write_report(out, records, format);
    out.flush();
    if (!out) throw IoError("failed writing report '" + path + "'");
}

// ---------------------------------------------------------------------------
// Cross-seed summaries.

struct Stat {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
    double median = 0.0;
    std::size_t count = 0;
};

inline Stat summarize(std::vector<double> xs) {
    Stat s;
    s.count = xs.size();
    if (xs.empty()) return s;
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size()));
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    s.median = n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
    return s;
}

struct MethodSummary {
    std::string method;
    std::size_t retain_size = 0;  // set only in sweep summaries
    Stat A_u, A_r, A_test, uis;
};

// Groups by method (and by retain size when `by_retain_size`), in report order.
inline std::vector<MethodSummary> summarize_records(std::vector<ResultRecord> records, bool by_retain_size) {
    sort_records(records);
    std::vector<MethodSummary> out;
    std::size_t i = 0;
    while (i < records.size()) {
        std::size_t j = i;
        auto same = [&](const ResultRecord& r) {
            return r.method == records[i].method && (!by_retain_size || r.retain_size == records[i].retain_size);
        };
        std::vector<double> au, ar, at, u;
        for (j = i; j < records.size() && same(records[j]); ++j) {
            au.push_back(records[j].A_u);
            ar.push_back(records[j].A_r);
            at.push_back(records[j].A_test);
            u.push_back(records[j].uis);
        }
        MethodSummary m;
        m.method = records[i].method;
        m.retain_size = by_retain_size ? records[i].retain_size : 0;
        m.A_u = summarize(au);
        m.A_r = summarize(ar);
        m.A_test = summarize(at);
        m.uis = summarize(u);
        out.push_back(m);
        i = j;
    }
    return out;
}

inline std::string pm(const Stat& s, int digits) {
    return detail::fmt_fixed(s.mean, digits) + " ± " + detail::fmt_fixed(s.std, digits);
}

// Table-style summary: A_u, A_r, A_test, UIS as mean ± std across seeds.
inline std::string format_comparison(const std::vector<ResultRecord>& records) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-22s %4s  %-16s %-16s %-16s %-16s\n", "Method", "n", "A_u", "A_r", "A_test",
                  "UIS (lower is better)");
    out << buf;
    for (const auto& m : summarize_records(records, false)) {
        const std::string uis_cell = m.method == "original" ? "-" : pm(m.uis, 3);
        std::snprintf(buf, sizeof buf, "%-22s %4zu  %-17s %-17s %-17s %-17s\n", m.method.c_str(), m.uis.count,
                      pm(m.A_u, 2).c_str(), pm(m.A_r, 2).c_str(), pm(m.A_test, 2).c_str(), uis_cell.c_str());
        out << buf;
    }
    return out.str();
}

// UIS against retain-set size, one row per (method, N_r).
inline std::string format_sweep(const std::vector<ResultRecord>& records) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-22s %7s %4s  %-17s %-8s\n", "Method", "N_r", "n", "UIS", "median");
    out << buf;
    for (const auto& m : summarize_records(records, true)) {
        if (m.method == "original") continue;
        std::snprintf(buf, sizeof buf, "%-22s %7zu %4zu  %-17s %-8s\n", m.method.c_str(), m.retain_size,
                      m.uis.count, pm(m.uis, 3).c_str(), detail::fmt_fixed(m.uis.median, 3).c_str());
        out << buf;
    }
    return out.str();
}

}  // namespace orthograd
