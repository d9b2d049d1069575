#pragma once

// Patients, cohorts and the exact fixed-point covariate model.
//
// Covariates and outcomes are stored as integers scaled by 10^precision, so
// "two patients have equal covariate vectors" is an exact predicate and
// serialization is lossless.

#include "balmatch/error.hpp"
#include "balmatch/rational.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace balmatch {

inline constexpr int kDefaultPrecision = 6;
inline constexpr int kMaxPrecision = 12;

enum class Group { A, B };

inline char group_label(Group g) { return g == Group::A ? 'A' : 'B'; }
inline Group other(Group g) { return g == Group::A ? Group::B : Group::A; }

using CovariateVector = std::vector<std::int64_t>;

struct CovariateHash {
    std::size_t operator()(const CovariateVector& cv) const noexcept {
        // FNV-1a over the raw words; iteration order never depends on it.
        std::uint64_t h = 1469598103934665603ULL;
        for (std::int64_t v : cv) {
            auto u = static_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) {
                h ^= (u >> (8 * i)) & 0xffU;
                h *= 1099511628211ULL;
            }
        }
        return static_cast<std::size_t>(h);
    }
};

inline std::int64_t pow10_i64(int precision) {
    std::int64_t p = 1;
    for (int i = 0; i < precision; ++i) p *= 10;
    return p;
}

/// Parses a plain decimal ("12", "-0.5", "1.50") into an integer scaled by
/// 10^precision. Returns nullopt for anything that is not an exact decimal at
/// that precision (exponents, extra digits, overflow).
inline std::optional<std::int64_t> parse_fixed(std::string_view text, int precision) {
    if (text.empty()) return std::nullopt;
    bool negative = false;
    if (text.front() == '+' || text.front() == '-') {
        negative = text.front() == '-';
        text.remove_prefix(1);
    }
    const auto dot = text.find('.');
    std::string_view whole = text.substr(0, dot);
    std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
    if (whole.empty() && frac.empty()) return std::nullopt;
    auto all_digits = [](std::string_view s) {
        return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    if (!all_digits(whole) || !all_digits(frac)) return std::nullopt;
    // Trailing zeros beyond the precision are harmless; anything else is not.
    while (static_cast<int>(frac.size()) > precision && frac.back() == '0') frac.remove_suffix(1);
    if (static_cast<int>(frac.size()) > precision) return std::nullopt;

    constexpr auto kMax = std::numeric_limits<std::int64_t>::max();
    std::int64_t value = 0;
    auto push = [&](char c) {
        const int d = c - '0';
        if (value > (kMax - d) / 10) return false;
        value = value * 10 + d;
        return true;
    };
    for (char c : whole)
        if (!push(c)) return std::nullopt;
    for (char c : frac)
        if (!push(c)) return std::nullopt;
    for (int i = static_cast<int>(frac.size()); i < precision; ++i)
        if (!push('0')) return std::nullopt;
    return negative ? -value : value;
}

inline std::string format_fixed(std::int64_t raw, int precision) {
    const bool negative = raw < 0;
    // Magnitude via unsigned to survive INT64_MIN.
    std::uint64_t mag = negative ? 0 - static_cast<std::uint64_t>(raw) : static_cast<std::uint64_t>(raw);
    std::string digits = std::to_string(mag);
    if (static_cast<int>(digits.size()) <= precision)
        digits.insert(0, precision + 1 - digits.size(), '0');
    std::string out = negative ? "-" : "";
    if (precision == 0) return out + digits;
    out += digits.substr(0, digits.size() - precision);
    out += '.';
    out += digits.substr(digits.size() - precision);
    return out;
}

struct Patient {
    std::string id;
    Group group = Group::A;
    CovariateVector covariates;  // scaled by 10^precision
    std::int64_t outcome = 0;    // scaled by 10^precision

    friend bool operator==(const Patient&, const Patient&) = default;
};

/// Σ|cv_i(p) − cv_i(q)|, in the cohort's fixed-point units.
inline std::int64_t manhattan(const Patient& p, const Patient& q) {
    if (p.covariates.size() != q.covariates.size())
        throw ValidationError("manhattan: dimension mismatch (" + std::to_string(p.covariates.size()) +
                              " vs " + std::to_string(q.covariates.size()) + ")");
    std::int64_t d = 0;
    for (std::size_t i = 0; i < p.covariates.size(); ++i) {
        const std::int64_t x = p.covariates[i], y = q.covariates[i];
        d += x > y ? x - y : y - x;
    }
    return d;
}

/// Ordered two-group patient collection. Row order is the sort order and is
/// part of the value; use same_dataset() for order-insensitive comparison.
class Cohort {
public:
    Cohort(std::vector<Patient> patients, std::size_t dimension, int precision = kDefaultPrecision)
        : patients_(std::move(patients)), dimension_(dimension), precision_(precision) {
        if (precision_ < 0 || precision_ > kMaxPrecision)
            throw ValidationError("precision must be in [0, " + std::to_string(kMaxPrecision) + "]");
        std::unordered_set<std::string_view> seen;
        for (std::size_t i = 0; i < patients_.size(); ++i) {
            const Patient& p = patients_[i];
            if (p.covariates.size() != dimension_)
                throw ValidationError("patient '" + p.id + "': expected " + std::to_string(dimension_) +
                                      " covariates, got " + std::to_string(p.covariates.size()));
            for (std::int64_t v : p.covariates)
                if (v < 0) throw ValidationError("patient '" + p.id + "': negative covariate");
            if (!seen.insert(p.id).second) throw ValidationError("duplicate id '" + p.id + "'");
            (p.group == Group::A ? count_a_ : count_b_)++;
        }
    }

    const std::vector<Patient>& patients() const { return patients_; }
    const Patient& operator[](std::size_t i) const { return patients_[i]; }
    std::size_t size() const { return patients_.size(); }
    std::size_t dimension() const { return dimension_; }
    int precision() const { return precision_; }
    std::int64_t scale() const { return pow10_i64(precision_); }
    std::size_t count(Group g) const { return g == Group::A ? count_a_ : count_b_; }
    std::size_t count_a() const { return count_a_; }
    std::size_t count_b() const { return count_b_; }

    Rational outcome(std::size_t i) const { return Rational(patients_[i].outcome, scale()); }
    double covariate_value(std::size_t i, std::size_t j) const {
        return static_cast<double>(patients_[i].covariates[j]) / static_cast<double>(scale());
    }

    /// True when every outcome is exactly 0 or 1.
    bool binary_outcomes() const {
        const std::int64_t one = scale();
        return std::all_of(patients_.begin(), patients_.end(),
                           [one](const Patient& p) { return p.outcome == 0 || p.outcome == one; });
    }

    /// Indices of one group's patients in sort order.
    std::vector<std::size_t> indices(Group g) const {
        std::vector<std::size_t> out;
        out.reserve(count(g));
        for (std::size_t i = 0; i < patients_.size(); ++i)
            if (patients_[i].group == g) out.push_back(i);
        return out;
    }

    friend bool operator==(const Cohort&, const Cohort&) = default;

private:
    std::vector<Patient> patients_;
    std::size_t dimension_ = 0;
    int precision_ = kDefaultPrecision;
    std::size_t count_a_ = 0;
    std::size_t count_b_ = 0;
};

/// Equal as multisets of (group, covariates, outcome), ignoring ids and order.
inline bool same_dataset(const Cohort& x, const Cohort& y) {
    if (x.dimension() != y.dimension() || x.precision() != y.precision() || x.size() != y.size()) return false;
    using Key = std::tuple<Group, CovariateVector, std::int64_t>;
    auto keys = [](const Cohort& c) {
        std::vector<Key> k;
        k.reserve(c.size());
        for (const Patient& p : c.patients()) k.emplace_back(p.group, p.covariates, p.outcome);
        std::sort(k.begin(), k.end());
        return k;
    };
    return keys(x) == keys(y);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
        s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

// "cv_12" -> 12; 0 when the name is not a covariate column.
inline std::size_t covariate_column_number(std::string_view name) {
    if (name.size() < 4 || name.substr(0, 3) != "cv_") return 0;
    std::size_t n = 0;
    auto [ptr, ec] = std::from_chars(name.data() + 3, name.data() + name.size(), n);
    if (ec != std::errc{} || ptr != name.data() + name.size()) return 0;
    return n;
}

}  // namespace detail

/// Reads a delimited table with header `id,group,outcome,cv_1..cv_s` (any
/// column order; comma or tab, detected from the header line). Row order is
/// preserved as the cohort's sort order. Blank lines and lines starting with
/// '#' are skipped. Errors carry the 1-based line number.
inline Cohort parse_cohort(std::istream& in, int precision = kDefaultPrecision) {
    if (precision < 0 || precision > kMaxPrecision)
        throw ValidationError("precision must be in [0, " + std::to_string(kMaxPrecision) + "]");
    std::string line;
    std::size_t row = 0;
    std::string header;
    while (std::getline(in, line)) {
        ++row;
        const auto t = detail::trim(line);
        if (!t.empty() && t.front() != '#') {
            header = line;
            break;
        }
    }
    if (header.empty()) throw ValidationError("empty input: missing header");
    // UTF-8 byte order mark
    if (header.size() >= 3 && header.compare(0, 3, "\xEF\xBB\xBF") == 0) header.erase(0, 3);
    const char delim = header.find('\t') != std::string::npos ? '\t' : ',';
    const auto names = detail::split(header, delim);

    std::optional<std::size_t> col_id, col_group, col_outcome;
    std::map<std::size_t, std::size_t> cv_cols;  // covariate number -> column
    for (std::size_t c = 0; c < names.size(); ++c) {
        const std::string_view n = names[c];
        std::optional<std::size_t>* slot = nullptr;
        if (n == "id") slot = &col_id;
        else if (n == "group") slot = &col_group;
        else if (n == "outcome") slot = &col_outcome;
        if (slot) {
            if (*slot) throw row_error(row, "duplicate column '" + std::string(n) + "'");
            *slot = c;
            continue;
        }
        const std::size_t k = detail::covariate_column_number(n);
        if (k == 0) throw row_error(row, "unknown column '" + std::string(n) + "'");
        if (!cv_cols.emplace(k, c).second) throw row_error(row, "duplicate column '" + std::string(n) + "'");
    }
    if (!col_id) throw row_error(row, "missing column 'id'");
    if (!col_group) throw row_error(row, "missing column 'group'");
    if (!col_outcome) throw row_error(row, "missing column 'outcome'");
    const std::size_t s = cv_cols.size();
    for (std::size_t k = 1; k <= s; ++k)
        if (!cv_cols.contains(k)) throw row_error(row, "missing column 'cv_" + std::to_string(k) + "'");

    std::vector<Patient> patients;
    std::unordered_set<std::string> ids;
    while (std::getline(in, line)) {
        ++row;
        if (const auto t = detail::trim(line); t.empty() || t.front() == '#') continue;
        const auto cells = detail::split(line, delim);
        if (cells.size() != names.size())
            throw row_error(row, "expected " + std::to_string(names.size()) + " cells, got " +
                                     std::to_string(cells.size()));
        Patient p;
        p.id = std::string(cells[*col_id]);
        if (p.id.empty()) throw row_error(row, "empty id");
        if (!ids.insert(p.id).second) throw row_error(row, "duplicate id '" + p.id + "'");

        const std::string_view g = cells[*col_group];
        if (g == "A" || g == "0") p.group = Group::A;
        else if (g == "B" || g == "1") p.group = Group::B;
        else throw row_error(row, "unknown group label '" + std::string(g) + "'");

        auto number = [&](std::string_view cell, std::string_view column) {
            const auto v = parse_fixed(cell, precision);
            if (!v)
                throw row_error(row, "non-numeric cell '" + std::string(cell) + "' in column '" +
                                         std::string(column) + "' at precision " + std::to_string(precision));
            return *v;
        };
        p.outcome = number(cells[*col_outcome], "outcome");
        p.covariates.reserve(s);
        for (const auto& [k, c] : cv_cols) {
            const std::int64_t v = number(cells[c], names[c]);
            if (v < 0) throw row_error(row, "negative covariate in column '" + std::string(names[c]) + "'");
            p.covariates.push_back(v);
        }
        patients.push_back(std::move(p));
    }
    return Cohort(std::move(patients), s, precision);
}

inline Cohort parse_cohort(std::string_view text, int precision = kDefaultPrecision) {
    std::istringstream in{std::string(text)};
    return parse_cohort(in, precision);
}

/// Canonical text form: header `id,group,outcome,cv_1..cv_s`, values rendered
/// with exactly `precision` decimals. parse_cohort() inverts it exactly.
inline std::string serialize_cohort(const Cohort& c, char delim = ',') {
    std::string out = "id";
    out += delim;
    out += "group";
    out += delim;
    out += "outcome";
    for (std::size_t k = 1; k <= c.dimension(); ++k) {
        out += delim;
        out += "cv_" + std::to_string(k);
    }
    out += '\n';
    for (const Patient& p : c.patients()) {
        out += p.id;
        out += delim;
        out += group_label(p.group);
        out += delim;
        out += format_fixed(p.outcome, c.precision());
        for (std::int64_t v : p.covariates) {
            out += delim;
            out += format_fixed(v, c.precision());
        }
        out += '\n';
    }
    return out;
}

/// Row i of the result is row order[i] of the input.
inline Cohort permute(const Cohort& c, std::span<const std::size_t> order) {
    if (order.size() != c.size())
        throw ValidationError("permutation length " + std::to_string(order.size()) + " does not match cohort size " +
                              std::to_string(c.size()));
    std::vector<bool> used(c.size(), false);
    std::vector<Patient> out;
    out.reserve(c.size());
    for (std::size_t idx : order) {
        if (idx >= c.size() || used[idx]) throw ValidationError("invalid permutation");
        used[idx] = true;
        out.push_back(c[idx]);
    }
    return Cohort(std::move(out), c.dimension(), c.precision());
}

struct SortKey {
    std::size_t covariate = 0;  // 0-based
    bool descending = false;
};

/// "cv_3" or "cv_3:desc" / "cv_3:asc".
inline SortKey parse_sort_key(std::string_view text) {
    SortKey key;
    const auto colon = text.find(':');
    const std::string_view name = text.substr(0, colon);
    if (colon != std::string_view::npos) {
        const std::string_view dir = text.substr(colon + 1);
        if (dir == "desc") key.descending = true;
        else if (dir != "asc") throw ValidationError("sort direction must be 'asc' or 'desc'");
    }
    const std::size_t k = detail::covariate_column_number(name);
    if (k == 0) throw ValidationError("sort key must name a covariate column like cv_1");
    key.covariate = k - 1;
    return key;
}

/// Stable sort on one covariate column.
inline Cohort permute(const Cohort& c, SortKey key) {
    if (key.covariate >= c.dimension()) throw ValidationError("sort key column out of range");
    std::vector<std::size_t> order(c.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        const auto x = c[i].covariates[key.covariate], y = c[j].covariates[key.covariate];
        return key.descending ? x > y : x < y;
    });
    return permute(c, order);
}

inline Cohort reversed(const Cohort& c) {
    std::vector<std::size_t> order(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) order[i] = c.size() - 1 - i;
    return permute(c, order);
}

}  // namespace balmatch
