#pragma once

// Hypothesis tests used to compare matched outcome rates.

#include "balmatch/cohort.hpp"
#include "balmatch/dbsem.hpp"
#include "balmatch/error.hpp"
#include "balmatch/psm.hpp"
#include "balmatch/rational.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace balmatch {

namespace special {

inline constexpr double kEps = 1e-16;
inline constexpr double kTiny = 1e-300;
inline constexpr int kMaxTerms = 10000;

// P(a, x) by its power series; converges quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int n = 0; n < kMaxTerms; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by Lentz's continued fraction; for x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
    double b = x + 1.0 - a;
    double c = 1.0 / kTiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxTerms; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

/// Regularized upper incomplete gamma Q(a, x) = Γ(a, x) / Γ(a).
inline double gamma_q(double a, double x) {
    if (a <= 0 || x < 0) throw ValidationError("gamma_q: requires a > 0, x >= 0");
    if (x == 0) return 1.0;
    if (std::isinf(x)) return 0.0;
    return x < a + 1.0 ? 1.0 - gamma_p_series(a, x) : gamma_q_fraction(a, x);
}

inline double gamma_p(double a, double x) {
    if (a <= 0 || x < 0) throw ValidationError("gamma_p: requires a > 0, x >= 0");
    if (x == 0) return 0.0;
    if (std::isinf(x)) return 1.0;
    return x < a + 1.0 ? gamma_p_series(a, x) : 1.0 - gamma_q_fraction(a, x);
}

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_fraction(double a, double b, double x) {
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m < kMaxTerms; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

// log Γ(a + b) − log Γ(a), without the cancellation of two huge lgamma
// values when a is large (Stirling series for the difference).
inline double log_gamma_ratio(double a, double b) {
    if (a < 1e3) return std::lgamma(a + b) - std::lgamma(a);
    const double ab = a + b;
    auto tail = [](double z) {
        const double z2 = z * z;
        return 1.0 / (12.0 * z) - 1.0 / (360.0 * z * z2) + 1.0 / (1260.0 * z * z2 * z2);
    };
    return (a - 0.5) * std::log1p(b / a) + b * std::log(ab) - b + tail(ab) - tail(a);
}

inline double log_beta(double a, double b) {
    if (a < b) std::swap(a, b);
    return std::lgamma(b) - log_gamma_ratio(a, b);
}

// I_x(a, b) for large a and b <= 1: asymptotic expansion in incomplete gamma
// functions of u = −(a + (b − 1)/2) ln x. Both continued fractions lose
// accuracy in proportion to a in this regime.
inline double beta_large_a_small_b(double a, double b, double log_x) {
    const double bm1 = b - 1.0;
    const double t = a + bm1 / 2.0;
    const double u = -t * log_x;
    const double log_h = b * std::log(u) - u - std::lgamma(b);
    if (log_h < std::log(std::numeric_limits<double>::min())) return 0.0;
    const double prefix = std::exp(log_h + log_gamma_ratio(a, b) - b * std::log(t));
    double j = gamma_q(b, u) / std::exp(log_h);
    double sum = prefix * j;
    constexpr int kTerms = 30;
    std::array<double, kTerms> p{1.0};
    const double lx2 = (log_x / 2.0) * (log_x / 2.0);
    const double t4 = 4.0 * t * t;
    double lxp = 1.0, b2n = b, odd_fact = 1.0;
    for (int n = 1; n < kTerms; ++n) {
        odd_fact *= (2.0 * n) * (2.0 * n + 1.0);
        p[n] = 0.0;
        double fact = 6.0;
        for (int m = 1; m < n; ++m) {
            p[n] += (m * b - n) * p[n - m] / fact;
            fact *= (2.0 * m + 2.0) * (2.0 * m + 3.0);
        }
        p[n] = p[n] / n + bm1 / odd_fact;
        j = (b2n * (b2n + 1.0) * j + (u + b2n + 1.0) * lxp) / t4;
        lxp *= lx2;
        b2n += 2.0;
        const double r = prefix * p[n] * j;
        sum += r;
        if (std::abs(r) < kEps * std::abs(sum)) break;
    }
    return sum;
}

/// Regularized incomplete beta I_x(a, b), with y = 1 − x supplied by the
/// caller so that x close to 1 loses no precision.
inline double beta_inc(double a, double b, double x, double y) {
    if (a <= 0 || b <= 0 || x < 0 || x > 1 || y < 0 || y > 1) throw ValidationError("beta_inc: argument out of range");
    if (x == 0 || y == 0) return x == 0 ? 0.0 : 1.0;
    const double log_x = y < 0.5 ? std::log1p(-y) : std::log(x);
    const double log_y = x < 0.5 ? std::log1p(-x) : std::log(y);
    if (b <= 1.0 && a >= 15.0) return beta_large_a_small_b(a, b, log_x);
    const bool lower = x < (a + 1.0) / (a + b + 2.0);
    if (!lower && a <= 1.0 && b >= 15.0) return 1.0 - beta_large_a_small_b(b, a, log_y);
    const double front = std::exp(a * log_x + b * log_y - log_beta(a, b));
    if (lower) return front * beta_fraction(a, b, x) / a;
    return 1.0 - front * beta_fraction(b, a, y) / b;
}

inline double beta_inc(double a, double b, double x) { return beta_inc(a, b, x, 1.0 - x); }

}  // namespace special

/// Upper tail of the chi-square distribution.
inline double chi_square_sf(double statistic, double df) {
    if (statistic <= 0) return 1.0;
    return special::gamma_q(df / 2.0, statistic / 2.0);
}

/// Two-sided tail P(|T| > |t|) of Student's t.
inline double student_t_two_sided(double t, double df) {
    if (std::isinf(t)) return 0.0;
    const double t2 = t * t;
    return special::beta_inc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2));
}

enum class TestKind { chi_square, t_test };

struct TestReport {
    TestKind test = TestKind::chi_square;
    double statistic = 0;
    double p_value = 1;
    double df = 1;
    bool degenerate = false;
    std::map<std::string, double> inputs;
};

/// Pearson chi-square on the 2×2 table (dead, alive) × (A, B), no continuity
/// correction. Counts may be fractional.
inline TestReport chi_square_2x2(double deaths_a, double n_a, double deaths_b, double n_b) {
    if (!(n_a > 0 && n_b > 0)) throw ValidationError("chi-square: group sizes must be positive");
    if (deaths_a < 0 || deaths_b < 0 || deaths_a > n_a || deaths_b > n_b)
        throw ValidationError("chi-square: deaths must lie in [0, n]");
    TestReport r;
    r.test = TestKind::chi_square;
    r.df = 1;
    r.inputs = {{"deaths_a", deaths_a}, {"n_a", n_a}, {"deaths_b", deaths_b}, {"n_b", n_b}};
    const double n = n_a + n_b;
    const double dead = deaths_a + deaths_b;
    const double alive = n - dead;
    if (dead == 0 || alive == 0) {
        r.degenerate = true;
        return r;
    }
    const double obs[2][2] = {{deaths_a, n_a - deaths_a}, {deaths_b, n_b - deaths_b}};
    const double col[2] = {dead, alive};
    const double row[2] = {n_a, n_b};
    double chi = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const double e = row[i] * col[j] / n;
            chi += (obs[i][j] - e) * (obs[i][j] - e) / e;
        }
    r.statistic = chi;
    r.p_value = chi_square_sf(chi, 1.0);
    return r;
}

struct WeightedObservation {
    double value = 0;
    double weight = 1;
};

/// Sufficient statistics of a weighted sample.
struct WeightedMoments {
    double sum_w = 0;
    double sum_w2 = 0;
    double sum_wx = 0;
    double sum_wx2 = 0;

    static WeightedMoments of(std::span<const WeightedObservation> sample) {
        WeightedMoments m;
        for (const auto& o : sample) {
            m.sum_w += o.weight;
            m.sum_w2 += o.weight * o.weight;
            m.sum_wx += o.weight * o.value;
            m.sum_wx2 += o.weight * o.value * o.value;
        }
        return m;
    }
    /// n unit-weight 0/1 observations with `events` ones (events may be fractional).
    static WeightedMoments binary(double events, double n) { return {n, n, events, events}; }
};

/// Welch two-sample t-test on weighted observations. Each side uses the
/// weighted mean, the reliability-weighted variance
/// Σw(x−m)² / (Σw − Σw²/Σw), and effective size n_eff = (Σw)²/Σw²; degrees
/// of freedom follow Welch–Satterthwaite with n_eff − 1 per side.
inline TestReport t_test_two_sample(const WeightedMoments& a, const WeightedMoments& b) {
    if (!(a.sum_w > 0 && b.sum_w > 0)) throw ValidationError("t-test: both samples need positive total weight");
    TestReport r;
    r.test = TestKind::t_test;
    r.inputs = {{"sum_w_a", a.sum_w},   {"sum_w2_a", a.sum_w2}, {"sum_wx_a", a.sum_wx}, {"sum_wx2_a", a.sum_wx2},
                {"sum_w_b", b.sum_w},   {"sum_w2_b", b.sum_w2}, {"sum_wx_b", b.sum_wx}, {"sum_wx2_b", b.sum_wx2}};
    struct Side {
        double mean, se2, n_eff;
        bool estimable;
    };
    auto side = [](const WeightedMoments& m) {
        const double mean = m.sum_wx / m.sum_w;
        const double n_eff = m.sum_w * m.sum_w / m.sum_w2;
        const double denom = m.sum_w - m.sum_w2 / m.sum_w;
        const double ss = std::max(0.0, m.sum_wx2 - m.sum_w * mean * mean);
        if (!(denom > 0)) return Side{mean, 0.0, n_eff, false};
        const double var = ss / denom;
        return Side{mean, var / n_eff, n_eff, true};
    };
    const Side sa = side(a), sb = side(b);
    r.degenerate = !sa.estimable || !sb.estimable;
    const double se2 = sa.se2 + sb.se2;
    const double diff = sa.mean - sb.mean;
    if (!(se2 > 0)) {
        r.degenerate = true;
        r.df = 0;
        if (diff == 0) {
            r.statistic = 0;
            r.p_value = 1;
        } else {
            r.statistic = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            r.p_value = 0;
        }
        return r;
    }
    r.statistic = diff / std::sqrt(se2);
    double dfden = 0;
    if (sa.se2 > 0) dfden += sa.se2 * sa.se2 / (sa.n_eff - 1.0);
    if (sb.se2 > 0) dfden += sb.se2 * sb.se2 / (sb.n_eff - 1.0);
    r.df = se2 * se2 / dfden;
    r.p_value = student_t_two_sided(r.statistic, r.df);
    return r;
}

inline TestReport t_test_two_sample(std::span<const WeightedObservation> a, std::span<const WeightedObservation> b) {
    return t_test_two_sample(WeightedMoments::of(a), WeightedMoments::of(b));
}

/// Per-side weighted samples of a DBSeM result: every member of a matched
/// cluster contributes its 0/1 outcome with the cluster's weight. Needs
/// binary outcomes, so Σw·x² = Σw·x.
inline std::pair<WeightedMoments, WeightedMoments> weighted_moments(const DbsemResult& r) {
    WeightedMoments a, b;
    for (const ClusterPair& m : r.matching.matched) {
        const double wa = to_double(m.w_a), wb = to_double(m.w_b);
        const double sa = static_cast<double>(m.a.size()), sb = static_cast<double>(m.b.size());
        const double oa = to_double(m.a.outcome_sum), ob = to_double(m.b.outcome_sum);
        a.sum_w += wa * sa;
        a.sum_w2 += wa * wa * sa;
        a.sum_wx += wa * oa;
        a.sum_wx2 += wa * oa;
        b.sum_w += wb * sb;
        b.sum_w2 += wb * wb * sb;
        b.sum_wx += wb * ob;
        b.sum_wx2 += wb * ob;
    }
    return {a, b};
}

struct RateSummary {
    Rational deaths_a = 0;
    Rational deaths_b = 0;
    std::size_t pairs = 0;
    Rational rate_a = 0;
    Rational rate_b = 0;
    bool empty = false;  // no pairs; rates reported as 0
};

inline RateSummary rate_summary(const Matching& m, const Cohort& c) {
    if (!c.binary_outcomes()) throw ValidationError("rate summary requires binary (0/1) outcomes");
    RateSummary r;
    r.pairs = m.pairs.size();
    for (const auto& p : m.pairs) {
        r.deaths_a += c.outcome(p.a);
        r.deaths_b += c.outcome(p.b);
    }
    r.empty = r.pairs == 0;
    if (!r.empty) {
        r.rate_a = r.deaths_a / Rational(r.pairs);
        r.rate_b = r.deaths_b / Rational(r.pairs);
    }
    return r;
}

inline RateSummary rate_summary(const WeightedResult& w, const Cohort& c) {
    if (!c.binary_outcomes()) throw ValidationError("rate summary requires binary (0/1) outcomes");
    RateSummary r;
    r.deaths_a = w.r_a;
    r.deaths_b = w.r_b;
    r.pairs = w.matched_pairs_total;
    r.rate_a = w.rate_a;
    r.rate_b = w.rate_b;
    r.empty = r.pairs == 0;
    return r;
}

/// Chi-square of a summary's death counts over its pair count per side.
inline TestReport chi_square(const RateSummary& s) {
    if (s.empty) {
        TestReport r;
        r.degenerate = true;
        r.inputs = {{"deaths_a", 0}, {"n_a", 0}, {"deaths_b", 0}, {"n_b", 0}};
        return r;
    }
    const double n = static_cast<double>(s.pairs);
    return chi_square_2x2(to_double(s.deaths_a), n, to_double(s.deaths_b), n);
}

inline nlohmann::json to_json(const TestReport& r) {
    nlohmann::json out = {{"test", r.test == TestKind::chi_square ? "chi_square" : "t_test"},
                          {"p_value", r.p_value},
                          {"df", r.df},
                          {"degenerate", r.degenerate},
                          {"inputs", r.inputs}};
    if (std::isfinite(r.statistic)) out["statistic"] = r.statistic;
    else out["statistic"] = r.statistic > 0 ? "inf" : "-inf";
    return out;
}

inline nlohmann::json to_json(const RateSummary& s) {
    return {{"deaths_a", rational_json(s.deaths_a)},
            {"deaths_b", rational_json(s.deaths_b)},
            {"pairs", s.pairs},
            {"rate_a", rational_json(s.rate_a)},
            {"rate_b", rational_json(s.rate_b)},
            {"empty", s.empty}};
}

}  // namespace balmatch
