#pragma once

// Exact 1:1 propensity-score matching in the classic loop form: walk group A
// in row order and give each patient an unmatched exact-equal partner from B.
//
// The greedy variants reproduce the well-known weaknesses of this procedure on
// purpose (the first candidate in row order wins, or a random one does), the
// extreme variants construct the best/worst matchings the data permits, and
// the bootstrap draws every maximal exact matching with equal probability per
// patient.

#include "balmatch/cohort.hpp"
#include "balmatch/error.hpp"
#include "balmatch/propensity.hpp"
#include "balmatch/rational.hpp"
#include "balmatch/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace balmatch {

enum class Strategy { greedy, replacement, best_best, worst_worst, best_a_worst_b, worst_a_best_b, bootstrap };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::greedy: return "greedy";
        case Strategy::replacement: return "replacement";
        case Strategy::best_best: return "best_best";
        case Strategy::worst_worst: return "worst_worst";
        case Strategy::best_a_worst_b: return "best_a_worst_b";
        case Strategy::worst_a_best_b: return "worst_a_best_b";
        case Strategy::bootstrap: return "bootstrap";
    }
    return "unknown";
}

enum class ExtremeMode { best_best, worst_worst, best_a_worst_b, worst_a_best_b };

inline ExtremeMode parse_extreme_mode(std::string_view s) {
    if (s == "best_best") return ExtremeMode::best_best;
    if (s == "worst_worst") return ExtremeMode::worst_worst;
    if (s == "best_a_worst_b") return ExtremeMode::best_a_worst_b;
    if (s == "worst_a_best_b") return ExtremeMode::worst_a_best_b;
    throw ValidationError("unknown extreme mode '" + std::string(s) + "'");
}

/// Pair of cohort row indices: first from A, second from B.
struct MatchedPair {
    std::size_t a = 0;
    std::size_t b = 0;
    friend bool operator==(const MatchedPair&, const MatchedPair&) = default;
};

struct Matching {
    std::vector<MatchedPair> pairs;
    Strategy strategy = Strategy::greedy;
    std::optional<std::uint64_t> seed;

    std::size_t matched_a() const { return distinct([](const MatchedPair& p) { return p.a; }); }
    std::size_t matched_b() const { return distinct([](const MatchedPair& p) { return p.b; }); }

private:
    template <typename Key>
    std::size_t distinct(Key key) const {
        std::unordered_set<std::size_t> s;
        for (const auto& p : pairs) s.insert(key(p));
        return s.size();
    }
};

/// How "psd ≡ 0" is decided. Covariate equality is exact; propensity mode
/// compares floating-point scores within epsilon and exists to show how
/// coefficient collisions let unequal patients match.
struct Equality {
    enum class Kind { covariate, propensity };
    Kind kind = Kind::covariate;
    PropensityModel model;
    double epsilon = 0.0;

    static Equality covariates() { return {}; }
    static Equality propensity(PropensityModel m, double eps) { return {Kind::propensity, std::move(m), eps}; }
};

namespace detail {

// Exact-equal strata in order of first appearance in the cohort; member
// lists keep row order.
struct Stratum {
    std::vector<std::size_t> a;
    std::vector<std::size_t> b;
};

inline std::vector<Stratum> strata(const Cohort& c) {
    std::unordered_map<CovariateVector, std::size_t, CovariateHash> index;
    std::vector<Stratum> out;
    for (std::size_t i = 0; i < c.size(); ++i) {
        auto [it, inserted] = index.try_emplace(c[i].covariates, out.size());
        if (inserted) out.emplace_back();
        (c[i].group == Group::A ? out[it->second].a : out[it->second].b).push_back(i);
    }
    return out;
}

// Strata with members on both sides, ordered by covariate vector.
inline std::vector<Stratum> matched_strata(const Cohort& c) {
    auto all = strata(c);
    std::vector<Stratum> out;
    for (auto& s : all)
        if (!s.a.empty() && !s.b.empty()) out.push_back(std::move(s));
    std::sort(out.begin(), out.end(),
              [&](const Stratum& x, const Stratum& y) { return c[x.a.front()].covariates < c[y.a.front()].covariates; });
    return out;
}

}  // namespace detail

/// Greedy exact 1:1 matching without replacement. Without a seed the first
/// unmatched equal B-patient in row order is taken; with a seed one is drawn
/// uniformly. The result depends on row order by construction.
inline Matching greedy_exact_psm(const Cohort& c, const Equality& eq = Equality::covariates(),
                                 std::optional<std::uint64_t> seed = std::nullopt) {
    Matching m;
    m.strategy = Strategy::greedy;
    m.seed = seed;
    std::optional<CounterRng> rng;
    if (seed) rng.emplace(*seed, 0);
    auto choose = [&](std::size_t candidates) -> std::size_t {
        return rng ? static_cast<std::size_t>(rng->below(candidates)) : 0;
    };

    if (eq.kind == Equality::Kind::covariate) {
        std::unordered_map<CovariateVector, std::vector<std::size_t>, CovariateHash> open;
        for (std::size_t j : c.indices(Group::B)) open[c[j].covariates].push_back(j);
        for (std::size_t i : c.indices(Group::A)) {
            auto it = open.find(c[i].covariates);
            if (it == open.end() || it->second.empty()) continue;
            auto& cand = it->second;
            const std::size_t k = choose(cand.size());
            m.pairs.push_back({i, cand[k]});
            cand.erase(cand.begin() + static_cast<std::ptrdiff_t>(k));
        }
        return m;
    }

    const std::vector<double> ps = propensity_scores(eq.model, c);
    std::vector<std::size_t> open = c.indices(Group::B);
    std::vector<std::size_t> cand;
    for (std::size_t i : c.indices(Group::A)) {
        cand.clear();
        for (std::size_t k = 0; k < open.size(); ++k)
            if (std::abs(ps[i] - ps[open[k]]) <= eq.epsilon) cand.push_back(k);
        if (cand.empty()) continue;
        const std::size_t k = cand[choose(cand.size())];
        m.pairs.push_back({i, open[k]});
        open.erase(open.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return m;
}

/// With-replacement matching in both directions. In `a_to_b` every A-patient
/// with an exact equal gets the first such B-patient in row order (B may
/// repeat); `b_to_a` is the mirror image. Pairs are always (A, B).
struct ReplacementMatching {
    Matching a_to_b;
    Matching b_to_a;
    std::size_t total() const { return a_to_b.pairs.size() + b_to_a.pairs.size(); }
};

inline ReplacementMatching exact_psm_with_replacement(const Cohort& c) {
    ReplacementMatching r;
    r.a_to_b.strategy = r.b_to_a.strategy = Strategy::replacement;
    std::unordered_map<CovariateVector, std::size_t, CovariateHash> first_a, first_b;
    for (std::size_t i = 0; i < c.size(); ++i)
        (c[i].group == Group::A ? first_a : first_b).try_emplace(c[i].covariates, i);
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (c[i].group == Group::A) {
            if (auto it = first_b.find(c[i].covariates); it != first_b.end()) r.a_to_b.pairs.push_back({i, it->second});
        } else {
            if (auto it = first_a.find(c[i].covariates); it != first_a.end()) r.b_to_a.pairs.push_back({it->second, i});
        }
    }
    return r;
}

/// Best or worst exact matching per side. In every stratum with n A- and m
/// B-patients, S = min(n, m) are taken from each side: "best" takes the S
/// with the fewest deaths, "worst" the S with the most, ties in row order.
/// Requires 0/1 outcomes (1 = death).
inline Matching extreme_matching(const Cohort& c, ExtremeMode mode) {
    if (!c.binary_outcomes()) throw ValidationError("extreme matching requires binary (0/1) outcomes");
    const bool best_a = mode == ExtremeMode::best_best || mode == ExtremeMode::best_a_worst_b;
    const bool best_b = mode == ExtremeMode::best_best || mode == ExtremeMode::worst_a_best_b;
    Matching m;
    switch (mode) {
        case ExtremeMode::best_best: m.strategy = Strategy::best_best; break;
        case ExtremeMode::worst_worst: m.strategy = Strategy::worst_worst; break;
        case ExtremeMode::best_a_worst_b: m.strategy = Strategy::best_a_worst_b; break;
        case ExtremeMode::worst_a_best_b: m.strategy = Strategy::worst_a_best_b; break;
    }
    auto pick = [&](std::vector<std::size_t> members, std::size_t s, bool best) {
        std::stable_sort(members.begin(), members.end(), [&](std::size_t x, std::size_t y) {
            return best ? c[x].outcome < c[y].outcome : c[x].outcome > c[y].outcome;
        });
        members.resize(s);
        return members;
    };
    for (const auto& st : detail::strata(c)) {
        const std::size_t s = std::min(st.a.size(), st.b.size());
        if (s == 0) continue;
        const auto a = pick(st.a, s, best_a);
        const auto b = pick(st.b, s, best_b);
        for (std::size_t t = 0; t < s; ++t) m.pairs.push_back({a[t], b[t]});
    }
    return m;
}

namespace detail {

// One bootstrap draw: a uniform S-subset of each side of every matched
// stratum. A side that is used completely consumes no random numbers.
template <typename Emit>
void bootstrap_draw(std::vector<Stratum>& work, const std::vector<Stratum>& base, CounterRng& rng, Emit&& emit) {
    for (std::size_t g = 0; g < base.size(); ++g) {
        const std::size_t s = std::min(base[g].a.size(), base[g].b.size());
        auto& a = work[g].a;
        auto& b = work[g].b;
        a.assign(base[g].a.begin(), base[g].a.end());
        b.assign(base[g].b.begin(), base[g].b.end());
        if (a.size() > s) select_uniform_prefix(a, s, rng);
        if (b.size() > s) select_uniform_prefix(b, s, rng);
        for (std::size_t t = 0; t < s; ++t) emit(a[t], b[t]);
    }
}

}  // namespace detail

/// The matching drawn by bootstrap iteration `iteration` under `seed`.
inline Matching bootstrap_sample(const Cohort& c, std::uint64_t seed, std::uint64_t iteration) {
    Matching m;
    m.strategy = Strategy::bootstrap;
    m.seed = seed;
    const auto base = detail::matched_strata(c);
    auto work = base;
    CounterRng rng(seed, iteration);
    detail::bootstrap_draw(work, base, rng, [&](std::size_t a, std::size_t b) { m.pairs.push_back({a, b}); });
    return m;
}

struct BootstrapReport {
    std::size_t iterations = 0;
    std::uint64_t seed = 0;
    std::size_t pairs_per_iteration = 0;
    Rational mean_deaths_a_exact = 0;
    Rational mean_deaths_b_exact = 0;
    double mean_deaths_a = 0, mean_deaths_b = 0;
    double mean_rate_a = 0, mean_rate_b = 0;
    double std_error_a = 0, std_error_b = 0;
    double min_deaths_a = 0, max_deaths_a = 0;
    double min_deaths_b = 0, max_deaths_b = 0;
    std::vector<std::int64_t> deaths_a;  // per iteration, fixed-point units
    std::vector<std::int64_t> deaths_b;
};

/// Repeats the uniform bootstrap draw `iterations` times. Iteration i uses
/// substream (seed, i), and the aggregation runs over iterations in index
/// order, so the report does not depend on `threads`.
inline BootstrapReport uniform_bootstrap_psm(const Cohort& c, std::size_t iterations, std::uint64_t seed,
                                             unsigned threads = 1) {
    if (iterations < 1) throw ValidationError("bootstrap: iterations must be >= 1");
    const auto base = detail::matched_strata(c);
    BootstrapReport r;
    r.iterations = iterations;
    r.seed = seed;
    for (const auto& st : base) r.pairs_per_iteration += std::min(st.a.size(), st.b.size());
    r.deaths_a.assign(iterations, 0);
    r.deaths_b.assign(iterations, 0);

    auto worker = [&](std::size_t begin, std::size_t end) {
        auto work = base;
        for (std::size_t it = begin; it < end; ++it) {
            CounterRng rng(seed, it);
            std::int64_t da = 0, db = 0;
            detail::bootstrap_draw(work, base, rng, [&](std::size_t a, std::size_t b) {
                da += c[a].outcome;
                db += c[b].outcome;
            });
            r.deaths_a[it] = da;
            r.deaths_b[it] = db;
        }
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::min<std::size_t>(iterations, 256))));
    if (threads == 1) {
        worker(0, iterations);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (iterations + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t begin = std::min(iterations, t * chunk);
            const std::size_t end = std::min(iterations, begin + chunk);
            pool.emplace_back(worker, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    const double scale = static_cast<double>(c.scale());
    auto summarize = [&](const std::vector<std::int64_t>& d, Rational& exact, double& mean, double& se, double& lo,
                         double& hi) {
        BigInt total = 0;
        for (std::int64_t v : d) total += v;
        exact = Rational(total) / Rational(BigInt(iterations) * c.scale());
        mean = to_double(exact);
        double ss = 0;
        for (std::int64_t v : d) {
            const double dv = static_cast<double>(v) / scale - mean;
            ss += dv * dv;
        }
        se = iterations > 1 ? std::sqrt(ss / static_cast<double>(iterations - 1) / static_cast<double>(iterations)) : 0;
        const auto [mn, mx] = std::minmax_element(d.begin(), d.end());
        lo = static_cast<double>(*mn) / scale;
        hi = static_cast<double>(*mx) / scale;
    };
    summarize(r.deaths_a, r.mean_deaths_a_exact, r.mean_deaths_a, r.std_error_a, r.min_deaths_a, r.max_deaths_a);
    summarize(r.deaths_b, r.mean_deaths_b_exact, r.mean_deaths_b, r.std_error_b, r.min_deaths_b, r.max_deaths_b);
    if (r.pairs_per_iteration > 0) {
        r.mean_rate_a = r.mean_deaths_a / static_cast<double>(r.pairs_per_iteration);
        r.mean_rate_b = r.mean_deaths_b / static_cast<double>(r.pairs_per_iteration);
    }
    return r;
}

inline nlohmann::json to_json(const Matching& m, const Cohort& c) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& p : m.pairs) pairs.push_back({c[p.a].id, c[p.b].id});
    nlohmann::json out = {{"strategy", to_string(m.strategy)},
                          {"counts", {{"pairs", m.pairs.size()}, {"matched_a", m.matched_a()}, {"matched_b", m.matched_b()}}},
                          {"pairs", pairs}};
    out["seed"] = m.seed ? nlohmann::json(*m.seed) : nlohmann::json(nullptr);
    return out;
}

/// Sidecar for the CSV export: everything except the pairs.
inline nlohmann::json sidecar_json(const Matching& m) {
    nlohmann::json out = {{"strategy", to_string(m.strategy)},
                          {"counts", {{"pairs", m.pairs.size()}, {"matched_a", m.matched_a()}, {"matched_b", m.matched_b()}}}};
    out["seed"] = m.seed ? nlohmann::json(*m.seed) : nlohmann::json(nullptr);
    return out;
}

inline std::string to_csv(const Matching& m, const Cohort& c) {
    std::string out = "a_id,b_id\n";
    for (const auto& p : m.pairs) out += c[p.a].id + "," + c[p.b].id + "\n";
    return out;
}

inline nlohmann::json to_json(const BootstrapReport& r) {
    return {{"iterations", r.iterations},
            {"seed", r.seed},
            {"pairs_per_iteration", r.pairs_per_iteration},
            {"mean_deaths_a", r.mean_deaths_a},
            {"mean_deaths_b", r.mean_deaths_b},
            {"mean_deaths_a_exact", to_fraction_string(r.mean_deaths_a_exact)},
            {"mean_deaths_b_exact", to_fraction_string(r.mean_deaths_b_exact)},
            {"mean_rate_a", r.mean_rate_a},
            {"mean_rate_b", r.mean_rate_b},
            {"std_error_a", r.std_error_a},
            {"std_error_b", r.std_error_b},
            {"min_deaths_a", r.min_deaths_a},
            {"max_deaths_a", r.max_deaths_a},
            {"min_deaths_b", r.min_deaths_b},
            {"max_deaths_b", r.max_deaths_b}};
}

}  // namespace balmatch
