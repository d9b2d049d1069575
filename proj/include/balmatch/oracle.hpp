#pragma once

// Brute-force expectation of the uniform bootstrap.
//
// Within one stratum of equal covariate vectors with n A- and m B-patients,
// every maximal exact 1:1 matching uses S = min(n, m) patients per side, and
// under uniform selection every S-subset of a side is equally likely. The
// expected outcome sum of a side is therefore the mean subset sum, which is
// computed here by listing the subsets. Strata are independent, so the
// cohort-level expectation is the sum over strata.
//
// Nothing here uses the clustering or weighting code it is meant to check.

#include "balmatch/cohort.hpp"
#include "balmatch/rational.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace balmatch {

inline constexpr std::size_t kDefaultOracleGuard = 12;

struct SideExpectation {
    Rational expectation = 0;
    std::size_t subsets = 0;
};

/// Mean of Σ_{i∈T} outcomes[i] over all `take`-subsets T.
inline SideExpectation subset_mean(std::span<const Rational> outcomes, std::size_t take) {
    const std::size_t n = outcomes.size();
    SideExpectation out;
    if (take == 0 || take > n) return out;
    std::vector<bool> chosen(n, false);
    std::fill(chosen.begin(), chosen.begin() + static_cast<std::ptrdiff_t>(take), true);
    Rational total = 0;
    do {
        for (std::size_t i = 0; i < n; ++i)
            if (chosen[i]) total += outcomes[i];
        ++out.subsets;
    } while (std::prev_permutation(chosen.begin(), chosen.end()));
    out.expectation = total / Rational(out.subsets);
    return out;
}

struct PairExpectation {
    Rational e_a = 0;
    Rational e_b = 0;
    std::size_t subsets = 0;
    bool feasible = true;
};

/// Expected outcome sums of one matched stratum, by enumeration.
inline PairExpectation per_cluster_expectation(std::span<const Rational> a_outcomes,
                                               std::span<const Rational> b_outcomes,
                                               std::size_t guard = kDefaultOracleGuard) {
    PairExpectation out;
    if (a_outcomes.size() > guard || b_outcomes.size() > guard) {
        out.feasible = false;
        return out;
    }
    const std::size_t s = std::min(a_outcomes.size(), b_outcomes.size());
    const auto ea = subset_mean(a_outcomes, s);
    const auto eb = subset_mean(b_outcomes, s);
    out.e_a = ea.expectation;
    out.e_b = eb.expectation;
    out.subsets = ea.subsets + eb.subsets;
    return out;
}

struct ExactExpectation {
    Rational e_a = 0;
    Rational e_b = 0;
    std::size_t enumerated_selections = 0;
    bool feasible = true;
    std::size_t strata = 0;  // matched strata
};

inline ExactExpectation enumerate_expectation(const Cohort& c, std::size_t guard = kDefaultOracleGuard) {
    std::map<CovariateVector, std::pair<std::vector<Rational>, std::vector<Rational>>> strata;
    for (std::size_t i = 0; i < c.size(); ++i) {
        auto& s = strata[c[i].covariates];
        (c[i].group == Group::A ? s.first : s.second).push_back(c.outcome(i));
    }
    ExactExpectation out;
    for (const auto& [cv, sides] : strata) {
        if (sides.first.empty() || sides.second.empty()) continue;
        ++out.strata;
        const auto e = per_cluster_expectation(sides.first, sides.second, guard);
        if (!e.feasible) {
            out.feasible = false;
            continue;
        }
        out.e_a += e.e_a;
        out.e_b += e.e_b;
        out.enumerated_selections += e.subsets;
    }
    return out;
}

inline nlohmann::json to_json(const ExactExpectation& e) {
    return {{"e_a", to_fraction_string(e.e_a)},
            {"e_b", to_fraction_string(e.e_b)},
            {"feasible", e.feasible},
            {"enumerated_selections", e.enumerated_selections},
            {"strata", e.strata}};
}

}  // namespace balmatch
