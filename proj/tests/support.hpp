#pragma once

// Random cohort generators shared by the unit and acceptance suites.

#include "balmatch/balmatch.hpp"

#include <random>
#include <set>
#include <vector>

namespace balmatch::testing {

struct RandomCohortShape {
    std::size_t max_clusters = 10;
    std::size_t max_cluster_side = 8;
    std::size_t dimension = 3;
    std::int64_t max_level = 3;  // covariate values are integers in [0, max_level]
    std::size_t max_noise = 4;
};

/// Cohort built from random strata: each stratum has its own covariate
/// vector, 0..max side sizes per group (one side may be empty) and random
/// 0/1 outcomes.
inline Cohort random_cohort(std::mt19937_64& gen, const RandomCohortShape& shape = {}) {
    std::uniform_int_distribution<std::size_t> nclusters(1, shape.max_clusters);
    std::uniform_int_distribution<std::size_t> side(0, shape.max_cluster_side);
    std::uniform_int_distribution<std::int64_t> level(0, shape.max_level);
    std::uniform_int_distribution<std::size_t> noise(0, shape.max_noise);
    const std::int64_t one = pow10_i64(kDefaultPrecision);

    SynthSpec spec;
    spec.seed = gen();
    spec.noise = noise(gen);
    spec.dimension = shape.dimension;
    std::set<CovariateVector> seen;
    const std::size_t k = nclusters(gen);
    for (std::size_t attempt = 0; spec.clusters.size() < k && attempt < 100 * k; ++attempt) {
        SynthCluster cl;
        for (std::size_t j = 0; j < shape.dimension; ++j) cl.cv.push_back(level(gen) * one);
        if (!seen.insert(cl.cv).second) continue;
        cl.size_a = side(gen);
        cl.size_b = side(gen);
        if (cl.size_a + cl.size_b == 0) cl.size_a = 1;
        cl.deaths_a = std::uniform_int_distribution<std::size_t>(0, cl.size_a)(gen);
        cl.deaths_b = std::uniform_int_distribution<std::size_t>(0, cl.size_b)(gen);
        spec.clusters.push_back(std::move(cl));
    }
    return synthesize(spec);
}

/// Random cohort where both sides of every stratum are non-empty.
inline Cohort random_matched_cohort(std::mt19937_64& gen, const RandomCohortShape& shape = {}) {
    while (true) {
        Cohort c = random_cohort(gen, shape);
        if (c.count_a() > 0 && c.count_b() > 0) return c;
    }
}

/// Registry-shaped cohort: binary covariates with column-specific
/// prevalences (slightly shifted between groups), rare binary outcomes.
/// Produces many exact duplicates, as real risk-score data does.
inline Cohort registry_like_cohort(std::size_t a, std::size_t b, std::size_t s, std::uint64_t seed,
                                   double death_rate = 0.04) {
    std::mt19937_64 gen(seed);
    std::vector<double> prevalence(s);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& p : prevalence) p = 0.02 + 0.3 * unit(gen) * unit(gen);
    const std::int64_t one = pow10_i64(kDefaultPrecision);
    std::vector<Patient> rows;
    rows.reserve(a + b);
    for (std::size_t i = 0; i < a + b; ++i) {
        const Group g = i < a ? Group::A : Group::B;
        Patient p;
        p.id = (g == Group::A ? "a" : "b") + std::to_string(i);
        p.group = g;
        for (std::size_t j = 0; j < s; ++j) {
            const double q = g == Group::A ? prevalence[j] : std::min(0.9, prevalence[j] * 1.3);
            p.covariates.push_back(unit(gen) < q ? one : 0);
        }
        p.outcome = unit(gen) < death_rate ? one : 0;
        rows.push_back(std::move(p));
    }
    std::shuffle(rows.begin(), rows.end(), gen);
    return Cohort(std::move(rows), s);
}

inline std::vector<std::size_t> random_permutation(std::mt19937_64& gen, std::size_t n) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), gen);
    return order;
}

/// Cohort from literal rows; covariates and outcomes are whole numbers.
struct Row {
    std::string id;
    Group group;
    std::vector<std::int64_t> cv;
    std::int64_t outcome;
};

inline Cohort make_cohort(const std::vector<Row>& rows, int precision = kDefaultPrecision) {
    const std::int64_t one = pow10_i64(precision);
    std::vector<Patient> ps;
    for (const Row& r : rows) {
        Patient p{r.id, r.group, {}, r.outcome * one};
        for (auto v : r.cv) p.covariates.push_back(v * one);
        ps.push_back(std::move(p));
    }
    const std::size_t s = rows.empty() ? 0 : rows.front().cv.size();
    return Cohort(std::move(ps), s, precision);
}

/// The canonical 2-vs-3 stratum: A outcomes {1,0}, B outcomes {1,0,0}.
inline Cohort two_vs_three() {
    return make_cohort({{"a1", Group::A, {1, 0}, 1},
                        {"a2", Group::A, {1, 0}, 0},
                        {"b1", Group::B, {1, 0}, 1},
                        {"b2", Group::B, {1, 0}, 0},
                        {"b3", Group::B, {1, 0}, 0}});
}

}  // namespace balmatch::testing
