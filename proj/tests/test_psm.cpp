#include "balmatch/psm.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>

using namespace balmatch;
using balmatch::testing::make_cohort;
using balmatch::testing::Row;

namespace {

struct Counts {
    std::size_t a = 0, b = 0, dead_a = 0, dead_b = 0;
};

std::map<CovariateVector, Counts> stratum_counts(const Cohort& c) {
    std::map<CovariateVector, Counts> out;
    for (const Patient& p : c.patients()) {
        auto& k = out[p.covariates];
        const bool dead = p.outcome != 0;
        if (p.group == Group::A) {
            ++k.a;
            k.dead_a += dead;
        } else {
            ++k.b;
            k.dead_b += dead;
        }
    }
    return out;
}

std::pair<std::size_t, std::size_t> deaths(const Matching& m, const Cohort& c) {
    std::size_t da = 0, db = 0;
    for (const auto& p : m.pairs) {
        da += c[p.a].outcome != 0;
        db += c[p.b].outcome != 0;
    }
    return {da, db};
}

void expect_valid_exact_matching(const Matching& m, const Cohort& c) {
    std::set<std::size_t> as, bs;
    for (const auto& p : m.pairs) {
        ASSERT_EQ(c[p.a].group, Group::A);
        ASSERT_EQ(c[p.b].group, Group::B);
        ASSERT_EQ(c[p.a].covariates, c[p.b].covariates);
        ASSERT_TRUE(as.insert(p.a).second);
        ASSERT_TRUE(bs.insert(p.b).second);
    }
    std::size_t maximal = 0;
    for (const auto& [cv, k] : stratum_counts(c)) maximal += std::min(k.a, k.b);
    ASSERT_EQ(m.pairs.size(), maximal);
}

}  // namespace

TEST(Greedy, ProducesMaximalExactMatching) {
    std::mt19937_64 gen(1);
    for (int i = 0; i < 100; ++i) {
        const Cohort c = balmatch::testing::random_cohort(gen);
        expect_valid_exact_matching(greedy_exact_psm(c), c);
        expect_valid_exact_matching(greedy_exact_psm(c, Equality::covariates(), gen()), c);
    }
}

TEST(Greedy, DependsOnRowOrder) {
    const Cohort c = make_cohort({{"a1", Group::A, {1}, 0}, {"b1", Group::B, {1}, 1}, {"b2", Group::B, {1}, 0}});
    const auto forward = deaths(greedy_exact_psm(c), c);
    const Cohort r = reversed(c);
    const auto backward = deaths(greedy_exact_psm(r), r);
    EXPECT_EQ(forward.second, 1u);
    EXPECT_EQ(backward.second, 0u);
}

TEST(Greedy, SeededChoiceIsReproducible) {
    std::mt19937_64 gen(2);
    const Cohort c = balmatch::testing::random_matched_cohort(gen);
    EXPECT_EQ(greedy_exact_psm(c, Equality::covariates(), 5).pairs, greedy_exact_psm(c, Equality::covariates(), 5).pairs);
}

TEST(Greedy, PropensityEqualityMatchesUnequalPatients) {
    const auto model = PropensityModel::from_coefficients({0.0, 1.0, 2.0, 3.0});
    const Cohort c = make_cohort({{"x", Group::A, {1, 1, 0}, 0}, {"z", Group::B, {0, 0, 1}, 1}});
    EXPECT_TRUE(greedy_exact_psm(c).pairs.empty());
    const Matching m = greedy_exact_psm(c, Equality::propensity(model, 0.0));
    ASSERT_EQ(m.pairs.size(), 1u);
    EXPECT_NE(c[m.pairs[0].a].covariates, c[m.pairs[0].b].covariates);
}

TEST(Replacement, EveryMatchablePatientIsUsed) {
    std::mt19937_64 gen(3);
    for (int i = 0; i < 50; ++i) {
        const Cohort c = balmatch::testing::random_cohort(gen);
        const auto r = exact_psm_with_replacement(c);
        std::size_t expect_a = 0, expect_b = 0;
        for (const auto& [cv, k] : stratum_counts(c))
            if (k.a > 0 && k.b > 0) {
                expect_a += k.a;
                expect_b += k.b;
            }
        ASSERT_EQ(r.a_to_b.pairs.size(), expect_a);
        ASSERT_EQ(r.b_to_a.pairs.size(), expect_b);
        for (const auto& p : r.a_to_b.pairs) ASSERT_EQ(c[p.a].covariates, c[p.b].covariates);
        for (const auto& p : r.b_to_a.pairs) ASSERT_EQ(c[p.a].covariates, c[p.b].covariates);
    }
}

TEST(Extreme, MatchesPerStratumBounds) {
    std::mt19937_64 gen(4);
    for (int i = 0; i < 200; ++i) {
        const Cohort c = balmatch::testing::random_cohort(gen);
        std::size_t min_a = 0, max_a = 0, min_b = 0, max_b = 0;
        for (const auto& [cv, k] : stratum_counts(c)) {
            const std::size_t s = std::min(k.a, k.b);
            min_a += s > k.a - k.dead_a ? s - (k.a - k.dead_a) : 0;
            max_a += std::min(s, k.dead_a);
            min_b += s > k.b - k.dead_b ? s - (k.b - k.dead_b) : 0;
            max_b += std::min(s, k.dead_b);
        }
        const auto bb = extreme_matching(c, ExtremeMode::best_best);
        const auto ww = extreme_matching(c, ExtremeMode::worst_worst);
        const auto bw = extreme_matching(c, ExtremeMode::best_a_worst_b);
        const auto wb = extreme_matching(c, ExtremeMode::worst_a_best_b);
        for (const auto* m : {&bb, &ww, &bw, &wb}) expect_valid_exact_matching(*m, c);
        EXPECT_EQ(deaths(bb, c), std::make_pair(min_a, min_b));
        EXPECT_EQ(deaths(ww, c), std::make_pair(max_a, max_b));
        EXPECT_EQ(deaths(bw, c), std::make_pair(min_a, max_b));
        EXPECT_EQ(deaths(wb, c), std::make_pair(max_a, min_b));
    }
}

TEST(Extreme, EnvelopesEveryGreedyAndBootstrapRun) {
    std::mt19937_64 gen(5);
    for (int i = 0; i < 30; ++i) {
        const Cohort c = balmatch::testing::random_cohort(gen);
        const auto lo = deaths(extreme_matching(c, ExtremeMode::best_best), c);
        const auto hi = deaths(extreme_matching(c, ExtremeMode::worst_worst), c);
        for (int k = 0; k < 20; ++k) {
            const auto d = deaths(bootstrap_sample(c, 77, static_cast<std::uint64_t>(k)), c);
            ASSERT_LE(lo.first, d.first);
            ASSERT_LE(d.first, hi.first);
            ASSERT_LE(lo.second, d.second);
            ASSERT_LE(d.second, hi.second);
        }
    }
}

TEST(Extreme, RequiresBinaryOutcomes) {
    const Cohort c = parse_cohort("id,group,outcome,cv_1\na,A,0.5,1\nb,B,1,1\n");
    EXPECT_THROW(extreme_matching(c, ExtremeMode::best_best), ValidationError);
    EXPECT_THROW(parse_extreme_mode("middle"), ValidationError);
}

TEST(Bootstrap, SamplesAreMaximalExactMatchings) {
    std::mt19937_64 gen(6);
    for (int i = 0; i < 100; ++i) {
        const Cohort c = balmatch::testing::random_cohort(gen);
        expect_valid_exact_matching(bootstrap_sample(c, gen(), 0), c);
    }
}

TEST(Bootstrap, SubsetsAreUniform) {
    // 2 of 3 B-patients per draw: each of the 3 subsets has probability 1/3
    const Cohort c = balmatch::testing::two_vs_three();
    std::map<std::set<std::size_t>, std::size_t> freq;
    const std::size_t n = 60000;
    for (std::size_t it = 0; it < n; ++it) {
        std::set<std::size_t> used;
        for (const auto& p : bootstrap_sample(c, 2024, it).pairs) used.insert(p.b);
        ++freq[used];
    }
    ASSERT_EQ(freq.size(), 3u);
    for (const auto& [subset, count] : freq)
        EXPECT_NEAR(static_cast<double>(count) / static_cast<double>(n), 1.0 / 3.0, 0.01);
}

TEST(Bootstrap, TwoVersusThreeMean) {
    const Cohort c = balmatch::testing::two_vs_three();
    const auto r = uniform_bootstrap_psm(c, 100000, 7);
    EXPECT_EQ(r.pairs_per_iteration, 2u);
    EXPECT_EQ(r.mean_deaths_a, 1.0);
    EXPECT_EQ(r.std_error_a, 0.0);
    EXPECT_LE(std::abs(r.mean_deaths_b - 2.0 / 3.0), 3 * r.std_error_b);
}

TEST(Bootstrap, ThreadCountDoesNotChangeReport) {
    std::mt19937_64 gen(8);
    const Cohort c = balmatch::testing::random_matched_cohort(gen);
    const auto one = uniform_bootstrap_psm(c, 997, 42, 1);
    const auto four = uniform_bootstrap_psm(c, 997, 42, 4);
    EXPECT_EQ(one.deaths_a, four.deaths_a);
    EXPECT_EQ(one.deaths_b, four.deaths_b);
    EXPECT_EQ(to_json(one).dump(), to_json(four).dump());
}

TEST(Bootstrap, PrefixOfLongerRunIsStable) {
    std::mt19937_64 gen(9);
    const Cohort c = balmatch::testing::random_matched_cohort(gen);
    const auto short_run = uniform_bootstrap_psm(c, 100, 3);
    const auto long_run = uniform_bootstrap_psm(c, 500, 3);
    EXPECT_TRUE(std::equal(short_run.deaths_a.begin(), short_run.deaths_a.end(), long_run.deaths_a.begin()));
}

TEST(Bootstrap, SingleIterationEqualsOneSample) {
    std::mt19937_64 gen(10);
    const Cohort c = balmatch::testing::random_matched_cohort(gen);
    const auto r = uniform_bootstrap_psm(c, 1, 11);
    const auto d = deaths(bootstrap_sample(c, 11, 0), c);
    EXPECT_EQ(r.mean_deaths_a, static_cast<double>(d.first));
    EXPECT_EQ(r.mean_deaths_b, static_cast<double>(d.second));
    EXPECT_EQ(r.std_error_a, 0.0);
    EXPECT_THROW(uniform_bootstrap_psm(c, 0, 11), ValidationError);
}

TEST(Bootstrap, FullyUsedSidesDrawNothing) {
    // equal side sizes: the draw is the same for every seed
    const Cohort c = make_cohort({{"a1", Group::A, {1}, 1}, {"a2", Group::A, {1}, 0},
                                  {"b1", Group::B, {1}, 0}, {"b2", Group::B, {1}, 1}});
    const auto r = uniform_bootstrap_psm(c, 50, 1);
    EXPECT_EQ(r.min_deaths_a, r.max_deaths_a);
    EXPECT_EQ(r.min_deaths_b, r.max_deaths_b);
}

TEST(Output, CsvAndJson) {
    const Cohort c = balmatch::testing::two_vs_three();
    const Matching m = greedy_exact_psm(c);
    EXPECT_EQ(to_csv(m, c), "a_id,b_id\na1,b1\na2,b2\n");
    const auto j = to_json(m, c);
    EXPECT_EQ(j["counts"]["pairs"], 2);
    EXPECT_TRUE(j["seed"].is_null());
    EXPECT_EQ(sidecar_json(m)["strategy"], "greedy");
}

TEST(Greedy, WorkedExamples) {
    const Cohort one = make_cohort({{"a1", Group::A, {1}, 0}, {"b1", Group::B, {1}, 0}});
    EXPECT_EQ(greedy_exact_psm(one).pairs, (std::vector<MatchedPair>{{0, 1}}));
    const Cohort disjoint = make_cohort({{"a1", Group::A, {1}, 0}, {"b1", Group::B, {2}, 0}});
    EXPECT_TRUE(greedy_exact_psm(disjoint).pairs.empty());
}

TEST(Replacement, WorkedExamples) {
    const Cohort forced = make_cohort({{"a1", Group::A, {1}, 0}, {"a2", Group::A, {1}, 0}, {"b1", Group::B, {1}, 0}});
    EXPECT_EQ(exact_psm_with_replacement(forced).a_to_b.pairs, (std::vector<MatchedPair>{{0, 2}, {1, 2}}));
    EXPECT_EQ(exact_psm_with_replacement(balmatch::testing::two_vs_three()).total(), 5u);
    const Cohort none = make_cohort({{"a1", Group::A, {1}, 0}, {"b1", Group::B, {2}, 0}});
    EXPECT_EQ(exact_psm_with_replacement(none).total(), 0u);
}

TEST(Extreme, TwoVersusThree) {
    const Cohort c = balmatch::testing::two_vs_three();
    EXPECT_EQ(deaths(extreme_matching(c, ExtremeMode::best_best), c), (std::pair<std::size_t, std::size_t>{1, 0}));
    EXPECT_EQ(deaths(extreme_matching(c, ExtremeMode::worst_worst), c), (std::pair<std::size_t, std::size_t>{1, 1}));
    const Cohort single = make_cohort({{"a1", Group::A, {1}, 1}, {"b1", Group::B, {1}, 0}});
    for (auto mode : {ExtremeMode::best_best, ExtremeMode::worst_worst, ExtremeMode::best_a_worst_b,
                      ExtremeMode::worst_a_best_b})
        EXPECT_EQ(extreme_matching(single, mode).pairs, (std::vector<MatchedPair>{{0, 1}}));
}

TEST(Bootstrap, SameSeedSameBytes) {
    const Cohort c = balmatch::testing::two_vs_three();
    EXPECT_EQ(to_json(uniform_bootstrap_psm(c, 1000, 4)).dump(), to_json(uniform_bootstrap_psm(c, 1000, 4)).dump());
    EXPECT_NE(uniform_bootstrap_psm(c, 1000, 4).deaths_b, uniform_bootstrap_psm(c, 1000, 5).deaths_b);
}
