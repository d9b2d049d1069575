#pragma once

// Deterministic balancing-score exact matching.
//
// Each group is partitioned into maximal clusters of patients with identical
// covariate vectors. A-clusters and B-clusters with the same vector are
// paired (there is at most one partner), and each matched cluster is weighted
// so that both sides contribute S = min(|C_A|, |C_B|) patients' worth of
// outcome:
//
//   w(C) = S / |C|,   R_A = Σ_i w(C_A,i) Σ_h obs(x_i,h),   R_B likewise.
//
// Everything is exact: covariates are fixed-point integers and the weighted
// totals are rationals, so the report is a function of the patient multiset
// alone. Cluster lists are ordered by covariate vector and member ids are
// sorted, which makes the serialized report independent of row order.

#include "balmatch/cohort.hpp"
#include "balmatch/rational.hpp"

#include <json.hpp>

#include <algorithm>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace balmatch {

struct Cluster {
    Group group = Group::A;
    CovariateVector cv;                   // assigned covariate vector
    std::vector<std::string> member_ids;  // sorted
    Rational outcome_sum = 0;

    std::size_t size() const { return member_ids.size(); }
    friend bool operator==(const Cluster&, const Cluster&) = default;
};

namespace detail {

inline void canonicalize(std::vector<Cluster>& clusters) {
    for (Cluster& cl : clusters) std::sort(cl.member_ids.begin(), cl.member_ids.end());
    std::sort(clusters.begin(), clusters.end(), [](const Cluster& x, const Cluster& y) { return x.cv < y.cv; });
}

}  // namespace detail

/// Partition of one group into maximal equal-covariate clusters (hash index).
inline std::vector<Cluster> cluster(const Cohort& c, Group g) {
    std::unordered_map<CovariateVector, std::size_t, CovariateHash> index;
    std::vector<Cluster> clusters;
    std::vector<std::int64_t> sums;
    for (const Patient& p : c.patients()) {
        if (p.group != g) continue;
        auto [it, inserted] = index.try_emplace(p.covariates, clusters.size());
        if (inserted) {
            clusters.push_back(Cluster{g, p.covariates, {}, 0});
            sums.push_back(0);
        }
        clusters[it->second].member_ids.push_back(p.id);
        sums[it->second] += p.outcome;
    }
    for (std::size_t k = 0; k < clusters.size(); ++k) clusters[k].outcome_sum = Rational(sums[k], c.scale());
    detail::canonicalize(clusters);
    return clusters;
}

/// The same partition built by the textbook double loop: every still
/// unclustered patient opens a cluster and absorbs all later unclustered
/// patients at Manhattan distance 0. Quadratic; kept as the reference the
/// indexed version is checked against.
inline std::vector<Cluster> cluster_quadratic(const Cohort& c, Group g) {
    const std::vector<std::size_t> members = c.indices(g);
    std::vector<bool> clustered(members.size(), false);
    std::vector<Cluster> clusters;
    std::vector<std::int64_t> sums;
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (clustered[i]) continue;
        const Patient& x = c[members[i]];
        clusters.push_back(Cluster{g, x.covariates, {x.id}, 0});
        sums.push_back(x.outcome);
        clustered[i] = true;
        for (std::size_t j = i + 1; j < members.size(); ++j) {
            if (clustered[j]) continue;
            const Patient& y = c[members[j]];
            if (manhattan(x, y) == 0) {
                clusters.back().member_ids.push_back(y.id);
                sums.back() += y.outcome;
                clustered[j] = true;
            }
        }
    }
    for (std::size_t k = 0; k < clusters.size(); ++k) clusters[k].outcome_sum = Rational(sums[k], c.scale());
    detail::canonicalize(clusters);
    return clusters;
}

/// Share of each matched cluster that enters the result. Any functor with
/// this call signature can replace it.
struct MinWeighting {
    std::pair<Rational, Rational> operator()(std::size_t size_a, std::size_t size_b) const {
        const std::size_t s = std::min(size_a, size_b);
        return {Rational(s, size_a), Rational(s, size_b)};
    }
};

struct ClusterPair {
    Cluster a;
    Cluster b;
    std::size_t pairs = 0;  // S = min(|C_A|, |C_B|)
    Rational w_a = 0;
    Rational w_b = 0;

    friend bool operator==(const ClusterPair&, const ClusterPair&) = default;
};

struct ClusterMatching {
    std::vector<ClusterPair> matched;  // ordered by covariate vector
    std::vector<Cluster> unmatched_a;
    std::vector<Cluster> unmatched_b;
    std::size_t k = 0;  // clusters in A
    std::size_t l = 0;  // clusters in B

    std::size_t pairs_total() const {
        std::size_t s = 0;
        for (const auto& m : matched) s += m.pairs;
        return s;
    }
    friend bool operator==(const ClusterMatching&, const ClusterMatching&) = default;
};

namespace detail {

template <typename Weighting>
ClusterPair make_pair(const Cluster& a, const Cluster& b, const Weighting& weighting) {
    auto [wa, wb] = weighting(a.size(), b.size());
    return ClusterPair{a, b, std::min(a.size(), b.size()), std::move(wa), std::move(wb)};
}

}  // namespace detail

/// Pairs clusters with identical assigned vectors. Both inputs must be
/// canonical (sorted by vector), as produced by cluster(); the pass is a
/// linear merge.
template <typename Weighting = MinWeighting>
ClusterMatching match_clusters(const std::vector<Cluster>& a, const std::vector<Cluster>& b,
                               const Weighting& weighting = {}) {
    ClusterMatching cm;
    cm.k = a.size();
    cm.l = b.size();
    std::size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
        if (j == b.size() || (i < a.size() && a[i].cv < b[j].cv)) {
            cm.unmatched_a.push_back(a[i++]);
        } else if (i == a.size() || b[j].cv < a[i].cv) {
            cm.unmatched_b.push_back(b[j++]);
        } else {
            cm.matched.push_back(detail::make_pair(a[i++], b[j++], weighting));
        }
    }
    return cm;
}

/// Reference matcher: for each A-cluster, scan all B-clusters for Manhattan
/// distance 0. O(k·l·s).
template <typename Weighting = MinWeighting>
ClusterMatching match_clusters_quadratic(const std::vector<Cluster>& a, const std::vector<Cluster>& b,
                                         const Weighting& weighting = {}) {
    ClusterMatching cm;
    cm.k = a.size();
    cm.l = b.size();
    std::vector<bool> used(b.size(), false);
    for (const Cluster& ca : a) {
        bool found = false;
        for (std::size_t j = 0; j < b.size() && !found; ++j) {
            std::int64_t d = 0;
            for (std::size_t t = 0; t < ca.cv.size(); ++t)
                d += ca.cv[t] > b[j].cv[t] ? ca.cv[t] - b[j].cv[t] : b[j].cv[t] - ca.cv[t];
            if (d == 0) {
                cm.matched.push_back(detail::make_pair(ca, b[j], weighting));
                used[j] = found = true;
            }
        }
        if (!found) cm.unmatched_a.push_back(ca);
    }
    for (std::size_t j = 0; j < b.size(); ++j)
        if (!used[j]) cm.unmatched_b.push_back(b[j]);
    std::sort(cm.matched.begin(), cm.matched.end(),
              [](const ClusterPair& x, const ClusterPair& y) { return x.a.cv < y.a.cv; });
    return cm;
}

struct WeightedResult {
    Rational r_a = 0;
    Rational r_b = 0;
    std::size_t matched_pairs_total = 0;
    Rational rate_a = 0;  // r_a / Σ S, 0 when nothing matched
    Rational rate_b = 0;

    friend bool operator==(const WeightedResult&, const WeightedResult&) = default;
};

inline WeightedResult min_weight(const ClusterMatching& cm) {
    WeightedResult r;
    for (const ClusterPair& m : cm.matched) {
        r.r_a += m.w_a * m.a.outcome_sum;
        r.r_b += m.w_b * m.b.outcome_sum;
        r.matched_pairs_total += m.pairs;
    }
    if (r.matched_pairs_total > 0) {
        r.rate_a = r.r_a / Rational(r.matched_pairs_total);
        r.rate_b = r.r_b / Rational(r.matched_pairs_total);
    }
    return r;
}

/// Two views of how much of each group enters the result: the share of
/// patients sitting in matched clusters, and Σ S over the group size.
struct UsageReport {
    Rational member_fraction_a = 0;
    Rational member_fraction_b = 0;
    Rational pairs_fraction_a = 0;
    Rational pairs_fraction_b = 0;

    friend bool operator==(const UsageReport&, const UsageReport&) = default;
};

inline UsageReport usage_report(const ClusterMatching& cm, const Cohort& c) {
    std::size_t in_a = 0, in_b = 0, pairs = 0;
    for (const ClusterPair& m : cm.matched) {
        in_a += m.a.size();
        in_b += m.b.size();
        pairs += m.pairs;
    }
    UsageReport u;
    if (c.count_a() > 0) {
        u.member_fraction_a = Rational(in_a, c.count_a());
        u.pairs_fraction_a = Rational(pairs, c.count_a());
    }
    if (c.count_b() > 0) {
        u.member_fraction_b = Rational(in_b, c.count_b());
        u.pairs_fraction_b = Rational(pairs, c.count_b());
    }
    return u;
}

struct DbsemResult {
    std::vector<Cluster> clusters_a;
    std::vector<Cluster> clusters_b;
    ClusterMatching matching;
    WeightedResult result;
    UsageReport usage;
    int precision = kDefaultPrecision;

    friend bool operator==(const DbsemResult&, const DbsemResult&) = default;
};

enum class ClusteringPath { indexed, quadratic };

template <typename Weighting = MinWeighting>
DbsemResult dbsem(const Cohort& c, ClusteringPath path = ClusteringPath::indexed, const Weighting& weighting = {}) {
    DbsemResult out;
    out.precision = c.precision();
    if (path == ClusteringPath::indexed) {
        out.clusters_a = cluster(c, Group::A);
        out.clusters_b = cluster(c, Group::B);
        out.matching = match_clusters(out.clusters_a, out.clusters_b, weighting);
    } else {
        out.clusters_a = cluster_quadratic(c, Group::A);
        out.clusters_b = cluster_quadratic(c, Group::B);
        out.matching = match_clusters_quadratic(out.clusters_a, out.clusters_b, weighting);
    }
    out.result = min_weight(out.matching);
    out.usage = usage_report(out.matching, c);
    return out;
}

inline nlohmann::json rational_json(const Rational& r) {
    return {{"exact", to_fraction_string(r)}, {"decimal", to_decimal_string(r)}};
}

inline nlohmann::json cv_json(const CovariateVector& cv, int precision) {
    nlohmann::json out = nlohmann::json::array();
    for (std::int64_t v : cv) out.push_back(format_fixed(v, precision));
    return out;
}

inline nlohmann::json to_json(const Cluster& cl, int precision) {
    return {{"group", std::string(1, group_label(cl.group))},
            {"cv", cv_json(cl.cv, precision)},
            {"size", cl.size()},
            {"outcome_sum", rational_json(cl.outcome_sum)},
            {"members", cl.member_ids}};
}

inline nlohmann::json to_json(const DbsemResult& r) {
    using nlohmann::json;
    json clusters = json::array();
    for (const auto& cl : r.clusters_a) clusters.push_back(to_json(cl, r.precision));
    for (const auto& cl : r.clusters_b) clusters.push_back(to_json(cl, r.precision));
    json matches = json::array();
    for (const ClusterPair& m : r.matching.matched) {
        matches.push_back({{"cv", cv_json(m.a.cv, r.precision)},
                           {"size_a", m.a.size()},
                           {"size_b", m.b.size()},
                           {"S", m.pairs},
                           {"w_a", rational_json(m.w_a)},
                           {"w_b", rational_json(m.w_b)},
                           {"deaths_a", rational_json(m.a.outcome_sum)},
                           {"deaths_b", rational_json(m.b.outcome_sum)}});
    }
    return {{"clusters", clusters},
            {"k", r.matching.k},
            {"l", r.matching.l},
            {"unmatched_a", r.matching.unmatched_a.size()},
            {"unmatched_b", r.matching.unmatched_b.size()},
            {"matches", matches},
            {"matched_pairs_total", r.result.matched_pairs_total},
            {"r_a", rational_json(r.result.r_a)},
            {"r_b", rational_json(r.result.r_b)},
            {"rates", {{"a", rational_json(r.result.rate_a)}, {"b", rational_json(r.result.rate_b)}}},
            {"usage",
             {{"member_fraction_a", rational_json(r.usage.member_fraction_a)},
              {"member_fraction_b", rational_json(r.usage.member_fraction_b)},
              {"pairs_fraction_a", rational_json(r.usage.pairs_fraction_a)},
              {"pairs_fraction_b", rational_json(r.usage.pairs_fraction_b)}}}};
}

}  // namespace balmatch
