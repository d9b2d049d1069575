#pragma once

// Synthetic cohorts with a prescribed exact cluster structure.

#include "balmatch/cohort.hpp"
#include "balmatch/error.hpp"
#include "balmatch/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace balmatch {

struct SynthCluster {
    CovariateVector cv;  // fixed-point, at the spec's precision
    std::size_t size_a = 0;
    std::size_t size_b = 0;
    std::size_t deaths_a = 0;
    std::size_t deaths_b = 0;
};

struct SynthSpec {
    std::vector<SynthCluster> clusters;
    std::size_t noise = 0;       // extra patients with covariate vectors shared by nobody
    std::size_t dimension = 0;   // required only when there are no clusters
    std::uint64_t seed = 0;
    int precision = kDefaultPrecision;
    double noise_death_rate = 0.1;
};

/// Builds the cohort: cluster members first, then noise, then a seeded
/// shuffle of the rows. Same spec, same rows.
inline Cohort synthesize(const SynthSpec& spec) {
    if (spec.clusters.empty() && spec.noise == 0) throw ValidationError("synth: empty spec (no clusters, no noise)");
    const std::size_t s = spec.clusters.empty() ? spec.dimension : spec.clusters.front().cv.size();
    if (s == 0) throw ValidationError("synth: covariate dimension must be at least 1");
    const std::int64_t one = pow10_i64(spec.precision);

    std::set<CovariateVector> used;
    std::vector<Patient> rows;
    for (std::size_t k = 0; k < spec.clusters.size(); ++k) {
        const SynthCluster& cl = spec.clusters[k];
        const std::string where = "synth: cluster " + std::to_string(k + 1) + ": ";
        if (cl.cv.size() != s) throw ValidationError(where + "covariate dimension differs from the first cluster");
        for (auto v : cl.cv)
            if (v < 0) throw ValidationError(where + "negative covariate");
        if (cl.size_a + cl.size_b == 0) throw ValidationError(where + "empty cluster");
        if (cl.deaths_a > cl.size_a || cl.deaths_b > cl.size_b)
            throw ValidationError(where + "deaths exceed cluster size");
        if (!used.insert(cl.cv).second) throw ValidationError(where + "covariate vector repeats an earlier cluster");
        auto add = [&](Group g, std::size_t n, std::size_t deaths) {
            for (std::size_t i = 0; i < n; ++i) {
                std::string id = "c" + std::to_string(k + 1) + (g == Group::A ? "a" : "b") + std::to_string(i + 1);
                rows.push_back(Patient{std::move(id), g, cl.cv, i < deaths ? one : 0});
            }
        };
        add(Group::A, cl.size_a, cl.deaths_a);
        add(Group::B, cl.size_b, cl.deaths_b);
    }

    CounterRng rng(spec.seed, 1);
    for (std::size_t i = 0; i < spec.noise; ++i) {
        CovariateVector cv(s);
        do {
            for (auto& v : cv) v = static_cast<std::int64_t>(rng.below(1000)) * one + 1000 * one;
        } while (!used.insert(cv).second);
        const Group g = rng.below(2) == 0 ? Group::A : Group::B;
        const bool dead = rng.uniform() < spec.noise_death_rate;
        rows.push_back(Patient{"n" + std::to_string(i + 1), g, std::move(cv), dead ? one : 0});
    }

    CounterRng shuffle(spec.seed, 0);
    for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[shuffle.below(i)]);
    return Cohort(std::move(rows), s, spec.precision);
}

/// {"seed": 7, "precision": 6, "noise": 0, "dimension": 2,
///  "clusters": [{"cv": [1, 0], "size_a": 2, "size_b": 3, "deaths_a": 1, "deaths_b": 1}]}
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    try {
        SynthSpec spec;
        spec.precision = j.value("precision", kDefaultPrecision);
        if (spec.precision < 0 || spec.precision > kMaxPrecision) throw ValidationError("synth: precision out of range");
        spec.seed = j.value("seed", std::uint64_t{0});
        spec.noise = j.value("noise", std::size_t{0});
        spec.dimension = j.value("dimension", std::size_t{0});
        spec.noise_death_rate = j.value("noise_death_rate", 0.1);
        for (const auto& c : j.value("clusters", nlohmann::json::array())) {
            SynthCluster cl;
            for (const auto& v : c.at("cv")) {
                const std::string text = v.is_string() ? v.get<std::string>() : v.dump();
                const auto raw = parse_fixed(text, spec.precision);
                if (!raw) throw ValidationError("synth: bad covariate '" + text + "'");
                cl.cv.push_back(*raw);
            }
            cl.size_a = c.value("size_a", std::size_t{0});
            cl.size_b = c.value("size_b", std::size_t{0});
            cl.deaths_a = c.value("deaths_a", std::size_t{0});
            cl.deaths_b = c.value("deaths_b", std::size_t{0});
            spec.clusters.push_back(std::move(cl));
        }
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("synth spec: ") + e.what());
    }
}

}  // namespace balmatch
