#pragma once

// Logistic-regression propensity scores.
//
// ps(p) = exp(η) / (1 + exp(η)),  η = β0 + Σ_j βj·cv_j(p)
//
// The treatment indicator is group B = 1. Fitting is Newton-Raphson in its
// IRLS form with step-halving on the log-likelihood.

#include "balmatch/cohort.hpp"
#include "balmatch/error.hpp"
#include "balmatch/rng.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

namespace balmatch {

struct FitOptions {
    double tolerance = 1e-8;  // on the Euclidean norm of the log-likelihood gradient
    int max_iterations = 100;
    double separation_bound = 30.0;  // |β| beyond this without convergence => separation
};

struct PropensityModel {
    std::vector<double> coefficients;         // β0 then one slope per kept column
    std::vector<std::size_t> kept_columns;    // 0-based covariate indices, header order
    std::vector<std::size_t> dropped_columns; // constant or collinear covariates
    std::size_t dimension = 0;                // s of the cohort it was fit on
    bool converged = false;
    bool separation = false;
    int iterations = 0;
    double gradient_norm = 0.0;
    double tolerance = 1e-8;

    std::span<const double> slopes() const { return std::span<const double>(coefficients).subspan(1); }

    /// Model with fixed coefficients over all s columns; nothing fitted.
    static PropensityModel from_coefficients(std::vector<double> beta) {
        if (beta.empty()) throw ValidationError("coefficient vector needs at least an intercept");
        PropensityModel m;
        m.dimension = beta.size() - 1;
        for (std::size_t j = 0; j < m.dimension; ++j) m.kept_columns.push_back(j);
        m.coefficients = std::move(beta);
        m.converged = true;
        return m;
    }
};

inline double logistic(double eta) {
    if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

// log(1 + e^η) without overflow
inline double log1p_exp(double eta) { return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

inline double linear_predictor(const PropensityModel& m, const Patient& p, int precision) {
    if (p.covariates.size() != m.dimension)
        throw ValidationError("propensity score: model dimension " + std::to_string(m.dimension) +
                              " does not match patient dimension " + std::to_string(p.covariates.size()));
    const double scale = static_cast<double>(pow10_i64(precision));
    double eta = m.coefficients[0];
    for (std::size_t k = 0; k < m.kept_columns.size(); ++k)
        eta += m.coefficients[k + 1] * (static_cast<double>(p.covariates[m.kept_columns[k]]) / scale);
    return eta;
}

inline double propensity_score(const PropensityModel& m, const Patient& p, int precision) {
    return logistic(linear_predictor(m, p, precision));
}

/// |ps(x) − ps(z)|
inline double psd(const PropensityModel& m, const Patient& x, const Patient& z, int precision) {
    return std::abs(propensity_score(m, x, precision) - propensity_score(m, z, precision));
}

inline std::vector<double> propensity_scores(const PropensityModel& m, const Cohort& c) {
    std::vector<double> out;
    out.reserve(c.size());
    for (const Patient& p : c.patients()) out.push_back(propensity_score(m, p, c.precision()));
    return out;
}

/// Binomial log-likelihood of a cohort as a function of β, restricted to a
/// fixed set of covariate columns. Exposed so the fit can be audited.
class LogisticObjective {
public:
    LogisticObjective(const Cohort& c, std::vector<std::size_t> columns)
        : columns_(std::move(columns)), x_(c.size(), columns_.size() + 1), y_(c.size()) {
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            x_(r, 0) = 1.0;
            for (std::size_t k = 0; k < columns_.size(); ++k)
                x_(r, static_cast<Eigen::Index>(k + 1)) = c.covariate_value(i, columns_[k]);
            y_(r) = c[i].group == Group::B ? 1.0 : 0.0;
        }
    }

    Eigen::Index parameters() const { return x_.cols(); }
    const Eigen::MatrixXd& design() const { return x_; }

    double value(const Eigen::VectorXd& beta) const {
        const Eigen::VectorXd eta = x_ * beta;
        double ll = 0.0;
        for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y_(i) * eta(i) - log1p_exp(eta(i));
        return ll;
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& beta) const {
        const Eigen::VectorXd eta = x_ * beta;
        Eigen::VectorXd resid(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) resid(i) = y_(i) - logistic(eta(i));
        return x_.transpose() * resid;
    }

    /// Xᵀ W X with W = diag(p(1−p)); the negative Hessian.
    Eigen::MatrixXd information(const Eigen::VectorXd& beta) const {
        const Eigen::VectorXd eta = x_ * beta;
        Eigen::VectorXd w(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            const double p = logistic(eta(i));
            w(i) = p * (1.0 - p);
        }
        return x_.transpose() * w.asDiagonal() * x_;
    }

private:
    std::vector<std::size_t> columns_;
    Eigen::MatrixXd x_;
    Eigen::VectorXd y_;
};

namespace detail {

// Splits covariates into kept and dropped: constant columns first, then
// columns lying in the span of the intercept and earlier kept columns
// (modified Gram-Schmidt in header order).
inline void select_columns(const Cohort& c, std::vector<std::size_t>& kept, std::vector<std::size_t>& dropped) {
    const std::size_t n = c.size();
    std::vector<Eigen::VectorXd> basis;
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
    basis.push_back(ones / ones.norm());
    for (std::size_t j = 0; j < c.dimension(); ++j) {
        bool constant = true;
        for (std::size_t i = 1; i < n && constant; ++i) constant = c[i].covariates[j] == c[0].covariates[j];
        if (constant) {
            dropped.push_back(j);
            continue;
        }
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = c.covariate_value(i, j);
        const double norm0 = v.norm();
        for (const auto& q : basis) v -= q.dot(v) * q;
        const double norm = v.norm();
        if (norm <= 1e-9 * norm0) {
            dropped.push_back(j);
            continue;
        }
        basis.push_back(v / norm);
        kept.push_back(j);
    }
}

}  // namespace detail

/// Maximum-likelihood logistic fit of group membership (B = 1) on the
/// covariates. A pure function of the cohort: identical input gives
/// bit-identical coefficients.
inline PropensityModel fit_logistic(const Cohort& c, const FitOptions& opt = {}) {
    if (c.count_a() == 0 || c.count_b() == 0) throw ValidationError("fit_logistic: both groups must be non-empty");
    PropensityModel m;
    m.dimension = c.dimension();
    m.tolerance = opt.tolerance;
    detail::select_columns(c, m.kept_columns, m.dropped_columns);

    const LogisticObjective obj(c, m.kept_columns);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(obj.parameters());
    // Start at the intercept-only optimum.
    beta(0) = std::log(static_cast<double>(c.count_b()) / static_cast<double>(c.count_a()));
    double ll = obj.value(beta);
    Eigen::VectorXd grad = obj.gradient(beta);

    int it = 0;
    while (true) {
        if (grad.norm() < opt.tolerance) {
            m.converged = true;
            break;
        }
        if (beta.cwiseAbs().maxCoeff() > opt.separation_bound) {
            m.separation = true;
            break;
        }
        if (it >= opt.max_iterations) break;
        ++it;

        const Eigen::LDLT<Eigen::MatrixXd> ldlt(obj.information(beta));
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
        Eigen::VectorXd step = ldlt.solve(grad);
        if (!step.allFinite()) break;

        Eigen::VectorXd next = beta + step;
        double next_ll = obj.value(next);
        for (int halving = 0; halving < 40 && !(next_ll >= ll - 1e-12 * std::abs(ll)); ++halving) {
            step *= 0.5;
            next = beta + step;
            next_ll = obj.value(next);
        }
        beta = next;
        ll = next_ll;
        grad = obj.gradient(beta);
    }

    m.iterations = it;
    m.gradient_norm = grad.norm();
    m.coefficients.assign(beta.data(), beta.data() + beta.size());
    return m;
}

struct Collision {
    std::vector<std::size_t> left;   // I, 0-based covariate indices
    std::vector<std::size_t> right;  // J, disjoint from I
    double difference = 0.0;         // Σ_I β − Σ_J β

    friend bool operator==(const Collision&, const Collision&) = default;
};

struct CollisionReport {
    std::vector<Collision> collisions;
    double tolerance = 1e-9;
    bool complete = true;   // exhaustive search over all index-set pairs
    bool truncated = false; // more collisions exist than were recorded
    std::size_t total = 0;  // collisions found (recorded or not)

    bool empty() const { return total == 0; }
};

inline constexpr std::size_t kExactCollisionLimit = 30;

namespace detail {

// Signed subset sums Σ ε_i β_i over ε ∈ {0, +1, −1}^n. The code stores ε in
// base 3 (digit 1 = +, 2 = −), least significant digit = first index.
inline std::vector<std::pair<double, std::uint32_t>> signed_sums(std::span<const double> beta) {
    std::vector<std::pair<double, std::uint32_t>> out{{0.0, 0}};
    std::uint32_t place = 1;
    for (double b : beta) {
        const std::size_t n = out.size();
        out.resize(3 * n);
        for (std::size_t i = 0; i < n; ++i) {
            out[n + i] = {out[i].first + b, out[i].second + place};
            out[2 * n + i] = {out[i].first - b, out[i].second + 2 * place};
        }
        place *= 3;
    }
    return out;
}

// Leading (lowest index) nonzero digit of a base-3 code; 0 when the code is 0.
inline int leading_digit(std::uint32_t code) {
    while (code != 0) {
        if (code % 3 != 0) return static_cast<int>(code % 3);
        code /= 3;
    }
    return 0;
}

inline void decode(std::uint32_t code, std::span<const std::size_t> index, Collision& out) {
    for (std::size_t k = 0; k < index.size(); ++k, code /= 3) {
        if (code % 3 == 1) out.left.push_back(index[k]);
        else if (code % 3 == 2) out.right.push_back(index[k]);
    }
}

// Meet-in-the-middle over one index subset; calls sink(low_code, high_code, diff)
// for each canonical signed combination with |Σ ε β| ≤ tol.
template <typename Sink>
void collisions_mitm(std::span<const double> beta, double tol, Sink&& sink) {
    const std::size_t half = beta.size() / 2;
    const auto low = signed_sums(beta.first(half));
    auto high = signed_sums(beta.subspan(half));
    std::sort(high.begin(), high.end());
    for (const auto& [lsum, lcode] : low) {
        const int lead = leading_digit(lcode);
        if (lead == 2) continue;  // canonical form: first nonzero sign is +
        auto it = std::lower_bound(high.begin(), high.end(), std::pair{-lsum - tol, std::uint32_t{0}});
        for (; it != high.end() && it->first <= -lsum + tol; ++it) {
            if (lead == 0 && leading_digit(it->second) != 1) continue;
            sink(lcode, it->second, lsum + it->first);
        }
    }
}

}  // namespace detail

/// Finds index sets I ≠ J with |Σ_I β − Σ_J β| ≤ tolerance among the given
/// slopes (indices refer to `columns`). Shared indices cancel, so pairs are
/// reported disjoint with the lowest involved index in I. Exhaustive for up
/// to kExactCollisionLimit slopes; beyond that, random 24-index subsets are
/// searched and the report is marked incomplete.
///
/// Each pair is a way for two binary covariate vectors that differ exactly
/// on I ∪ J to share a linear predictor, hence a propensity score.
inline CollisionReport detect_coefficient_collisions(std::span<const double> slopes,
                                                     std::span<const std::size_t> columns, double tolerance = 1e-9,
                                                     std::size_t max_reported = 10000) {
    if (slopes.size() != columns.size()) throw ValidationError("collision search: slopes/columns size mismatch");
    CollisionReport report;
    report.tolerance = tolerance;

    auto run = [&](std::span<const double> beta, std::span<const std::size_t> idx,
                   std::set<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>* seen) {
        const std::size_t half = beta.size() / 2;
        detail::collisions_mitm(beta, tolerance, [&](std::uint32_t lcode, std::uint32_t hcode, double diff) {
            Collision col;
            col.difference = diff;
            detail::decode(lcode, idx.first(half), col);
            detail::decode(hcode, idx.subspan(half), col);
            std::sort(col.left.begin(), col.left.end());
            std::sort(col.right.begin(), col.right.end());
            if (!col.left.empty() && !col.right.empty() && col.right.front() < col.left.front()) {
                std::swap(col.left, col.right);
                col.difference = -col.difference;
            }
            if (seen && !seen->emplace(col.left, col.right).second) return;
            ++report.total;
            if (report.collisions.size() < max_reported) report.collisions.push_back(std::move(col));
            else report.truncated = true;
        });
    };

    if (slopes.size() <= kExactCollisionLimit) {
        run(slopes, columns, nullptr);
        return report;
    }

    report.complete = false;
    constexpr std::size_t kSubset = 24;
    constexpr int kRounds = 64;
    std::set<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> seen;
    std::vector<std::size_t> order(slopes.size());
    for (int round = 0; round < kRounds; ++round) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        CounterRng rng(0x636f6c6c6973696fULL, static_cast<std::uint64_t>(round));
        select_uniform_prefix(order, kSubset, rng);
        std::vector<std::size_t> pick(order.begin(), order.begin() + kSubset);
        std::sort(pick.begin(), pick.end());
        std::vector<double> beta;
        std::vector<std::size_t> idx;
        for (std::size_t k : pick) {
            beta.push_back(slopes[k]);
            idx.push_back(columns[k]);
        }
        run(beta, idx, &seen);
    }
    return report;
}

inline CollisionReport detect_coefficient_collisions(const PropensityModel& m, double tolerance = 1e-9,
                                                     std::size_t max_reported = 10000) {
    return detect_coefficient_collisions(m.slopes(), m.kept_columns, tolerance, max_reported);
}

inline nlohmann::json to_json(const PropensityModel& m) {
    return {{"coefficients", m.coefficients},
            {"kept_columns", m.kept_columns},
            {"dropped_columns", m.dropped_columns},
            {"dimension", m.dimension},
            {"converged", m.converged},
            {"separation", m.separation},
            {"iterations", m.iterations},
            {"gradient_norm", m.gradient_norm},
            {"tolerance", m.tolerance}};
}

inline PropensityModel model_from_json(const nlohmann::json& j) {
    try {
        PropensityModel m;
        m.coefficients = j.at("coefficients").get<std::vector<double>>();
        if (m.coefficients.empty()) throw ValidationError("model: empty coefficient vector");
        m.dropped_columns = j.value("dropped_columns", std::vector<std::size_t>{});
        if (j.contains("kept_columns")) {
            m.kept_columns = j.at("kept_columns").get<std::vector<std::size_t>>();
            m.dimension = j.value("dimension", m.kept_columns.size() + m.dropped_columns.size());
        } else {
            m.dimension = m.coefficients.size() - 1 + m.dropped_columns.size();
            for (std::size_t k = 0; k < m.dimension; ++k)
                if (std::find(m.dropped_columns.begin(), m.dropped_columns.end(), k) == m.dropped_columns.end())
                    m.kept_columns.push_back(k);
        }
        if (m.kept_columns.size() + 1 != m.coefficients.size())
            throw ValidationError("model: coefficients length must be kept columns + 1");
        for (std::size_t k : m.kept_columns)
            if (k >= m.dimension) throw ValidationError("model: column index out of range");
        m.converged = j.value("converged", true);
        m.separation = j.value("separation", false);
        m.iterations = j.value("iterations", 0);
        m.gradient_norm = j.value("gradient_norm", 0.0);
        m.tolerance = j.value("tolerance", 1e-8);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model: ") + e.what());
    }
}

inline nlohmann::json to_json(const CollisionReport& r) {
    nlohmann::json list = nlohmann::json::array();
    for (const Collision& c : r.collisions) {
        // 1-based, matching the cv_k column names
        std::vector<std::size_t> left, right;
        for (auto k : c.left) left.push_back(k + 1);
        for (auto k : c.right) right.push_back(k + 1);
        list.push_back({{"I", left}, {"J", right}, {"difference", c.difference}});
    }
    return {{"tolerance", r.tolerance},
            {"complete", r.complete},
            {"truncated", r.truncated},
            {"total", r.total},
            {"collisions", list}};
}

}  // namespace balmatch
