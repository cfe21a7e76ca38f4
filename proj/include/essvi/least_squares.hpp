#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string_view>
#include <vector>

#include "essvi/error.hpp"

namespace essvi {

struct LeastSquaresOptions {
    /// Budget on residual evaluations at trial points. Finite-difference Jacobian
    /// evaluations are counted separately and do not consume it.
    std::size_t max_evals = 1000;
    double ftol = 1e-8;
    double xtol = 1e-8;
    double gtol = 1e-8;
    /// Relative forward-difference step, h_j = diff_step * max(|x_j|, 1).
    double diff_step = 1e-7;
    /// Called with every point at which residuals are evaluated (including Jacobian probes).
    std::function<void(const Eigen::VectorXd&)> observer;
};

enum class StopReason { FTol, XTol, GTol, MaxEvals, ZeroResidual };

inline std::string_view to_string(StopReason r) {
    switch (r) {
        case StopReason::FTol: return "ftol";
        case StopReason::XTol: return "xtol";
        case StopReason::GTol: return "gtol";
        case StopReason::MaxEvals: return "max_evals";
        case StopReason::ZeroResidual: return "zero_residual";
    }
    return "unknown";
}

struct LeastSquaresResult {
    Eigen::VectorXd x;
    Eigen::VectorXd residuals;
    double cost = 0.0;          ///< 0.5 * |r|^2
    double initial_cost = 0.0;
    std::size_t evals = 0;
    std::size_t jacobian_evals = 0;
    std::size_t iterations = 0;
    StopReason reason = StopReason::MaxEvals;

    bool converged() const { return reason != StopReason::MaxEvals; }
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Box-constrained Levenberg-Marquardt.
///
/// Trial steps are projected onto [lower, upper]; coordinates sitting on a bound whose
/// gradient points outward are frozen for the iteration. The damping update follows
/// Nielsen's gain-ratio rule. Termination mirrors the usual MINPACK-style criteria:
/// relative cost decrease below ftol on a well-predicted step, step below xtol, or the
/// cosine between the residual and every free Jacobian column below gtol.
inline LeastSquaresResult minimize_bounded(const ResidualFn& fn, Eigen::VectorXd x0,
                                           const Eigen::VectorXd& lower,
                                           const Eigen::VectorXd& upper,
                                           const LeastSquaresOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    if (lower.size() != n || upper.size() != n) throw DomainError("bound vectors have wrong size");
    if ((lower.array() > upper.array()).any()) throw DomainError("lower bound above upper bound");
    if (opt.max_evals < 1) throw DomainError("max_evals must be at least 1");

    auto evaluate = [&](const Eigen::VectorXd& x) {
        if (opt.observer) opt.observer(x);
        return fn(x);
    };

    LeastSquaresResult res;
    res.x = x0.cwiseMax(lower).cwiseMin(upper);
    res.residuals = evaluate(res.x);
    res.evals = 1;
    res.cost = 0.5 * res.residuals.squaredNorm();
    res.initial_cost = res.cost;
    if (!std::isfinite(res.cost)) throw CalibrationError("residuals not finite at the starting point");

    const Eigen::Index m = res.residuals.size();
    Eigen::MatrixXd jac(m, n);
    double mu = -1.0;
    double nu = 2.0;

    while (true) {
        if (res.cost == 0.0) {
            res.reason = StopReason::ZeroResidual;
            return res;
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            Eigen::VectorXd probe = res.x;
            double h = opt.diff_step * std::max(std::abs(res.x[j]), 1.0);
            if (probe[j] + h > upper[j]) h = -h;
            probe[j] += h;
            h = probe[j] - res.x[j];
            jac.col(j) = (evaluate(probe) - res.residuals) / h;
            ++res.jacobian_evals;
        }
        const Eigen::VectorXd grad = jac.transpose() * res.residuals;

        std::vector<Eigen::Index> free;
        for (Eigen::Index j = 0; j < n; ++j) {
            const bool pinned_low = res.x[j] <= lower[j] && grad[j] > 0.0;
            const bool pinned_high = res.x[j] >= upper[j] && grad[j] < 0.0;
            if (!pinned_low && !pinned_high) free.push_back(j);
        }
        const double rnorm = res.residuals.norm();
        double cosine = 0.0;
        for (Eigen::Index j : free) {
            const double cn = jac.col(j).norm();
            if (cn > 0.0) cosine = std::max(cosine, std::abs(grad[j]) / (cn * rnorm));
        }
        if (free.empty() || cosine <= opt.gtol) {
            res.reason = StopReason::GTol;
            return res;
        }

        const auto k = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd jf(m, k);
        Eigen::VectorXd gf(k);
        for (Eigen::Index c = 0; c < k; ++c) {
            jf.col(c) = jac.col(free[static_cast<std::size_t>(c)]);
            gf[c] = grad[free[static_cast<std::size_t>(c)]];
        }
        const Eigen::MatrixXd normal = jf.transpose() * jf;
        Eigen::VectorXd scale = normal.diagonal().cwiseMax(1e-12 * std::max(normal.diagonal().maxCoeff(), 1e-300));
        if (mu < 0.0) mu = 1e-3;

        ++res.iterations;
        while (true) {
            Eigen::MatrixXd damped = normal;
            damped.diagonal() += mu * scale;
            const Eigen::VectorXd delta = damped.ldlt().solve(-gf);

            Eigen::VectorXd trial = res.x;
            for (Eigen::Index c = 0; c < k; ++c) trial[free[static_cast<std::size_t>(c)]] += delta[c];
            trial = trial.cwiseMax(lower).cwiseMin(upper);
            const Eigen::VectorXd step = trial - res.x;
            if (step.norm() <= opt.xtol * (opt.xtol + res.x.norm())) {
                res.reason = StopReason::XTol;
                return res;
            }

            Eigen::VectorXd stepf(k);
            for (Eigen::Index c = 0; c < k; ++c) stepf[c] = step[free[static_cast<std::size_t>(c)]];
            const double predicted = -(gf.dot(stepf) + 0.5 * stepf.dot(normal * stepf));

            const Eigen::VectorXd r_trial = evaluate(trial);
            ++res.evals;
            const double cost_trial = 0.5 * r_trial.squaredNorm();
            const double actual = res.cost - cost_trial;

            if (std::isfinite(cost_trial) && actual > 0.0) {
                const double ratio = predicted > 0.0 ? actual / predicted : 0.0;
                const bool small_decrease = actual < opt.ftol * res.cost && ratio > 0.25;
                res.x = trial;
                res.residuals = r_trial;
                res.cost = cost_trial;
                mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * ratio - 1.0, 3));
                nu = 2.0;
                if (small_decrease) {
                    res.reason = StopReason::FTol;
                    return res;
                }
                if (res.evals >= opt.max_evals) {
                    res.reason = StopReason::MaxEvals;
                    return res;
                }
                break;
            }
            if (res.evals >= opt.max_evals) {
                res.reason = StopReason::MaxEvals;
                return res;
            }
            mu *= nu;
            nu *= 2.0;
            if (!std::isfinite(mu) || mu > 1e300) {
                res.reason = StopReason::XTol;
                return res;
            }
        }
    }
}

}  // namespace essvi
