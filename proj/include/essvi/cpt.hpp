#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "essvi/calibration.hpp"
#include "essvi/error.hpp"
#include "essvi/least_squares.hpp"
#include "essvi/market_data.hpp"
#include "essvi/pricing.hpp"

namespace essvi {

namespace detail {

/// Scaled complementary error function exp(x^2) erfc(x) for x >= 0.
inline double erfcx(double x) {
    if (x < 0.0) return 2.0 * std::exp(x * x) - erfcx(-x);
    if (x < 2.0) return std::exp(x * x) * std::erfc(x);
    // Continued fraction, evaluated bottom-up.
    double t = x;
    for (int n = 80; n >= 1; --n) t = x + 0.5 * n / t;
    return 1.0 / (std::sqrt(std::numbers::pi) * t);
}

/// Integral of exp(-h) across one piece where h is quadratic with curvature kappa,
/// given h and h' at both ends. Infinite ends encode the tails.
inline double piece_mass(double h_start, double s_start, double h_end, double s_end, double kappa, double length) {
    const bool infinite = std::isinf(length);
    if (kappa <= 0.0 || (!infinite && kappa * length * length <= 1e-13)) {
        if (infinite) throw DomainError("tail of h needs positive curvature");
        const double s = 0.5 * (s_start + s_end);
        if (std::abs(s * length) < 1e-300) return std::exp(-h_start) * length;
        return std::exp(-h_start) * -std::expm1(-s * length) / s;
    }
    const double scale = std::sqrt(2.0 * kappa);
    const double pref = std::sqrt(std::numbers::pi) / scale;
    const double a = s_start / scale;
    const double b = s_end / scale;
    if (a >= 0.0) {
        const double tail = std::isinf(b) ? 0.0 : std::exp(-h_end) * erfcx(b);
        return pref * (std::exp(-h_start) * erfcx(a) - tail);
    }
    if (b <= 0.0) {
        const double head = std::isinf(a) ? 0.0 : std::exp(-h_start) * erfcx(-a);
        return pref * (std::exp(-h_end) * erfcx(-b) - head);
    }
    const double h_min = std::isinf(a) ? h_end - b * b : h_start - a * a;
    return pref * std::exp(-h_min) * ((std::isinf(b) ? 1.0 : std::erf(b)) - (std::isinf(a) ? -1.0 : std::erf(a)));
}

}  // namespace detail

/// Convex, continuously differentiable, piecewise-quadratic exponent h with f = exp(-h).
///
/// Region r spans [z_{r-1}, z_r] with z_{-1} = -inf and z_M = +inf; h'' equals
/// curvature[r] there. The slope and level are fixed by h'(0) = 0 and h(0) = 0.
class HFunction {
public:
    HFunction(std::vector<double> nodes, std::vector<double> curvatures)
        : nodes_(std::move(nodes)), kappa_(std::move(curvatures)) {
        const std::size_t m = nodes_.size();
        if (m < 2) throw DomainError("h needs at least two nodes");
        if (kappa_.size() != m + 1) throw DomainError("h needs one curvature per region (nodes + 1)");
        for (std::size_t j = 1; j < m; ++j)
            if (!(nodes_[j] > nodes_[j - 1])) throw DomainError("h nodes must be strictly increasing");
        for (double k : kappa_)
            if (!(k >= 0.0) || !std::isfinite(k)) throw DomainError("h curvatures must be finite and non-negative");
        if (!(kappa_.front() > 0.0) || !(kappa_.back() > 0.0)) throw DomainError("h tails need positive curvature");

        slopes_.assign(m, 0.0);
        for (std::size_t j = 1; j < m; ++j) slopes_[j] = slopes_[j - 1] + kappa_[j] * (nodes_[j] - nodes_[j - 1]);
        const double shift = slope(0.0);
        for (double& s : slopes_) s -= shift;
        values_.assign(m, 0.0);
        for (std::size_t j = 1; j < m; ++j) {
            const double len = nodes_[j] - nodes_[j - 1];
            values_[j] = values_[j - 1] + slopes_[j - 1] * len + 0.5 * kappa_[j] * len * len;
        }
        const double level = (*this)(0.0);
        for (double& v : values_) v -= level;

        masses_.resize(m + 1);
        const double inf = std::numeric_limits<double>::infinity();
        masses_[0] = detail::piece_mass(inf, -inf, values_[0], slopes_[0], kappa_[0], inf);
        for (std::size_t r = 1; r < m; ++r)
            masses_[r] = detail::piece_mass(values_[r - 1], slopes_[r - 1], values_[r], slopes_[r], kappa_[r],
                                            nodes_[r] - nodes_[r - 1]);
        masses_[m] = detail::piece_mass(values_[m - 1], slopes_[m - 1], inf, inf, kappa_[m], inf);
        total_ = 0.0;
        for (double x : masses_) total_ += x;
    }

    /// h(z) = z^2 / 2 up to a constant: the Black-Scholes member of the family.
    static HFunction gaussian(std::vector<double> nodes) {
        std::vector<double> k(nodes.size() + 1, 1.0);
        return HFunction(std::move(nodes), std::move(k));
    }

    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& curvatures() const { return kappa_; }
    const std::vector<double>& node_values() const { return values_; }
    const std::vector<double>& node_slopes() const { return slopes_; }
    double total_mass() const { return total_; }

    double operator()(double z) const {
        const auto [r, anchor] = locate(z);
        const double u = z - nodes_[anchor];
        return values_[anchor] + slopes_[anchor] * u + 0.5 * kappa_[r] * u * u;
    }

    double slope(double z) const {
        const auto [r, anchor] = locate(z);
        return slopes_[anchor] + kappa_[r] * (z - nodes_[anchor]);
    }

    /// Integral of exp(-h) over (-inf, z].
    double left_mass(double z) const {
        if (z == -std::numeric_limits<double>::infinity()) return 0.0;
        if (z == std::numeric_limits<double>::infinity()) return total_;
        const auto [r, anchor] = locate(z);
        double sum = 0.0;
        for (std::size_t i = 0; i < r; ++i) sum += masses_[i];
        return sum + partial(r, anchor, z, true);
    }

    /// Integral of exp(-h) over [z, inf).
    double right_mass(double z) const {
        if (z == -std::numeric_limits<double>::infinity()) return total_;
        if (z == std::numeric_limits<double>::infinity()) return 0.0;
        const auto [r, anchor] = locate(z);
        double sum = 0.0;
        for (std::size_t i = r + 1; i < masses_.size(); ++i) sum += masses_[i];
        return sum + partial(r, anchor, z, false);
    }

private:
    /// Region index and the node the quadratic is expanded around.
    std::pair<std::size_t, std::size_t> locate(double z) const {
        const auto it = std::upper_bound(nodes_.begin(), nodes_.end(), z);
        const auto r = static_cast<std::size_t>(it - nodes_.begin());
        return {r, r == 0 ? 0 : r - 1};
    }

    double partial(std::size_t r, std::size_t anchor, double z, bool left) const {
        const double inf = std::numeric_limits<double>::infinity();
        const double hz = values_[anchor] + slopes_[anchor] * (z - nodes_[anchor]) +
                          0.5 * kappa_[r] * (z - nodes_[anchor]) * (z - nodes_[anchor]);
        const double sz = slopes_[anchor] + kappa_[r] * (z - nodes_[anchor]);
        const std::size_t m = nodes_.size();
        if (left) {
            if (r == 0) return detail::piece_mass(inf, -inf, hz, sz, kappa_[0], inf);
            return detail::piece_mass(values_[r - 1], slopes_[r - 1], hz, sz, kappa_[r], z - nodes_[r - 1]);
        }
        if (r == m) return detail::piece_mass(hz, sz, inf, inf, kappa_[m], inf);
        return detail::piece_mass(hz, sz, values_[r], slopes_[r], kappa_[r], nodes_[r] - z);
    }

    std::vector<double> nodes_;
    std::vector<double> kappa_;
    std::vector<double> slopes_;
    std::vector<double> values_;
    std::vector<double> masses_;
    double total_ = 0.0;
};

/// Piecewise-linear, nondecreasing tau(T) through the origin. Beyond the last node
/// the last segment's slope is kept.
class TauCurve {
public:
    TauCurve(std::vector<double> maturities, std::vector<double> taus)
        : maturities_(std::move(maturities)), taus_(std::move(taus)) {
        if (maturities_.empty() || maturities_.size() != taus_.size())
            throw DomainError("tau curve needs matching, non-empty node lists");
        double prev_t = 0.0, prev_tau = 0.0;
        for (std::size_t i = 0; i < maturities_.size(); ++i) {
            if (!(maturities_[i] > prev_t)) throw DomainError("tau maturities must be positive and increasing");
            if (!(taus_[i] >= prev_tau) || !std::isfinite(taus_[i])) throw DomainError("tau must be nondecreasing and finite");
            prev_t = maturities_[i];
            prev_tau = taus_[i];
        }
    }

    const std::vector<double>& maturities() const { return maturities_; }
    const std::vector<double>& taus() const { return taus_; }

    double operator()(double t) const {
        if (t <= 0.0) return 0.0;
        std::size_t i = 0;
        while (i + 1 < maturities_.size() && maturities_[i] < t) ++i;
        const double t0 = i == 0 ? 0.0 : maturities_[i - 1];
        const double v0 = i == 0 ? 0.0 : taus_[i - 1];
        return v0 + (taus_[i] - v0) * (t - t0) / (maturities_[i] - t0);
    }

private:
    std::vector<double> maturities_;
    std::vector<double> taus_;
};

struct CPTModel {
    HFunction h;
    TauCurve tau;
};

/// Distribution function of f = exp(-h) / Z.
inline double omega(const HFunction& h, double z) {
    const double l = h.left_mass(z);
    return l / (l + h.right_mass(z));
}

/// 1 - omega, computed from the upper tail.
inline double omega_upper(const HFunction& h, double z) {
    const double u = h.right_mass(z);
    return u / (h.left_mass(z) + u);
}

/// Quantile of f: the z with omega(z) = p, p in (0, 1).
inline double omega_inverse(const HFunction& h, double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("probability must lie in (0, 1)");
    const bool upper = p > 0.5;
    const double target = upper ? 1.0 - p : p;
    auto g = [&](double z) { return upper ? target - omega_upper(h, z) : omega(h, z) - target; };
    double lo = -1.0, hi = 1.0;
    while (g(lo) > 0.0) lo *= 2.0;
    while (g(hi) < 0.0) hi *= 2.0;
    double z = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double gz = g(z);
        if (gz == 0.0) return z;
        (gz > 0.0 ? hi : lo) = z;
        const double density = std::exp(-h(z)) / h.total_mass();
        double next = z - gz / density;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (hi - lo <= 1e-15 * std::max(1.0, std::abs(z))) return z;
        if (std::abs(next - z) <= 1e-16 * std::max(1.0, std::abs(z))) return next;
        z = next;
    }
    return z;
}

/// d_f(tau, k) = sup{z : h(tau + z) - h(z) = -k}. The left side is nondecreasing in z;
/// returns -inf / +inf when -k lies outside its range.
inline double d_f(const HFunction& h, double tau, double k) {
    if (!(tau > 0.0)) throw DomainError("d_f needs tau > 0");
    auto g = [&](double z) { return h(tau + z) - h(z) + k; };
    double lo = -k / tau - 0.5 * tau - 1.0;
    double hi = lo + 2.0;
    double step = 1.0;
    while (g(lo) > 0.0) {
        lo -= step;
        step *= 2.0;
        if (lo < -1e8) return -std::numeric_limits<double>::infinity();
    }
    step = 1.0;
    while (g(hi) <= 0.0) {
        hi += step;
        step *= 2.0;
        if (hi > 1e8) return std::numeric_limits<double>::infinity();
    }
    // Invariant: g(lo) <= 0 < g(hi); converges to the supremum of the root set.
    double z = 0.5 * (lo + hi);
    for (int it = 0; it < 300 && hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(z)); ++it) {
        const double gz = g(z);
        (gz <= 0.0 ? lo : hi) = z;
        const double dg = h.slope(tau + z) - h.slope(z);
        double next = dg > 0.0 ? z - gz / dg : 0.5 * (lo + hi);
        if (!(next > lo && next < hi) || gz == 0.0) next = 0.5 * (lo + hi);
        z = next;
    }
    return g(z) <= 0.0 ? z : lo;
}

inline double cpt_price(const CPTModel& model, OptionKind kind, double forward, double strike, double discount,
                        double maturity) {
    detail::check_price_inputs(forward, strike, discount);
    const double tau = model.tau(maturity);
    if (tau == 0.0)
        return discount * std::max(kind == OptionKind::Call ? forward - strike : strike - forward, 0.0);
    const double d = d_f(model.h, tau, std::log(strike / forward));
    if (kind == OptionKind::Call)
        return discount * (forward * omega(model.h, d + tau) - strike * omega(model.h, d));
    return discount * (strike * omega_upper(model.h, d) - forward * omega_upper(model.h, d + tau));
}

/// 2n equally spaced nodes on [-width, width].
inline std::vector<double> symmetric_nodes(std::size_t n_cpt, double width) {
    std::vector<double> z(2 * n_cpt);
    for (std::size_t j = 0; j < z.size(); ++j)
        z[j] = -width + 2.0 * width * static_cast<double>(j) / static_cast<double>(z.size() - 1);
    return z;
}

/// Calibration coordinates: tau increments y_i (tau_i = sum y_j^2), segment curvature
/// roots x_r for the 2n - 1 interior segments (tails share the end segments'), and the
/// node half-width W. N + 2 n numbers in total.
struct CPTParams {
    std::size_t n_cpt = 6;
    std::vector<double> maturities;
    std::vector<double> tau_roots;
    std::vector<double> curvature_roots;
    double width = 3.0;

    std::size_t count() const { return tau_roots.size() + curvature_roots.size() + 1; }

    CPTModel model() const {
        std::vector<double> taus;
        double acc = 0.0;
        for (double y : tau_roots) taus.push_back(acc += y * y);
        std::vector<double> kappa;
        kappa.push_back(curvature_roots.front() * curvature_roots.front());
        for (double x : curvature_roots) kappa.push_back(x * x);
        kappa.push_back(curvature_roots.back() * curvature_roots.back());
        return {HFunction(symmetric_nodes(n_cpt, width), std::move(kappa)), TauCurve(maturities, std::move(taus))};
    }

    std::vector<double> pack() const {
        std::vector<double> x(tau_roots);
        x.insert(x.end(), curvature_roots.begin(), curvature_roots.end());
        x.push_back(width);
        return x;
    }

    static CPTParams unpack(const std::vector<double>& x, std::size_t n_cpt, const std::vector<double>& maturities) {
        const std::size_t n = maturities.size();
        if (x.size() != n + 2 * n_cpt) throw DomainError("packed CPT vector has wrong length");
        CPTParams p;
        p.n_cpt = n_cpt;
        p.maturities = maturities;
        p.tau_roots.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n));
        p.curvature_roots.assign(x.begin() + static_cast<std::ptrdiff_t>(n), x.end() - 1);
        p.width = x.back();
        return p;
    }
};

struct CPTCalibResult {
    CPTParams params;
    double objective_value = 0.0;
    std::vector<double> residuals;
    std::vector<double> model_prices;
    std::vector<bool> inside_bid_ask;
    std::vector<BasketOption> basket;
    std::size_t evals_used = 0;
    bool converged = false;
    std::string stop_reason;

    std::size_t parameter_count() const { return params.count(); }
    CPTModel model() const { return params.model(); }
};

inline double cpt_model_price(const CPTModel& m, const BasketOption& b) {
    return cpt_price(m, b.kind, b.forward, b.strike, b.discount, b.maturity);
}

inline std::vector<double> cpt_residuals(const CPTParams& p, const std::vector<BasketOption>& basket) {
    const CPTModel m = p.model();
    std::vector<double> r(basket.size());
    for (std::size_t i = 0; i < basket.size(); ++i)
        r[i] = std::sqrt(basket[i].weight) * (basket[i].market_price - cpt_model_price(m, basket[i]));
    return r;
}

/// Initial CPT point: Gaussian h (all curvatures one) and tau_i = sqrt(ATM total variance).
inline CPTParams cpt_initial_guess(const std::vector<BasketOption>& basket, const std::vector<double>& maturities,
                                   std::size_t n_cpt, const CalibConfig& config) {
    const InitialGuess g = initial_guess(basket, maturities, config);
    CPTParams p;
    p.n_cpt = n_cpt;
    p.maturities = maturities;
    double prev = 0.0;
    for (double theta : g.atm_thetas) {
        const double tau = std::max(std::sqrt(std::max(theta, 0.0)), prev + 1e-8);
        p.tau_roots.push_back(std::sqrt(tau - prev));
        prev = tau;
    }
    p.curvature_roots.assign(2 * n_cpt - 1, 1.0);
    p.width = 3.0 + prev;
    return p;
}

inline CPTCalibResult cpt_calibrate(const MarketSnapshot& snap, std::size_t n_cpt, const CalibConfig& config) {
    config.validate();
    if (n_cpt < 2) throw DomainError("n_cpt must be at least 2");
    CPTCalibResult res;
    res.basket = build_basket(snap, config);
    if (res.basket.empty()) throw CalibrationError("no usable options in the snapshot");
    const auto maturities = snap.maturities();
    const CPTParams start = cpt_initial_guess(res.basket, maturities, n_cpt, config);
    const std::size_t n = maturities.size();

    const std::size_t dim = n + 2 * n_cpt;
    Eigen::VectorXd lower(dim), upper(dim);
    for (std::size_t i = 0; i < n; ++i) {
        lower[static_cast<Eigen::Index>(i)] = 1e-4;
        upper[static_cast<Eigen::Index>(i)] = 10.0;
    }
    for (std::size_t i = n; i + 1 < dim; ++i) {
        lower[static_cast<Eigen::Index>(i)] = 1e-2;
        upper[static_cast<Eigen::Index>(i)] = 10.0;
    }
    lower[static_cast<Eigen::Index>(dim - 1)] = 0.5;
    upper[static_cast<Eigen::Index>(dim - 1)] = 20.0;

    const auto x0v = start.pack();
    Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(x0v.data(), static_cast<Eigen::Index>(dim));
    x0 = x0.cwiseMax(lower).cwiseMin(upper);
    auto to_params = [&](const Eigen::VectorXd& x) {
        return CPTParams::unpack(std::vector<double>(x.data(), x.data() + x.size()), n_cpt, maturities);
    };
    auto fn = [&](const Eigen::VectorXd& x) {
        const auto r = cpt_residuals(to_params(x), res.basket);
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size())));
    };
    LeastSquaresOptions opt;
    opt.max_evals = config.max_evals;
    opt.ftol = config.ftol;
    const LeastSquaresResult ls = minimize_bounded(fn, x0, lower, upper, opt);
    res.evals_used = ls.evals;
    res.stop_reason = std::string(to_string(ls.reason));
    if (!(ls.cost < ls.initial_cost)) {
        res.params = to_params(x0);
        res.converged = ls.reason == StopReason::ZeroResidual || ls.reason == StopReason::GTol;
        if (!res.converged) res.stop_reason += " (no improvement on the initial point)";
    } else {
        res.params = to_params(ls.x);
        res.converged = ls.converged();
    }
    const CPTModel m = res.params.model();
    res.residuals = cpt_residuals(res.params, res.basket);
    res.objective_value = objective(res.residuals);
    for (const auto& b : res.basket) {
        const double price = cpt_model_price(m, b);
        res.model_prices.push_back(price);
        res.inside_bid_ask.push_back(inside_bid_ask(b, price));
    }
    return res;
}

}  // namespace essvi
