#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "essvi/error.hpp"

namespace essvi {

enum class OptionKind { Call, Put };

inline std::string_view to_string(OptionKind kind) { return kind == OptionKind::Call ? "call" : "put"; }

/// One maturity of an eSSVI surface in (theta, rho, psi) form, psi = theta * phi.
struct SSVISlice {
    double theta = 0.0;
    double rho = 0.0;
    double psi = 0.0;
    double maturity = 0.0;

    double phi() const { return psi / theta; }

    bool valid() const {
        return std::isfinite(theta) && std::isfinite(rho) && std::isfinite(psi) && theta > 0.0 &&
               std::abs(rho) < 1.0 && psi > 0.0;
    }
};

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Standard normal CDF through erfc, accurate in relative terms far into the left tail.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Total implied variance of a slice at log-forward-moneyness k.
///
/// The radicand (psi k + theta rho)^2 + theta^2 (1 - rho^2) is expanded to
/// theta^2 + psi k (psi k + 2 theta rho), which makes the ATM value exactly theta.
inline double total_variance(const SSVISlice& s, double k) {
    const double pk = s.psi * k;
    const double radical = std::sqrt(s.theta * s.theta + pk * (pk + 2.0 * s.theta * s.rho));
    return 0.5 * (s.theta + s.rho * pk + radical);
}

inline double implied_vol(const SSVISlice& s, double k, double time_to_maturity) {
    return std::sqrt(total_variance(s, k) / time_to_maturity);
}

namespace detail {

inline void check_price_inputs(double forward, double strike, double discount) {
    if (!(forward > 0.0) || !(strike > 0.0))
        throw DomainError("forward and strike must be positive");
    if (!(discount > 0.0 && discount <= 1.0))
        throw DomainError("discount factor must lie in (0, 1]");
}

}  // namespace detail

/// Black-Scholes price on total variance. Both legs are computed directly so deep
/// out-of-the-money puts keep full relative precision.
inline double bs_price(OptionKind kind, double forward, double strike, double discount,
                       double total_var) {
    detail::check_price_inputs(forward, strike, discount);
    if (total_var < 0.0 || std::isnan(total_var))
        throw DomainError("total variance must be non-negative");
    if (total_var == 0.0) {
        const double intrinsic =
            kind == OptionKind::Call ? forward - strike : strike - forward;
        return discount * std::max(intrinsic, 0.0);
    }
    const double stddev = std::sqrt(total_var);
    const double k = std::log(strike / forward);
    const double d1 = -k / stddev + 0.5 * stddev;
    const double d2 = d1 - stddev;
    if (kind == OptionKind::Call)
        return discount * (forward * norm_cdf(d1) - strike * norm_cdf(d2));
    return discount * (strike * norm_cdf(-d2) - forward * norm_cdf(-d1));
}

/// Vega with respect to implied volatility, sigma = sqrt(w / T).
inline double bs_vega(double forward, double strike, double discount, double total_var,
                      double maturity) {
    detail::check_price_inputs(forward, strike, discount);
    if (!(total_var > 0.0)) throw DomainError("vega needs positive total variance");
    if (!(maturity > 0.0)) throw DomainError("vega needs positive maturity");
    const double stddev = std::sqrt(total_var);
    const double d1 = -std::log(strike / forward) / stddev + 0.5 * stddev;
    return discount * forward * norm_pdf(d1) * std::sqrt(maturity);
}

/// Invert a Black-Scholes price for total variance.
///
/// Safeguarded Newton on the total standard deviation s = sqrt(w), with a bisection
/// fallback whenever the Newton step leaves the current bracket. The bracket is
/// w in [1e-10, 16]; returns nullopt when the price is outside the no-arbitrage band
/// or the root lies outside the bracket.
inline std::optional<double> implied_total_variance(OptionKind kind, double forward,
                                                    double strike, double discount,
                                                    double price) {
    detail::check_price_inputs(forward, strike, discount);
    const double intrinsic = discount * std::max(kind == OptionKind::Call ? forward - strike
                                                                          : strike - forward,
                                                 0.0);
    const double upper = discount * (kind == OptionKind::Call ? forward : strike);
    if (!(price > intrinsic) || !(price < upper)) return std::nullopt;

    constexpr double lo_var = 1e-10;
    constexpr double hi_var = 16.0;
    double lo = std::sqrt(lo_var);
    double hi = std::sqrt(hi_var);
    auto f = [&](double s) { return bs_price(kind, forward, strike, discount, s * s) - price; };
    const double f_lo = f(lo);
    const double f_hi = f(hi);
    if (f_lo > 0.0 || f_hi < 0.0) return std::nullopt;

    const double tol = 1e-12 * price;
    const double k = std::log(strike / forward);
    double s = std::clamp(std::sqrt(2.0 * std::abs(k)) + 0.1, lo, hi);
    for (int iter = 0; iter < 200; ++iter) {
        const double fs = f(s);
        if (std::abs(fs) <= tol) return s * s;
        if (fs > 0.0)
            hi = s;
        else
            lo = s;
        const double d1 = -k / s + 0.5 * s;
        const double slope = discount * forward * norm_pdf(d1);
        double next = slope > 0.0 ? s - fs / slope : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) return s * s;
        s = next;
    }
    return s * s;
}

}  // namespace essvi
