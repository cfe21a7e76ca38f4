#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "essvi/error.hpp"
#include "essvi/global_param.hpp"
#include "essvi/least_squares.hpp"
#include "essvi/market_data.hpp"
#include "essvi/no_arbitrage.hpp"
#include "essvi/pricing.hpp"

namespace essvi {

enum class WeightScheme { Uniform, InverseVegaSquared };

inline std::string_view to_string(WeightScheme w) { return w == WeightScheme::Uniform ? "uniform" : "ivega2"; }

inline WeightScheme parse_weight_scheme(std::string_view text) {
    if (text == "uniform") return WeightScheme::Uniform;
    if (text == "ivega2") return WeightScheme::InverseVegaSquared;
    throw DomainError("weight scheme must be uniform or ivega2, got '" + std::string(text) + "'");
}

struct CalibConfig {
    WeightScheme weights = WeightScheme::Uniform;
    ButterflyRule rule = ButterflyRule::gj();
    double a_upper = 0.05;
    double rho_bound = 0.95;
    std::size_t max_evals = 1000;
    double ftol = 1e-8;

    void validate() const {
        rule.validate();
        if (!(a_upper > 0.0)) throw DomainError("a_upper must be positive");
        if (!(rho_bound > 0.0 && rho_bound < 1.0)) throw DomainError("rho bound must lie in (0, 1)");
        if (max_evals < 1) throw DomainError("max_evals must be at least 1");
        if (!(ftol > 0.0)) throw DomainError("ftol must be positive");
    }
};

inline constexpr double kMinTheta = 1e-8;
inline constexpr double kMinA = 1e-8;
inline constexpr double kMinC = 1e-6;

/// One option of the calibration basket with everything the objective needs.
struct BasketOption {
    double maturity = 0.0;
    double strike = 0.0;
    OptionKind kind = OptionKind::Call;
    RecordKind source = RecordKind::Quote;
    double market_price = 0.0;
    std::optional<double> bid;
    std::optional<double> ask;
    double forward = 0.0;        ///< F_t(T) at the record's timestamp
    double discount = 1.0;
    double time_to_maturity = 0.0;
    std::optional<double> market_total_variance;
    std::optional<double> vega;
    double weight = 1.0;
    std::size_t slice = 0;

    double log_moneyness() const { return std::log(strike / forward); }
};

/// Sets weights from vegas: 1 for uniform, 1 / vega^2 otherwise.
inline void apply_weights(std::vector<BasketOption>& basket, WeightScheme scheme) {
    for (auto& b : basket) {
        if (scheme == WeightScheme::Uniform) {
            b.weight = 1.0;
        } else {
            if (!b.vega || !(*b.vega > 0.0)) throw CalibrationError("option without a market vega in ivega2 basket");
            b.weight = 1.0 / (*b.vega * *b.vega);
        }
    }
}

/// Out-of-the-money option per (maturity, strike), in aggregated-table order.
/// With inverse-vega weights, options whose price cannot be inverted are dropped.
inline std::vector<BasketOption> build_basket(const MarketSnapshot& snap, const CalibConfig& config) {
    std::vector<BasketOption> basket;
    const auto maturities = snap.maturities();
    const auto& agg = snap.aggregated;
    for (std::size_t i = 0; i < agg.size(); ++i) {
        const AggregatedOption& a = agg[i];
        const bool has_twin = i + 1 < agg.size() && agg[i + 1].maturity == a.maturity && agg[i + 1].strike == a.strike;
        const AggregatedOption* pick = &a;
        if (has_twin) {
            const double f = snap.forward(a);
            pick = a.strike >= f ? &a : &agg[i + 1];
            ++i;
        }
        BasketOption b;
        b.maturity = pick->maturity;
        b.strike = pick->strike;
        b.kind = pick->kind;
        b.source = pick->source;
        b.market_price = pick->price;
        b.bid = pick->bid;
        b.ask = pick->ask;
        const CurvePoint& cp = snap.curve_point(pick->maturity);
        b.forward = forward_at(cp, pick->spot_at_ts, snap.close_spot);
        b.discount = cp.discount_close;
        b.time_to_maturity = time_to_maturity(pick->maturity, pick->timestamp);
        if (!(b.time_to_maturity > 0.0)) throw CalibrationError("option expired before its timestamp");
        b.slice = static_cast<std::size_t>(std::lower_bound(maturities.begin(), maturities.end(), b.maturity) -
                                           maturities.begin());
        b.market_total_variance = implied_total_variance(b.kind, b.forward, b.strike, b.discount, b.market_price);
        if (b.market_total_variance)
            b.vega = bs_vega(b.forward, b.strike, b.discount, *b.market_total_variance, b.time_to_maturity);
        if (config.weights == WeightScheme::InverseVegaSquared && !b.vega) continue;
        basket.push_back(b);
    }
    apply_weights(basket, config.weights);
    return basket;
}

struct InitialGuess {
    GlobalParams params;
    std::vector<double> atm_thetas;
    double a_upper = 0.0;
    double theta_cap = 0.0;
    std::vector<std::string> flags;
};

/// ATM total variance of one maturity from the basket: linear interpolation in k
/// between the invertible options bracketing k = 0, else the nearest one.
inline std::optional<double> atm_total_variance(const std::vector<BasketOption>& basket, std::size_t slice) {
    std::optional<std::pair<double, double>> below, above;
    for (const auto& b : basket) {
        if (b.slice != slice || !b.market_total_variance) continue;
        const double k = b.log_moneyness();
        const double w = *b.market_total_variance;
        if (k <= 0.0 && (!below || k > below->first)) below = {k, w};
        if (k >= 0.0 && (!above || k < above->first)) above = {k, w};
    }
    if (below && above) {
        if (above->first == below->first) return below->second;
        const double lambda = -below->first / (above->first - below->first);
        return (1.0 - lambda) * below->second + lambda * above->second;
    }
    if (below) return below->second;
    if (above) return above->second;
    return std::nullopt;
}

inline InitialGuess initial_guess(const std::vector<BasketOption>& basket, const std::vector<double>& maturities,
                                  const CalibConfig& config) {
    if (maturities.empty()) throw CalibrationError("calibration basket is empty");
    InitialGuess g;
    g.a_upper = config.a_upper;
    for (std::size_t i = 0; i < maturities.size(); ++i) {
        const auto w = atm_total_variance(basket, i);
        if (!w) throw CalibrationError("no invertible option price at maturity " + std::to_string(maturities[i]));
        g.atm_thetas.push_back(*w);
    }
    GlobalParams& gp = g.params;
    gp.maturities = maturities;
    gp.rhos.assign(maturities.size(), 0.0);
    gp.cs.assign(maturities.size(), 0.5);
    gp.theta1 = std::max(g.atm_thetas[0], kMinTheta);
    double max_a = 0.0;
    for (std::size_t i = 1; i < maturities.size(); ++i) max_a = std::max(max_a, g.atm_thetas[i] - g.atm_thetas[i - 1]);
    if (max_a > g.a_upper) {
        g.a_upper *= 2.0;
        g.flags.push_back("a_upper doubled to " + detail::format_number(g.a_upper));
    }
    for (std::size_t i = 1; i < maturities.size(); ++i) {
        const double raw = g.atm_thetas[i] - g.atm_thetas[i - 1];
        if (raw < kMinA) g.flags.push_back("a_" + std::to_string(i + 1) + " clipped to floor (ATM variance not increasing)");
        if (raw > g.a_upper) g.flags.push_back("a_" + std::to_string(i + 1) + " clipped to a_upper");
        gp.as.push_back(std::clamp(raw, kMinA, g.a_upper));
    }
    g.theta_cap = 4.0 * *std::max_element(g.atm_thetas.begin(), g.atm_thetas.end());
    g.theta_cap = std::max(g.theta_cap, 2.0 * kMinTheta);
    gp.theta1 = std::min(gp.theta1, g.theta_cap);
    return g;
}

inline double model_price(const BasketOption& b, const std::vector<SSVISlice>& slices) {
    return bs_price(b.kind, b.forward, b.strike, b.discount, total_variance(slices[b.slice], b.log_moneyness()));
}

/// sqrt(w) * (market - model) per basket option.
inline std::vector<double> residuals(const GlobalParams& gp, const std::vector<BasketOption>& basket,
                                     const ButterflyRule& rule) {
    const auto slices = to_slices(gp, rule).slices;
    std::vector<double> r(basket.size());
    for (std::size_t i = 0; i < basket.size(); ++i)
        r[i] = std::sqrt(basket[i].weight) * (basket[i].market_price - model_price(basket[i], slices));
    return r;
}

inline double objective(const std::vector<double>& r) {
    double s = 0.0;
    for (double x : r) s += x * x;
    return s;
}

/// Model price inside [bid, ask]; without a band, within 1e-8 F of the market price.
inline bool inside_bid_ask(const BasketOption& b, double model) {
    if (b.bid && b.ask) return model >= *b.bid && model <= *b.ask;
    return std::abs(model - b.market_price) <= 1e-8 * b.forward;
}

struct CalibResult {
    GlobalParams params;
    std::vector<SSVISlice> slices;
    double objective_value = 0.0;
    double initial_objective = 0.0;
    std::vector<double> residuals;
    std::vector<double> model_prices;
    std::vector<bool> inside_bid_ask;
    std::vector<BasketOption> basket;
    std::size_t evals_used = 0;
    bool converged = false;
    std::string stop_reason;
    bool arbitrage_free = false;
    InitialGuess guess;
};

struct BoxBounds {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

inline BoxBounds box_bounds(std::size_t n, const InitialGuess& g, const CalibConfig& config) {
    BoxBounds b{Eigen::VectorXd(3 * n), Eigen::VectorXd(3 * n)};
    for (std::size_t i = 0; i < n; ++i) {
        b.lower[static_cast<Eigen::Index>(i)] = -config.rho_bound;
        b.upper[static_cast<Eigen::Index>(i)] = config.rho_bound;
        b.lower[static_cast<Eigen::Index>(2 * n + i)] = kMinC;
        b.upper[static_cast<Eigen::Index>(2 * n + i)] = 1.0 - kMinC;
    }
    b.lower[static_cast<Eigen::Index>(n)] = kMinTheta;
    b.upper[static_cast<Eigen::Index>(n)] = g.theta_cap;
    for (std::size_t i = n + 1; i < 2 * n; ++i) {
        b.lower[static_cast<Eigen::Index>(i)] = kMinA;
        b.upper[static_cast<Eigen::Index>(i)] = g.a_upper;
    }
    return b;
}

inline void finish_result(CalibResult& res, const ButterflyRule& rule) {
    res.slices = to_slices(res.params, rule).slices;
    res.residuals = residuals(res.params, res.basket, rule);
    res.objective_value = objective(res.residuals);
    res.model_prices.clear();
    res.inside_bid_ask.clear();
    for (const auto& b : res.basket) {
        const double m = model_price(b, res.slices);
        res.model_prices.push_back(m);
        res.inside_bid_ask.push_back(inside_bid_ask(b, m));
    }
    res.arbitrage_free = surface_check(res.slices, rule).pass();
}

namespace detail {

inline CalibResult calibrate_once(const MarketSnapshot& snap, const CalibConfig& config,
                                  const std::optional<GlobalParams>& start,
                                  const std::function<void(const GlobalParams&)>& observer,
                                  bool start_converged = false) {
    config.validate();
    CalibResult res;
    res.basket = build_basket(snap, config);
    if (res.basket.empty()) throw CalibrationError("no usable options in the snapshot");
    const auto maturities = snap.maturities();
    res.guess = initial_guess(res.basket, maturities, config);
    const std::size_t n = maturities.size();
    const BoxBounds box = box_bounds(n, res.guess, config);

    const std::vector<double> x0v = start ? start->pack() : res.guess.params.pack();
    if (start && start->maturities != maturities) throw CalibrationError("start parameters have different maturities");
    Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(x0v.data(), static_cast<Eigen::Index>(x0v.size()));
    x0 = x0.cwiseMax(box.lower).cwiseMin(box.upper);

    auto to_params = [&](const Eigen::VectorXd& x) {
        return GlobalParams::unpack(std::vector<double>(x.data(), x.data() + x.size()), maturities);
    };
    auto fn = [&](const Eigen::VectorXd& x) {
        const auto r = residuals(to_params(x), res.basket, config.rule);
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size())));
    };
    LeastSquaresOptions opt;
    opt.max_evals = config.max_evals;
    opt.ftol = config.ftol;
    if (observer) opt.observer = [&](const Eigen::VectorXd& x) { observer(to_params(x)); };

    const LeastSquaresResult ls = minimize_bounded(fn, x0, box.lower, box.upper, opt);
    res.initial_objective = 2.0 * ls.initial_cost;
    res.evals_used = ls.evals;
    res.stop_reason = std::string(to_string(ls.reason));
    if (!(ls.cost < ls.initial_cost)) {
        // A stationary or already-optimal start counts as converged; anything else is a failure.
        res.params = to_params(x0);
        res.converged = start_converged || ls.reason == StopReason::ZeroResidual || ls.reason == StopReason::GTol;
        if (!res.converged) res.stop_reason += " (no improvement on the initial point)";
    } else {
        res.params = to_params(ls.x);
        res.converged = ls.converged();
    }
    finish_result(res, config.rule);
    return res;
}

}  // namespace detail

/// Bounded least-squares fit of the global parameters. `start` replaces the
/// ATM-based initial point (bounds still come from the ATM estimates); `observer`
/// sees every parameter point the optimizer evaluates.
///
/// Under the MM rule without an explicit start, the GJ optimum (always MM-feasible)
/// is mapped into MM coordinates and used as a second start; the better fit is kept,
/// so the MM objective never exceeds the GJ one. evals_used counts all runs.
inline CalibResult calibrate(const MarketSnapshot& snap, const CalibConfig& config,
                             const std::optional<GlobalParams>& start = std::nullopt,
                             std::function<void(const GlobalParams&)> observer = {}) {
    CalibResult best = detail::calibrate_once(snap, config, start, observer);
    if (start || config.rule.kind != ButterflyRule::Kind::MM) return best;

    CalibConfig gj_config = config;
    gj_config.rule = ButterflyRule::gj();
    const CalibResult gj = detail::calibrate_once(snap, gj_config, std::nullopt, {});
    std::size_t evals = best.evals_used + gj.evals_used;
    std::optional<GlobalParams> warm;
    try {
        warm = from_slices(gj.slices, config.rule);
    } catch (const InversionError&) {
        // Degenerate GJ optimum; keep the direct MM fit.
    }
    if (warm) {
        CalibResult second = detail::calibrate_once(snap, config, warm, observer, gj.converged);
        evals += second.evals_used;
        second.guess = best.guess;
        second.initial_objective = best.initial_objective;
        if (second.objective_value < best.objective_value) best = std::move(second);
    }
    best.evals_used = evals;
    return best;
}

}  // namespace essvi
