#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "essvi/calibration.hpp"
#include "essvi/synthetic.hpp"

using namespace essvi;

namespace {

SyntheticSpec reference_spec() {
    SyntheticSpec spec;
    spec.maturities = reference_params().maturities;
    return spec;
}

MarketSnapshot reference_snapshot(const ButterflyRule& rule = ButterflyRule::gj()) {
    return generate_market(reference_spec(), to_slices(reference_params(), rule).slices).snapshot();
}

double worst_relative_error(const CalibResult& r) {
    double worst = 0.0;
    for (std::size_t i = 0; i < r.basket.size(); ++i)
        worst = std::max(worst, std::abs(r.model_prices[i] - r.basket[i].market_price) / r.basket[i].forward);
    return worst;
}

}  // namespace

TEST(Basket, OutOfTheMoneyPerStrike) {
    const MarketSnapshot snap = reference_snapshot();
    const auto basket = build_basket(snap, CalibConfig{});
    EXPECT_EQ(basket.size(), 6u * 40u);
    for (const auto& b : basket) {
        EXPECT_EQ(b.kind, b.strike >= b.forward ? OptionKind::Call : OptionKind::Put);
        EXPECT_EQ(b.weight, 1.0);
        ASSERT_TRUE(b.market_total_variance.has_value());
    }
}

TEST(InitialGuess, FlatVolatility) {
    SyntheticSpec spec;
    spec.maturities = {0.1, 0.5};
    const MarketSnapshot snap = generate_flat_market(spec, 0.2).snapshot();
    const auto basket = build_basket(snap, CalibConfig{});
    const InitialGuess g = initial_guess(basket, snap.maturities(), CalibConfig{});
    EXPECT_NEAR(g.atm_thetas[0], 0.004, 1e-10);
    EXPECT_NEAR(g.atm_thetas[1], 0.02, 1e-10);
    EXPECT_NEAR(g.params.as[0], 0.016, 1e-10);
    EXPECT_EQ(g.params.rhos, (std::vector<double>{0.0, 0.0}));
    EXPECT_EQ(g.params.cs, (std::vector<double>{0.5, 0.5}));
    EXPECT_NEAR(g.params.theta1, 0.004, 1e-10);
    EXPECT_TRUE(g.flags.empty());
}

TEST(InitialGuess, SingleMaturity) {
    SyntheticSpec spec;
    spec.maturities = {0.5};
    const MarketSnapshot snap = generate_flat_market(spec, 0.3).snapshot();
    const InitialGuess g = initial_guess(build_basket(snap, CalibConfig{}), snap.maturities(), CalibConfig{});
    EXPECT_TRUE(g.params.as.empty());
    EXPECT_NEAR(g.params.theta1, 0.045, 1e-10);
}

TEST(InitialGuess, DecreasingAtmVarianceIsClippedAndFlagged) {
    SyntheticSpec spec;
    spec.maturities = {0.5, 1.0};
    const auto market = generate_market(spec, [](std::size_t i, double) { return i == 0 ? 0.03 : 0.02; });
    const MarketSnapshot snap = market.snapshot();
    const InitialGuess g = initial_guess(build_basket(snap, CalibConfig{}), snap.maturities(), CalibConfig{});
    EXPECT_EQ(g.params.as[0], kMinA);
    EXPECT_FALSE(g.flags.empty());
}

TEST(InitialGuess, DoublesAUpperOnce) {
    SyntheticSpec spec;
    spec.maturities = {0.5, 1.0};
    const auto market = generate_market(spec, [](std::size_t i, double) { return i == 0 ? 0.02 : 0.09; });
    const MarketSnapshot snap = market.snapshot();
    const InitialGuess g = initial_guess(build_basket(snap, CalibConfig{}), snap.maturities(), CalibConfig{});
    EXPECT_DOUBLE_EQ(g.a_upper, 0.1);
    EXPECT_NEAR(g.params.as[0], 0.07, 1e-9);
}

TEST(Residuals, ZeroAtTheGenerator) {
    const MarketSnapshot snap = reference_snapshot();
    const auto basket = build_basket(snap, CalibConfig{});
    for (double r : residuals(reference_params(), basket, ButterflyRule::gj())) EXPECT_NEAR(r, 0.0, 1e-12);
}

TEST(Residuals, UniformWeightsArePriceDifferences) {
    const MarketSnapshot snap = reference_snapshot();
    const auto basket = build_basket(snap, CalibConfig{});
    GlobalParams gp = reference_params();
    gp.cs[2] = 0.3;
    const auto slices = to_slices(gp, ButterflyRule::gj()).slices;
    const auto r = residuals(gp, basket, ButterflyRule::gj());
    for (std::size_t i = 0; i < basket.size(); ++i)
        EXPECT_EQ(r[i], basket[i].market_price - model_price(basket[i], slices));
}

TEST(Residuals, DoublingVegasQuartersTheObjective) {
    CalibConfig cfg;
    cfg.weights = WeightScheme::InverseVegaSquared;
    const MarketSnapshot snap = reference_snapshot();
    auto basket = build_basket(snap, cfg);
    GlobalParams gp = reference_params();
    gp.rhos[0] = -0.2;
    const double base = objective(residuals(gp, basket, cfg.rule));
    for (auto& b : basket) *b.vega *= 2.0;
    apply_weights(basket, cfg.weights);
    EXPECT_EQ(objective(residuals(gp, basket, cfg.rule)), 0.25 * base);
}

TEST(Residuals, InverseVegaWeightsApproximateVolDifferences) {
    CalibConfig cfg;
    cfg.weights = WeightScheme::InverseVegaSquared;
    const MarketSnapshot snap = reference_snapshot();
    const auto basket = build_basket(snap, cfg);
    GlobalParams gp = reference_params();
    gp.theta1 *= 1.001;
    const auto slices = to_slices(gp, cfg.rule).slices;
    const auto r = residuals(gp, basket, cfg.rule);
    for (std::size_t i = 0; i < basket.size(); ++i) {
        const auto& b = basket[i];
        const double vol_mkt = std::sqrt(*b.market_total_variance / b.time_to_maturity);
        const double vol_model = std::sqrt(total_variance(slices[b.slice], b.log_moneyness()) / b.time_to_maturity);
        EXPECT_NEAR(r[i], vol_mkt - vol_model, 0.05 * std::abs(vol_mkt - vol_model) + 1e-12);
    }
}

TEST(Objective, InvariantUnderRowOrder) {
    const MarketSnapshot snap = reference_snapshot();
    auto basket = build_basket(snap, CalibConfig{});
    GlobalParams gp = reference_params();
    gp.rhos[3] = 0.1;
    const double base = objective(residuals(gp, basket, ButterflyRule::gj()));
    std::mt19937_64 rng(3);
    std::shuffle(basket.begin(), basket.end(), rng);
    EXPECT_NEAR(objective(residuals(gp, basket, ButterflyRule::gj())), base, 1e-14 * base);
}

TEST(Calibrate, RecoversGeneratorPrices) {
    const CalibResult r = calibrate(reference_snapshot(), CalibConfig{});
    EXPECT_TRUE(r.converged) << r.stop_reason;
    EXPECT_TRUE(r.arbitrage_free);
    EXPECT_LT(worst_relative_error(r), 1e-4);
    EXPECT_LE(r.evals_used, 1000u);
    EXPECT_NEAR(r.objective_value, objective(r.residuals), 1e-15);
    for (bool inside : r.inside_bid_ask) EXPECT_TRUE(inside);
}

TEST(Calibrate, MmObjectiveNotAboveGj) {
    // Steep short-dated wings sit above the GJ cap but inside the MM cap.
    GlobalParams gp = reference_params();
    gp.cs = {0.97, 0.95, 0.9, 0.9, 0.9, 0.9};
    const MarketSnapshot snap = generate_market(reference_spec(), to_slices(gp, ButterflyRule::mm()).slices).snapshot();
    CalibConfig mm;
    mm.rule = ButterflyRule::mm();
    const CalibResult gj_fit = calibrate(snap, CalibConfig{});
    const CalibResult mm_fit = calibrate(snap, mm);
    EXPECT_TRUE(mm_fit.arbitrage_free);
    EXPECT_LE(mm_fit.objective_value, gj_fit.objective_value + 1e-16);
    EXPECT_LT(mm_fit.objective_value, 1e-2 * gj_fit.objective_value);
}

TEST(Calibrate, EveryIterateIsArbitrageFree) {
    const MarketSnapshot snap = reference_snapshot();
    std::vector<GlobalParams> seen;
    calibrate(snap, CalibConfig{}, std::nullopt, [&](const GlobalParams& gp) { seen.push_back(gp); });
    ASSERT_GE(seen.size(), 100u);
    const std::size_t stride = seen.size() / 100;
    for (std::size_t i = 0; i < 100; ++i)
        EXPECT_TRUE(surface_check(to_slices(seen[i * stride], ButterflyRule::gj()).slices, ButterflyRule::gj()).pass());
}

TEST(Calibrate, Deterministic) {
    const MarketSnapshot snap = reference_snapshot();
    CalibConfig cfg;
    cfg.max_evals = 30;
    const CalibResult a = calibrate(snap, cfg), b = calibrate(snap, cfg);
    EXPECT_EQ(a.params.pack(), b.params.pack());
    EXPECT_EQ(a.objective_value, b.objective_value);
}

TEST(Calibrate, EmptySnapshotThrows) {
    MarketSnapshot snap;
    snap.close_spot = 100.0;
    EXPECT_THROW(calibrate(snap, CalibConfig{}), CalibrationError);
}

TEST(Calibrate, WithJitteredTimestampsAndSpots) {
    SyntheticSpec spec = reference_spec();
    spec.jitter = true;
    const MarketSnapshot snap = generate_market(spec, to_slices(reference_params(), ButterflyRule::gj()).slices).snapshot();
    const CalibResult r = calibrate(snap, CalibConfig{});
    EXPECT_LT(worst_relative_error(r), 1e-4);
}

TEST(CalibConfig, Validation) {
    CalibConfig c;
    c.rho_bound = 1.0;
    EXPECT_THROW(c.validate(), DomainError);
    c = CalibConfig{};
    c.a_upper = 0.0;
    EXPECT_THROW(c.validate(), DomainError);
    EXPECT_THROW(parse_weight_scheme("vega"), DomainError);
}
