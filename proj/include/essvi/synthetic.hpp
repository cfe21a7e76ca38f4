#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "essvi/global_param.hpp"
#include "essvi/market_data.hpp"
#include "essvi/pricing.hpp"

namespace essvi {

/// Layout of a generated snapshot. Forwards and discounts follow a flat rate.
struct SyntheticSpec {
    std::vector<double> maturities;
    double close_spot = 100.0;
    double rate = 0.01;
    std::size_t strikes_per_maturity = 40;
    double k_width = 2.5;          ///< strike range in ATM standard deviations
    double half_spread = 0.002;    ///< relative half-width of the bid/ask band
    bool both_kinds = true;        ///< emit call and put at every strike
    std::size_t trade_every = 5;   ///< every n-th strike also trades at the model price; 0 disables
    bool jitter = false;           ///< random timestamps and spot moves inside the window
    double close_time = 3600.0;
    double window = kDefaultWindow;
    unsigned seed = 7;
};

struct SyntheticMarket {
    SnapshotMeta meta;
    std::vector<CurvePoint> curve;
    std::vector<OptionRecord> records;

    MarketSnapshot snapshot() const { return build_snapshot(meta, curve, records); }
};

/// Total variance of the generating model for maturity index i at log-moneyness k.
using VarianceFn = std::function<double(std::size_t, double)>;

inline SyntheticMarket generate_market(const SyntheticSpec& spec, const VarianceFn& variance) {
    if (spec.maturities.empty()) throw DomainError("synthetic market needs maturities");
    if (spec.strikes_per_maturity < 2) throw DomainError("synthetic market needs at least two strikes");
    SyntheticMarket m;
    m.meta.close_spot = spec.close_spot;
    m.meta.close_time = spec.close_time;
    m.meta.window = spec.window;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> age(0.0, 0.9 * spec.window);
    std::normal_distribution<double> move(0.0, 0.002);

    for (std::size_t i = 0; i < spec.maturities.size(); ++i) {
        const double T = spec.maturities[i];
        const CurvePoint cp{T, spec.close_spot * std::exp(spec.rate * T), std::exp(-spec.rate * T)};
        m.curve.push_back(cp);
        const double sd = std::sqrt(variance(i, 0.0));
        for (std::size_t j = 0; j < spec.strikes_per_maturity; ++j) {
            const double x = -spec.k_width + 2.0 * spec.k_width * static_cast<double>(j) /
                                                  static_cast<double>(spec.strikes_per_maturity - 1);
            const double strike = cp.forward_close * std::exp(x * sd);
            for (OptionKind kind : {OptionKind::Call, OptionKind::Put}) {
                const bool otm = kind == OptionKind::Call ? strike >= cp.forward_close : strike < cp.forward_close;
                if (!spec.both_kinds && !otm) continue;
                OptionRecord r;
                r.maturity = T;
                r.strike = strike;
                r.kind = kind;
                r.timestamp = spec.jitter ? spec.close_time - age(rng) : spec.close_time;
                r.spot_at_ts = spec.jitter ? spec.close_spot * std::exp(move(rng)) : spec.close_spot;
                const double f = forward_at(cp, r.spot_at_ts, spec.close_spot);
                const double price = bs_price(kind, f, strike, cp.discount_close, variance(i, std::log(strike / f)));
                if (!(price > 0.0)) continue;
                r.record_kind = RecordKind::Quote;
                r.bid = price * (1.0 - spec.half_spread);
                r.ask = price * (1.0 + spec.half_spread);
                m.records.push_back(r);
                if (spec.trade_every > 0 && j % spec.trade_every == 0) {
                    OptionRecord t = r;
                    t.record_kind = RecordKind::Trade;
                    t.bid.reset();
                    t.ask.reset();
                    t.trade_price = price;
                    m.records.push_back(t);
                }
            }
        }
    }
    return m;
}

inline SyntheticMarket generate_market(const SyntheticSpec& spec, const std::vector<SSVISlice>& slices) {
    if (slices.size() != spec.maturities.size()) throw DomainError("one slice per maturity required");
    return generate_market(spec, [&](std::size_t i, double k) { return total_variance(slices[i], k); });
}

inline SyntheticMarket generate_flat_market(const SyntheticSpec& spec, double sigma) {
    return generate_market(spec, [&](std::size_t i, double) { return sigma * sigma * spec.maturities[i]; });
}

/// A feasible six-maturity equity-like parameter set used by the examples and tests.
inline GlobalParams reference_params() {
    GlobalParams gp;
    gp.maturities = {0.1, 0.25, 0.5, 1.0, 1.5, 2.0};
    gp.rhos = {-0.55, -0.5, -0.45, -0.4, -0.38, -0.35};
    gp.theta1 = 0.0045;
    gp.as = {0.006, 0.01, 0.02, 0.018, 0.017};
    gp.cs = {0.6, 0.5, 0.45, 0.5, 0.55, 0.5};
    return gp;
}

}  // namespace essvi
