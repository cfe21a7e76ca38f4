#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "essvi/arb_detector.hpp"
#include "essvi/calibration.hpp"
#include "essvi/cpt.hpp"
#include "essvi/term_structure.hpp"

namespace essvi {

using Json = nlohmann::ordered_json;

// ---- parameter documents ------------------------------------------------------------

inline Json essvi_document(const GlobalParams& gp, const ButterflyRule& rule) {
    Json doc;
    doc["model"] = "essvi";
    doc["n"] = gp.size();
    doc["maturities"] = gp.maturities;
    doc["rhos"] = gp.rhos;
    doc["theta1"] = gp.theta1;
    doc["as"] = gp.as;
    doc["cs"] = gp.cs;
    doc["rule"] = to_string(rule.kind);
    if (rule.kind == ButterflyRule::Kind::MM) {
        doc["mm_grid_size"] = rule.mm_grid_size;
        doc["mm_refine_tol"] = rule.mm_refine_tol;
    }
    Json slices = Json::array();
    for (const auto& s : to_slices(gp, rule).slices)
        slices.push_back({{"maturity", s.maturity}, {"theta", s.theta}, {"rho", s.rho}, {"psi", s.psi}});
    doc["slices"] = slices;
    return doc;
}

inline Json essvi_document(const CalibResult& r, const ButterflyRule& rule) {
    Json doc = essvi_document(r.params, rule);
    doc["fit"] = {{"objective", r.objective_value},
                  {"initial_objective", r.initial_objective},
                  {"evals", r.evals_used},
                  {"converged", r.converged},
                  {"stop_reason", r.stop_reason},
                  {"arbitrage_free", r.arbitrage_free},
                  {"options", r.basket.size()},
                  {"flags", r.guess.flags}};
    return doc;
}

struct EssviDocument {
    GlobalParams params;
    ButterflyRule rule;
};

namespace detail {

template <class T>
T field(const Json& doc, const char* key) {
    if (!doc.contains(key)) throw SchemaError(std::string("parameter document is missing '") + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(std::string("parameter document field '") + key + "' has the wrong type");
    }
}

inline Json parse_json(std::istream& in, const std::string& what) {
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(what + ": " + e.what());
    }
}

}  // namespace detail

inline EssviDocument parse_essvi_document(const Json& doc) {
    if (doc.contains("model") && doc["model"] != "essvi") throw SchemaError("not an eSSVI parameter document");
    EssviDocument out;
    out.params.maturities = detail::field<std::vector<double>>(doc, "maturities");
    out.params.rhos = detail::field<std::vector<double>>(doc, "rhos");
    out.params.theta1 = detail::field<double>(doc, "theta1");
    out.params.as = detail::field<std::vector<double>>(doc, "as");
    out.params.cs = detail::field<std::vector<double>>(doc, "cs");
    out.rule.kind = parse_rule_kind(detail::field<std::string>(doc, "rule"));
    if (doc.contains("mm_grid_size")) out.rule.mm_grid_size = detail::field<std::size_t>(doc, "mm_grid_size");
    if (doc.contains("mm_refine_tol")) out.rule.mm_refine_tol = detail::field<double>(doc, "mm_refine_tol");
    if (doc.contains("n") && detail::field<std::size_t>(doc, "n") != out.params.maturities.size())
        throw SchemaError("parameter document: n does not match the number of maturities");
    try {
        out.params.validate();
        out.rule.validate();
    } catch (const DomainError& e) {
        throw SchemaError(std::string("parameter document: ") + e.what());
    }
    return out;
}

inline Json cpt_document(const CPTModel& m, std::size_t n_cpt) {
    Json doc;
    doc["model"] = "cpt";
    doc["n_cpt"] = n_cpt;
    doc["nodes"] = m.h.nodes();
    doc["curvatures"] = m.h.curvatures();
    doc["maturities"] = m.tau.maturities();
    doc["taus"] = m.tau.taus();
    return doc;
}

inline Json cpt_document(const CPTCalibResult& r) {
    Json doc = cpt_document(r.model(), r.params.n_cpt);
    doc["width"] = r.params.width;
    doc["fit"] = {{"objective", r.objective_value},
                  {"evals", r.evals_used},
                  {"converged", r.converged},
                  {"stop_reason", r.stop_reason},
                  {"parameters", r.parameter_count()},
                  {"options", r.basket.size()}};
    return doc;
}

inline CPTModel parse_cpt_document(const Json& doc) {
    if (doc.contains("model") && doc["model"] != "cpt") throw SchemaError("not a CPT parameter document");
    try {
        HFunction h(detail::field<std::vector<double>>(doc, "nodes"), detail::field<std::vector<double>>(doc, "curvatures"));
        TauCurve tau(detail::field<std::vector<double>>(doc, "maturities"), detail::field<std::vector<double>>(doc, "taus"));
        return {std::move(h), std::move(tau)};
    } catch (const DomainError& e) {
        throw SchemaError(std::string("CPT document: ") + e.what());
    }
}

inline Json read_json_file(const std::string& path) {
    auto in = detail::open_input(path);
    return detail::parse_json(in, path);
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("failed writing '" + path + "'");
}

// ---- tables -------------------------------------------------------------------------

inline constexpr std::string_view kResidualHeader = "maturity,strike,kind,market_price,model_price,weight,inside_bid_ask";

inline void write_residual_csv(std::ostream& out, const std::vector<BasketOption>& basket,
                               const std::vector<double>& model_prices, const std::vector<bool>& inside) {
    using detail::format_number;
    out << kResidualHeader << '\n';
    for (std::size_t i = 0; i < basket.size(); ++i) {
        const auto& b = basket[i];
        out << format_number(b.maturity) << ',' << format_number(b.strike) << ',' << to_string(b.kind) << ','
            << format_number(b.market_price) << ',' << format_number(model_prices[i]) << ',' << format_number(b.weight)
            << ',' << (inside[i] ? "true" : "false") << '\n';
    }
}

/// Per-maturity smile: k, total variance and implied volatility.
inline void write_smile_csv(std::ostream& out, const std::vector<SSVISlice>& slices, const std::vector<double>& ks) {
    using detail::format_number;
    out << "maturity,k,total_variance,implied_vol\n";
    for (const auto& s : slices)
        for (double k : ks) {
            const double w = total_variance(s, k);
            out << format_number(s.maturity) << ',' << format_number(k) << ',' << format_number(w) << ','
                << format_number(std::sqrt(w / s.maturity)) << '\n';
        }
}

/// Model comparison table; each model adds price, bp error to the forward and a bid/ask flag.
struct ModelColumn {
    std::string name;
    std::vector<double> prices;
};

inline double error_bp(double model, double market, double forward) { return 1e4 * std::abs(model - market) / forward; }

inline void write_report_csv(std::ostream& out, const std::vector<BasketOption>& basket,
                             const std::vector<ModelColumn>& models) {
    using detail::format_number;
    using detail::format_optional;
    out << "maturity,strike,kind,forward,market_price,bid,ask";
    for (const auto& m : models) out << ',' << m.name << "_price," << m.name << "_error_bp," << m.name << "_inside_bid_ask";
    out << '\n';
    for (std::size_t i = 0; i < basket.size(); ++i) {
        const auto& b = basket[i];
        out << format_number(b.maturity) << ',' << format_number(b.strike) << ',' << to_string(b.kind) << ','
            << format_number(b.forward) << ',' << format_number(b.market_price) << ',' << format_optional(b.bid) << ','
            << format_optional(b.ask);
        for (const auto& m : models)
            out << ',' << format_number(m.prices[i]) << ',' << format_number(error_bp(m.prices[i], b.market_price, b.forward))
                << ',' << (inside_bid_ask(b, m.prices[i]) ? "true" : "false");
        out << '\n';
    }
}

inline Json report_json(const ArbReport& r, const PriceGrid& g) {
    Json doc;
    doc["violation_count"] = r.violations.size();
    Json list = Json::array();
    for (const auto& v : r.violations) {
        Json item;
        item["kind"] = to_string(v.kind);
        item["maturity_index"] = v.maturity;
        item["maturity"] = g.slices[v.maturity].maturity;
        item["strike_indices"] = v.strikes;
        if (v.other_maturity) {
            item["other_maturity_index"] = *v.other_maturity;
            item["other_maturity"] = g.slices[*v.other_maturity].maturity;
            item["other_strike_indices"] = v.other_strikes;
        }
        item["magnitude"] = v.magnitude;
        item["interpolated"] = v.interpolated;
        list.push_back(item);
    }
    doc["violations"] = list;
    return doc;
}

// ---- run configuration --------------------------------------------------------------

/// Flat key=value configuration; '#' starts a comment.
struct RunConfig {
    CalibConfig calib;
    std::size_t n_cpt = 6;
    double k_min = -2.0;
    double k_max = 2.0;
    std::size_t k_points = 81;
    std::optional<double> window;
    std::optional<double> arb_tol;

    std::vector<double> k_grid() const { return linspace(k_min, k_max, k_points); }

    void validate() const {
        calib.validate();
        if (n_cpt < 2) throw DomainError("n_cpt must be at least 2");
        if (!std::isfinite(k_min) || !std::isfinite(k_max) || !(k_max > k_min)) throw DomainError("k range must be finite and increasing");
        if (k_points < 2) throw DomainError("k_points must be at least 2");
        if (window && !(*window > 0.0)) throw DomainError("window must be positive");
        if (arb_tol && !(*arb_tol >= 0.0)) throw DomainError("arb_tol must be non-negative");
    }
};

namespace detail {

inline std::size_t parse_count(std::string_view v, std::string_view key, std::size_t line) {
    const double d = parse_number(v, key, line);
    if (!(d >= 0.0) || d != std::floor(d) || d > 1e12) throw ParseError(std::string(key) + " must be a non-negative integer", line);
    return static_cast<std::size_t>(d);
}

}  // namespace detail

inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value, std::size_t line = 0) {
    try {
        if (key == "rule") cfg.calib.rule.kind = parse_rule_kind(value);
        else if (key == "weights") cfg.calib.weights = parse_weight_scheme(value);
        else if (key == "a_upper") cfg.calib.a_upper = detail::parse_number(value, key, line);
        else if (key == "rho_bound") cfg.calib.rho_bound = detail::parse_number(value, key, line);
        else if (key == "max_evals") cfg.calib.max_evals = detail::parse_count(value, key, line);
        else if (key == "ftol") cfg.calib.ftol = detail::parse_number(value, key, line);
        else if (key == "mm_grid_size") cfg.calib.rule.mm_grid_size = detail::parse_count(value, key, line);
        else if (key == "mm_refine_tol") cfg.calib.rule.mm_refine_tol = detail::parse_number(value, key, line);
        else if (key == "n_cpt") cfg.n_cpt = detail::parse_count(value, key, line);
        else if (key == "k_min") cfg.k_min = detail::parse_number(value, key, line);
        else if (key == "k_max") cfg.k_max = detail::parse_number(value, key, line);
        else if (key == "k_points") cfg.k_points = detail::parse_count(value, key, line);
        else if (key == "window") cfg.window = detail::parse_number(value, key, line);
        else if (key == "arb_tol") cfg.arb_tol = detail::parse_number(value, key, line);
        else throw ParseError("unknown key '" + std::string(key) + "'", line);
    } catch (const DomainError& e) {
        throw ParseError(e.what(), line);
    }
}

inline RunConfig parse_run_config(std::istream& in, RunConfig cfg = {}) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view v = line;
        if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
        if (detail::blank(v)) continue;
        const auto eq = v.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected key=value", lineno);
        apply_setting(cfg, detail::trim(v.substr(0, eq)), detail::trim(v.substr(eq + 1)), lineno);
    }
    return cfg;
}

// ---- model grids --------------------------------------------------------------------

inline PriceGrid essvi_grid(const std::vector<CurvePoint>& curve, const std::vector<SSVISlice>& slices,
                            const std::vector<double>& ks) {
    if (curve.size() != slices.size()) throw SchemaError("curve and slices differ in length");
    return make_grid(curve, ks, [&](std::size_t i, double F, double K, double D) {
        return bs_price(OptionKind::Call, F, K, D, total_variance(slices[i], std::log(K / F)));
    });
}

inline PriceGrid cpt_grid(const std::vector<CurvePoint>& curve, const CPTModel& model, const std::vector<double>& ks) {
    return make_grid(curve, ks, [&](std::size_t i, double F, double K, double D) {
        return cpt_price(model, OptionKind::Call, F, K, D, curve[i].maturity);
    });
}

/// Curve points of the snapshot at the given maturities, in order.
inline std::vector<CurvePoint> curve_for(const MarketSnapshot& snap, const std::vector<double>& maturities) {
    std::vector<CurvePoint> out;
    for (double T : maturities) out.push_back(snap.curve_point(T));
    return out;
}

inline void require_same_maturities(const std::vector<double>& snapshot, const std::vector<double>& model,
                                    const std::string& what) {
    bool same = snapshot.size() == model.size();
    for (std::size_t i = 0; same && i < model.size(); ++i)
        same = std::abs(snapshot[i] - model[i]) <= 1e-12 * std::max(1.0, std::abs(snapshot[i]));
    if (!same) throw SchemaError(what + " maturities do not match the snapshot");
}

}  // namespace essvi
