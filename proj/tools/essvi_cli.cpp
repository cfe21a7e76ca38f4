// Command-line front end: calibration, slicing, arbitrage checks and comparison reports.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "essvi/io.hpp"
#include "essvi/synthetic.hpp"

namespace fs = std::filesystem;
using namespace essvi;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitError = 2;

struct SnapshotPaths {
    std::string data_dir;
    std::string quotes;
    std::string curve;
    std::string meta;

    void add_to(CLI::App* app) {
        app->add_option("--data", data_dir, "directory holding quotes.csv, curve.csv and meta.cfg");
        app->add_option("--quotes", quotes, "quote/trade CSV");
        app->add_option("--curve", curve, "forward/discount curve CSV");
        app->add_option("--meta", meta, "snapshot metadata (key=value)");
    }

    MarketSnapshot load(const RunConfig& cfg) const {
        auto pick = [&](const std::string& explicit_path, const char* name) {
            if (!explicit_path.empty()) return explicit_path;
            if (data_dir.empty()) throw CLI::ValidationError(std::string("--") + name, "required (or give --data)");
            return (fs::path(data_dir) / (std::string(name) + (std::string(name) == "meta" ? ".cfg" : ".csv"))).string();
        };
        auto qin = detail::open_input(pick(quotes, "quotes"));
        auto cin = detail::open_input(pick(curve, "curve"));
        auto min = detail::open_input(pick(meta, "meta"));
        auto curve_points = parse_curve_csv(cin);
        const auto records = parse_quotes_csv(qin);
        SnapshotMeta m = parse_meta(min);
        if (cfg.window) m.window = *cfg.window;
        return build_snapshot(m, std::move(curve_points), records);
    }
};

/// Calibration flags; anything given on the command line overrides the config file.
struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> values;

    void add_to(CLI::App* app, bool cpt = false) {
        app->add_option("--config", config_path, "key=value configuration file");
        add(app, "--rule", "rule", "butterfly rule: gj or mm");
        add(app, "--weights", "weights", "uniform or ivega2");
        add(app, "--a-upper", "a_upper", "upper bound of the a_i box");
        add(app, "--rho-bound", "rho_bound", "|rho| bound of the box");
        add(app, "--max-evals", "max_evals", "objective evaluation budget");
        add(app, "--ftol", "ftol", "relative objective tolerance");
        add(app, "--k-min", "k_min", "smile/grid log-moneyness lower end");
        add(app, "--k-max", "k_max", "smile/grid log-moneyness upper end");
        add(app, "--k-points", "k_points", "smile/grid point count");
        add(app, "--window", "window", "aggregation window in seconds");
        add(app, "--arb-tol", "arb_tol", "arbitrage tolerance in currency");
        if (cpt) add(app, "--n-cpt", "n_cpt", "CPT node pairs");
    }

    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help);
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path.empty()) {
            auto in = detail::open_input(config_path);
            try {
                cfg = parse_run_config(in, cfg);
            } catch (const ParseError& e) {
                throw ParseError(config_path + ": " + e.what());
            }
        }
        for (const auto& [k, v] : values) apply_setting(cfg, k, v);
        cfg.validate();
        return cfg;
    }
};

fs::path prepare_out(const std::string& out) {
    const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "'");
    return dir;
}

template <class Writer>
void write_file(const fs::path& path, Writer&& writer) {
    std::ostringstream text;
    writer(text);
    write_text_file(path.string(), text.str());
}

std::string dump(const Json& doc) { return doc.dump(2) + "\n"; }

ArbReport write_arb_artifacts(const fs::path& dir, const std::string& stem, const PriceGrid& grid,
                              std::optional<double> tol) {
    const ArbReport report = detect(grid, tol);
    write_file(dir / (stem + ".txt"), [&](std::ostream& o) { write_report_text(o, report, grid); });
    write_text_file((dir / (stem + ".json")).string(), dump(report_json(report, grid)));
    return report;
}

int finish(bool converged, const ArbReport& report, const std::string& stop_reason) {
    std::cout << "converged: " << (converged ? "yes" : "no") << " (" << stop_reason << ")\n"
              << "arbitrage violations: " << report.violations.size() << '\n';
    return converged && report.empty() ? kExitOk : kExitCheckFailed;
}

int run_calibrate(const SnapshotPaths& paths, const ConfigFlags& flags, const std::string& out) {
    const RunConfig cfg = flags.resolve();
    const MarketSnapshot snap = paths.load(cfg);
    const CalibResult res = calibrate(snap, cfg.calib);
    const fs::path dir = prepare_out(out);
    const auto ks = cfg.k_grid();

    write_text_file((dir / "params.json").string(), dump(essvi_document(res, cfg.calib.rule)));
    write_file(dir / "residuals.csv", [&](std::ostream& o) { write_residual_csv(o, res.basket, res.model_prices, res.inside_bid_ask); });
    write_file(dir / "smiles.csv", [&](std::ostream& o) { write_smile_csv(o, res.slices, ks); });
    const PriceGrid grid = essvi_grid(curve_for(snap, res.params.maturities), res.slices, ks);
    write_file(dir / "price_grid.csv", [&](std::ostream& o) { write_grid_csv(o, grid); });
    const ArbReport report = write_arb_artifacts(dir, "arb_report", grid, cfg.arb_tol);

    std::cout << "options: " << res.basket.size() << ", maturities: " << res.params.size() << '\n'
              << "objective: " << detail::format_number(res.objective_value) << " (initial "
              << detail::format_number(res.initial_objective) << "), evals: " << res.evals_used << '\n';
    for (const auto& f : res.guess.flags) std::cout << "note: " << f << '\n';
    return finish(res.converged, report, res.stop_reason);
}

int run_cpt_calibrate(const SnapshotPaths& paths, const ConfigFlags& flags, const std::string& out) {
    const RunConfig cfg = flags.resolve();
    const MarketSnapshot snap = paths.load(cfg);
    const CPTCalibResult res = cpt_calibrate(snap, cfg.n_cpt, cfg.calib);
    const fs::path dir = prepare_out(out);
    const CPTModel model = res.model();

    write_text_file((dir / "params_cpt.json").string(), dump(cpt_document(res)));
    write_file(dir / "residuals_cpt.csv", [&](std::ostream& o) { write_residual_csv(o, res.basket, res.model_prices, res.inside_bid_ask); });
    const PriceGrid grid = cpt_grid(curve_for(snap, res.params.maturities), model, cfg.k_grid());
    write_file(dir / "price_grid_cpt.csv", [&](std::ostream& o) { write_grid_csv(o, grid); });
    const ArbReport report = write_arb_artifacts(dir, "arb_report_cpt", grid, cfg.arb_tol);

    std::cout << "options: " << res.basket.size() << ", parameters: " << res.parameter_count() << '\n'
              << "objective: " << detail::format_number(res.objective_value) << ", evals: " << res.evals_used << '\n';
    return finish(res.converged, report, res.stop_reason);
}

int run_slice(const std::string& params_path, const std::vector<double>& ts, const std::string& out,
              const ConfigFlags& flags, std::optional<double> right_slope) {
    const RunConfig cfg = flags.resolve();
    const EssviDocument doc = parse_essvi_document(read_json_file(params_path));
    const SurfaceCurve curve(to_slices(doc.params, doc.rule).slices, right_slope);
    std::vector<SSVISlice> slices;
    std::cout << "maturity,theta,rho,psi\n";
    for (double t : ts) {
        const SSVISlice s = slice_at(curve, t);
        std::cout << detail::format_number(t) << ',' << detail::format_number(s.theta) << ','
                  << detail::format_number(s.rho) << ',' << detail::format_number(s.psi) << '\n';
        slices.push_back(s);
    }
    if (!out.empty()) {
        const fs::path dir = prepare_out(out);
        write_file(dir / "slice_smiles.csv", [&](std::ostream& o) { write_smile_csv(o, slices, cfg.k_grid()); });
    }
    return kExitOk;
}

int run_check_arb(const std::string& grid_path, std::optional<double> tol, const std::string& out) {
    auto in = detail::open_input(grid_path);
    const PriceGrid grid = parse_grid_csv(in);
    const ArbReport report = detect(grid, tol);
    write_report_text(std::cout, report, grid);
    if (!out.empty()) {
        const fs::path dir = prepare_out(out);
        write_text_file((dir / "arb_report.json").string(), dump(report_json(report, grid)));
    }
    return report.empty() ? kExitOk : kExitCheckFailed;
}

int run_report(const SnapshotPaths& paths, const ConfigFlags& flags, const std::string& essvi_path,
               const std::string& cpt_path, const std::string& out) {
    if (essvi_path.empty() && cpt_path.empty()) throw CLI::ValidationError("report", "give --essvi and/or --cpt");
    const RunConfig cfg = flags.resolve();
    const MarketSnapshot snap = paths.load(cfg);
    const auto basket = build_basket(snap, cfg.calib);
    if (basket.empty()) throw CalibrationError("snapshot has no usable options");
    std::vector<ModelColumn> columns;
    if (!essvi_path.empty()) {
        const EssviDocument doc = parse_essvi_document(read_json_file(essvi_path));
        require_same_maturities(snap.maturities(), doc.params.maturities, "eSSVI parameter");
        const auto slices = to_slices(doc.params, doc.rule).slices;
        ModelColumn c{"essvi", {}};
        for (const auto& b : basket) c.prices.push_back(model_price(b, slices));
        columns.push_back(std::move(c));
    }
    if (!cpt_path.empty()) {
        const CPTModel model = parse_cpt_document(read_json_file(cpt_path));
        require_same_maturities(snap.maturities(), model.tau.maturities(), "CPT parameter");
        ModelColumn c{"cpt", {}};
        for (const auto& b : basket) c.prices.push_back(cpt_model_price(model, b));
        columns.push_back(std::move(c));
    }
    std::ostringstream text;
    write_report_csv(text, basket, columns);
    if (out.empty()) {
        std::cout << text.str();
    } else {
        write_text_file((prepare_out(out) / "report.csv").string(), text.str());
        for (const auto& c : columns) {
            double worst = 0.0;
            std::size_t inside = 0;
            for (std::size_t i = 0; i < basket.size(); ++i) {
                worst = std::max(worst, error_bp(c.prices[i], basket[i].market_price, basket[i].forward));
                inside += inside_bid_ask(basket[i], c.prices[i]);
            }
            std::cout << c.name << ": max error " << detail::format_number(worst) << " bp, inside bid/ask " << inside
                      << '/' << basket.size() << '\n';
        }
    }
    return kExitOk;
}

int run_synth(const std::string& out, const std::vector<double>& maturities, std::size_t strikes, bool jitter,
              unsigned seed, const std::string& rule_name, double sigma) {
    SyntheticSpec spec;
    spec.strikes_per_maturity = strikes;
    spec.jitter = jitter;
    spec.seed = seed;
    ButterflyRule rule;
    rule.kind = parse_rule_kind(rule_name);
    SyntheticMarket market;
    std::optional<GlobalParams> gp;
    if (sigma > 0.0) {
        spec.maturities = maturities.empty() ? reference_params().maturities : maturities;
        market = generate_flat_market(spec, sigma);
    } else {
        if (!maturities.empty()) throw CLI::ValidationError("--maturities", "only with --flat-vol; the eSSVI generator uses its own grid");
        gp = reference_params();
        spec.maturities = gp->maturities;
        market = generate_market(spec, to_slices(*gp, rule).slices);
    }
    const fs::path dir = prepare_out(out);
    write_file(dir / "quotes.csv", [&](std::ostream& o) { write_quotes_csv(o, market.records); });
    write_file(dir / "curve.csv", [&](std::ostream& o) { write_curve_csv(o, market.curve); });
    write_file(dir / "meta.cfg", [&](std::ostream& o) { write_meta(o, market.meta); });
    if (gp) write_text_file((dir / "generator.json").string(), dump(essvi_document(*gp, rule)));
    std::cout << "records: " << market.records.size() << ", maturities: " << spec.maturities.size() << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"eSSVI implied volatility surface calibration"};
    app.require_subcommand(1);

    SnapshotPaths cal_paths, cpt_paths, rep_paths;
    ConfigFlags cal_flags, cpt_flags, rep_flags, slice_flags;
    std::string cal_out, cpt_out, rep_out, slice_out, arb_out, synth_out;

    auto* cal = app.add_subcommand("calibrate", "fit the global eSSVI surface to a snapshot");
    cal_paths.add_to(cal);
    cal_flags.add_to(cal);
    cal->add_option("--out", cal_out, "output directory");

    auto* cpt = app.add_subcommand("cpt-calibrate", "fit the CPT comparison model to a snapshot");
    cpt_paths.add_to(cpt);
    cpt_flags.add_to(cpt, true);
    cpt->add_option("--out", cpt_out, "output directory");

    std::string slice_params;
    std::vector<double> slice_ts;
    std::optional<double> right_slope;
    auto* slice = app.add_subcommand("slice", "interpolate/extrapolate the surface at given maturities");
    slice->add_option("--params", slice_params, "eSSVI parameter document")->required();
    slice->add_option("--t", slice_ts, "maturity (repeatable)")->required();
    slice->add_option("--right-slope", right_slope, "theta slope beyond the last maturity");
    slice->add_option("--out", slice_out, "output directory for slice smiles");
    slice_flags.add_to(slice);

    std::string grid_path;
    std::optional<double> arb_tol;
    auto* arb = app.add_subcommand("check-arb", "scan a price grid for static arbitrage");
    arb->add_option("--grid", grid_path, "price grid CSV")->required();
    arb->add_option("--tol", arb_tol, "tolerance in currency (default 1e-8 * forward)");
    arb->add_option("--out", arb_out, "output directory for the JSON report");

    std::string essvi_doc, cpt_doc;
    auto* rep = app.add_subcommand("report", "per-option model errors against a snapshot");
    rep_paths.add_to(rep);
    rep_flags.add_to(rep);
    rep->add_option("--essvi", essvi_doc, "eSSVI parameter document");
    rep->add_option("--cpt", cpt_doc, "CPT parameter document");
    rep->add_option("--out", rep_out, "output directory (default: stdout)");

    std::vector<double> synth_maturities;
    std::size_t synth_strikes = 40;
    bool synth_jitter = false;
    unsigned synth_seed = 7;
    std::string synth_rule = "gj";
    double synth_sigma = 0.0;
    auto* synth = app.add_subcommand("synth", "write a synthetic snapshot fixture");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--strikes", synth_strikes, "strikes per maturity");
    synth->add_flag("--jitter", synth_jitter, "random timestamps and spot moves");
    synth->add_option("--seed", synth_seed, "random seed");
    synth->add_option("--rule", synth_rule, "rule of the generating surface");
    synth->add_option("--flat-vol", synth_sigma, "flat Black-Scholes volatility instead of eSSVI");
    synth->add_option("--maturities", synth_maturities, "maturities for --flat-vol")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitError;
    }

    try {
        if (*cal) return run_calibrate(cal_paths, cal_flags, cal_out);
        if (*cpt) return run_cpt_calibrate(cpt_paths, cpt_flags, cpt_out);
        if (*slice) return run_slice(slice_params, slice_ts, slice_out, slice_flags, right_slope);
        if (*arb) return run_check_arb(grid_path, arb_tol, arb_out);
        if (*rep) return run_report(rep_paths, rep_flags, essvi_doc, cpt_doc, rep_out);
        if (*synth) return run_synth(synth_out, synth_maturities, synth_strikes, synth_jitter, synth_seed, synth_rule, synth_sigma);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}
