#include <gtest/gtest.h>

#include <sstream>

#include "essvi/io.hpp"
#include "essvi/synthetic.hpp"

using namespace essvi;

TEST(EssviDocument, RoundTripIsExact) {
    const GlobalParams gp = reference_params();
    const Json doc = Json::parse(essvi_document(gp, ButterflyRule::mm()).dump());
    const EssviDocument back = parse_essvi_document(doc);
    EXPECT_EQ(back.params.pack(), gp.pack());
    EXPECT_EQ(back.params.maturities, gp.maturities);
    EXPECT_EQ(back.rule.kind, ButterflyRule::Kind::MM);
    EXPECT_EQ(doc["n"], 6);
    EXPECT_EQ(doc["slices"].size(), 6u);
}

TEST(EssviDocument, SchemaErrors) {
    Json doc = essvi_document(reference_params(), ButterflyRule::gj());
    doc.erase("theta1");
    EXPECT_THROW(parse_essvi_document(doc), SchemaError);
    doc = essvi_document(reference_params(), ButterflyRule::gj());
    doc["n"] = 5;
    EXPECT_THROW(parse_essvi_document(doc), SchemaError);
    doc = essvi_document(reference_params(), ButterflyRule::gj());
    doc["cs"][0] = 1.5;
    EXPECT_THROW(parse_essvi_document(doc), SchemaError);
    doc = essvi_document(reference_params(), ButterflyRule::gj());
    doc["rhos"] = "none";
    EXPECT_THROW(parse_essvi_document(doc), SchemaError);
}

TEST(CptDocument, RoundTripReprices) {
    const CPTModel m{HFunction(symmetric_nodes(3, 2.0), {0.8, 1.2, 0.5, 1.0, 0.9, 1.4, 2.0}), TauCurve({0.5, 1.0}, {0.1, 0.25})};
    const CPTModel back = parse_cpt_document(Json::parse(cpt_document(m, 3).dump()));
    for (double K : {80.0, 100.0, 125.0})
        EXPECT_EQ(cpt_price(back, OptionKind::Call, 100.0, K, 0.97, 0.7), cpt_price(m, OptionKind::Call, 100.0, K, 0.97, 0.7));
    Json bad = cpt_document(m, 3);
    bad["taus"] = {0.3, 0.1};
    EXPECT_THROW(parse_cpt_document(bad), SchemaError);
}

TEST(ReportCsv, ErrorInBasisPointsOfForward) {
    EXPECT_DOUBLE_EQ(error_bp(10.5, 10.0, 1000.0), 5.0);
    BasketOption b;
    b.maturity = 1.0;
    b.strike = 1000.0;
    b.market_price = 10.0;
    b.bid = 9.9;
    b.ask = 10.1;
    b.forward = 1000.0;
    std::ostringstream out;
    write_report_csv(out, {b}, {{"essvi", {10.5}}, {"cpt", {10.05}}});
    EXPECT_EQ(out.str(),
              "maturity,strike,kind,forward,market_price,bid,ask,essvi_price,essvi_error_bp,essvi_inside_bid_ask,"
              "cpt_price,cpt_error_bp,cpt_inside_bid_ask\n"
              "1,1000,call,1000,10,9.9,10.1,10.5,5,false,10.05,0.5,true\n");
}

TEST(ResidualCsv, Schema) {
    BasketOption b;
    b.maturity = 0.5;
    b.strike = 95.0;
    b.kind = OptionKind::Put;
    b.market_price = 1.25;
    b.weight = 2.0;
    std::ostringstream out;
    write_residual_csv(out, {b}, {1.2}, {false});
    EXPECT_EQ(out.str(), std::string(kResidualHeader) + "\n0.5,95,put,1.25,1.2,2,false\n");
}

TEST(SmileCsv, ImpliedVolFromTotalVariance) {
    std::ostringstream out;
    write_smile_csv(out, {SSVISlice{0.04, 0.0, 0.0, 1.0}}, {0.0});
    EXPECT_EQ(out.str(), "maturity,k,total_variance,implied_vol\n1,0,0.04,0.2\n");
}

TEST(RunConfig, ParsesKeysAndRejectsUnknown) {
    std::istringstream in("# run\nrule = mm\nweights=ivega2\na_upper=0.1\nrho_bound=0.9\nmax_evals=200\nn_cpt=4\nk_points=11 # grid\n");
    const RunConfig cfg = parse_run_config(in);
    EXPECT_EQ(cfg.calib.rule.kind, ButterflyRule::Kind::MM);
    EXPECT_EQ(cfg.calib.weights, WeightScheme::InverseVegaSquared);
    EXPECT_EQ(cfg.calib.a_upper, 0.1);
    EXPECT_EQ(cfg.calib.max_evals, 200u);
    EXPECT_EQ(cfg.n_cpt, 4u);
    EXPECT_EQ(cfg.k_grid().size(), 11u);
    std::istringstream bad("max_evals=2.5\n");
    EXPECT_THROW(parse_run_config(bad), ParseError);
    std::istringstream unknown("x=1\n");
    EXPECT_THROW(parse_run_config(unknown), ParseError);
    std::istringstream rule("rule=svi\n");
    EXPECT_THROW(parse_run_config(rule), ParseError);
}

TEST(ArbReportJson, CarriesLocations) {
    const PriceGrid g{{GridSlice{0.5, 100.0, 1.0, {90, 100, 110}, {5, 6, 4}}}};
    const Json doc = report_json(detect(g), g);
    EXPECT_GT(doc["violation_count"].get<std::size_t>(), 0u);
    EXPECT_EQ(doc["violations"][0]["maturity"], 0.5);
    EXPECT_TRUE(doc["violations"][0].contains("strike_indices"));
}

TEST(Maturities, MismatchIsASchemaError) {
    EXPECT_NO_THROW(require_same_maturities({0.5, 1.0}, {0.5, 1.0}, "x"));
    EXPECT_THROW(require_same_maturities({0.5, 1.0}, {0.5}, "x"), SchemaError);
    EXPECT_THROW(require_same_maturities({0.5, 1.0}, {0.5, 2.0}, "x"), SchemaError);
}
