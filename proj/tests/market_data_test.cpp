#include <gtest/gtest.h>

#include <sstream>

#include "essvi/market_data.hpp"
#include "essvi/synthetic.hpp"

using namespace essvi;

namespace {

OptionRecord quote(double ts, double bid, double ask, double strike = 100.0) {
    OptionRecord r;
    r.maturity = 0.5;
    r.strike = strike;
    r.timestamp = ts;
    r.bid = bid;
    r.ask = ask;
    r.spot_at_ts = 100.0;
    return r;
}

OptionRecord trade(double ts, double price, double strike = 100.0) {
    OptionRecord r;
    r.maturity = 0.5;
    r.strike = strike;
    r.record_kind = RecordKind::Trade;
    r.timestamp = ts;
    r.trade_price = price;
    r.spot_at_ts = 100.0;
    return r;
}

std::string quotes_csv(const std::string& body) { return std::string(kQuoteHeader) + "\n" + body; }

}  // namespace

TEST(Aggregate, SingleQuoteGivesMid) {
    const auto a = aggregate({quote(10.0, 2.0, 2.2)}, 600.0);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_DOUBLE_EQ(a[0].price, 2.1);
    EXPECT_EQ(a[0].source, RecordKind::Quote);
    EXPECT_EQ(*a[0].bid, 2.0);
    EXPECT_EQ(*a[0].ask, 2.2);
}

TEST(Aggregate, EmptyInput) { EXPECT_TRUE(aggregate({}, 600.0).empty()); }

TEST(Aggregate, RecentTradeBeatsOlderQuote) {
    const auto a = aggregate({quote(0.0, 2.0, 2.2), trade(590.0, 2.15)}, 600.0);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a[0].price, 2.15);
    EXPECT_EQ(a[0].source, RecordKind::Trade);
    EXPECT_TRUE(a[0].has_band());
}

TEST(Aggregate, TradeBeatsNewerQuote) {
    const auto a = aggregate({trade(100.0, 2.3), quote(500.0, 2.0, 2.2)}, 600.0);
    EXPECT_EQ(a[0].price, 2.3);
}

TEST(Aggregate, AllRecordsOlderThanWindow) {
    EXPECT_TRUE(aggregate({quote(0.0, 2.0, 2.2), trade(100.0, 2.1)}, 600.0, 1000.0).empty());
}

TEST(Aggregate, WindowBoundariesAreInclusive) {
    EXPECT_EQ(aggregate({quote(400.0, 2.0, 2.2)}, 600.0, 1000.0).size(), 1u);
    EXPECT_EQ(aggregate({quote(1000.0, 2.0, 2.2)}, 600.0, 1000.0).size(), 1u);
    EXPECT_TRUE(aggregate({quote(1000.5, 2.0, 2.2)}, 600.0, 1000.0).empty());
}

TEST(Aggregate, OneSidedQuotesAreDropped) {
    OptionRecord r = quote(10.0, 2.0, 2.2);
    r.ask.reset();
    EXPECT_TRUE(aggregate({r}, 600.0).empty());
}

TEST(Aggregate, SimultaneousTradesBrokenByQuoteMid) {
    const auto a = aggregate({trade(300.0, 2.5), trade(300.0, 2.12), trade(300.0, 1.9), quote(200.0, 2.0, 2.2)}, 600.0);
    EXPECT_EQ(a[0].price, 2.12);
    // Without a quote the last trade in file order wins.
    const auto b = aggregate({trade(300.0, 2.5), trade(300.0, 2.12), trade(300.0, 1.9)}, 600.0);
    EXPECT_EQ(b[0].price, 1.9);
}

TEST(Aggregate, OneRowPerOption) {
    OptionRecord put = quote(5.0, 1.0, 1.2);
    put.kind = OptionKind::Put;
    const auto a = aggregate({quote(1.0, 2.0, 2.2), quote(5.0, 2.1, 2.3), put, quote(3.0, 1.0, 1.1, 110.0)}, 600.0);
    ASSERT_EQ(a.size(), 3u);
    EXPECT_DOUBLE_EQ(a[0].price, 2.2);
}

TEST(Aggregate, Idempotent) {
    SyntheticSpec spec;
    spec.maturities = {0.25, 1.0};
    spec.jitter = true;
    const MarketSnapshot snap = generate_flat_market(spec, 0.2).snapshot();
    ASSERT_FALSE(snap.aggregated.empty());
    const auto again = aggregate(to_records(snap.aggregated), snap.window, snap.close_time);
    ASSERT_EQ(again.size(), snap.aggregated.size());
    for (std::size_t i = 0; i < again.size(); ++i) {
        EXPECT_EQ(again[i].price, snap.aggregated[i].price);
        EXPECT_EQ(again[i].timestamp, snap.aggregated[i].timestamp);
        EXPECT_EQ(again[i].source, snap.aggregated[i].source);
        EXPECT_EQ(again[i].bid, snap.aggregated[i].bid);
        EXPECT_EQ(again[i].spot_at_ts, snap.aggregated[i].spot_at_ts);
    }
}

TEST(ForwardAt, Examples) {
    const CurvePoint cp{1.0, 100.0, 0.99};
    EXPECT_EQ(forward_at(cp, 50.0, 50.0), 100.0);
    EXPECT_EQ(forward_at(cp, 100.0, 50.0), 200.0);
    EXPECT_NEAR(forward_at({1.0, 1871.67, 1.0}, 0.99, 1.0), 1852.9533, 1e-9);
    EXPECT_THROW(forward_at(cp, 0.0, 50.0), DomainError);
    EXPECT_THROW(forward_at(cp, 50.0, -1.0), DomainError);
}

TEST(ForwardAt, HomogeneousInSpot) {
    const CurvePoint cp{1.0, 1871.67, 1.0};
    for (double lambda : {0.5, 1.7, 3.0}) EXPECT_NEAR(forward_at(cp, 12.0 * lambda, 10.0), lambda * forward_at(cp, 12.0, 10.0), 1e-12);
}

TEST(ParseQuotes, ReadsOptionalFields) {
    std::istringstream in(quotes_csv("0.5,100,call,quote,10,2,2.2,,100\n\n0.5,100,put,trade,20,,,1.5,101\n"));
    const auto recs = parse_quotes_csv(in);
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(*recs[0].bid, 2.0);
    EXPECT_FALSE(recs[0].trade_price);
    EXPECT_EQ(recs[1].kind, OptionKind::Put);
    EXPECT_EQ(recs[1].record_kind, RecordKind::Trade);
    EXPECT_EQ(*recs[1].trade_price, 1.5);
}

TEST(ParseQuotes, AskBelowBidReportsLine) {
    std::istringstream in(quotes_csv("0.5,100,call,quote,10,2,2.2,,100\n0.5,100,call,quote,10,2.5,2.2,,100\n"));
    try {
        parse_quotes_csv(in);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(ParseQuotes, RejectsMalformedRows) {
    for (const char* row : {"0.5,100,call,quote,10,2,2.2,,\n", "0.5,100,cal,quote,10,2,2.2,,100\n",
                            "-0.5,100,call,quote,10,2,2.2,,100\n", "0.5,100,call,trade,10,,,,100\n",
                            "0.5,100,call,quote,10,,,,100\n", "0.5,abc,call,quote,10,2,2.2,,100\n",
                            "0.5,100,call,quote,10,2,2.2,100\n"}) {
        std::istringstream in(quotes_csv(row));
        EXPECT_THROW(parse_quotes_csv(in), ParseError) << row;
    }
    std::istringstream bad_header("maturity,strike\n");
    EXPECT_THROW(parse_quotes_csv(bad_header), ParseError);
}

TEST(ParseCurve, RequiresIncreasingMaturities) {
    std::istringstream ok(std::string(kCurveHeader) + "\n0.5,100,0.99\n1,101,0.98\n");
    EXPECT_EQ(parse_curve_csv(ok).size(), 2u);
    std::istringstream bad(std::string(kCurveHeader) + "\n1,100,0.99\n0.5,101,0.98\n");
    EXPECT_THROW(parse_curve_csv(bad), SchemaError);
    std::istringstream bad_discount(std::string(kCurveHeader) + "\n1,100,1.5\n");
    EXPECT_THROW(parse_curve_csv(bad_discount), ParseError);
}

TEST(ParseMeta, KeysAndComments) {
    std::istringstream in("# snapshot\nclose_spot = 100.5\nclose_time=3600 # end\n\nwindow=300\n");
    const SnapshotMeta m = parse_meta(in);
    EXPECT_EQ(m.close_spot, 100.5);
    EXPECT_EQ(*m.close_time, 3600.0);
    EXPECT_EQ(m.window, 300.0);
    std::istringstream missing("window=300\n");
    EXPECT_THROW(parse_meta(missing), SchemaError);
    std::istringstream unknown("close_spot=1\nfoo=2\n");
    EXPECT_THROW(parse_meta(unknown), ParseError);
}

TEST(Snapshot, NoiseFilterDropsNegativeTimeValue) {
    SnapshotMeta meta;
    meta.close_spot = 100.0;
    const std::vector<CurvePoint> curve{{0.5, 100.0, 0.99}};
    // Deep in-the-money call priced below discounted intrinsic.
    const MarketSnapshot snap = build_snapshot(meta, curve, {quote(10.0, 18.0, 19.0, 80.0), quote(10.0, 2.0, 2.2)});
    EXPECT_EQ(snap.filtered_out, 1u);
    ASSERT_EQ(snap.aggregated.size(), 1u);
    EXPECT_EQ(snap.aggregated[0].strike, 100.0);
}

TEST(Snapshot, UnknownMaturityIsASchemaError) {
    SnapshotMeta meta;
    meta.close_spot = 100.0;
    EXPECT_THROW(build_snapshot(meta, {{1.0, 100.0, 0.99}}, {quote(10.0, 2.0, 2.2)}), SchemaError);
}

TEST(Snapshot, CloseTimeDefaultsToLatestRecord) {
    SnapshotMeta meta;
    meta.close_spot = 100.0;
    const MarketSnapshot snap = build_snapshot(meta, {{0.5, 100.0, 0.99}}, {quote(10.0, 2.0, 2.2), quote(900.0, 2.1, 2.3)});
    EXPECT_EQ(snap.close_time, 900.0);
    EXPECT_DOUBLE_EQ(snap.aggregated[0].price, 2.2);
}

TEST(Serialization, ParseSerializeRoundTripIsExact) {
    SyntheticSpec spec;
    spec.maturities = {0.25, 1.0};
    spec.jitter = true;
    const MarketSnapshot snap = generate_flat_market(spec, 0.2).snapshot();
    const std::string text = serialize_aggregated(snap);
    std::istringstream in(text);
    SnapshotMeta meta{snap.close_spot, snap.close_time, snap.window};
    const MarketSnapshot again = build_snapshot(meta, snap.curve, parse_quotes_csv(in));
    EXPECT_EQ(serialize_aggregated(again), text);
}

TEST(Serialization, WritersRoundTrip) {
    SyntheticSpec spec;
    spec.maturities = {0.25, 1.0};
    const SyntheticMarket m = generate_flat_market(spec, 0.2);
    std::ostringstream q, c, meta;
    write_quotes_csv(q, m.records);
    write_curve_csv(c, m.curve);
    write_meta(meta, m.meta);
    std::istringstream qi(q.str()), ci(c.str()), mi(meta.str());
    const auto recs = parse_quotes_csv(qi);
    ASSERT_EQ(recs.size(), m.records.size());
    EXPECT_EQ(parse_curve_csv(ci).size(), 2u);
    EXPECT_EQ(*parse_meta(mi).close_time, spec.close_time);
}

TEST(Files, MissingFileNamesThePath) {
    try {
        parse_quote_file("/nonexistent/quotes.csv", "/nonexistent/curve.csv", "/nonexistent/meta.cfg");
        FAIL() << "expected an io error";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/quotes.csv"), std::string::npos);
    }
}
