#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "essvi/error.hpp"
#include "essvi/pricing.hpp"

namespace essvi {

inline constexpr double kSecondsPerYear = 365.0 * 24.0 * 3600.0;
inline constexpr double kDefaultWindow = 600.0;

enum class RecordKind { Trade, Quote };

inline std::string_view to_string(RecordKind kind) { return kind == RecordKind::Trade ? "trade" : "quote"; }

struct OptionRecord {
    double maturity = 0.0;
    double strike = 0.0;
    OptionKind kind = OptionKind::Call;
    RecordKind record_kind = RecordKind::Quote;
    double timestamp = 0.0;
    std::optional<double> bid;
    std::optional<double> ask;
    std::optional<double> trade_price;
    double spot_at_ts = 0.0;

    bool two_sided() const { return bid && ask; }
    double mid() const { return 0.5 * (*bid + *ask); }

    /// Price the record stands for, or nullopt for a one-sided quote.
    std::optional<double> price() const {
        if (record_kind == RecordKind::Trade) return trade_price;
        if (two_sided()) return mid();
        return std::nullopt;
    }
};

struct CurvePoint {
    double maturity = 0.0;
    double forward_close = 0.0;
    double discount_close = 1.0;
};

/// One synthetic market price per (maturity, strike, kind).
struct AggregatedOption {
    double maturity = 0.0;
    double strike = 0.0;
    OptionKind kind = OptionKind::Call;
    RecordKind source = RecordKind::Quote;
    double timestamp = 0.0;
    double price = 0.0;
    std::optional<double> bid;
    std::optional<double> ask;
    double spot_at_ts = 0.0;

    bool has_band() const { return bid && ask; }
};

struct SnapshotMeta {
    double close_spot = 0.0;
    std::optional<double> close_time;
    double window = kDefaultWindow;
};

inline double forward_at(const CurvePoint& point, double spot_at_ts, double close_spot) {
    if (!(point.forward_close > 0.0) || !(spot_at_ts > 0.0) || !(close_spot > 0.0))
        throw DomainError("forward_at needs positive forward, spot and close spot");
    return point.forward_close * spot_at_ts / close_spot;
}

inline double time_to_maturity(double maturity, double timestamp) { return maturity - timestamp / kSecondsPerYear; }

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) return out;
        start = pos + 1;
    }
}

inline double parse_number(std::string_view field, std::string_view name, std::size_t line) {
    double value = 0.0;
    const char* end = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value))
        throw ParseError("field '" + std::string(name) + "' is not a number: '" + std::string(field) + "'", line);
    return value;
}

inline std::optional<double> parse_optional(std::string_view field, std::string_view name, std::size_t line) {
    if (field.empty()) return std::nullopt;
    return parse_number(field, name, line);
}

inline void expect_header(std::string_view got, std::string_view want) {
    if (trim(got) != want) throw ParseError("expected header '" + std::string(want) + "'", 1);
}

inline bool blank(std::string_view line) { return trim(line).empty(); }

}  // namespace detail

inline constexpr std::string_view kQuoteHeader = "maturity,strike,kind,record_kind,timestamp,bid,ask,trade_price,spot_at_ts";
inline constexpr std::string_view kCurveHeader = "maturity,forward_close,discount_close";

inline std::vector<OptionRecord> parse_quotes_csv(std::istream& in) {
    std::vector<OptionRecord> out;
    std::string line;
    if (!std::getline(in, line)) return out;
    detail::expect_header(line, kQuoteHeader);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        const auto f = detail::split_commas(line);
        if (f.size() != 9) throw ParseError("expected 9 fields, got " + std::to_string(f.size()), lineno);
        OptionRecord r;
        r.maturity = detail::parse_number(f[0], "maturity", lineno);
        r.strike = detail::parse_number(f[1], "strike", lineno);
        if (f[2] == "call") r.kind = OptionKind::Call;
        else if (f[2] == "put") r.kind = OptionKind::Put;
        else throw ParseError("kind must be call or put", lineno);
        if (f[3] == "trade") r.record_kind = RecordKind::Trade;
        else if (f[3] == "quote") r.record_kind = RecordKind::Quote;
        else throw ParseError("record_kind must be trade or quote", lineno);
        r.timestamp = detail::parse_number(f[4], "timestamp", lineno);
        r.bid = detail::parse_optional(f[5], "bid", lineno);
        r.ask = detail::parse_optional(f[6], "ask", lineno);
        r.trade_price = detail::parse_optional(f[7], "trade_price", lineno);
        r.spot_at_ts = detail::parse_number(f[8], "spot_at_ts", lineno);

        if (!(r.maturity > 0.0)) throw ParseError("maturity must be positive", lineno);
        if (!(r.strike > 0.0)) throw ParseError("strike must be positive", lineno);
        if (r.timestamp < 0.0) throw ParseError("timestamp must be non-negative", lineno);
        if (!(r.spot_at_ts > 0.0)) throw ParseError("spot_at_ts must be positive", lineno);
        if ((r.bid && *r.bid < 0.0) || (r.ask && *r.ask < 0.0)) throw ParseError("bid/ask must be non-negative", lineno);
        if (r.bid && r.ask && *r.ask < *r.bid) throw ParseError("ask below bid", lineno);
        if (r.trade_price && !(*r.trade_price > 0.0)) throw ParseError("trade_price must be positive", lineno);
        if (r.record_kind == RecordKind::Trade && !r.trade_price) throw ParseError("trade row without trade_price", lineno);
        if (r.record_kind == RecordKind::Quote && !r.bid && !r.ask) throw ParseError("quote row without bid or ask", lineno);
        out.push_back(r);
    }
    return out;
}

inline std::vector<CurvePoint> parse_curve_csv(std::istream& in) {
    std::vector<CurvePoint> out;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("curve file is empty");
    detail::expect_header(line, kCurveHeader);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        const auto f = detail::split_commas(line);
        if (f.size() != 3) throw ParseError("expected 3 fields, got " + std::to_string(f.size()), lineno);
        CurvePoint p{detail::parse_number(f[0], "maturity", lineno), detail::parse_number(f[1], "forward_close", lineno),
                     detail::parse_number(f[2], "discount_close", lineno)};
        if (!(p.maturity > 0.0)) throw ParseError("maturity must be positive", lineno);
        if (!(p.forward_close > 0.0)) throw ParseError("forward_close must be positive", lineno);
        if (!(p.discount_close > 0.0 && p.discount_close <= 1.0)) throw ParseError("discount_close must lie in (0, 1]", lineno);
        if (!out.empty() && !(p.maturity > out.back().maturity))
            throw SchemaError("curve maturities not strictly increasing at line " + std::to_string(lineno));
        out.push_back(p);
    }
    return out;
}

/// key=value lines; '#' starts a comment. Keys: close_spot (required), close_time, window.
inline SnapshotMeta parse_meta(std::istream& in) {
    SnapshotMeta meta;
    bool have_spot = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view v = line;
        if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
        if (detail::blank(v)) continue;
        const auto eq = v.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected key=value", lineno);
        const auto key = detail::trim(v.substr(0, eq));
        const auto val = detail::trim(v.substr(eq + 1));
        if (key == "close_spot") {
            meta.close_spot = detail::parse_number(val, key, lineno);
            have_spot = true;
        } else if (key == "close_time") {
            meta.close_time = detail::parse_number(val, key, lineno);
        } else if (key == "window") {
            meta.window = detail::parse_number(val, key, lineno);
        } else {
            throw ParseError("unknown key '" + std::string(key) + "'", lineno);
        }
    }
    if (!have_spot) throw SchemaError("metadata is missing close_spot");
    if (!(meta.close_spot > 0.0)) throw SchemaError("close_spot must be positive");
    if (!(meta.window > 0.0)) throw SchemaError("window must be positive");
    return meta;
}

/// Trailing-window aggregation to one synthetic price per (maturity, strike, kind).
///
/// Within [close_time - window, close_time] the latest trade wins; several trades at
/// that timestamp are resolved by distance to the latest two-sided quote mid, then by
/// file order (last wins). Without a trade the latest two-sided quote mid is used.
/// One-sided quotes carry no price. The bid/ask band is the latest two-sided quote.
/// close_time defaults to the largest timestamp present.
inline std::vector<AggregatedOption> aggregate(const std::vector<OptionRecord>& records, double window,
                                               std::optional<double> close_time = std::nullopt) {
    if (!(window > 0.0)) throw DomainError("aggregation window must be positive");
    if (records.empty()) return {};
    double end = 0.0;
    if (close_time) {
        end = *close_time;
    } else {
        for (const auto& r : records) end = std::max(end, r.timestamp);
    }
    const double start = end - window;

    using Key = std::tuple<double, double, int>;
    std::map<Key, std::vector<const OptionRecord*>> groups;
    for (const auto& r : records) {
        if (r.timestamp < start || r.timestamp > end) continue;
        groups[{r.maturity, r.strike, r.kind == OptionKind::Call ? 0 : 1}].push_back(&r);
    }

    std::vector<AggregatedOption> out;
    for (const auto& [key, recs] : groups) {
        const OptionRecord* quote = nullptr;
        const OptionRecord* trade = nullptr;
        for (const OptionRecord* r : recs) {
            if (r->record_kind == RecordKind::Quote && r->two_sided() && (!quote || r->timestamp >= quote->timestamp))
                quote = r;
            if (r->record_kind == RecordKind::Trade && (!trade || r->timestamp > trade->timestamp)) trade = r;
        }
        if (trade) {
            for (const OptionRecord* r : recs) {
                if (r->record_kind != RecordKind::Trade || r->timestamp != trade->timestamp) continue;
                if (quote) {
                    const double mid = quote->mid();
                    if (std::abs(*r->trade_price - mid) <= std::abs(*trade->trade_price - mid)) trade = r;
                } else {
                    trade = r;
                }
            }
        }
        const OptionRecord* chosen = trade ? trade : quote;
        if (!chosen) continue;
        AggregatedOption a;
        a.maturity = chosen->maturity;
        a.strike = chosen->strike;
        a.kind = chosen->kind;
        a.source = chosen->record_kind;
        a.timestamp = chosen->timestamp;
        a.price = *chosen->price();
        a.spot_at_ts = chosen->spot_at_ts;
        if (quote) {
            a.bid = quote->bid;
            a.ask = quote->ask;
        }
        out.push_back(a);
    }
    return out;
}

/// Records that aggregate back to exactly the given table.
inline std::vector<OptionRecord> to_records(const std::vector<AggregatedOption>& table) {
    std::vector<OptionRecord> out;
    for (const auto& a : table) {
        OptionRecord r;
        r.maturity = a.maturity;
        r.strike = a.strike;
        r.kind = a.kind;
        r.timestamp = a.timestamp;
        r.spot_at_ts = a.spot_at_ts;
        if (a.source == RecordKind::Trade) {
            if (a.has_band()) {
                OptionRecord q = r;
                q.record_kind = RecordKind::Quote;
                q.bid = a.bid;
                q.ask = a.ask;
                out.push_back(q);
            }
            r.record_kind = RecordKind::Trade;
            r.trade_price = a.price;
        } else {
            r.record_kind = RecordKind::Quote;
            r.bid = a.bid;
            r.ask = a.ask;
        }
        out.push_back(r);
    }
    return out;
}

struct MarketSnapshot {
    double close_spot = 0.0;
    double close_time = 0.0;
    double window = kDefaultWindow;
    std::vector<CurvePoint> curve;
    std::vector<OptionRecord> records;     ///< after the noise filter, file order
    std::vector<AggregatedOption> aggregated;
    std::size_t filtered_out = 0;

    const CurvePoint& curve_point(double maturity) const {
        for (const auto& p : curve)
            if (p.maturity == maturity) return p;
        throw SchemaError("maturity " + std::to_string(maturity) + " not on the curve");
    }

    double forward(const AggregatedOption& a) const { return forward_at(curve_point(a.maturity), a.spot_at_ts, close_spot); }

    /// Distinct maturities of the aggregated table, increasing.
    std::vector<double> maturities() const {
        std::vector<double> out;
        for (const auto& a : aggregated)
            if (out.empty() || out.back() != a.maturity) out.push_back(a.maturity);
        return out;
    }
};

/// True when the record's price is below the discounted intrinsic value at its forward.
inline bool negative_time_value(const OptionRecord& r, const CurvePoint& point, double close_spot) {
    const auto price = r.price();
    if (!price) return false;
    const double f = forward_at(point, r.spot_at_ts, close_spot);
    const double intrinsic = std::max(r.kind == OptionKind::Call ? f - r.strike : r.strike - f, 0.0);
    return *price < point.discount_close * intrinsic || !(*price > 0.0);
}

inline MarketSnapshot build_snapshot(const SnapshotMeta& meta, std::vector<CurvePoint> curve,
                                     const std::vector<OptionRecord>& records) {
    if (!(meta.close_spot > 0.0)) throw SchemaError("close_spot must be positive");
    for (std::size_t i = 1; i < curve.size(); ++i)
        if (!(curve[i].maturity > curve[i - 1].maturity)) throw SchemaError("curve maturities not strictly increasing");
    MarketSnapshot snap;
    snap.close_spot = meta.close_spot;
    snap.window = meta.window;
    snap.curve = std::move(curve);
    double latest = 0.0;
    for (const auto& r : records) latest = std::max(latest, r.timestamp);
    snap.close_time = meta.close_time.value_or(latest);
    for (const auto& r : records) {
        const CurvePoint& point = snap.curve_point(r.maturity);
        if (negative_time_value(r, point, snap.close_spot)) {
            ++snap.filtered_out;
            continue;
        }
        snap.records.push_back(r);
    }
    std::stable_sort(snap.records.begin(), snap.records.end(),
                     [](const OptionRecord& a, const OptionRecord& b) { return a.maturity < b.maturity; });
    snap.aggregated = aggregate(snap.records, snap.window, snap.close_time);
    return snap;
}

namespace detail {

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    return in;
}

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

}  // namespace detail

inline MarketSnapshot parse_quote_file(const std::string& quotes_path, const std::string& curve_path,
                                       const std::string& meta_path) {
    auto qin = detail::open_input(quotes_path);
    auto cin = detail::open_input(curve_path);
    auto min = detail::open_input(meta_path);
    auto curve = parse_curve_csv(cin);
    const auto records = parse_quotes_csv(qin);
    return build_snapshot(parse_meta(min), std::move(curve), records);
}

inline void write_quotes_csv(std::ostream& out, const std::vector<OptionRecord>& records) {
    using detail::format_number;
    using detail::format_optional;
    out << kQuoteHeader << '\n';
    for (const auto& r : records) {
        out << format_number(r.maturity) << ',' << format_number(r.strike) << ',' << to_string(r.kind) << ','
            << to_string(r.record_kind) << ',' << format_number(r.timestamp) << ',' << format_optional(r.bid) << ','
            << format_optional(r.ask) << ',' << format_optional(r.trade_price) << ',' << format_number(r.spot_at_ts)
            << '\n';
    }
}

inline void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
    using detail::format_number;
    out << kCurveHeader << '\n';
    for (const auto& p : curve)
        out << format_number(p.maturity) << ',' << format_number(p.forward_close) << ','
            << format_number(p.discount_close) << '\n';
}

inline void write_meta(std::ostream& out, const SnapshotMeta& meta) {
    using detail::format_number;
    out << "close_spot=" << format_number(meta.close_spot) << '\n';
    if (meta.close_time) out << "close_time=" << format_number(*meta.close_time) << '\n';
    out << "window=" << format_number(meta.window) << '\n';
}

/// Aggregated table in the quote CSV schema.
inline std::string serialize_aggregated(const MarketSnapshot& snap) {
    std::ostringstream out;
    write_quotes_csv(out, to_records(snap.aggregated));
    return out.str();
}

}  // namespace essvi
