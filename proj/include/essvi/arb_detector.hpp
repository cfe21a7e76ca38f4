#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "essvi/error.hpp"
#include "essvi/market_data.hpp"

namespace essvi {

/// Call prices on a strike grid for one maturity.
struct GridSlice {
    double maturity = 0.0;
    double forward = 0.0;
    double discount = 1.0;
    std::vector<double> strikes;
    std::vector<double> calls;
};

struct PriceGrid {
    std::vector<GridSlice> slices;

    void validate() const {
        for (std::size_t i = 0; i < slices.size(); ++i) {
            const GridSlice& s = slices[i];
            if (!(s.maturity > 0.0)) throw SchemaError("grid maturity must be positive");
            if (i > 0 && !(s.maturity > slices[i - 1].maturity)) throw SchemaError("grid maturities must increase");
            if (!(s.forward > 0.0) || !std::isfinite(s.forward)) throw SchemaError("grid forward must be positive");
            if (!(s.discount > 0.0 && s.discount <= 1.0)) throw SchemaError("grid discount must lie in (0, 1]");
            if (s.strikes.size() != s.calls.size()) throw SchemaError("grid strikes and prices differ in length");
            if (s.strikes.empty()) throw SchemaError("grid maturity without strikes");
            for (std::size_t j = 0; j < s.strikes.size(); ++j) {
                if (!(s.strikes[j] > 0.0) || !std::isfinite(s.strikes[j])) throw SchemaError("grid strike must be positive");
                if (j > 0 && !(s.strikes[j] > s.strikes[j - 1])) throw SchemaError("grid strikes must increase");
                if (!std::isfinite(s.calls[j])) throw SchemaError("grid price must be finite");
            }
        }
    }
};

enum class ViolationKind {
    Positivity,
    VerticalSpread,
    VerticalButterfly,
    CalendarSpread,
    CalendarVerticalSpread,
    CalendarButterfly,
};

inline std::string_view to_string(ViolationKind k) {
    switch (k) {
        case ViolationKind::Positivity: return "Positivity";
        case ViolationKind::VerticalSpread: return "VerticalSpread";
        case ViolationKind::VerticalButterfly: return "VerticalButterfly";
        case ViolationKind::CalendarSpread: return "CalendarSpread";
        case ViolationKind::CalendarVerticalSpread: return "CalendarVerticalSpread";
        case ViolationKind::CalendarButterfly: return "CalendarButterfly";
    }
    return "?";
}

/// Strike index -1 stands for the zero-strike anchor C(0) = D*F.
inline constexpr int kAnchor = -1;

struct Violation {
    ViolationKind kind = ViolationKind::Positivity;
    std::size_t maturity = 0;
    std::vector<int> strikes;
    std::optional<std::size_t> other_maturity;
    std::vector<int> other_strikes;
    double magnitude = 0.0;  ///< shortfall in currency
    bool interpolated = false;
};

struct ArbReport {
    std::vector<Violation> violations;

    bool empty() const { return violations.empty(); }
    std::size_t count(ViolationKind k) const {
        return static_cast<std::size_t>(
            std::count_if(violations.begin(), violations.end(), [&](const Violation& v) { return v.kind == k; }));
    }
};

namespace detail {

/// Normalised coordinates: m = K/F, c = C/(D F), with the anchor (0, 1) prepended.
struct NormalisedSlice {
    std::vector<double> m;
    std::vector<double> c;
    double scale = 1.0;  ///< D*F
    double tol = 0.0;    ///< tolerance in normalised units

    double at(int idx) const { return idx == kAnchor ? 1.0 : c[static_cast<std::size_t>(idx)]; }
    double m_at(int idx) const { return idx == kAnchor ? 0.0 : m[static_cast<std::size_t>(idx)]; }
};

inline NormalisedSlice normalise(const GridSlice& s, double tol) {
    NormalisedSlice n;
    n.scale = s.discount * s.forward;
    n.tol = tol / n.scale;
    for (std::size_t j = 0; j < s.strikes.size(); ++j) {
        n.m.push_back(s.strikes[j] / s.forward);
        n.c.push_back(s.calls[j] / n.scale);
    }
    return n;
}

inline void single_maturity(const NormalisedSlice& n, std::size_t mi, std::vector<Violation>& out) {
    const int size = static_cast<int>(n.c.size());
    auto flag = [&](ViolationKind kind, std::vector<int> strikes, double shortfall) {
        Violation v;
        v.kind = kind;
        v.maturity = mi;
        v.strikes = std::move(strikes);
        v.magnitude = shortfall * n.scale;
        out.push_back(std::move(v));
    };
    for (int j = 0; j < size; ++j)
        if (n.at(j) < -n.tol) flag(ViolationKind::Positivity, {j}, -n.at(j));
    for (int j = kAnchor; j + 1 < size; ++j) {
        const double drop = n.at(j) - n.at(j + 1);
        const double width = n.m_at(j + 1) - n.m_at(j);
        if (drop < -n.tol) flag(ViolationKind::VerticalSpread, {j, j + 1}, -drop);
        else if (drop > width + n.tol) flag(ViolationKind::VerticalSpread, {j, j + 1}, drop - width);
    }
    for (int j = kAnchor; j + 2 < size; ++j) {
        const double lambda = (n.m_at(j + 2) - n.m_at(j + 1)) / (n.m_at(j + 2) - n.m_at(j));
        const double gap = lambda * n.at(j) + (1.0 - lambda) * n.at(j + 2) - n.at(j + 1);
        if (gap < -n.tol) flag(ViolationKind::VerticalButterfly, {j, j + 1, j + 2}, -gap);
    }
}

inline bool same_moneyness(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(a, b); }

/// Shorter maturity i against longer maturity j: c_j(m) >= c_i(m) at every node of i, with
/// c_j bounded above by its chord between bracketing nodes (convexity) or by its last node
/// beyond the grid (monotonicity).
inline void calendar_pair(const NormalisedSlice& s, std::size_t i, const NormalisedSlice& l, std::size_t j,
                          std::vector<Violation>& out) {
    const int size = static_cast<int>(l.m.size());
    for (int p = 0; p < static_cast<int>(s.m.size()); ++p) {
        const double m = s.m_at(p);
        const double mine = s.at(p);
        Violation v;
        v.maturity = i;
        v.strikes = {p};
        v.other_maturity = j;
        double bound = 0.0;
        const auto hi = std::lower_bound(l.m.begin(), l.m.end(), m);
        const int q = static_cast<int>(hi - l.m.begin());
        if (q < size && same_moneyness(l.m_at(q), m)) {
            v.kind = ViolationKind::CalendarSpread;
            v.other_strikes = {q};
            bound = l.at(q);
        } else if (q > 0 && same_moneyness(l.m_at(q - 1), m)) {
            v.kind = ViolationKind::CalendarSpread;
            v.other_strikes = {q - 1};
            bound = l.at(q - 1);
        } else if (q < size) {
            const int lo = q - 1;
            const double lambda = (l.m_at(q) - m) / (l.m_at(q) - l.m_at(lo));
            v.kind = ViolationKind::CalendarButterfly;
            v.other_strikes = {lo, q};
            v.interpolated = true;
            bound = lambda * l.at(lo) + (1.0 - lambda) * l.at(q);
        } else {
            v.kind = ViolationKind::CalendarVerticalSpread;
            v.other_strikes = {size - 1};
            bound = l.at(size - 1);
        }
        const double tol = std::max(s.tol, l.tol);
        if (bound - mine < -tol) {
            v.magnitude = (mine - bound) * s.scale;
            out.push_back(std::move(v));
        }
    }
}

}  // namespace detail

/// Default tolerance: 1e-8 times each maturity's forward.
inline ArbReport detect(const PriceGrid& grid, std::optional<double> tol = std::nullopt) {
    grid.validate();
    if (tol && !(*tol >= 0.0)) throw DomainError("tolerance must be non-negative");
    std::vector<detail::NormalisedSlice> norm;
    for (const auto& s : grid.slices) norm.push_back(detail::normalise(s, tol.value_or(1e-8 * s.forward)));

    ArbReport report;
    for (std::size_t i = 0; i < norm.size(); ++i) {
        detail::single_maturity(norm[i], i, report.violations);
        for (std::size_t j = i + 1; j < norm.size(); ++j) detail::calendar_pair(norm[i], i, norm[j], j, report.violations);
    }
    std::stable_sort(report.violations.begin(), report.violations.end(), [](const Violation& a, const Violation& b) {
        if (a.maturity != b.maturity) return a.maturity < b.maturity;
        return a.strikes.front() < b.strikes.front();
    });
    return report;
}

/// Grid over log-moneyness k = log(K/F) for each maturity.
using CallPriceFn = std::function<double(std::size_t slice, double forward, double strike, double discount)>;

inline PriceGrid make_grid(const std::vector<CurvePoint>& curve, const std::vector<double>& ks, const CallPriceFn& price) {
    PriceGrid g;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        GridSlice s{curve[i].maturity, curve[i].forward_close, curve[i].discount_close, {}, {}};
        for (double k : ks) {
            const double K = s.forward * std::exp(k);
            s.strikes.push_back(K);
            s.calls.push_back(price(i, s.forward, K, s.discount));
        }
        g.slices.push_back(std::move(s));
    }
    return g;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    if (n < 2 || !(hi > lo)) throw DomainError("linspace needs n >= 2 and hi > lo");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return out;
}

inline constexpr std::string_view kGridHeader = "maturity,strike,call_price,forward,discount";

inline PriceGrid parse_grid_csv(std::istream& in) {
    PriceGrid g;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("price grid is empty");
    detail::expect_header(line, kGridHeader);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::blank(line)) continue;
        const auto f = detail::split_commas(line);
        if (f.size() != 5) throw ParseError("expected 5 fields, got " + std::to_string(f.size()), lineno);
        const double T = detail::parse_number(f[0], "maturity", lineno);
        const double K = detail::parse_number(f[1], "strike", lineno);
        const double C = detail::parse_number(f[2], "call_price", lineno);
        const double F = detail::parse_number(f[3], "forward", lineno);
        const double D = detail::parse_number(f[4], "discount", lineno);
        if (g.slices.empty() || g.slices.back().maturity != T) {
            g.slices.push_back({T, F, D, {}, {}});
        } else if (g.slices.back().forward != F || g.slices.back().discount != D) {
            throw ParseError("forward/discount differ within maturity", lineno);
        }
        g.slices.back().strikes.push_back(K);
        g.slices.back().calls.push_back(C);
    }
    g.validate();
    return g;
}

inline void write_grid_csv(std::ostream& out, const PriceGrid& g) {
    using detail::format_number;
    out << kGridHeader << '\n';
    for (const auto& s : g.slices)
        for (std::size_t j = 0; j < s.strikes.size(); ++j)
            out << format_number(s.maturity) << ',' << format_number(s.strikes[j]) << ',' << format_number(s.calls[j])
                << ',' << format_number(s.forward) << ',' << format_number(s.discount) << '\n';
}

inline void write_report_text(std::ostream& out, const ArbReport& r, const PriceGrid& g) {
    using detail::format_number;
    if (r.empty()) {
        out << "no arbitrage detected\n";
        return;
    }
    auto strikes = [](const GridSlice& s, const std::vector<int>& idx) {
        std::string text;
        for (int j : idx) {
            if (!text.empty()) text += ' ';
            text += j == kAnchor ? std::string("0") : format_number(s.strikes[static_cast<std::size_t>(j)]);
        }
        return text;
    };
    for (const auto& v : r.violations) {
        const GridSlice& s = g.slices[v.maturity];
        out << to_string(v.kind) << " T=" << format_number(s.maturity) << " K=[" << strikes(s, v.strikes) << ']';
        if (v.other_maturity) {
            const GridSlice& o = g.slices[*v.other_maturity];
            out << " vs T=" << format_number(o.maturity) << " K=[" << strikes(o, v.other_strikes) << ']';
        }
        out << " magnitude=" << format_number(v.magnitude);
        if (v.interpolated) out << " interpolated";
        out << '\n';
    }
}

}  // namespace essvi
