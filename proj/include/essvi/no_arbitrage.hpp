#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "essvi/error.hpp"
#include "essvi/pricing.hpp"

namespace essvi {

/// Relative allowance on the inclusive (<=, >=) inequalities. Values produced by one
/// floating-point route and re-checked through another may differ in the last bits;
/// strict inequalities carry no allowance.
inline constexpr double kInclusiveSlack = 1e-12;

/// Choice of butterfly bound: the explicit Gatheral-Jacquier sufficient cap or the
/// Martini-Mingone necessary-and-sufficient cap (an infimum evaluated numerically).
struct ButterflyRule {
    enum class Kind { GJ, MM };

    Kind kind = Kind::GJ;
    std::size_t mm_grid_size = 1024;
    double mm_refine_tol = 1e-10;

    static ButterflyRule gj() { return {}; }
    static ButterflyRule mm() { return {Kind::MM, 1024, 1e-10}; }

    void validate() const {
        if (mm_grid_size < 64) throw DomainError("mm_grid_size must be at least 64");
        if (!(mm_refine_tol > 0.0 && mm_refine_tol <= 1e-6))
            throw DomainError("mm_refine_tol must lie in (0, 1e-6]");
    }
};

inline std::string_view to_string(ButterflyRule::Kind kind) {
    return kind == ButterflyRule::Kind::GJ ? "gj" : "mm";
}

inline ButterflyRule::Kind parse_rule_kind(std::string_view text) {
    if (text == "gj" || text == "GJ") return ButterflyRule::Kind::GJ;
    if (text == "mm" || text == "MM") return ButterflyRule::Kind::MM;
    throw DomainError("unknown butterfly rule '" + std::string(text) + "' (expected gj or mm)");
}

/// Raw SVI parameters of an SSVI slice: w(k) = a + b (rho (k - m) + sqrt((k - m)^2 + sigma^2)).
struct SVIParams {
    double a = 0.0;
    double b = 0.0;
    double rho = 0.0;
    double m = 0.0;
    double sigma = 0.0;
};

inline SVIParams to_svi(const SSVISlice& s) {
    const double root = std::sqrt(1.0 - s.rho * s.rho);
    return {s.theta * (1.0 - s.rho * s.rho) / 2.0, s.psi / 2.0, s.rho, -s.theta * s.rho / s.psi,
            s.theta * root / s.psi};
}

inline double svi_total_variance(const SVIParams& p, double k) {
    const double x = k - p.m;
    return p.a + p.b * (p.rho * x + std::sqrt(x * x + p.sigma * p.sigma));
}

/// Lee-moment cap combined with the GJ sufficient bound psi^2 <= 4 theta / (1 + |rho|).
inline double gj_psi_cap(double theta, double abs_rho) {
    if (!(theta > 0.0)) throw DomainError("gj_psi_cap needs theta > 0");
    const double lee = 4.0 / (1.0 + abs_rho);
    return std::min(lee, std::sqrt(4.0 * theta / (1.0 + abs_rho)));
}

/// Lower end l2(|rho|) = cot(arccos(-|rho|) / 3) of the half-line scanned by the MM infimum.
inline double l2_threshold(double abs_rho) {
    if (!(abs_rho >= 0.0 && abs_rho < 1.0)) throw DomainError("l2_threshold needs |rho| in [0, 1)");
    return 1.0 / std::tan(std::acos(-abs_rho) / 3.0);
}

/// N(l) and the derived quantities g, h, g2 of the MM condition, all at fixed |rho|.
struct MMTerms {
    double n = 0.0;
    double dn = 0.0;
    double d2n = 0.0;
    double g = 0.0;
    double h = 0.0;
    double g2 = 0.0;
};

inline MMTerms mm_terms(double l, double abs_rho) {
    const double root = std::sqrt(1.0 - abs_rho * abs_rho);
    const double q = std::sqrt(l * l + 1.0);
    MMTerms t;
    t.n = root + abs_rho * l + q;
    t.dn = abs_rho + l / q;
    t.d2n = 1.0 / (q * q * q);
    t.g = t.dn / 4.0;
    t.h = 1.0 - (l - abs_rho / root) * t.dn / (2.0 * t.n);
    t.g2 = t.d2n - t.dn * t.dn / (2.0 * t.n);
    return t;
}

/// The expression under the MM infimum, 4 theta r h^2 / (theta r g^2 - g2), r = sqrt(1 - rho^2).
inline double mm_bound_at(double l, double theta, double abs_rho) {
    const double root = std::sqrt(1.0 - abs_rho * abs_rho);
    const MMTerms t = mm_terms(l, abs_rho);
    const double denom = theta * root * t.g * t.g - t.g2;
    if (!(denom > 0.0)) {
        std::ostringstream msg;
        msg << "MM denominator not positive at l=" << l << " theta=" << theta << " |rho|=" << abs_rho;
        throw std::logic_error(msg.str());
    }
    return 4.0 * theta * root * t.h * t.h / denom;
}

/// MM butterfly cap min(4/(1+|rho|), sqrt(inf_{l > l2} bound(l))).
///
/// The half-line is compactified with l = l2 + u / (1 - u); the infimum is located on
/// a uniform midpoint grid in u and then refined by golden-section search between the
/// neighbours of the best grid point.
inline double mm_psi_cap(double theta, double abs_rho, const ButterflyRule& rule = ButterflyRule::mm()) {
    if (!(theta > 0.0)) throw DomainError("mm_psi_cap needs theta > 0");
    if (!(abs_rho >= 0.0 && abs_rho < 1.0)) throw DomainError("mm_psi_cap needs |rho| in [0, 1)");
    const double l2 = l2_threshold(abs_rho);
    const std::size_t n = rule.mm_grid_size;
    auto at_u = [&](double u) { return mm_bound_at(l2 + u / (1.0 - u), theta, abs_rho); };

    std::size_t best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        const double l = l2 + u / (1.0 - u);
        if (!(mm_terms(l, abs_rho).g2 < 0.0))
            throw std::logic_error("MM scan reached l with g2 >= 0");
        const double v = at_u(u);
        if (v < best_value) {
            best_value = v;
            best = i;
        }
    }

    const double step = 1.0 / static_cast<double>(n);
    const double centre = (static_cast<double>(best) + 0.5) * step;
    double lo = std::max(centre - step, 0.25 * step);
    double hi = std::min(centre + step, 1.0 - 0.25 * step);
    constexpr double inv_phi = 0.6180339887498949;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = at_u(x1);
    double f2 = at_u(x2);
    while (hi - lo > rule.mm_refine_tol) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = at_u(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = at_u(x2);
        }
    }
    const double infimum = std::min({best_value, f1, f2});
    return std::min(4.0 / (1.0 + abs_rho), std::sqrt(infimum));
}

/// Butterfly cap on psi under the selected rule.
inline double psi_cap(double theta, double abs_rho, const ButterflyRule& rule) {
    return rule.kind == ButterflyRule::Kind::GJ ? gj_psi_cap(theta, abs_rho)
                                                : mm_psi_cap(theta, abs_rho, rule);
}

enum class CalendarClause { None, Theta, PsiLower, PsiUpper };

struct CalendarResult {
    bool pass = true;
    CalendarClause clause = CalendarClause::None;
    std::string reason;

    explicit operator bool() const { return pass; }
};

/// Calendar-spread conditions between a shorter slice s1 and a longer slice s2:
/// theta2 > theta1, psi2 >= psi1 * p and psi2 <= psi1 theta2 / theta1, where
/// p = max((1 + rho1) / (1 + rho2), (1 - rho1) / (1 - rho2)).
inline CalendarResult calendar_check(const SSVISlice& s1, const SSVISlice& s2) {
    CalendarResult r;
    std::ostringstream msg;
    msg.precision(12);
    if (!(s2.theta > s1.theta)) {
        msg << "theta not increasing: " << s1.theta << " -> " << s2.theta;
        return {false, CalendarClause::Theta, msg.str()};
    }
    const double p = std::max((1.0 + s1.rho) / (1.0 + s2.rho), (1.0 - s1.rho) / (1.0 - s2.rho));
    const double lower = s1.psi * p;
    if (s2.psi < lower * (1.0 - kInclusiveSlack)) {
        msg << "psi2=" << s2.psi << " below psi1*p=" << lower;
        return {false, CalendarClause::PsiLower, msg.str()};
    }
    // Cross-multiplied form of psi2 <= (psi1 / theta1) theta2.
    if (s2.psi * s1.theta > s1.psi * s2.theta * (1.0 + kInclusiveSlack)) {
        msg << "psi2=" << s2.psi << " above psi1*theta2/theta1=" << s1.psi * s2.theta / s1.theta;
        return {false, CalendarClause::PsiUpper, msg.str()};
    }
    return r;
}

struct ArbitrageFinding {
    std::size_t index = 0;  ///< slice index, or index of the shorter slice for a pair
    bool pair = false;
    std::string message;
};

struct SurfaceCheck {
    std::vector<ArbitrageFinding> findings;

    bool pass() const { return findings.empty(); }
    explicit operator bool() const { return pass(); }
};

inline bool butterfly_ok(const SSVISlice& s, const ButterflyRule& rule) {
    return s.psi > 0.0 && s.psi <= psi_cap(s.theta, std::abs(s.rho), rule) * (1.0 + kInclusiveSlack);
}

/// Butterfly cap on every slice plus calendar conditions on every adjacent pair.
inline SurfaceCheck surface_check(const std::vector<SSVISlice>& slices, const ButterflyRule& rule) {
    SurfaceCheck out;
    for (std::size_t i = 0; i < slices.size(); ++i) {
        const SSVISlice& s = slices[i];
        if (!s.valid()) {
            out.findings.push_back({i, false, "slice " + std::to_string(i) + " outside theta>0, |rho|<1, psi>0"});
            continue;
        }
        if (!butterfly_ok(s, rule)) {
            std::ostringstream msg;
            msg.precision(12);
            msg << "slice " << i << " butterfly: psi=" << s.psi << " exceeds "
                << to_string(rule.kind) << " cap " << psi_cap(s.theta, std::abs(s.rho), rule);
            out.findings.push_back({i, false, msg.str()});
        }
    }
    for (std::size_t i = 0; i + 1 < slices.size(); ++i) {
        if (!(slices[i + 1].maturity > slices[i].maturity)) {
            out.findings.push_back({i, true, "slices " + std::to_string(i) + "," +
                                                 std::to_string(i + 1) + " maturities not increasing"});
            continue;
        }
        if (!slices[i].valid() || !slices[i + 1].valid()) continue;
        const CalendarResult cal = calendar_check(slices[i], slices[i + 1]);
        if (!cal.pass)
            out.findings.push_back({i, true, "slices " + std::to_string(i) + "," +
                                                 std::to_string(i + 1) + " calendar: " + cal.reason});
    }
    return out;
}

}  // namespace essvi
