#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "essvi/error.hpp"
#include "essvi/no_arbitrage.hpp"
#include "essvi/pricing.hpp"

namespace essvi {

/// Box-domain coordinates of an eSSVI surface with N maturities:
/// rho_i in (-1, 1), theta_1 > 0, a_2..a_N > 0, c_i in (0, 1).
/// Every point of the box maps to an arbitrage-free set of slices.
struct GlobalParams {
    std::vector<double> maturities;
    std::vector<double> rhos;
    double theta1 = 0.0;
    std::vector<double> as;  ///< a_2..a_N, length N - 1
    std::vector<double> cs;

    std::size_t size() const { return maturities.size(); }

    void validate() const {
        const std::size_t n = maturities.size();
        if (n == 0) throw DomainError("global parameters need at least one maturity");
        if (rhos.size() != n || cs.size() != n || as.size() != n - 1)
            throw DomainError("global parameter lengths inconsistent with N=" + std::to_string(n));
        for (std::size_t i = 0; i < n; ++i) {
            if (!(maturities[i] > 0.0)) throw DomainError("maturities must be positive");
            if (i > 0 && !(maturities[i] > maturities[i - 1]))
                throw DomainError("maturities must be strictly increasing");
            if (!(std::abs(rhos[i]) < 1.0)) throw DomainError("rho outside (-1, 1)");
            if (!(cs[i] > 0.0 && cs[i] < 1.0)) throw DomainError("c outside (0, 1)");
        }
        if (!(theta1 > 0.0) || !std::isfinite(theta1)) throw DomainError("theta1 must be positive");
        for (double a : as)
            if (!(a > 0.0) || !std::isfinite(a)) throw DomainError("a must be positive");
    }

    /// Flat vector (rho_1..rho_N, theta_1, a_2..a_N, c_1..c_N) used by the optimizer.
    std::vector<double> pack() const {
        std::vector<double> x;
        x.reserve(3 * size());
        x.insert(x.end(), rhos.begin(), rhos.end());
        x.push_back(theta1);
        x.insert(x.end(), as.begin(), as.end());
        x.insert(x.end(), cs.begin(), cs.end());
        return x;
    }

    static GlobalParams unpack(const std::vector<double>& x, const std::vector<double>& maturities) {
        const std::size_t n = maturities.size();
        if (x.size() != 3 * n) throw DomainError("packed parameter vector has wrong length");
        GlobalParams gp;
        gp.maturities = maturities;
        gp.rhos.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n));
        gp.theta1 = x[n];
        gp.as.assign(x.begin() + static_cast<std::ptrdiff_t>(n + 1),
                     x.begin() + static_cast<std::ptrdiff_t>(2 * n));
        gp.cs.assign(x.begin() + static_cast<std::ptrdiff_t>(2 * n), x.end());
        return gp;
    }
};

/// Intermediate quantities of the map. ps[0] is unused (p_1 := 1) so that ps[i]
/// lines up with slice i.
struct AuxQuantities {
    std::vector<double> ps;
    std::vector<double> fs;
    std::vector<double> a_psis;
    std::vector<double> c_psis;
    std::vector<bool> degenerate;
};

struct SurfaceMap {
    std::vector<SSVISlice> slices;
    AuxQuantities aux;
};

/// Below this width the interval (A_psi, C_psi) is treated as collapsed.
inline constexpr double kDegenerateWidth = 1e-30;

namespace detail {

inline double rho_ratio(double rho_prev, double rho) {
    return std::max((1.0 + rho_prev) / (1.0 + rho), (1.0 - rho_prev) / (1.0 - rho));
}

/// Running suffix minima min(f_i, f_{i+1}/p_{i+1}, ..., f_N / prod p) for every i.
inline std::vector<double> suffix_caps(const std::vector<double>& fs, const std::vector<double>& ps) {
    std::vector<double> caps(fs.size());
    if (fs.empty()) return caps;
    caps.back() = fs.back();
    for (std::size_t i = fs.size() - 1; i-- > 0;) caps[i] = std::min(fs[i], caps[i + 1] / ps[i + 1]);
    return caps;
}

}  // namespace detail

/// Map box coordinates to SSVI slices.
inline SurfaceMap to_slices(const GlobalParams& gp, const ButterflyRule& rule) {
    gp.validate();
    const std::size_t n = gp.size();
    SurfaceMap out;
    AuxQuantities& aux = out.aux;
    aux.ps.assign(n, 1.0);
    aux.fs.resize(n);
    aux.a_psis.assign(n, 0.0);
    aux.c_psis.resize(n);
    aux.degenerate.assign(n, false);

    std::vector<double> thetas(n);
    thetas[0] = gp.theta1;
    for (std::size_t i = 1; i < n; ++i) {
        aux.ps[i] = detail::rho_ratio(gp.rhos[i - 1], gp.rhos[i]);
        thetas[i] = thetas[i - 1] * aux.ps[i] + gp.as[i - 1];
    }
    for (std::size_t i = 0; i < n; ++i) aux.fs[i] = psi_cap(thetas[i], std::abs(gp.rhos[i]), rule);
    const std::vector<double> caps = detail::suffix_caps(aux.fs, aux.ps);

    out.slices.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double a_psi = 0.0;
        double c_psi = caps[i];
        if (i > 0) {
            const SSVISlice& prev = out.slices[i - 1];
            a_psi = prev.psi * aux.ps[i];
            c_psi = std::min(prev.psi / prev.theta * thetas[i], caps[i]);
        }
        aux.a_psis[i] = a_psi;
        aux.c_psis[i] = c_psi;
        double psi = gp.cs[i] * (c_psi - a_psi) + a_psi;
        if (!(c_psi - a_psi >= kDegenerateWidth)) {
            psi = a_psi + gp.cs[i] * kDegenerateWidth;
            aux.degenerate[i] = true;
        }
        out.slices[i] = {thetas[i], gp.rhos[i], psi, gp.maturities[i]};
    }
    return out;
}

/// Inverse of to_slices. Throws InversionError naming the slice and the coordinate that
/// falls outside its open interval.
inline GlobalParams from_slices(const std::vector<SSVISlice>& slices, const ButterflyRule& rule) {
    const std::size_t n = slices.size();
    if (n == 0) throw DomainError("from_slices needs at least one slice");
    auto fail = [](std::size_t i, const std::string& coord, double value) {
        std::ostringstream msg;
        msg.precision(15);
        msg << "slice " << i << ": " << coord << "=" << value << " outside its open interval";
        throw InversionError(msg.str(), i, coord);
    };

    GlobalParams gp;
    gp.maturities.resize(n);
    gp.rhos.resize(n);
    gp.cs.resize(n);
    std::vector<double> ps(n, 1.0);
    std::vector<double> fs(n);
    for (std::size_t i = 0; i < n; ++i) {
        const SSVISlice& s = slices[i];
        gp.maturities[i] = s.maturity;
        gp.rhos[i] = s.rho;
        if (!(std::abs(s.rho) < 1.0)) fail(i, "rho", s.rho);
        if (!(s.theta > 0.0)) fail(i, "theta", s.theta);
        if (i > 0 && !(s.maturity > slices[i - 1].maturity)) fail(i, "maturity", s.maturity);
        fs[i] = psi_cap(s.theta, std::abs(s.rho), rule);
    }
    gp.theta1 = slices[0].theta;
    for (std::size_t i = 1; i < n; ++i) {
        ps[i] = detail::rho_ratio(slices[i - 1].rho, slices[i].rho);
        const double a = slices[i].theta - slices[i - 1].theta * ps[i];
        if (!(a > 0.0)) fail(i, "a", a);
        gp.as.push_back(a);
    }
    const std::vector<double> caps = detail::suffix_caps(fs, ps);
    for (std::size_t i = 0; i < n; ++i) {
        double a_psi = 0.0;
        double c_psi = caps[i];
        if (i > 0) {
            a_psi = slices[i - 1].psi * ps[i];
            c_psi = std::min(slices[i - 1].psi / slices[i - 1].theta * slices[i].theta, caps[i]);
        }
        const double width = c_psi - a_psi;
        const double c = width > 0.0 ? (slices[i].psi - a_psi) / width : -1.0;
        if (!(c > 0.0 && c < 1.0)) fail(i, "c", c);
        gp.cs[i] = c;
    }
    return gp;
}

/// Distances of each psi to the ends of its admissible interval and to its butterfly cap.
struct SliceMargin {
    double to_upper = 0.0;  ///< C_psi - psi
    double to_lower = 0.0;  ///< psi - A_psi
    double to_cap = 0.0;    ///< f - psi
};

inline std::vector<SliceMargin> feasibility_margin(const GlobalParams& gp, const ButterflyRule& rule) {
    const SurfaceMap map = to_slices(gp, rule);
    std::vector<SliceMargin> margins(map.slices.size());
    for (std::size_t i = 0; i < margins.size(); ++i) {
        const double psi = map.slices[i].psi;
        margins[i] = {map.aux.c_psis[i] - psi, psi - map.aux.a_psis[i], map.aux.fs[i] - psi};
    }
    return margins;
}

}  // namespace essvi
