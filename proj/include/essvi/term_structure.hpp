#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "essvi/error.hpp"
#include "essvi/pricing.hpp"

namespace essvi {

/// Calibrated slices at increasing maturities, with an optional override for the
/// theta slope used beyond the last maturity.
class SurfaceCurve {
public:
    explicit SurfaceCurve(std::vector<SSVISlice> slices, std::optional<double> right_slope = std::nullopt)
        : slices_(std::move(slices)), right_slope_(right_slope) {
        if (slices_.empty()) throw DomainError("surface curve needs at least one slice");
        for (std::size_t i = 0; i < slices_.size(); ++i) {
            if (!slices_[i].valid() || !(slices_[i].maturity > 0.0))
                throw DomainError("invalid slice " + std::to_string(i) + " in surface curve");
            if (i > 0 && !(slices_[i].maturity > slices_[i - 1].maturity))
                throw DomainError("surface curve maturities must be strictly increasing");
        }
        if (right_slope_ && !(*right_slope_ > 0.0)) throw DomainError("right extrapolation slope must be positive");
    }

    const std::vector<SSVISlice>& slices() const { return slices_; }

    /// Theta slope used for t > T_N.
    double right_slope() const {
        if (right_slope_) return *right_slope_;
        const std::size_t n = slices_.size();
        if (n == 1) return slices_[0].theta / slices_[0].maturity;
        return (slices_[n - 1].theta - slices_[n - 2].theta) / (slices_[n - 1].maturity - slices_[n - 2].maturity);
    }

private:
    std::vector<SSVISlice> slices_;
    std::optional<double> right_slope_;
};

/// Slice at an arbitrary maturity: linear in (theta, psi, psi*rho) between nodes,
/// a ray through the origin below T_1 and a constant-shape extension beyond T_N.
inline SSVISlice slice_at(const SurfaceCurve& curve, double t) {
    if (!(t > 0.0)) throw DomainError("maturity must be positive");
    const auto& s = curve.slices();
    const SSVISlice& first = s.front();
    const SSVISlice& last = s.back();
    if (t < first.maturity) {
        const double lambda = t / first.maturity;
        return {lambda * first.theta, first.rho, lambda * first.psi, t};
    }
    if (t > last.maturity) {
        return {last.theta + curve.right_slope() * (t - last.maturity), last.rho, last.psi, t};
    }
    auto it = std::lower_bound(s.begin(), s.end(), t,
                               [](const SSVISlice& x, double v) { return x.maturity < v; });
    if (it->maturity == t) return *it;
    const SSVISlice& hi = *it;
    const SSVISlice& lo = *(it - 1);
    const double lambda = (t - lo.maturity) / (hi.maturity - lo.maturity);
    const double theta = (1.0 - lambda) * lo.theta + lambda * hi.theta;
    const double psi = (1.0 - lambda) * lo.psi + lambda * hi.psi;
    const double psi_rho = (1.0 - lambda) * lo.psi * lo.rho + lambda * hi.psi * hi.rho;
    const double rho = std::clamp(psi_rho / psi, std::min(lo.rho, hi.rho), std::max(lo.rho, hi.rho));
    return {theta, rho, psi, t};
}

inline double total_variance_at(const SurfaceCurve& curve, double t, double k) {
    const SSVISlice& first = curve.slices().front();
    if (t > 0.0 && t < first.maturity) return t / first.maturity * total_variance(first, k);
    return total_variance(slice_at(curve, t), k);
}

/// Index range [lo, hi] of calibrated slices bracketing t (equal when t is outside
/// the node range or on a node).
inline std::pair<std::size_t, std::size_t> bracket(const SurfaceCurve& curve, double t) {
    const auto& s = curve.slices();
    if (t <= s.front().maturity) return {0, 0};
    if (t >= s.back().maturity) return {s.size() - 1, s.size() - 1};
    std::size_t hi = 1;
    while (s[hi].maturity < t) ++hi;
    if (s[hi].maturity == t) return {hi, hi};
    return {hi - 1, hi};
}

}  // namespace essvi
