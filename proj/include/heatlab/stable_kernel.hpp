#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include <cmath>
// The Boost pchip header calls isnan unqualified.
using std::isnan;
#include <boost/math/interpolators/pchip.hpp>

#include "heatlab/params.hpp"

namespace heatlab {

/// A(d, -alpha) = alpha 2^{alpha-1} pi^{-d/2} Gamma((d+alpha)/2) / Gamma(1-alpha/2).
double levy_constant(int d, double alpha);

/// psi(xi) = |xi|^2 + a^alpha |xi|^alpha.
double char_exponent(const StableParams& p, const Point& xi);
double char_exponent_radial(const StableParams& p, double rho);

/// J^a(x, y) = a^alpha A(d,-alpha) |x-y|^{-(d+alpha)}.
double levy_density(const StableParams& p, const Point& x, const Point& y);

struct QuadResult {
    double value = 0.0;
    double error = 0.0;
};

/// Radius beyond which the large-|x| expansion replaces Fourier inversion:
/// 12 (sqrt(t) + a t^{1/alpha}).
double slice_extent(const StableParams& p, double t);

/// Fourier inversion cutoff: exp(-t psi) < e^{-50} beyond it.
double frequency_cutoff(const StableParams& p, double t);

/// Radial profile p^a(t, r) of the density in dimension `dim` (which may differ
/// from p.d, e.g. for the gradient lift). Uses Fourier inversion for r below
/// slice_extent and the large-|x| expansion above it.
QuadResult radial_density(const StableParams& p, int dim, double t, double r,
                          bool estimate_error = false);

/// Direct Fourier inversion without the tail switch. Exposed for tests.
QuadResult radial_inversion(const StableParams& p, int dim, double t, double r,
                            bool estimate_error = true);

/// Large-|x| expansion of p^a in dimension dim:
///   sum_{k>=1, m>=0} (-a^alpha t)^k/k! (-t)^m/m! c(dim, k alpha + 2m) r^{-dim-k alpha-2m}
/// with c(d, s) the Riesz constant of |xi|^s. The leading term is a^alpha A t r^{-(d+alpha)}.
double tail_series(const StableParams& p, int dim, double t, double r);

/// Mass of p^a(t, .) outside the ball of radius R, from the expansion (R >= slice_extent).
double tail_mass(const StableParams& p, int dim, double t, double R);

double eval_density(const StableParams& p, double t, const Point& x);

/// grad p^a_d(t, x) = -2 pi x p^a_{d+2}(t, |x|).
Point grad_density(const StableParams& p, double t, const Point& x);

/// Radial derivative d/dr p^a_d(t, r) = -2 pi r p^a_{d+2}(t, r).
double radial_derivative(const StableParams& p, double t, double r);

struct NormalizationReport {
    double mass = 0.0;       // total integral
    double error = 0.0;      // quadrature error estimate
    double tail_mass = 0.0;  // part carried by the large-|x| expansion
};

/// Integral of p^a(t, .) over R^d by radial quadrature plus the expansion tail.
NormalizationReport normalization(const StableParams& p, double t);

/// Integral of w(r) * p^a_dim(t, r) * |S^{dim-1}| r^{dim-1} over [r0, r1] (r1 finite).
double radial_integral(const StableParams& p, int dim, double t, double r0, double r1,
                       const std::function<double(double)>& w);

/// Density tabulated on a geometric radius grid with monotone cubic
/// interpolation of log p against log r.
class RadialSlice {
public:
    RadialSlice(const StableParams& p, int dim, double t, int nodes = 256);

    double t() const { return t_; }
    int dim() const { return dim_; }
    const std::vector<double>& radii() const { return radii_; }
    const std::vector<double>& values() const { return values_; }
    double operator()(double r) const;

private:
    StableParams params_;
    int dim_;
    double t_;
    std::vector<double> radii_;
    std::vector<double> values_;
    double extent_;
    std::unique_ptr<boost::math::interpolators::pchip<std::vector<double>>> interp_;
};

/// Thread-safe cache of radial slices keyed by (dimension, t). Each slice is
/// built exactly once and then shared read-only.
class KernelCache {
public:
    explicit KernelCache(StableParams p);

    const StableParams& params() const { return params_; }
    std::shared_ptr<const RadialSlice> slice(double t, int dim = 0) const;
    double density(double t, double r) const;
    /// Radial derivative via the cached (d+2) slice.
    double radial_derivative(double t, double r) const;

private:
    struct Entry {
        std::once_flag once;
        std::shared_ptr<const RadialSlice> slice;
    };
    StableParams params_;
    mutable std::mutex mutex_;
    mutable std::map<std::pair<int, double>, std::shared_ptr<Entry>> entries_;
};

/// u^a_lambda(x) = int_0^infty e^{-lambda t} p^a(t, x) dt, split at t = |x|^2.
double resolvent_density(const StableParams& p, double lambda, const Point& x);
double resolvent_radial(const StableParams& p, int dim, double lambda, double r);

/// lambda * int u^a_lambda dx, computed as int e^{-lambda t} (mass of p^a(t)) dt.
double resolvent_unit_mass(const StableParams& p, double lambda);

using ScalarField = std::function<double(const Point&)>;

struct ResolventOptions {
    bool with_gradient = false;
    bool constant_field = false;  // f is constant: U f = f * int u
    double support_radius = 0.0;  // radial integration range (f vanishes beyond it)
    int geometric_levels = 20;    // radial panels refined toward the singular origin
    double max_panel = 0.25;      // widest radial panel away from the origin
    int angular_nodes = 64;
    const KernelCache* cache = nullptr;  // slice cache reused across calls (same params)
};

struct ResolventField {
    std::vector<double> value;
    std::vector<Point> gradient;
};

/// U^a_lambda f (and grad U^a_lambda f) at the given points by polar
/// convolution quadrature against the tabulated resolvent density.
ResolventField resolvent_apply(const StableParams& p, double lambda, const ScalarField& f,
                               const std::vector<Point>& points, const ResolventOptions& opt);

}  // namespace heatlab
