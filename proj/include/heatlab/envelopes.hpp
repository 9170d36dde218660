#pragma once

#include <string>
#include <vector>

#include "heatlab/params.hpp"

namespace heatlab {

/// g_{d,beta}(t, x) = t^{-d/2} exp(-beta |x|^2 / t).
double gaussian_g(int d, double beta, double t, const Point& x);
double gaussian_g_radial(int d, double beta, double t, double r);

/// q^a_{d,beta}(t, x) = g_{d,beta}(t, x) + min(t^{-d/2}, a^alpha t |x|^{-(d+alpha)}).
/// The dimension is taken from x (radial form: explicit d).
double q_envelope(const StableParams& p, double beta, double t, const Point& x);
double q_envelope_radial(const StableParams& p, int d, double beta, double t, double r);

struct EnvelopeParams {
    double beta = 1.0;
    double C = 1.0;
};

/// One sample of a positive field against the envelope family: the envelope is
/// q^a_{d,beta}(t, r) with the stored a and d.
struct LatticePoint {
    double t = 1.0;
    double r = 0.0;  // |x - y|
    double value = 0.0;
    double a = 1.0;
    int d = 1;
};

struct SandwichFit {
    EnvelopeParams lower;
    EnvelopeParams upper;
    std::vector<LatticePoint> lattice;
    double max_violation = 0.0;
    // per-beta constants over the candidate grid
    std::vector<double> betas;
    std::vector<double> upper_C;
    std::vector<double> lower_C;
};

/// Geometric grid 1/16, 1/16 sqrt 2, ..., 4.
std::vector<double> beta_grid();

/// Least upper and greatest lower constants for each candidate beta; the upper fit
/// minimizes C over beta, the lower fit maximizes it. `p` supplies alpha (a and d come
/// from each lattice point). Throws DomainError if a value is not strictly positive.
SandwichFit fit_sandwich(const StableParams& p, const std::vector<LatticePoint>& lattice,
                         const std::vector<double>& betas = beta_grid());

/// Free-kernel samples p^a(t, r) for each a in a_values on a log lattice:
/// nt times in [T/100, T] and r in {0} plus nr log-spaced radii in [0.01 sqrt(T), 20].
/// With gradient = true the value is |grad p^a| (r > 0 only) and the envelope
/// dimension is d + 1.
std::vector<LatticePoint> free_kernel_lattice(const StableParams& p, const std::vector<double>& a_values,
                                              int nt, int nr, double T = 1.0, bool gradient = false);

/// Constant of the equivalence q ~ g + a^alpha t |z|^{-(d+alpha)} 1_{|z|^2 >= t}:
/// returns the max over the lattice of both ratios.
double q_equivalence_constant(const StableParams& p, double beta,
                              const std::vector<LatticePoint>& lattice);

/// Smallest c1 with g_{d,beta}(t,x) <= c1 t^theta |x|^{-(d+2 theta)} on the lattice.
double fit_gaussian_power_constant(int d, double beta, double theta,
                                   const std::vector<LatticePoint>& lattice);

struct ThreePSample {
    double t = 1.0;
    Point x, y, z;
};

struct ThreePReport {
    std::vector<double> lhs;
    std::vector<double> rhs_core;
    std::vector<double> ratio;
    double sup_ratio = 0.0;
    bool finite = false;
    double gamma = 0.0;
};

/// LHS = int_0^t q_{d,beta1}(t-s, x-z) q_{d+1,beta2}(s, z-y) ds against
/// (H^gamma(t, x-z) + H^gamma(t, z-y)) q_{d,beta1}(t, x-y), gamma = (1 + alpha ^ 1)/2.
ThreePReport three_p_check(const StableParams& p, double beta1, double beta2,
                           const std::vector<ThreePSample>& samples);

}  // namespace heatlab
