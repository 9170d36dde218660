#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "heatlab/params.hpp"

namespace heatlab {

/// A vector field b on R^d with the metadata the quadratures need.
struct DriftSpec {
    int d = 1;
    std::string kind = "zero";  // zero | constant | bump | invpow | sampled | mollified
    std::string id = "zero";    // preset id as written in configs
    std::function<Point(const Point&)> eval;
    std::optional<double> bound_hint;  // sup-norm when finite

    /// Points where |b| is singular, with |b(y)| ~ |y - c|^{-singular_exponent}.
    std::vector<Point> singular_points;
    double singular_exponent = 0.0;

    /// |b| vanishes outside the ball of this radius around support_center
    /// (infinity for fields without compact support).
    Point support_center;
    double support_radius = 0.0;

    Point operator()(const Point& x) const { return eval(x); }
    double magnitude(const Point& x) const { return norm(eval(x)); }
    bool compact() const;
};

/// Presets. `center` is the coordinate along e1; all preset fields point along e1.
DriftSpec zero_drift(int d);
DriftSpec constant_drift(int d, double value);
/// A exp(1 - 1/(1 - |x - c e1|^2/w^2)) e1 inside the ball of radius w; peak value A.
DriftSpec bump_drift(int d, double amplitude, double center = 0.0, double width = 1.0);
/// A |x|^{-p} (1 - |x|^2/R^2)^3 e1 for |x| < R, with R the cutoff. Requires d >= 2.
DriftSpec invpow_drift(int d, double p, double cutoff = 1.0, double amplitude = 1.0);
/// Multilinear interpolation of values sampled on a uniform grid (d = 1 or 2).
/// `values` has one entry per node in row-major order (last axis fastest).
DriftSpec sampled_drift(int d, const Point& origin, double spacing, const std::vector<int>& counts,
                        std::vector<Point> values);
DriftSpec scaled_drift(const DriftSpec& f, double c);

/// Parse "bump:amplitude=2,center=0", "invpow:p=0.5,cutoff=1", "constant:value=0.5", "zero".
DriftSpec parse_drift(const std::string& id, int d);

/// Candidate centers for the sup over x: singular points, the origin and a 9^d
/// lattice over the support box ([-1,1]^d for fields without compact support).
std::vector<Point> candidate_centers(const DriftSpec& f);

struct ModulusValue {
    double value = 0.0;
    std::string tag;  // "candidate-sup" (d >= 2) or "sup-norm" (d = 1)
};

/// M_f(r) = sup_x int_{|x-y|<r} |f(y)| |x-y|^{1-d} dy over the candidate centers.
/// For d = 1 returns the sup-norm with tag "sup-norm".
ModulusValue kato_modulus(const DriftSpec& f, double r);

/// The integral at a single center (no sup).
double kato_local(const DriftSpec& f, double r, const Point& x);

/// H^beta(r, x) = min(|x|^{1-d}, r^beta |x|^{1-d-2beta}).
double h_kernel(int d, double beta, double r, const Point& x);

/// H_f^beta(r, x) = int |f(y)| H^beta(r, x - y) dy, split at |x - y| = sqrt(r).
double h_functional(const DriftSpec& f, double beta, double r, const Point& x);

/// N^beta(r, x) = int_0^r s^{-(d+1)/2} exp(-beta |x|^2 / s) ds via the upper incomplete gamma.
double n_kernel(int d, double beta, double r, const Point& x);
/// Same integral by direct time quadrature (independent route).
double n_kernel_direct(int d, double beta, double r, const Point& x);

double n_functional(const DriftSpec& f, double beta, double r, const Point& x);
/// sup over candidate centers of n_functional.
double n_functional_sup(const DriftSpec& f, double beta, double r);

/// b_n = phi_n * b with phi(u) = c_d (1 - |u|^2)^4 on the unit ball. For d <= 2 the
/// result is tabulated on a grid on first use (thread-safe) and interpolated.
DriftSpec mollify(const DriftSpec& f, int n);

/// Unit-mass normalizing constant c_d of the mollifier.
double mollifier_constant(int d);

struct KatoReport {
    std::vector<double> radii;    // decreasing
    std::vector<double> moduli;   // M_f(r_k)
    bool verdict = false;         // M_f(r) -> 0 trend detected
    double gamma = 0.0;           // (1 + alpha ^ 1) / 2
    std::string tag;
};

KatoReport kato_report(const DriftSpec& f, double alpha, const std::vector<double>& radii);

}  // namespace heatlab
