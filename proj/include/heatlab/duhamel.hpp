#pragma once

#include <functional>
#include <string>
#include <vector>

#include "heatlab/kato.hpp"
#include "heatlab/params.hpp"

namespace heatlab {

/// Uniform box [-L, L]^d with nodes z_j = -L + j h, j = 0..n (h = 2L/n), and
/// the slice times of a table.
struct SpaceTimeGrid {
    int d = 1;
    double L = 8.0;
    int n = 128;
    std::vector<double> times;

    double h() const { return 2.0 * L / n; }
    int axis_nodes() const { return n + 1; }
    std::size_t size() const;
    double cell() const;  // h^d
    Point node(std::size_t i) const;
    std::size_t nearest_node(const Point& x) const;
};

/// Throws DomainError ("grid too small ...") when the free kernel's mass outside the
/// box at the largest slice time exceeds tail_budget, or when the grid is malformed.
void validate_grid(const SpaceTimeGrid& grid, const StableParams& p, double tail_budget = 0.2);

/// Mass of p^a(t, .) outside [-L', L']^d around source x0 with L' = L + h/2 (the
/// union of the node cells).
double exterior_mass(const StableParams& p, const SpaceTimeGrid& grid, double t, const Point& x0);

struct SliceDiagnostics {
    double t = 0.0;
    double mass = 0.0;         // sum of values times h^d
    double leak = 0.0;         // estimated mass outside the box
    double mass_defect = 0.0;  // |mass + leak - initial mass|
    double raw_min = 0.0;      // minimum before clamping
    std::vector<double> term_norms;  // sup-norm of each series term
    int terms = 0;
};

/// Values y -> p(t, x0, y) per source and slice time.
struct HeatKernelTable {
    SpaceTimeGrid grid;
    StableParams params;
    std::string drift_id = "zero";
    std::vector<Point> sources;  // snapped to nodes (empty point for density sources)
    std::vector<std::string> source_labels;
    int layer = -1;  // -1: summed series; k >= 0: the single term p_k
    std::vector<std::vector<std::vector<double>>> values;       // [source][slice][node]
    std::vector<std::vector<SliceDiagnostics>> diagnostics;     // [source][slice]

    const std::vector<double>& slice(std::size_t source, std::size_t j) const { return values[source][j]; }
    double sup_norm(std::size_t source, std::size_t j) const;
};

struct SeriesOptions {
    double tolerance = 1e-6;  // stop when |p_k| <= tolerance |p_0|
    int max_terms = 40;
    double t_star = 0.0;      // when positive, slices beyond it abort
    int internal_nodes = 32;  // internal time grid per slice
    double noise_floor = 1e-6;
    bool clamp = true;
};

struct SeriesDiagnostics {
    double t_star = 0.0;
    std::vector<std::vector<double>> term_norms;  // [slice][k], max over sources
    std::vector<int> truncation_k;                // terms used per slice
    std::vector<double> ratio_sqrt_t;             // sqrt(t) per slice
    std::vector<double> ratio;                    // |p_1| / |p_0| per slice
    std::vector<double> geometric_rate;           // max_k (|p_k| / |p_0|)^{1/k} per slice
    std::vector<double> max_term_ratio;           // max_k |p_{k+1}| / |p_k| per slice
    double largest_usable_t = 0.0;
};

/// k = 0 layer from point evaluations of the free kernel.
HeatKernelTable build_table_p0(const StableParams& p, const SpaceTimeGrid& grid,
                               const std::vector<Point>& sources);

/// The single term p_k at every grid time (layers 1..k are built on internal grids).
HeatKernelTable picard_term(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                            const std::vector<Point>& sources, int k,
                            const SeriesOptions& opt = SeriesOptions());

struct SeriesResult {
    HeatKernelTable table;
    SeriesDiagnostics diagnostics;
};

/// Sum p_0 + p_1 + ... per slice until the tolerance is met. Throws ConvergenceAbort
/// (naming the largest usable t) when a term grows or a slice lies beyond opt.t_star.
SeriesResult sum_series(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                        const std::vector<Point>& sources, const SeriesOptions& opt = SeriesOptions());

/// Same with initial densities on the grid (one vector of node values per source):
/// returns y -> int g(x) p^{a,b}(t, x, y) dx. d = 1 only.
SeriesResult sum_series_density(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                                const std::vector<std::vector<double>>& densities,
                                const SeriesOptions& opt = SeriesOptions());

/// Largest dyadic t <= 1 with |p_1(t)| / |p_0(t)| <= 1/4 on a coarse probe grid.
/// Warns and returns the smallest probe time when none passes.
struct TStarProbe {
    double t_star = 0.0;
    std::vector<double> times;
    std::vector<double> ratios;
};
TStarProbe estimate_tstar(const StableParams& p, const DriftSpec& b, double L = 8.0, int n = 64,
                          int min_level = 12);

/// p(t) o p(s): propagates the slice p(t, x0, .) for time s with a density-source run.
std::vector<double> compose(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                            const std::vector<double>& density, double s,
                            const SeriesOptions& opt = SeriesOptions());

struct CKReport {
    double t = 0.0, s = 0.0;
    double residual = 0.0;  // |p(t+s) - p(t) o p(s)|_inf / |p(t+s)|_inf
};
CKReport ck_residual(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                     const Point& x0, double t, double s, const SeriesOptions& opt = SeriesOptions());

struct ExtensionResult {
    HeatKernelTable table;                    // slices at the requested times
    std::vector<double> composition_residual; // per slice: main vs alternative split
};

/// Slices at times in (t_star, T] from p(t) = p(k t_star) o p(t - k t_star); the
/// residual compares against composing k + 2 equal steps. d = 1 only.
ExtensionResult extend_chapman_kolmogorov(const StableParams& p, const SpaceTimeGrid& grid,
                                          const DriftSpec& b, const Point& x0, double t_star,
                                          const std::vector<double>& times,
                                          const SeriesOptions& opt = SeriesOptions());

struct DuhamelReport {
    double t = 0.0;
    double max_relative_bulk = 0.0;  // max |R| / p over bulk nodes
    double sup_relative = 0.0;       // |R|_inf / |p|_inf
    std::vector<double> residual;    // R at every node
};

/// R = p^{a,b}(t) - p^a(t) - int_0^t int p^{a,b}(t-s) b grad p^a(s) dz ds with the
/// picard quadrature applied to the summed series. Bulk nodes: p >= 1e-2 max p.
/// opt.t_star is ignored; a t where the series diverges throws ConvergenceAbort.
DuhamelReport duhamel_residual(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                               const Point& x0, double t, const SeriesOptions& opt = SeriesOptions());

/// Smooth test function on R with first and second derivatives.
struct TestFunction {
    std::function<double(double)> f, df, d2f;
};
TestFunction gaussian_test_function(double center, double width, double amplitude = 1.0);

/// Delta^{alpha/2} f(x) in d = 1 by principal-value quadrature with a Taylor
/// correction on |y| < delta.
double fractional_laplacian_1d(const TestFunction& f, double alpha, double x, double delta = 0.02);

struct GeneratorReport {
    double target = 0.0;                 // int (L f) g
    std::vector<double> times;           // 2^{-k}
    std::vector<double> D;               // int (P_t f - f)/t g
    std::vector<double> errors;          // |D - target|
    std::vector<double> halving_ratios;  // errors[i] / errors[i+1]
};

GeneratorReport generator_residual(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                                   const TestFunction& f, const TestFunction& g,
                                   const std::vector<int>& levels,
                                   const SeriesOptions& opt = SeriesOptions());

}  // namespace heatlab
