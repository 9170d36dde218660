#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "heatlab/duhamel.hpp"
#include "heatlab/kato.hpp"
#include "heatlab/params.hpp"

namespace heatlab {

std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256++ stream. Path streams come from stream(seed, index), a counter-based
/// split, so results do not depend on scheduling.
class PathRng {
public:
    explicit PathRng(std::uint64_t seed);
    static PathRng stream(std::uint64_t master, std::uint64_t index);

    std::uint64_t next();
    double uniform();      // (0, 1)
    double exponential();  // mean 1
    double normal();       // standard, Box-Muller

private:
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// One increment over dt of the beta-stable subordinator with E exp(-lambda S_t) =
/// exp(-t lambda^beta), beta = alpha_half in (0, 1) (Kanter's representation).
double sample_subordinator_increment(double alpha_half, double dt, PathRng& rng);

/// Increment of Z^a over dt: B_{dt + a^2 S_dt} with per-axis variance 2(dt + a^2 S).
/// When clock is given it receives dt + a^2 S.
Point sample_levy_increment(const StableParams& p, double dt, PathRng& rng, double* clock = nullptr);

struct Ball {
    Point center;
    double radius = 0.0;
    bool contains(const Point& x) const { return norm(sub(x, center)) < radius; }
};

/// int_B J^a(x, y) dy for x outside the ball (d = 1, 2, 3).
double jump_intensity_to_ball(const StableParams& p, const Point& x, const Ball& B);

struct SimConfig {
    StableParams params;
    DriftSpec drift;
    Point x0;
    double T = 1.0;
    double dt = 1.0 / 512;
    std::size_t N = 1000;
    std::uint64_t seed = 1;
    std::vector<double> times;     // stored marginals (default {T}); multiples of dt
    double jump_threshold = 0.0;   // 0: 3 sqrt(2 dt)
    double drift_cap = 0.0;        // 0: automatic for singular drifts, none otherwise
    double safety_radius = 1e3;    // paths leaving |x - x0| < safety_radius are aborted
    std::size_t max_jump_records = 100000;
    std::optional<std::pair<Ball, Ball>> levy_regions;  // (A, B) for the Levy-system check

    void validate() const;
};

struct JumpRecord {
    std::uint64_t path = 0;
    double time = 0.0;
    double size = 0.0;
};

struct PathEnsemble {
    int d = 1;
    std::size_t N = 0;
    std::uint64_t seed = 0;
    std::string seed_rule = "xoshiro256++ seeded by splitmix64(seed + (path + 1) * 0x9E3779B97F4A7C15)";
    double dt = 0.0;
    double jump_threshold = 0.0;
    std::vector<double> times;
    std::vector<std::vector<double>> samples;  // [time][path * d + axis]; NaN for aborted paths
    std::size_t aborted = 0;
    std::vector<std::uint32_t> jump_counts;    // per path, |increment| > threshold
    std::vector<JumpRecord> jumps;             // first max_jump_records records
    // Levy-system statistics per path (empty without regions)
    std::vector<std::uint32_t> levy_observed;
    std::vector<double> levy_predicted;

    double aborted_fraction() const { return N ? static_cast<double>(aborted) / N : 0.0; }
};

/// Euler scheme X_{k+1} = X_k + dZ + b(X_k) dt.
PathEnsemble simulate_paths(const SimConfig& config);

enum class Binning { histogram, kernel };

struct DensityEstimate {
    SpaceTimeGrid grid;
    std::vector<double> values;  // on grid nodes, unit mass over the grid
    std::vector<double> counts;  // samples per node cell (histogram)
    double inside_fraction = 0.0;
    bool undersampled = false;
};

/// Histogram on the cells of the grid nodes (or a Gaussian kernel estimate with the
/// given bandwidth), normalized to unit mass on the grid.
DensityEstimate empirical_density(const PathEnsemble& ens, double t, const SpaceTimeGrid& grid,
                                  Binning binning = Binning::histogram, double bandwidth = 0.0);

/// sum |estimate - table| h^d. With cell_average, the table is replaced by its
/// Simpson cell averages (what a histogram estimates).
double l1_distance(const DensityEstimate& est, const std::vector<double>& table, bool cell_average = true);

struct JumpRateReport {
    double observed = 0.0;       // mean count per path of steps A -> B
    double predicted = 0.0;      // mean of sum_k dt 1_A(X_k) int_B J^a
    double standard_error = 0.0; // of the per-path difference
    double z = 0.0;
    bool agree = false;
    bool undersampled = false;
};

JumpRateReport jump_rate_check(const PathEnsemble& ens);

struct TotalJumpReport {
    double mean = 0.0, standard_error = 0.0, expected = 0.0, z = 0.0;
    bool agree = false;
};

/// Mean number of increments above the threshold per path against
/// t a^alpha A |S^{d-1}| rho^{-alpha} / alpha.
TotalJumpReport total_jump_check(const PathEnsemble& ens, const StableParams& p, double horizon);

struct ExitConfig {
    StableParams params;
    DriftSpec drift;
    Point x0;
    double r = 1.0;
    std::vector<double> kappas = {1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625};  // decreasing
    std::size_t N = 20000;
    std::uint64_t seed = 1;
    int steps = 64;  // dt = kappa r^2 / steps
};

struct ExitReport {
    std::vector<double> kappas;
    std::vector<double> probabilities;
    std::vector<double> standard_errors;
    double kappa = 0.0;  // largest tested kappa with probability <= 1/2 (0 if none)
};

/// P(tau_{B(x0, r)} <= kappa r^2) by Monte Carlo with a Brownian-bridge crossing
/// correction between steps (the bridge runs on the subordinated clock).
ExitReport exit_time_stats(const ExitConfig& config);

struct ExitUniformity {
    std::vector<double> a_values, r_values;
    std::vector<std::vector<double>> kappa;  // [a][r]
    double uniform_kappa = 0.0;              // min over the sweep
};

/// The sweep over a in {M/4, M/2, M} and r in {R0/4, R0/2, R0}.
ExitUniformity exit_uniformity(const ExitConfig& base, double R0);

}  // namespace heatlab
