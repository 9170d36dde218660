#include "heatlab/sde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "heatlab/numerics.hpp"
#include "heatlab/stable_kernel.hpp"

namespace heatlab {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state)
{
    std::uint64_t z = (state += kGolden);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

PathRng::PathRng(std::uint64_t seed)
{
    std::uint64_t st = seed;
    for (auto& s : s_) s = splitmix64(st);
}

PathRng PathRng::stream(std::uint64_t master, std::uint64_t index)
{
    return PathRng(master + (index + 1) * kGolden);
}

std::uint64_t PathRng::next()
{
    std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double PathRng::uniform()
{
    // 53 random bits, shifted off zero
    return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
}

double PathRng::exponential() { return -std::log(uniform()); }

double PathRng::normal()
{
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double r = std::sqrt(-2.0 * std::log(uniform()));
    double th = 2.0 * kPi * uniform();
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
}

double sample_subordinator_increment(double alpha_half, double dt, PathRng& rng)
{
    const double b = alpha_half;
    if (!(b > 0.0 && b < 1.0)) throw DomainError("subordinator index must lie in (0,1)");
    if (!(dt > 0.0)) throw DomainError("dt must be positive");
    double u = rng.uniform(), e = rng.exponential();
    double s1 = std::sin(b * kPi * u) / std::pow(std::sin(kPi * u), 1.0 / b) *
                std::pow(std::sin((1.0 - b) * kPi * u) / e, (1.0 - b) / b);
    return std::pow(dt, 1.0 / b) * s1;
}

Point sample_levy_increment(const StableParams& p, double dt, PathRng& rng, double* clock)
{
    double c = dt;
    if (p.a > 0.0) c += p.a * p.a * sample_subordinator_increment(0.5 * p.alpha, dt, rng);
    double sd = std::sqrt(2.0 * c);
    Point z(p.d);
    for (auto& v : z) v = sd * rng.normal();
    if (clock) *clock = c;
    return z;
}

double jump_intensity_to_ball(const StableParams& p, const Point& x, const Ball& B)
{
    const int d = static_cast<int>(x.size());
    const double D = norm(sub(x, B.center)), rho = B.radius;
    if (!(D > rho)) throw DomainError("jump intensity needs x outside the target ball");
    const double K = p.a_alpha() * levy_constant(d, p.alpha);
    const double lo = D - rho, hi = D + rho;
    if (d == 1) return K / p.alpha * (std::pow(lo, -p.alpha) - std::pow(hi, -p.alpha));
    auto cosang = [&](double r) { return std::clamp((r * r + D * D - rho * rho) / (2.0 * r * D), -1.0, 1.0); };
    if (d == 2) {
        auto f = [&](double r) { return std::pow(r, -2.0 - p.alpha) * 2.0 * r * std::acos(cosang(r)); };
        double m = 0.5 * (lo + hi);
        return K * (gl_graded(f, lo, m, 20, 16) + gl_graded([&](double r) { return f(lo + hi - r); }, lo, m, 20, 16));
    }
    if (d == 3) {
        auto f = [&](double r) { return std::pow(r, -3.0 - p.alpha) * 2.0 * kPi * r * r * (1.0 - cosang(r)); };
        return K * gl_integrate(f, lo, hi, 8, 16);
    }
    throw DomainError("jump intensity to a ball is implemented for d <= 3");
}

void SimConfig::validate() const
{
    params.validate();
    if (!(dt > 0.0)) throw DomainError("dt must be positive");
    if (N < 1) throw DomainError("N must be at least 1");
    if (!(T >= dt)) throw DomainError("T must be at least dt");
    if (static_cast<int>(x0.size()) != params.d) throw DomainError("x0 dimension does not match d");
    if (drift.d != params.d) throw DomainError("drift dimension does not match d");
    if (levy_regions) {
        const auto& [A, B] = *levy_regions;
        if (norm(sub(A.center, B.center)) < A.radius + B.radius) throw DomainError("regions A and B must be disjoint");
    }
}

namespace {

double auto_cap(const DriftSpec& b, double dt)
{
    if (b.singular_points.empty()) return std::numeric_limits<double>::infinity();
    // |b| at half the support radius from the singularity sets the scale
    Point y = b.singular_points.front();
    double R = std::isfinite(b.support_radius) && b.support_radius > 0.0 ? b.support_radius : 1.0;
    y[0] += 0.5 * R;
    return b.magnitude(y) / std::sqrt(dt);
}

Point capped_drift(const DriftSpec& b, const Point& x, double cap)
{
    Point v = b(x);
    double m = norm(v);
    if (!std::isfinite(m) || m > cap) {
        if (!std::isfinite(m)) return Point(x.size(), 0.0);
        for (auto& c : v) c *= cap / m;
    }
    return v;
}

std::vector<std::size_t> step_indices(const std::vector<double>& times, double dt)
{
    std::vector<std::size_t> idx;
    for (double t : times) {
        double k = std::round(t / dt);
        if (k < 1 || std::abs(k * dt - t) > 1e-9 * std::max(1.0, t))
            throw DomainError("stored times must be positive multiples of dt");
        idx.push_back(static_cast<std::size_t>(k));
    }
    for (std::size_t i = 1; i < idx.size(); ++i)
        if (idx[i] <= idx[i - 1]) throw DomainError("stored times must increase");
    return idx;
}

}  // namespace

PathEnsemble simulate_paths(const SimConfig& cfg)
{
    cfg.validate();
    const int d = cfg.params.d;
    PathEnsemble ens;
    ens.d = d;
    ens.N = cfg.N;
    ens.seed = cfg.seed;
    ens.dt = cfg.dt;
    ens.times = cfg.times.empty() ? std::vector<double>{cfg.T} : cfg.times;
    ens.jump_threshold = cfg.jump_threshold > 0.0 ? cfg.jump_threshold : 3.0 * std::sqrt(2.0 * cfg.dt);
    auto idx = step_indices(ens.times, cfg.dt);
    const std::size_t steps = std::max(idx.back(), static_cast<std::size_t>(std::llround(cfg.T / cfg.dt)));
    const double cap = cfg.drift_cap > 0.0 ? cfg.drift_cap : auto_cap(cfg.drift, cfg.dt);
    const bool has_drift = cfg.drift.kind != "zero";
    const bool levy = cfg.levy_regions.has_value();

    ens.samples.assign(ens.times.size(), std::vector<double>(cfg.N * d, std::numeric_limits<double>::quiet_NaN()));
    ens.jump_counts.assign(cfg.N, 0);
    if (levy) {
        ens.levy_observed.assign(cfg.N, 0);
        ens.levy_predicted.assign(cfg.N, 0.0);
    }
    std::vector<std::uint8_t> aborted(cfg.N, 0);

    const std::size_t chunk = 4096;
    const std::size_t chunks = (cfg.N + chunk - 1) / chunk;
    std::vector<std::vector<JumpRecord>> records(chunks);
    parallel_for(chunks, [&](std::size_t ci) {
        std::size_t lo = ci * chunk, hi = std::min(cfg.N, lo + chunk);
        for (std::size_t path = lo; path < hi; ++path) {
            PathRng rng = PathRng::stream(cfg.seed, path);
            Point x = cfg.x0;
            std::size_t ti = 0;
            double pred = 0.0;
            for (std::size_t k = 0; k < steps; ++k) {
                Point dz = sample_levy_increment(cfg.params, cfg.dt, rng);
                Point xn = x;
                for (int c = 0; c < d; ++c) xn[c] += dz[c];
                if (has_drift) {
                    Point bx = capped_drift(cfg.drift, x, cap);
                    for (int c = 0; c < d; ++c) xn[c] += bx[c] * cfg.dt;
                }
                double size = norm(dz);
                if (size > ens.jump_threshold) {
                    ++ens.jump_counts[path];
                    if (records[ci].size() < cfg.max_jump_records)
                        records[ci].push_back({path, (k + 1) * cfg.dt, size});
                }
                if (levy) {
                    const auto& [A, B] = *cfg.levy_regions;
                    if (A.contains(x)) {
                        pred += cfg.dt * jump_intensity_to_ball(cfg.params, x, B);
                        if (B.contains(xn)) ++ens.levy_observed[path];
                    }
                }
                x = std::move(xn);
                if (norm(sub(x, cfg.x0)) > cfg.safety_radius) {
                    aborted[path] = 1;
                    break;
                }
                if (ti < idx.size() && k + 1 == idx[ti]) {
                    for (int c = 0; c < d; ++c) ens.samples[ti][path * d + c] = x[c];
                    ++ti;
                }
            }
            if (levy) ens.levy_predicted[path] = pred;
        }
    });
    for (auto& r : records)
        for (auto& j : r) {
            if (ens.jumps.size() >= cfg.max_jump_records) break;
            ens.jumps.push_back(j);
        }
    for (auto a : aborted) ens.aborted += a;
    if (ens.aborted_fraction() > 1e-3)
        warn("simulate_paths: " + std::to_string(ens.aborted) + " paths left the safety box");
    return ens;
}

DensityEstimate empirical_density(const PathEnsemble& ens, double t, const SpaceTimeGrid& grid,
                                  Binning binning, double bandwidth)
{
    if (grid.d != ens.d) throw DomainError("grid dimension does not match the ensemble");
    auto it = std::find_if(ens.times.begin(), ens.times.end(),
                           [&](double s) { return std::abs(s - t) <= 1e-12 * std::max(1.0, t); });
    if (it == ens.times.end()) throw DomainError("time is not among the ensemble's stored times");
    const auto& smp = ens.samples[it - ens.times.begin()];
    const int d = ens.d;
    const double h = grid.h(), L = grid.L;
    const long A = grid.axis_nodes();
    DensityEstimate est;
    est.grid = grid;
    est.grid.times = {t};
    est.values.assign(grid.size(), 0.0);
    est.counts.assign(grid.size(), 0.0);
    std::size_t alive = 0, inside = 0;
    for (std::size_t i = 0; i < ens.N; ++i) {
        const double* x = &smp[i * d];
        if (std::isnan(x[0])) continue;
        ++alive;
        long k[2] = {0, 0};
        bool in = true;
        for (int c = 0; c < d; ++c) {
            k[c] = std::lround((x[c] + L) / h);
            in = in && k[c] >= 0 && k[c] <= grid.n;
        }
        if (!in) continue;
        ++inside;
        est.counts[d == 1 ? k[0] : k[0] * A + k[1]] += 1.0;
    }
    est.inside_fraction = alive ? static_cast<double>(inside) / alive : 0.0;
    if (binning == Binning::histogram) {
        est.values = est.counts;
    } else {
        if (!(bandwidth > 0.0)) throw DomainError("kernel estimate needs a positive bandwidth");
        const long reach = static_cast<long>(std::ceil(6.0 * bandwidth / h));
        auto phi = [&](double u) { return std::exp(-0.5 * u * u / (bandwidth * bandwidth)); };
        for (std::size_t i = 0; i < ens.N; ++i) {
            const double* x = &smp[i * d];
            if (std::isnan(x[0])) continue;
            long k0 = std::lround((x[0] + L) / h);
            if (d == 1) {
                for (long k = std::max(0L, k0 - reach); k <= std::min<long>(grid.n, k0 + reach); ++k)
                    est.values[k] += phi(-L + k * h - x[0]);
            } else {
                long k1 = std::lround((x[1] + L) / h);
                for (long a = std::max(0L, k0 - reach); a <= std::min<long>(grid.n, k0 + reach); ++a)
                    for (long b = std::max(0L, k1 - reach); b <= std::min<long>(grid.n, k1 + reach); ++b)
                        est.values[a * A + b] += phi(-L + a * h - x[0]) * phi(-L + b * h - x[1]);
            }
        }
    }
    CompensatedSum mass;
    for (double v : est.values) mass.add(v * grid.cell());
    if (mass.value() > 0.0)
        for (double& v : est.values) v /= mass.value();
    est.undersampled = *std::max_element(est.counts.begin(), est.counts.end()) < 10.0;
    if (est.undersampled) warn("empirical_density: fewer than 10 samples in every bin");
    return est;
}

double l1_distance(const DensityEstimate& est, const std::vector<double>& table, bool cell_average)
{
    const auto& g = est.grid;
    if (table.size() != g.size()) throw DomainError("table slice does not match the estimate grid");
    std::vector<double> ref = table;
    if (cell_average) {
        const long A = g.axis_nodes();
        auto smooth = [&](std::vector<double>& v, long stride, long count, long lines, long line_stride) {
            std::vector<double> out = v;
            for (long l = 0; l < lines; ++l)
                for (long k = 1; k + 1 < count; ++k) {
                    long i = l * line_stride + k * stride;
                    out[i] = (v[i - stride] + 22.0 * v[i] + v[i + stride]) / 24.0;
                }
            v = out;
        };
        if (g.d == 1) {
            smooth(ref, 1, A, 1, 0);
        } else {
            smooth(ref, 1, A, A, A);
            smooth(ref, A, A, A, 1);
        }
    }
    CompensatedSum s;
    for (std::size_t i = 0; i < ref.size(); ++i) s.add(std::abs(est.values[i] - ref[i]) * g.cell());
    return s.value();
}

JumpRateReport jump_rate_check(const PathEnsemble& ens)
{
    if (ens.levy_observed.empty()) throw DomainError("ensemble was simulated without Levy regions");
    JumpRateReport rep;
    CompensatedSum so, sp, sd, sd2;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ens.N; ++i) {
        if (std::isnan(ens.samples.back()[i * ens.d])) continue;
        double diff = ens.levy_observed[i] - ens.levy_predicted[i];
        so.add(ens.levy_observed[i]);
        sp.add(ens.levy_predicted[i]);
        sd.add(diff);
        sd2.add(diff * diff);
        ++n;
    }
    rep.observed = so.value() / n;
    rep.predicted = sp.value() / n;
    double mean = sd.value() / n;
    double var = std::max(0.0, (sd2.value() / n - mean * mean) * n / std::max<std::size_t>(1, n - 1));
    // Poisson variance of the predicted count keeps the error bar honest when nothing is observed
    rep.standard_error = std::sqrt(std::max(var, rep.predicted) / n);
    rep.z = rep.standard_error > 0.0 ? mean / rep.standard_error : 0.0;
    rep.agree = std::abs(rep.z) <= 3.0;
    rep.undersampled = so.value() < 10.0;
    if (rep.undersampled) warn("jump_rate_check: fewer than 10 observed A -> B transitions");
    return rep;
}

TotalJumpReport total_jump_check(const PathEnsemble& ens, const StableParams& p, double horizon)
{
    TotalJumpReport rep;
    CompensatedSum s, s2;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ens.N; ++i) {
        if (std::isnan(ens.samples.back()[i * ens.d])) continue;
        s.add(ens.jump_counts[i]);
        s2.add(static_cast<double>(ens.jump_counts[i]) * ens.jump_counts[i]);
        ++n;
    }
    rep.mean = s.value() / n;
    double var = std::max(0.0, (s2.value() / n - rep.mean * rep.mean) * n / std::max<std::size_t>(1, n - 1));
    rep.standard_error = std::sqrt(var / n);
    rep.expected = horizon * p.a_alpha() * levy_constant(p.d, p.alpha) * sphere_area(p.d) *
                   std::pow(ens.jump_threshold, -p.alpha) / p.alpha;
    rep.z = rep.standard_error > 0.0 ? (rep.mean - rep.expected) / rep.standard_error : 0.0;
    rep.agree = std::abs(rep.z) <= 3.0;
    return rep;
}

ExitReport exit_time_stats(const ExitConfig& cfg)
{
    cfg.params.validate();
    if (!(cfg.r > 0.0)) throw DomainError("exit radius must be positive");
    if (cfg.steps < 1) throw DomainError("steps must be positive");
    if (cfg.steps < 64) warn("exit_time_stats: dt exceeds kappa r^2 / 64");
    const int d = cfg.params.d;
    const bool has_drift = cfg.drift.kind != "zero";
    ExitReport rep;
    for (std::size_t level = 0; level < cfg.kappas.size(); ++level) {
        const double kappa = cfg.kappas[level];
        const double dt = kappa * cfg.r * cfg.r / cfg.steps;
        const double cap = auto_cap(cfg.drift, dt);
        std::vector<std::uint8_t> exited(cfg.N, 0);
        parallel_for(cfg.N, [&](std::size_t path) {
            PathRng rng = PathRng::stream(cfg.seed + level, path);
            Point x = cfg.x0;
            double dist = cfg.r;
            for (int k = 0; k < cfg.steps; ++k) {
                double clock = 0.0;
                Point dz = sample_levy_increment(cfg.params, dt, rng, &clock);
                Point xn = x;
                for (int c = 0; c < d; ++c) xn[c] += dz[c];
                if (has_drift) {
                    Point bx = capped_drift(cfg.drift, x, cap);
                    for (int c = 0; c < d; ++c) xn[c] += bx[c] * dt;
                }
                double dn = cfg.r - norm(sub(xn, cfg.x0));
                if (dn <= 0.0) {
                    exited[path] = 1;
                    return;
                }
                // Brownian bridge with variance 2 clock crossing the nearest boundary
                if (rng.uniform() < std::exp(-dist * dn / clock)) {
                    exited[path] = 1;
                    return;
                }
                x = std::move(xn);
                dist = dn;
            }
        });
        double count = 0.0;
        for (auto e : exited) count += e;
        double prob = count / cfg.N;
        rep.kappas.push_back(kappa);
        rep.probabilities.push_back(prob);
        rep.standard_errors.push_back(std::sqrt(std::max(prob * (1.0 - prob), 1e-300) / cfg.N));
        if (rep.kappa == 0.0 && prob <= 0.5) rep.kappa = kappa;
    }
    return rep;
}

ExitUniformity exit_uniformity(const ExitConfig& base, double R0)
{
    ExitUniformity out;
    const double M = base.params.M;
    out.a_values = {M / 4, M / 2, M};
    out.r_values = {R0 / 4, R0 / 2, R0};
    out.uniform_kappa = std::numeric_limits<double>::infinity();
    for (double a : out.a_values) {
        std::vector<double> row;
        for (double r : out.r_values) {
            ExitConfig cfg = base;
            cfg.params.a = a;
            cfg.r = r;
            double k = exit_time_stats(cfg).kappa;
            row.push_back(k);
            out.uniform_kappa = std::min(out.uniform_kappa, k);
        }
        out.kappa.push_back(row);
    }
    return out;
}

}  // namespace heatlab
