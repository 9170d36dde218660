#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "heatlab/duhamel.hpp"
#include "heatlab/numerics.hpp"
#include "heatlab/sde.hpp"
#include "heatlab/stable_kernel.hpp"

using namespace heatlab;

namespace {

constexpr double kPi = 3.14159265358979323846;

StableParams params(int d, double a = 1.0, double alpha = 1.0)
{
    StableParams p;
    p.d = d;
    p.alpha = alpha;
    p.a = a;
    p.M = std::max(1.0, a);
    return p;
}

struct Moments {
    double mean = 0.0, se = 0.0;
};

Moments moments(const std::vector<double>& v)
{
    CompensatedSum s, s2;
    for (double x : v) {
        s.add(x);
        s2.add(x * x);
    }
    double n = static_cast<double>(v.size());
    double m = s.value() / n;
    double var = (s2.value() / n - m * m) * n / (n - 1);
    return {m, std::sqrt(std::max(var, 0.0) / n)};
}

// two-sample Kolmogorov-Smirnov statistic
double ks_statistic(std::vector<double> x, std::vector<double> y)
{
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    std::size_t i = 0, j = 0;
    double D = 0.0;
    while (i < x.size() && j < y.size()) {
        double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] <= v) ++i;
        while (j < y.size() && y[j] <= v) ++j;
        D = std::max(D, std::abs(double(i) / x.size() - double(j) / y.size()));
    }
    return D;
}

// Brownian motion with generator Laplacian started at the center of (-r, r)
double brownian_exit_probability(double r, double T)
{
    double stay = 0.0;
    for (int k = 0; k < 200; ++k) {
        double lam = (2 * k + 1) * kPi / (2 * r);
        stay += 4.0 / kPi * ((k % 2) ? -1.0 : 1.0) / (2 * k + 1) * std::exp(-lam * lam * T);
    }
    return 1.0 - stay;
}

}  // namespace

TEST_CASE("rng streams are reproducible and distinct")
{
    PathRng a = PathRng::stream(7, 3), b = PathRng::stream(7, 3), c = PathRng::stream(7, 4);
    bool differ = false;
    for (int i = 0; i < 100; ++i) {
        auto x = a.next();
        CHECK(x == b.next());
        differ = differ || x != c.next();
    }
    CHECK(differ);
    PathRng r(1);
    for (int i = 0; i < 100000; ++i) {
        double u = r.uniform();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("subordinator increments: Laplace transform, positivity, scaling")
{
    for (double alpha : {0.5, 1.0, 1.5}) {
        CAPTURE(alpha);
        const double dt = 0.1;
        PathRng rng(11);
        std::vector<double> e(1000000);
        bool positive = true;
        for (auto& v : e) {
            double s = sample_subordinator_increment(alpha / 2, dt, rng);
            positive = positive && s > 0.0;
            v = std::exp(-s);
        }
        CHECK(positive);
        auto m = moments(e);
        CHECK(std::abs(m.mean - std::exp(-dt)) <= 3.0 * m.se);

        const std::size_t n = 20000;
        std::vector<double> s2(n), s1(n);
        PathRng r2(21), r1(22);
        for (std::size_t i = 0; i < n; ++i) {
            s2[i] = sample_subordinator_increment(alpha / 2, 2 * dt, r2);
            s1[i] = std::pow(2.0, 2.0 / alpha) * sample_subordinator_increment(alpha / 2, dt, r1);
        }
        CHECK(ks_statistic(s2, s1) < 1.628 * std::sqrt(2.0 / n));
    }
    PathRng rng(1);
    CHECK_THROWS_AS(sample_subordinator_increment(1.0, 0.1, rng), DomainError);
}

TEST_CASE("levy increments: characteristic function at five frequencies")
{
    const double dt = 0.5;
    const std::vector<double> xis = {0.5, 1.0, 1.5, 2.0, 3.0};
    // 3 sigma per test, Bonferroni over the five frequencies
    const double zcrit = 3.46;
    for (double alpha : {0.7, 1.0, 1.6}) {
        auto p = params(1, 1.0, alpha);
        PathRng rng(5);
        std::vector<std::vector<double>> c(xis.size(), std::vector<double>(400000));
        for (std::size_t i = 0; i < c[0].size(); ++i) {
            double z = sample_levy_increment(p, dt, rng)[0];
            for (std::size_t k = 0; k < xis.size(); ++k) c[k][i] = std::cos(xis[k] * z);
        }
        for (std::size_t k = 0; k < xis.size(); ++k) {
            CAPTURE(alpha);
            CAPTURE(xis[k]);
            auto m = moments(c[k]);
            double expect = std::exp(-dt * char_exponent(p, {xis[k]}));
            CHECK(std::abs(m.mean - expect) <= zcrit * m.se);
        }
    }
}

TEST_CASE("levy increments: Brownian limit and isotropy")
{
    const double dt = 0.01;
    auto p = params(2, 1e-9, 1.0);
    PathRng rng(3);
    std::vector<double> x2(200000), xy(200000);
    double clock = 0.0;
    for (std::size_t i = 0; i < x2.size(); ++i) {
        auto z = sample_levy_increment(p, dt, rng, &clock);
        x2[i] = z[0] * z[0];
        xy[i] = z[0] * z[1];
    }
    CHECK(clock >= dt);
    auto v = moments(x2);
    CHECK(std::abs(v.mean - 2 * dt) <= 3.0 * v.se);
    auto c = moments(xy);
    CHECK(std::abs(c.mean) <= 3.0 * c.se);
}

TEST_CASE("jump intensity to a ball against direct integration")
{
    for (int d : {1, 2, 3}) {
        CAPTURE(d);
        auto p = params(d, 0.8, 1.3);
        Ball B{Point(d, 0.0), 0.5};
        B.center[0] = 2.0;
        Point x(d, 0.0);
        x[0] = 0.3;
        if (d > 1) x[1] = 0.4;
        double K = p.a_alpha() * levy_constant(d, p.alpha);
        double direct = 0.0;
        if (d == 1) {
            direct = K * gl_integrate([&](double y) { return std::pow(std::abs(y - x[0]), -1.0 - p.alpha); }, 1.5, 2.5, 8);
        } else if (d == 2) {
            direct = K * gl_integrate([&](double s) {
                return s * gl_integrate([&](double th) {
                    double dx = B.center[0] + s * std::cos(th) - x[0], dy = s * std::sin(th) - x[1];
                    return std::pow(dx * dx + dy * dy, -(2.0 + p.alpha) / 2);
                }, 0.0, 2 * kPi, 8);
            }, 0.0, 0.5, 8);
        } else {
            // spherical shells around the ball center; x sits at distance D0 from it
            double D0 = norm(sub(x, B.center));
            direct = K * gl_integrate([&](double s) {
                return 2 * kPi * s * s * gl_integrate([&](double th) {
                    double r2 = D0 * D0 + s * s - 2 * D0 * s * std::cos(th);
                    return std::sin(th) * std::pow(r2, -(3.0 + p.alpha) / 2);
                }, 0.0, kPi, 8);
            }, 0.0, 0.5, 8);
        }
        CHECK(jump_intensity_to_ball(p, x, B) == doctest::Approx(direct).epsilon(1e-8));
    }
    CHECK_THROWS_AS(jump_intensity_to_ball(params(1), {2.1}, Ball{{2.0}, 0.5}), DomainError);
}

TEST_CASE("simulate_paths: validation and reproducibility")
{
    SimConfig cfg;
    cfg.params = params(1);
    cfg.drift = bump_drift(1, 2.0);
    cfg.x0 = {0.0};
    cfg.T = 0.25;
    cfg.dt = 1.0 / 64;
    cfg.N = 3000;
    cfg.times = {0.125, 0.25};
    auto a = simulate_paths(cfg);
    unsigned before = thread_count();
    set_thread_count(3);
    auto b = simulate_paths(cfg);
    set_thread_count(before);
    CHECK(a.samples == b.samples);
    CHECK(a.jump_counts == b.jump_counts);
    REQUIRE(a.jumps.size() == b.jumps.size());
    for (std::size_t i = 0; i < a.jumps.size(); ++i) {
        CHECK(a.jumps[i].path == b.jumps[i].path);
        CHECK(a.jumps[i].time == b.jumps[i].time);
        CHECK(a.jumps[i].size > a.jump_threshold);
    }
    CHECK(a.jump_threshold == doctest::Approx(3.0 * std::sqrt(2.0 / 64)));
    cfg.seed = 2;
    CHECK(simulate_paths(cfg).samples != a.samples);

    SimConfig bad = cfg;
    bad.dt = 0.0;
    CHECK_THROWS_AS(simulate_paths(bad), DomainError);
    bad = cfg;
    bad.N = 0;
    CHECK_THROWS_AS(simulate_paths(bad), DomainError);
    bad = cfg;
    bad.T = cfg.dt / 2;
    bad.times = {};
    CHECK_THROWS_AS(simulate_paths(bad), DomainError);
    bad = cfg;
    bad.times = {0.1};
    CHECK_THROWS_AS(simulate_paths(bad), DomainError);
    bad = cfg;
    bad.levy_regions = {Ball{{0.0}, 1.0}, Ball{{1.5}, 1.0}};
    CHECK_THROWS_AS(simulate_paths(bad), DomainError);
}

TEST_CASE("simulate_paths: Brownian variance and constant drift median")
{
    SimConfig cfg;
    cfg.params = params(1, 1e-9);
    cfg.x0 = {0.0};
    cfg.T = 0.5;
    cfg.dt = 1.0 / 64;
    cfg.N = 40000;
    auto e = simulate_paths(cfg);
    std::vector<double> sq;
    for (double x : e.samples[0]) sq.push_back(x * x);
    auto m = moments(sq);
    CHECK(std::abs(m.mean - 2 * cfg.T) <= 3.0 * m.se);

    // heavy tails: the median carries the shift
    cfg.params = params(1, 1.0, 1.0);
    cfg.drift = constant_drift(1, 0.5);
    cfg.x0 = {0.25};
    auto c = simulate_paths(cfg);
    auto v = c.samples[0];
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    double median = v[v.size() / 2];
    double f0 = eval_density(cfg.params, cfg.T, {0.0});
    double se = 1.0 / (2.0 * f0 * std::sqrt(double(cfg.N)));
    CHECK(std::abs(median - (0.25 + 0.5 * cfg.T)) <= 3.0 * se);
}

TEST_CASE("simulate_paths: safety box aborts")
{
    SimConfig cfg;
    cfg.params = params(1, 1.0, 0.3);
    cfg.x0 = {0.0};
    cfg.T = 1.0;
    cfg.dt = 1.0 / 16;
    cfg.N = 2000;
    cfg.safety_radius = 5.0;
    auto e = simulate_paths(cfg);
    CHECK(e.aborted > 0);
    std::size_t nan = 0;
    for (std::size_t i = 0; i < e.N; ++i) nan += std::isnan(e.samples[0][i]);
    CHECK(nan == e.aborted);
    CHECK(e.aborted_fraction() == doctest::Approx(double(e.aborted) / e.N));
}

TEST_CASE("empirical_density: normalization, flat input, bandwidth")
{
    SpaceTimeGrid g;
    g.L = 4.0;
    g.n = 32;
    PathEnsemble ens;
    ens.d = 1;
    ens.N = 330000;
    ens.times = {1.0};
    ens.samples.assign(1, std::vector<double>(ens.N));
    PathRng rng(9);
    const double lo = -g.L - g.h() / 2;
    for (auto& x : ens.samples[0]) x = lo + (2 * g.L + g.h()) * rng.uniform();
    auto est = empirical_density(ens, 1.0, g);
    CompensatedSum mass;
    for (double v : est.values) mass.add(v * g.cell());
    CHECK(mass.value() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(est.inside_fraction == doctest::Approx(1.0));
    const double flat = 1.0 / (2 * g.L + g.h());
    const double per_bin = double(ens.N) / g.axis_nodes();
    for (double v : est.values) CHECK(std::abs(v - flat) <= 4.0 * flat / std::sqrt(per_bin));
    CHECK_FALSE(est.undersampled);
    CHECK_THROWS_AS(empirical_density(ens, 0.5, g), DomainError);

    // smooth target: a Gaussian sample against its kernel estimates
    for (auto& x : ens.samples[0]) x = rng.normal();
    double mc = 0.0;
    {
        auto h1 = empirical_density(ens, 1.0, g, Binning::kernel, 0.2);
        auto h2 = empirical_density(ens, 1.0, g, Binning::kernel, 0.1);
        CompensatedSum d;
        for (std::size_t i = 0; i < h1.values.size(); ++i) d.add(std::abs(h1.values[i] - h2.values[i]) * g.cell());
        // L1 error bar of a histogram with this many samples
        for (double c : h1.counts) mc += std::sqrt(c) / ens.N;
        CHECK(d.value() < mc + 0.02);
    }
    ens.N = 5;
    ens.samples[0].resize(5);
    empirical_density(ens, 1.0, g);
    auto w = take_warnings();
    CHECK(std::any_of(w.begin(), w.end(), [](const std::string& s) { return s.find("fewer than 10") != std::string::npos; }));
}

TEST_CASE("bump drift marginals match the series table")
{
    auto p = params(1);
    const double T = 1.0 / 32;
    SpaceTimeGrid g;
    g.times = {T};
    for (double amp : {0.0, 2.0}) {
        CAPTURE(amp);
        auto b = amp > 0 ? bump_drift(1, amp) : zero_drift(1);
        auto table = sum_series(p, g, b, {{0.0}}).table;
        SimConfig cfg;
        cfg.params = p;
        cfg.drift = b;
        cfg.x0 = {0.0};
        cfg.T = T;
        cfg.dt = T / 512;
        cfg.N = 100000;
        auto e = simulate_paths(cfg);
        CHECK(e.aborted_fraction() < 1e-3);
        auto est = empirical_density(e, T, g);
        double l1 = l1_distance(est, table.slice(0, 0));
        CHECK(l1 <= (amp > 0 ? 0.05 : 0.03));
        CHECK(l1 <= l1_distance(est, table.slice(0, 0), false) + 1e-3);
    }
}

TEST_CASE("levy system and total jump rate")
{
    auto p = params(1);
    SimConfig cfg;
    cfg.params = p;
    cfg.x0 = {0.0};
    cfg.T = 1.0;
    cfg.dt = 1.0 / 256;
    cfg.N = 60000;
    cfg.levy_regions = {Ball{{0.0}, 0.5}, Ball{{3.0}, 0.5}};
    auto e = simulate_paths(cfg);
    auto rep = jump_rate_check(e);
    CHECK(rep.agree);
    CHECK_FALSE(rep.undersampled);

    // E int_0^T 1_A(Z_s) int_B J ds from the free kernel
    Ball B{{3.0}, 0.5};
    auto inner = [&](double s) {
        return gl_integrate([&](double x) { return eval_density(p, s, {x}) * jump_intensity_to_ball(p, {x}, B); },
                            -0.5, 0.5, 4, 16);
    };
    double oracle = gl_graded(inner, 0.0, 1.0, 12, 12);
    double se_obs = std::sqrt(rep.observed / cfg.N);
    CHECK(std::abs(rep.predicted - oracle) <= 0.03 * oracle);
    CHECK(std::abs(rep.observed - oracle) <= 3.0 * se_obs + 0.03 * oracle);

    cfg.levy_regions = {Ball{{0.0}, 0.5}, Ball{{1e4}, 0.5}};
    cfg.N = 2000;
    auto far = jump_rate_check(simulate_paths(cfg));
    CHECK(far.observed == 0.0);
    CHECK(far.predicted < 1e-7);
    CHECK(far.agree);

    SimConfig tj;
    tj.params = p;
    tj.x0 = {0.0};
    tj.T = 1.0;
    tj.dt = 1.0 / 2048;
    tj.N = 30000;
    tj.jump_threshold = 1.0;
    auto tot = total_jump_check(simulate_paths(tj), p, 1.0);
    CHECK(tot.expected == doctest::Approx(2.0 / kPi).epsilon(1e-12));
    CHECK(tot.agree);
}

TEST_CASE("exit times: Brownian oracle, vanishing window, drift monotonicity")
{
    ExitConfig cfg;
    cfg.params = params(1, 1e-9);
    cfg.x0 = {0.0};
    cfg.r = 1.0;
    cfg.kappas = {0.25, 0.05};
    cfg.N = 20000;
    auto rep = exit_time_stats(cfg);
    for (std::size_t i = 0; i < rep.kappas.size(); ++i) {
        double exact = brownian_exit_probability(cfg.r, rep.kappas[i] * cfg.r * cfg.r);
        CAPTURE(rep.kappas[i]);
        CHECK(std::abs(rep.probabilities[i] - exact) <= 3.0 * rep.standard_errors[i] + 1e-4);
    }

    cfg.params = params(1);
    cfg.kappas = {1.0, 0.25, 1.0 / 16, 1.0 / 256, 1.0 / 4096};
    cfg.N = 5000;
    rep = exit_time_stats(cfg);
    for (std::size_t i = 1; i < rep.probabilities.size(); ++i)
        CHECK(rep.probabilities[i] <= rep.probabilities[i - 1]);
    CHECK(rep.probabilities.back() < 0.01);
    CHECK(rep.kappa > 0.0);

    cfg.kappas = {1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625};
    double prev = 1e300;
    for (double amp : {1.0, 2.0, 4.0, 8.0}) {
        cfg.drift = constant_drift(1, amp);
        double k = exit_time_stats(cfg).kappa;
        CAPTURE(amp);
        CHECK(k <= prev);
        prev = k;
    }
}

TEST_CASE("exit uniformity sweep")
{
    ExitConfig cfg;
    cfg.params = params(1, 2.0);
    cfg.params.M = 2.0;
    cfg.drift = bump_drift(1, 2.0);
    cfg.x0 = {0.0};
    cfg.N = 2000;
    cfg.steps = 64;
    auto u = exit_uniformity(cfg, 1.0);
    REQUIRE(u.kappa.size() == 3);
    CHECK(u.a_values == std::vector<double>{0.5, 1.0, 2.0});
    CHECK(u.uniform_kappa > 0.0);
    for (auto& row : u.kappa)
        for (double k : row) CHECK(k >= u.uniform_kappa);
}
