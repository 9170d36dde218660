#include "doctest.h"

#include <cmath>

#include "heatlab/envelopes.hpp"
#include "heatlab/kato.hpp"

using namespace heatlab;

namespace {

StableParams make(int d, double alpha, double a, double M = 2.0)
{
    StableParams p;
    p.d = d;
    p.alpha = alpha;
    p.a = a;
    p.M = M;
    return p;
}

std::vector<LatticePoint> plain_lattice(int d, double a)
{
    std::vector<LatticePoint> out;
    for (double t = 0.01; t <= 1.0; t *= 1.6)
        for (double r = 0.0; r < 30.0; r = (r == 0.0 ? 0.01 : r * 1.4)) out.push_back({t, r, 1.0, a, d});
    return out;
}

}  // namespace

TEST_CASE("gaussian and envelope values")
{
    CHECK(gaussian_g(2, 1.3, 0.5, {0.0, 0.0}) == doctest::Approx(2.0));
    CHECK(gaussian_g(1, 1.0, 1.0, {1.0}) == doctest::Approx(std::exp(-1.0)));
    CHECK(gaussian_g(1, 2.0, 1.0, {0.7}) <= gaussian_g(1, 1.0, 1.0, {0.7}));
    auto p = make(2, 1.2, 1.0);
    CHECK(q_envelope(p, 1.0, 0.3, {0.0, 0.0}) == doctest::Approx(2.0 / 0.3));
    double far = q_envelope(p, 1.0, 0.3, {50.0, 0.0});
    CHECK(far == doctest::Approx(0.3 * std::pow(50.0, -3.2)).epsilon(1e-10));
}

TEST_CASE("envelope monotonicity properties")
{
    for (const auto& lp : plain_lattice(2, 1.0)) {
        auto p = make(2, 0.8, 1.0);
        auto big = make(2, 0.8, 2.0);
        for (double beta : {0.1, 0.5, 2.0}) {
            CHECK(q_envelope_radial(p, 2, beta * 1.5, lp.t, lp.r) <= q_envelope_radial(p, 2, beta, lp.t, lp.r));
            CHECK(q_envelope_radial(p, 2, beta, lp.t, lp.r) <= q_envelope_radial(big, 2, beta, lp.t, lp.r));
        }
    }
}

TEST_CASE("gaussian power bound constant")
{
    // sup_u u^{d/2+theta} e^{-beta u} with u = r^2/t
    for (int d : {1, 2}) {
        for (double theta : {1.0, 0.5 * (1 + 1.3)}) {
            double beta = 0.7;
            double k = 0.5 * d + theta;
            double exact = std::pow(k / beta, k) * std::exp(-k);
            std::vector<LatticePoint> lat;
            for (double t = 0.01; t <= 1; t *= 1.3)
                for (double r = 1e-3; r < 30; r *= 1.02) lat.push_back({t, r, 1.0, 1.0, d});
            double c1 = fit_gaussian_power_constant(d, beta, theta, lat);
            CHECK(c1 <= exact * (1 + 1e-12));
            CHECK(c1 >= 0.99 * exact);
            for (const auto& lp : lat)
                CHECK(gaussian_g_radial(d, beta, lp.t, lp.r) <=
                      std::min(std::pow(lp.t, -0.5 * d), c1 * std::pow(lp.t, theta) * std::pow(lp.r, -(d + 2 * theta))) * (1 + 1e-12));
        }
    }
}

TEST_CASE("equivalence constant bound")
{
    double T = 1.0, M = 2.0;
    for (double alpha : {0.5, 1.5}) {
        for (double beta : {0.25, 1.0}) {
            auto p = make(1, alpha, 1.0, M);
            double bound = std::max(std::exp(beta) + 1, std::max(std::pow(M, alpha) * std::pow(T, 1 - alpha / 2), 1.0));
            std::vector<LatticePoint> lat;
            for (double a : {0.25, 1.0, 2.0})
                for (auto lp : plain_lattice(1, a)) lat.push_back(lp);
            CHECK(q_equivalence_constant(p, beta, lat) <= bound);
        }
    }
}

TEST_CASE("sandwich fit algebra")
{
    auto p = make(1, 1.0, 1.0);
    LatticePoint one{0.5, 0.3, 0.42, 1.0, 1};
    auto fit = fit_sandwich(p, {one});
    CHECK(fit.upper.C == doctest::Approx(0.42 / q_envelope_radial(p, 1, fit.upper.beta, 0.5, 0.3)));
    CHECK(fit.lower.C == doctest::Approx(0.42 / q_envelope_radial(p, 1, fit.lower.beta, 0.5, 0.3)));
    CHECK(fit.betas.size() == 13);
    CHECK(fit.betas.front() == 0.0625);
    CHECK(fit.betas.back() == 4.0);

    auto lat = free_kernel_lattice(p, {0.5, 1.0}, 5, 8);
    auto base = fit_sandwich(p, lat);
    CHECK(base.max_violation == 0.0);
    CHECK(std::isfinite(base.upper.C / base.lower.C));
    for (auto& lp : lat) lp.value *= 2;
    auto twice = fit_sandwich(p, lat);
    CHECK(twice.upper.C == doctest::Approx(2 * base.upper.C));
    CHECK(twice.lower.C == doctest::Approx(2 * base.lower.C));
    CHECK(twice.upper.beta == base.upper.beta);
    CHECK(twice.lower.beta == base.lower.beta);
    lat[0].value = 0.0;
    CHECK_THROWS_AS(fit_sandwich(p, lat), DomainError);
}

TEST_CASE("gradient upper bound fit")
{
    auto p = make(2, 1.5, 1.0);
    auto lat = free_kernel_lattice(p, {1.0}, 5, 10, 1.0, true);
    auto fit = fit_sandwich(p, lat);
    CHECK(std::isfinite(fit.upper.C));
    CHECK(fit.max_violation == 0.0);
}

TEST_CASE("three-point inequality")
{
    auto p = make(2, 1.0, 1.0);
    std::vector<ThreePSample> smp;
    double t = 0.5;
    // midpoint with |x-y|^2 = t
    Point x{0.0, 0.0}, y{std::sqrt(t), 0.0};
    smp.push_back({t, x, y, {0.5 * std::sqrt(t), 0.0}});
    smp.push_back({t, x, x, {0.3, 0.2}});
    for (double zx : {-1.0, 0.2, 0.9, 3.0}) smp.push_back({t, x, y, {zx, 0.4}});
    auto rep = three_p_check(p, 0.5, 1.0, smp);
    CHECK(rep.finite);
    CHECK(rep.gamma == 1.0);
    for (double r : rep.ratio) CHECK(r > 0.0);

    // bounded as a -> 0
    double prev = 0.0;
    for (int k = 0; k < 6; ++k) {
        auto pk = make(2, 1.0, std::pow(2.0, -k));
        auto rk = three_p_check(pk, 0.5, 1.0, smp);
        CHECK(rk.finite);
        prev = std::max(prev, rk.sup_ratio);
    }
    CHECK(prev < 100.0);
}
