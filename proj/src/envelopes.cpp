#include "heatlab/envelopes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "heatlab/kato.hpp"
#include "heatlab/numerics.hpp"
#include "heatlab/stable_kernel.hpp"

namespace heatlab {

double gaussian_g_radial(int d, double beta, double t, double r)
{
    if (!(t > 0.0)) throw DomainError("t must be positive");
    return std::pow(t, -0.5 * d) * std::exp(-beta * r * r / t);
}

double gaussian_g(int d, double beta, double t, const Point& x)
{
    return gaussian_g_radial(d, beta, t, norm(x));
}

double q_envelope_radial(const StableParams& p, int d, double beta, double t, double r)
{
    double cap = std::pow(t, -0.5 * d);
    double poly = cap;
    if (r > 0.0) poly = std::min(cap, p.a_alpha() * t * std::pow(r, -(d + p.alpha)));
    return gaussian_g_radial(d, beta, t, r) + poly;
}

double q_envelope(const StableParams& p, double beta, double t, const Point& x)
{
    return q_envelope_radial(p, static_cast<int>(x.size()), beta, t, norm(x));
}

std::vector<double> beta_grid()
{
    std::vector<double> out;
    for (int k = 0; k <= 12; ++k) out.push_back(std::pow(2.0, -4.0 + 0.5 * k));
    return out;
}

namespace {

double q_at(const StableParams& p, double beta, const LatticePoint& lp)
{
    StableParams q = p;
    q.a = lp.a;
    return q_envelope_radial(q, lp.d, beta, lp.t, lp.r);
}

}  // namespace

SandwichFit fit_sandwich(const StableParams& p, const std::vector<LatticePoint>& lattice,
                         const std::vector<double>& betas)
{
    if (lattice.empty()) throw DomainError("sandwich fit needs a nonempty lattice");
    for (const auto& lp : lattice)
        if (!(lp.value > 0.0)) throw DomainError("sandwich fit failed: field is not strictly positive");
    SandwichFit fit;
    fit.lattice = lattice;
    fit.betas = betas;
    for (double beta : betas) {
        double hi = 0.0, lo = std::numeric_limits<double>::infinity();
        for (const auto& lp : lattice) {
            double ratio = lp.value / q_at(p, beta, lp);
            hi = std::max(hi, ratio);
            lo = std::min(lo, ratio);
        }
        fit.upper_C.push_back(hi);
        fit.lower_C.push_back(lo);
    }
    auto iu = std::min_element(fit.upper_C.begin(), fit.upper_C.end()) - fit.upper_C.begin();
    auto il = std::max_element(fit.lower_C.begin(), fit.lower_C.end()) - fit.lower_C.begin();
    fit.upper = {betas[iu], fit.upper_C[iu]};
    fit.lower = {betas[il], fit.lower_C[il]};
    double worst = 0.0;
    for (const auto& lp : lattice) {
        double up = fit.upper.C * q_at(p, fit.upper.beta, lp);
        double low = fit.lower.C * q_at(p, fit.lower.beta, lp);
        worst = std::max({worst, (lp.value - up) / lp.value, (low - lp.value) / lp.value});
    }
    // Rounding in the ratio can leave a violation of a few ulps.
    fit.max_violation = worst > 1e-12 ? worst : 0.0;
    return fit;
}

std::vector<LatticePoint> free_kernel_lattice(const StableParams& p, const std::vector<double>& a_values,
                                              int nt, int nr, double T, bool gradient)
{
    std::vector<LatticePoint> pts;
    for (double a : a_values) {
        for (int i = 0; i < nt; ++i) {
            double t = T * std::pow(0.01, 1.0 - static_cast<double>(i) / std::max(1, nt - 1));
            if (!gradient) pts.push_back({t, 0.0, 0.0, a, p.d});
            for (int j = 0; j < nr; ++j) {
                double lo = 0.01 * std::sqrt(T), hi = 20.0;
                double r = lo * std::pow(hi / lo, static_cast<double>(j) / std::max(1, nr - 1));
                pts.push_back({t, r, 0.0, a, gradient ? p.d + 1 : p.d});
            }
        }
    }
    parallel_for(pts.size(), [&](std::size_t k) {
        StableParams q = p;
        q.a = a_values.empty() ? p.a : pts[k].a;
        if (q.M < q.a) q.M = q.a;
        Point x(p.d, 0.0);
        x[0] = pts[k].r;
        pts[k].value = gradient ? norm(grad_density(q, pts[k].t, x)) : eval_density(q, pts[k].t, x);
    });
    return pts;
}

double q_equivalence_constant(const StableParams& p, double beta,
                              const std::vector<LatticePoint>& lattice)
{
    double worst = 1.0;
    for (const auto& lp : lattice) {
        StableParams q = p;
        q.a = lp.a;
        double env = q_envelope_radial(q, lp.d, beta, lp.t, lp.r);
        double alt = gaussian_g_radial(lp.d, beta, lp.t, lp.r);
        if (lp.r * lp.r >= lp.t) alt += q.a_alpha() * lp.t * std::pow(lp.r, -(lp.d + q.alpha));
        worst = std::max({worst, env / alt, alt / env});
    }
    return worst;
}

double fit_gaussian_power_constant(int d, double beta, double theta,
                                   const std::vector<LatticePoint>& lattice)
{
    double c1 = 0.0;
    for (const auto& lp : lattice) {
        if (lp.r <= 0.0) continue;
        double g = gaussian_g_radial(d, beta, lp.t, lp.r);
        c1 = std::max(c1, g / (std::pow(lp.t, theta) * std::pow(lp.r, -(d + 2.0 * theta))));
    }
    return c1;
}

ThreePReport three_p_check(const StableParams& p, double beta1, double beta2,
                           const std::vector<ThreePSample>& samples)
{
    if (!(beta1 > 0.0 && beta2 > beta1)) throw DomainError("three_p_check requires 0 < beta1 < beta2");
    ThreePReport rep;
    rep.gamma = 0.5 * (1.0 + std::min(p.alpha, 1.0));
    rep.lhs.resize(samples.size());
    rep.rhs_core.resize(samples.size());
    rep.ratio.resize(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        const auto& smp = samples[i];
        const int d = static_cast<int>(smp.x.size());
        const double t = smp.t;
        double rxz = norm(sub(smp.x, smp.z));
        double rzy = norm(sub(smp.z, smp.y));
        double rxy = norm(sub(smp.x, smp.y));
        auto integrand = [&](double s) {
            if (s <= 0.0 || s >= t) return 0.0;
            return q_envelope_radial(p, d, beta1, t - s, rxz) *
                   q_envelope_radial(p, d + 1, beta2, s, rzy);
        };
        // Both factors peak near the endpoints; grade toward each of them.
        double half = 0.5 * t;
        double lhs = gl_graded(integrand, 0.0, half, 40, 16) +
                     gl_graded([&](double s) { return integrand(t - s); }, 0.0, half, 40, 16);
        auto H = [&](double r) {
            if (r == 0.0) return std::numeric_limits<double>::infinity();
            Point v(d, 0.0);
            v[0] = r;
            return h_kernel(d, rep.gamma, t, v);
        };
        double rhs = (H(rxz) + H(rzy)) * q_envelope_radial(p, d, beta1, t, rxy);
        rep.lhs[i] = lhs;
        rep.rhs_core[i] = rhs;
        rep.ratio[i] = lhs / rhs;
    });
    rep.sup_ratio = 0.0;
    for (double r : rep.ratio) rep.sup_ratio = std::max(rep.sup_ratio, r);
    rep.finite = std::isfinite(rep.sup_ratio);
    return rep;
}

}  // namespace heatlab
