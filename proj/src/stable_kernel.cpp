#include "heatlab/stable_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>

#include "heatlab/numerics.hpp"

namespace heatlab {

namespace {

constexpr double kPi = std::numbers::pi;

void check_alpha(double alpha)
{
    if (!(alpha > 0.0 && alpha < 2.0)) throw DomainError("alpha must lie in (0,2)");
}

void check_time(double t)
{
    if (!(t > 0.0)) throw DomainError("t must be positive");
}

// Gamma(nu+1) (2/z)^nu J_nu(z) with nu = dim/2 - 1; equals 1 at z = 0.
double normalized_bessel(int dim, double z)
{
    if (dim == 1) return std::cos(z);
    if (dim == 3) {
        if (z < 1e-3) return 1.0 - z * z / 6.0 + z * z * z * z / 120.0;
        return std::sin(z) / z;
    }
    double nu = 0.5 * dim - 1.0;
    if (z < 1.0) {
        // Power series; converges quickly for z < 1.
        double q = -0.25 * z * z;
        double term = 1.0;
        double sum = 1.0;
        for (int k = 1; k < 30; ++k) {
            term *= q / (k * (nu + k));
            sum += term;
            if (std::abs(term) < 1e-18) break;
        }
        return sum;
    }
    double j = (dim % 2 == 0) ? boost::math::cyl_bessel_j(dim / 2 - 1, z)
                              : boost::math::cyl_bessel_j(nu, z);
    return std::tgamma(nu + 1.0) * std::pow(2.0 / z, nu) * j;
}

// Calls visit(sgn, lg, s) for the terms of the large-|x| expansion; the density
// contribution of a term is sgn * exp(lg), i.e. coef * r^{-dim-s}. Stops each chain once terms
// fall below a relative floor or start to grow (the series is asymptotic).
template <class Visit>
void expansion_terms(const StableParams& p, int dim, double t, double r, Visit visit)
{
    const double A = p.a_alpha() * t;
    const double log_pi = std::log(kPi);
    const double log_r = std::log(r);
    double lead = -INFINITY;
    double prev_row = INFINITY;
    for (int k = 1; k <= 80; ++k) {
        double prev = INFINITY;
        double row_max = -INFINITY;
        for (int m = 0; m <= 40; ++m) {
            double s = k * p.alpha + 2.0 * m;
            // log of |coef r^{-dim-s}| without the sine factor
            double lg = k * std::log(A) - std::lgamma(k + 1.0) + m * std::log(t) -
                        std::lgamma(m + 1.0) + s * std::log(2.0) - (0.5 * dim + 1.0) * log_pi +
                        std::lgamma(0.5 * (dim + s)) + std::lgamma(1.0 + 0.5 * s) -
                        (dim + s) * log_r;
            if (k == 1 && m == 0) lead = lg;
            if (lg > prev || lg < lead - 42.0) break;
            prev = lg;
            row_max = std::max(row_max, lg);
            double sn = std::sin(0.5 * kPi * s);
            if (std::abs(sn) < 1e-15) continue;
            double sign = ((k + m) % 2 == 0) ? 1.0 : -1.0;
            // c(d,s) = -2^s pi^{-d/2-1} Gamma((d+s)/2) Gamma(1+s/2) sin(pi s/2)
            visit(-sign * sn, lg, s);
        }
        if (row_max < lead - 42.0 || row_max > prev_row) break;
        prev_row = row_max;
    }
}

}  // namespace

double levy_constant(int d, double alpha)
{
    check_alpha(alpha);
    if (d < 1) throw DomainError("d must be a positive integer");
    return alpha * std::pow(2.0, alpha - 1.0) * std::pow(kPi, -0.5 * d) *
           std::tgamma(0.5 * (d + alpha)) / std::tgamma(1.0 - 0.5 * alpha);
}

double char_exponent_radial(const StableParams& p, double rho)
{
    rho = std::abs(rho);
    return rho * rho + p.a_alpha() * std::pow(rho, p.alpha);
}

double char_exponent(const StableParams& p, const Point& xi)
{
    return char_exponent_radial(p, norm(xi));
}

double levy_density(const StableParams& p, const Point& x, const Point& y)
{
    double r = norm(sub(x, y));
    if (r == 0.0) throw SingularityError("levy_density is singular at x = y");
    return p.a_alpha() * levy_constant(static_cast<int>(x.size()), p.alpha) *
           std::pow(r, -(static_cast<double>(x.size()) + p.alpha));
}

double slice_extent(const StableParams& p, double t)
{
    return 12.0 * (std::sqrt(t) + p.a * std::pow(t, 1.0 / p.alpha));
}

double frequency_cutoff(const StableParams& p, double t)
{
    double gaussian = std::sqrt(50.0 / t);
    double stable = std::pow(50.0 / (p.a_alpha() * t), 1.0 / p.alpha);
    return std::min(gaussian, stable);
}

QuadResult radial_inversion(const StableParams& p, int dim, double t, double r,
                            bool estimate_error)
{
    check_time(t);
    const double rho_c = frequency_cutoff(p, t);
    const double aa = p.a_alpha();
    const double alpha = p.alpha;
    auto integrand = [&](double rho) {
        double e = std::exp(-t * (rho * rho + aa * std::pow(rho, alpha)));
        double w = (dim == 1) ? 1.0 : std::pow(rho, dim - 1);
        return w * normalized_bessel(dim, rho * r) * e;
    };
    auto integrate = [&](double width) {
        int panels = static_cast<int>(std::ceil(rho_c / width));
        double w = rho_c / panels;
        // The first panel carries the |rho|^alpha cusp at the origin.
        double total = gl_graded(integrand, 0.0, w, 40, 16);
        total += gl_integrate(integrand, w, rho_c, panels - 1, 16);
        return total;
    };
    double width = rho_c / 32.0;
    if (r > 0.0) width = std::min(width, kPi / r);
    const double scale = sphere_area(dim) / std::pow(2.0 * kPi, dim);
    QuadResult out;
    double fine = integrate(width);
    out.value = scale * fine;
    if (estimate_error) {
        double coarse = integrate(2.0 * width);
        out.error = scale * std::abs(fine - coarse);
    }
    return out;
}

double tail_series(const StableParams& p, int dim, double t, double r)
{
    check_time(t);
    CompensatedSum sum;
    expansion_terms(p, dim, t, r, [&](double sgn, double lg, double) { sum.add(sgn * std::exp(lg)); });
    return sum.value();
}

double tail_mass(const StableParams& p, int dim, double t, double R)
{
    check_time(t);
    CompensatedSum sum;
    const double omega = sphere_area(dim);
    const double log_R = std::log(R);
    expansion_terms(p, dim, t, R, [&](double sgn, double lg, double s) {
        sum.add(omega * sgn * std::exp(lg + dim * log_R) / s);
    });
    return sum.value();
}

QuadResult radial_density(const StableParams& p, int dim, double t, double r, bool estimate_error)
{
    check_time(t);
    r = std::abs(r);
    if (r >= slice_extent(p, t)) return {tail_series(p, dim, t, r), 0.0};
    QuadResult q = radial_inversion(p, dim, t, r, estimate_error);
    if (estimate_error && q.error > 1e-8 * std::abs(q.value) + 1e-14) {
        std::ostringstream msg;
        msg << "density quadrature error estimate " << q.error << " exceeds its bound at t=" << t
            << " r=" << r;
        warn(msg.str());
    }
    return q;
}

double eval_density(const StableParams& p, double t, const Point& x)
{
    p.validate();
    return radial_density(p, static_cast<int>(x.size()), t, norm(x)).value;
}

double radial_derivative(const StableParams& p, double t, double r)
{
    return -2.0 * kPi * r * radial_density(p, p.d + 2, t, r).value;
}

Point grad_density(const StableParams& p, double t, const Point& x)
{
    p.validate();
    check_time(t);
    int dim = static_cast<int>(x.size());
    double lifted = radial_density(p, dim + 2, t, norm(x)).value;
    Point g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = -2.0 * kPi * x[i] * lifted;
    return g;
}

double radial_integral(const StableParams& p, int dim, double t, double r0, double r1,
                       const std::function<double(double)>& w)
{
    const double omega = sphere_area(dim);
    auto integrand = [&](double r) {
        return omega * std::pow(r, dim - 1) * w(r) * radial_density(p, dim, t, r).value;
    };
    // Geometric panels resolve both the sqrt(t) core and the power-law decay.
    double base = std::max(r0, 1e-6 * std::min(r1, slice_extent(p, t)));
    double total = 0.0;
    if (r0 < base) total += gl_integrate(integrand, r0, base, 1, 16);
    double lo = base;
    while (lo < r1) {
        double hi = std::min(r1, lo * std::sqrt(2.0));
        total += gl_integrate(integrand, lo, hi, 1, 16);
        lo = hi;
    }
    return total;
}

NormalizationReport normalization(const StableParams& p, double t)
{
    check_time(t);
    const int dim = p.d;
    const double R = slice_extent(p, t);
    const double omega = sphere_area(dim);
    auto integrand = [&](double r) {
        return omega * std::pow(r, dim - 1) * radial_density(p, dim, t, r).value;
    };
    auto inner = [&](int sub) {
        double total = gl_integrate(integrand, 0.0, R * std::pow(2.0, -20), sub, 16);
        for (int k = 20; k > 0; --k) {
            total += gl_integrate(integrand, R * std::pow(2.0, -k), R * std::pow(2.0, 1 - k), sub, 16);
        }
        return total;
    };
    NormalizationReport rep;
    double fine = inner(2);
    double coarse = inner(1);
    rep.tail_mass = tail_mass(p, dim, t, R);
    rep.mass = fine + rep.tail_mass;
    rep.error = std::abs(fine - coarse);
    return rep;
}

// ---------------------------------------------------------------------------

RadialSlice::RadialSlice(const StableParams& p, int dim, double t, int nodes)
    : params_(p), dim_(dim), t_(t)
{
    check_time(t);
    if (nodes < 8) throw DomainError("a radial slice needs at least 8 nodes");
    extent_ = slice_extent(p, t);
    radii_.resize(nodes);
    values_.resize(nodes);
    radii_[0] = 0.0;
    for (int i = 1; i < nodes; ++i) {
        double frac = static_cast<double>(i - 1) / (nodes - 2);
        radii_[i] = extent_ * std::pow(1e-3, 1.0 - frac);
    }
    for (int i = 0; i < nodes; ++i) values_[i] = radial_inversion(p, dim, t, radii_[i], false).value;
    for (int i = 1; i < nodes; ++i) {
        if (!(values_[i] > 0.0) || values_[i] > values_[i - 1] * (1.0 + 1e-12)) {
            std::ostringstream msg;
            msg << "radial slice not positive and decreasing at t=" << t << " r=" << radii_[i];
            warn(msg.str());
            break;
        }
    }
    std::vector<double> lr(nodes - 1), lv(nodes - 1);
    for (int i = 1; i < nodes; ++i) {
        lr[i - 1] = std::log(radii_[i]);
        lv[i - 1] = std::log(std::max(values_[i], 1e-300));
    }
    interp_ = std::make_unique<boost::math::interpolators::pchip<std::vector<double>>>(
        std::move(lr), std::move(lv));
}

double RadialSlice::operator()(double r) const
{
    r = std::abs(r);
    if (r >= extent_) return tail_series(params_, dim_, t_, r);
    double r1 = radii_[1];
    if (r <= r1) {
        double u = r / r1;
        return values_[0] + (values_[1] - values_[0]) * u * u;
    }
    return std::exp((*interp_)(std::log(r)));
}

KernelCache::KernelCache(StableParams p) : params_(p) { params_.validate(); }

std::shared_ptr<const RadialSlice> KernelCache::slice(double t, int dim) const
{
    if (dim == 0) dim = params_.d;
    std::shared_ptr<Entry> entry;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto& slot = entries_[{dim, t}];
        if (!slot) slot = std::make_shared<Entry>();
        entry = slot;
    }
    std::call_once(entry->once, [&] {
        entry->slice = std::make_shared<const RadialSlice>(params_, dim, t);
    });
    return entry->slice;
}

double KernelCache::density(double t, double r) const { return (*slice(t))(r); }

double KernelCache::radial_derivative(double t, double r) const
{
    return -2.0 * kPi * r * (*slice(t, params_.d + 2))(r);
}

// ---------------------------------------------------------------------------

double resolvent_radial(const StableParams& p, int dim, double lambda, double r)
{
    if (!(lambda > 0.0)) throw DomainError("lambda must be positive");
    r = std::abs(r);
    if (r == 0.0 && dim >= 2) throw SingularityError("resolvent density is singular at x = 0");
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    auto integrand = [&](double t) {
        if (t <= 0.0) return 0.0;
        return std::exp(-lambda * t) * radial_density(p, dim, t, r).value;
    };
    double split = (r > 0.0) ? r * r : 1.0 / lambda;
    double err = 0.0;
    double near = GK::integrate(integrand, 0.0, split, 12, 1e-11, &err);
    double far = GK::integrate(integrand, split, std::numeric_limits<double>::infinity(), 12, 1e-11,
                               &err);
    return near + far;
}

double resolvent_density(const StableParams& p, double lambda, const Point& x)
{
    p.validate();
    return resolvent_radial(p, static_cast<int>(x.size()), lambda, norm(x));
}

double resolvent_unit_mass(const StableParams& p, double lambda)
{
    if (!(lambda > 0.0)) throw DomainError("lambda must be positive");
    auto integrand = [&](double t) {
        if (t <= 0.0) return 1.0;
        return std::exp(-lambda * t) * normalization(p, t).mass;
    };
    // lambda t in [0, 30] (the dropped tail is below e^-30): graded first panel, then 6 panels.
    double unit = 1.0 / lambda;
    double total = gl_graded(integrand, 0.0, unit, 4, 8);
    total += gl_integrate(integrand, unit, 30.0 * unit, 6, 8);
    return lambda * total;
}

ResolventField resolvent_apply(const StableParams& p, double lambda, const ScalarField& f,
                               const std::vector<Point>& points, const ResolventOptions& opt)
{
    p.validate();
    if (!(lambda >= 1.0)) throw DomainError("resolvent_apply requires lambda >= 1");
    const int d = p.d;
    ResolventField out;
    out.value.assign(points.size(), 0.0);
    if (opt.with_gradient) out.gradient.assign(points.size(), Point(d, 0.0));
    if (opt.constant_field) {
        double mass = resolvent_unit_mass(p, lambda) / lambda;
        for (std::size_t i = 0; i < points.size(); ++i) out.value[i] = f(points[i]) * mass;
        return out;
    }
    if (!(opt.support_radius > 0.0)) throw DomainError("resolvent_apply needs a support radius");

    // Radial nodes: geometric toward the origin, then panels of bounded width.
    const GaussRule& g = gauss_legendre(16);
    std::vector<double> rho, wrho;
    auto add_panel = [&](double lo, double hi) {
        for (std::size_t i = 0; i < g.x.size(); ++i) {
            rho.push_back(0.5 * (lo + hi) + 0.5 * (hi - lo) * g.x[i]);
            wrho.push_back(0.5 * (hi - lo) * g.w[i]);
        }
    };
    const double R = opt.support_radius;
    double knee = std::min(R, opt.max_panel);
    double hi = knee;
    for (int k = 0; k < opt.geometric_levels; ++k) {
        add_panel(0.5 * hi, hi);
        hi *= 0.5;
    }
    add_panel(0.0, hi);
    if (R > knee) {
        int panels = static_cast<int>(std::ceil((R - knee) / opt.max_panel));
        double w = (R - knee) / panels;
        for (int k = 0; k < panels; ++k) add_panel(knee + k * w, knee + (k + 1) * w);
    }

    // Tabulate r^{d-1} u(r) and r^{d-1} (-2 pi r) u_{d+2}(r) on the nodes. The time
    // integral runs over a fixed log-spaced grid so cached slices serve every lambda.
    KernelCache local(p);
    const KernelCache& cache = opt.cache ? *opt.cache : local;
    const GaussRule& gt = gauss_legendre(8);
    const double t_min = 1e-12, t_max = 40.0;
    std::vector<double> tn, tw;
    const int panels = static_cast<int>(std::ceil(2.0 * std::log10(t_max / t_min)));
    const double step = std::log(t_max / t_min) / panels;
    for (int k = 0; k < panels; ++k) {
        for (std::size_t i = 0; i < gt.x.size(); ++i) {
            double s = std::log(t_min) + step * (k + 0.5 + 0.5 * gt.x[i]);
            double t = std::exp(s);
            tn.push_back(t);
            tw.push_back(0.5 * step * gt.w[i] * t * std::exp(-lambda * t));
        }
    }
    std::vector<double> ku(rho.size(), 0.0), kg(rho.size(), 0.0);
    for (std::size_t j = 0; j < tn.size(); ++j) {
        auto su = cache.slice(tn[j], d);
        std::shared_ptr<const RadialSlice> sg;
        if (opt.with_gradient) sg = cache.slice(tn[j], d + 2);
        for (std::size_t i = 0; i < rho.size(); ++i) {
            ku[i] += tw[j] * (*su)(rho[i]);
            if (sg) kg[i] += tw[j] * (*sg)(rho[i]);
        }
    }
    {
        // [0, t_min]: p grows linearly in t there, away from the origin.
        auto su = cache.slice(t_min, d);
        for (std::size_t i = 0; i < rho.size(); ++i) {
            double r = rho[i];
            double jac = std::pow(r, d - 1) * wrho[i];
            ku[i] = jac * (ku[i] + 0.5 * t_min * (*su)(r));
            kg[i] *= jac * (-2.0 * kPi * r);
        }
    }

    // Angular rule on S^{d-1}: directions and weights.
    std::vector<Point> dirs;
    std::vector<double> dw;
    if (d == 1) {
        dirs = {{1.0}, {-1.0}};
        dw = {1.0, 1.0};
    } else if (d == 2) {
        int m = opt.angular_nodes;
        for (int k = 0; k < m; ++k) {
            double th = 2.0 * kPi * k / m;
            dirs.push_back({std::cos(th), std::sin(th)});
            dw.push_back(2.0 * kPi / m);
        }
    } else if (d == 3) {
        const GaussRule& gc = gauss_legendre(16);
        int m = opt.angular_nodes;
        for (std::size_t i = 0; i < gc.x.size(); ++i) {
            double c = gc.x[i];
            double s = std::sqrt(1.0 - c * c);
            for (int k = 0; k < m; ++k) {
                double ph = 2.0 * kPi * k / m;
                dirs.push_back({s * std::cos(ph), s * std::sin(ph), c});
                dw.push_back(gc.w[i] * 2.0 * kPi / m);
            }
        }
    } else {
        throw DomainError("resolvent_apply supports d <= 3");
    }

    parallel_for(points.size(), [&](std::size_t ip) {
        const Point& x = points[ip];
        double val = 0.0;
        Point grad(d, 0.0);
        Point y(d);
        for (std::size_t i = 0; i < rho.size(); ++i) {
            double sv = 0.0;
            Point sg(d, 0.0);
            for (std::size_t k = 0; k < dirs.size(); ++k) {
                for (int c = 0; c < d; ++c) y[c] = x[c] - rho[i] * dirs[k][c];
                double fv = f(y) * dw[k];
                sv += fv;
                if (opt.with_gradient)
                    for (int c = 0; c < d; ++c) sg[c] += dirs[k][c] * fv;
            }
            val += ku[i] * sv;
            if (opt.with_gradient)
                for (int c = 0; c < d; ++c) grad[c] += kg[i] * sg[c];
        }
        out.value[ip] = val;
        if (opt.with_gradient) out.gradient[ip] = grad;
    });
    return out;
}

}  // namespace heatlab
