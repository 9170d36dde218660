#include "heatlab/resolvent.hpp"

#include <cmath>

namespace heatlab {

double drift_gradient_sup(const StableParams& p, double lambda, const DriftSpec& b, const ScalarField& f,
                          const std::vector<Point>& points, const ResolventOptions& opt)
{
    ResolventOptions o = opt;
    o.with_gradient = true;
    o.constant_field = false;
    std::vector<double> sq(points.size(), 0.0);
    for (int j = 0; j < p.d; ++j) {
        ScalarField g = [&, j](const Point& y) {
            double fy = f(y);
            return fy == 0.0 ? 0.0 : b(y)[j] * fy;
        };
        // skip components that vanish identically (preset fields point along e1)
        if (j > 0 && b.kind != "sampled" && b.kind != "mollified") continue;
        auto r = resolvent_apply(p, lambda, g, points, o);
        for (std::size_t i = 0; i < points.size(); ++i)
            for (double c : r.gradient[i]) sq[i] += c * c;
    }
    double s = 0.0;
    for (double v : sq) s = std::max(s, std::sqrt(v));
    return s;
}

ContractionReport find_lambda0(const StableParams& p, const DriftSpec& b, const ScalarField& f, double f_sup,
                               const std::vector<Point>& points, const ResolventOptions& opt,
                               double lambda_max, double rel_tol)
{
    if (!(f_sup > 0.0)) throw DomainError("f must have a positive sup-norm");
    ContractionReport rep;
    auto G = [&](double lambda) {
        double s = drift_gradient_sup(p, lambda, b, f, points, opt) / f_sup;
        rep.lambdas.push_back(lambda);
        rep.sups.push_back(s);
        return s;
    };
    double hi = 1.0;
    if (G(hi) > 0.5) {
        double lo = hi;
        while (true) {
            lo = hi;
            hi *= 2.0;
            if (hi > lambda_max) return rep;
            if (G(hi) <= 0.5) break;
        }
        while (hi / lo - 1.0 > rel_tol) {
            double mid = std::sqrt(lo * hi);
            (G(mid) <= 0.5 ? hi : lo) = mid;
        }
    }
    rep.lambda0 = hi;
    rep.found = true;
    for (double m : {2.0, 4.0}) {
        rep.check_lambdas.push_back(m * hi);
        rep.check_sups.push_back(drift_gradient_sup(p, m * hi, b, f, points, opt) / f_sup);
    }
    return rep;
}

}  // namespace heatlab
