#include "heatlab/params.hpp"

#include <cmath>
#include <numbers>

namespace heatlab {

void StableParams::validate() const
{
    if (d < 1) throw DomainError("d must be a positive integer");
    if (!(alpha > 0.0 && alpha < 2.0)) throw DomainError("alpha must lie in (0,2)");
    if (!(a > 0.0)) throw DomainError("a must be positive");
    if (!(M > 0.0)) throw DomainError("M must be positive");
    if (a > M) throw DomainError("a must not exceed M");
}

double StableParams::a_alpha() const { return std::pow(a, alpha); }

double norm2(const Point& x)
{
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
}

double norm(const Point& x) { return std::sqrt(norm2(x)); }

Point sub(const Point& x, const Point& y)
{
    if (x.size() != y.size()) throw DomainError("dimension mismatch");
    Point z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] - y[i];
    return z;
}

double sphere_area(int d)
{
    return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
}

}  // namespace heatlab
