#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace heatlab {

using Point = std::vector<double>;

class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class SingularityError : public DomainError {
public:
    using DomainError::DomainError;
};

/// Raised when a Picard layer grows instead of contracting.
class ConvergenceAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The triple (d, alpha, a) of the free operator Delta + a^alpha Delta^{alpha/2},
/// together with the cap M on a.
struct StableParams {
    int d = 1;
    double alpha = 1.0;
    double a = 1.0;
    double M = 1.0;

    void validate() const;
    double a_alpha() const;  // a^alpha
};

double norm(const Point& x);
double norm2(const Point& x);
Point sub(const Point& x, const Point& y);

/// Surface area of the unit sphere S^{d-1} in R^d (2 for d = 1).
double sphere_area(int d);

}  // namespace heatlab
