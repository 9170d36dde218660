#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace heatlab {

/// Gauss-Legendre rule on [-1, 1].
struct GaussRule {
    std::vector<double> x;
    std::vector<double> w;
};

/// Cached n-point rule; safe to call concurrently.
const GaussRule& gauss_legendre(int n);

/// Integrate f over [lo, hi] split into `panels` equal panels of an n-point rule.
double gl_integrate(const std::function<double(double)>& f, double lo, double hi,
                    int panels = 1, int n = 16);

/// Integrate f over [lo, hi] with panels refined geometrically toward `lo`.
double gl_graded(const std::function<double(double)>& f, double lo, double hi,
                 int levels = 30, int n = 16);

/// Neumaier compensated summation.
class CompensatedSum {
public:
    void add(double v);
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Process-wide warning sink. Messages are deduplicated.
void warn(const std::string& message);
std::vector<std::string> take_warnings();

/// Number of worker threads used by parallel loops (0 means hardware concurrency).
void set_thread_count(unsigned n);
unsigned thread_count();

/// Run body(i) for i in [0, n). Work is split into contiguous chunks; callers
/// that need reproducible reductions must reduce per index, not per thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace heatlab
