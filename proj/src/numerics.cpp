#include "heatlab/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <thread>

#include <boost/math/special_functions/legendre.hpp>

namespace heatlab {

namespace {

GaussRule build_rule(int n)
{
    GaussRule rule;
    auto zeros = boost::math::legendre_p_zeros<double>(n);
    std::vector<double> xs;
    for (double z : zeros) {
        xs.push_back(z);
        if (z != 0.0) xs.push_back(-z);
    }
    std::sort(xs.begin(), xs.end());
    for (double x : xs) {
        double dp = boost::math::legendre_p_prime<double>(n, x);
        rule.x.push_back(x);
        rule.w.push_back(2.0 / ((1.0 - x * x) * dp * dp));
    }
    return rule;
}

std::mutex g_rule_mutex;
std::map<int, std::unique_ptr<GaussRule>> g_rules;

std::mutex g_warn_mutex;
std::vector<std::string> g_warnings;
std::set<std::string> g_warn_seen;

std::atomic<unsigned> g_threads{0};

}  // namespace

const GaussRule& gauss_legendre(int n)
{
    std::lock_guard<std::mutex> lock(g_rule_mutex);
    auto& slot = g_rules[n];
    if (!slot) slot = std::make_unique<GaussRule>(build_rule(n));
    return *slot;
}

double gl_integrate(const std::function<double(double)>& f, double lo, double hi, int panels,
                    int n)
{
    const GaussRule& g = gauss_legendre(n);
    double width = (hi - lo) / panels;
    double total = 0.0;
    for (int p = 0; p < panels; ++p) {
        double a = lo + p * width;
        double c = a + 0.5 * width;
        double s = 0.0;
        for (std::size_t i = 0; i < g.x.size(); ++i) s += g.w[i] * f(c + 0.5 * width * g.x[i]);
        total += 0.5 * width * s;
    }
    return total;
}

double gl_graded(const std::function<double(double)>& f, double lo, double hi, int levels, int n)
{
    double total = 0.0;
    double top = hi;
    double len = hi - lo;
    for (int k = 0; k < levels; ++k) {
        double bottom = lo + 0.5 * (top - lo);
        total += gl_integrate(f, bottom, top, 1, n);
        top = bottom;
    }
    // The remaining sliver is tiny; one panel is enough for integrable endpoint behaviour.
    if (top - lo > 0.0 && top - lo < len) total += gl_integrate(f, lo, top, 1, n);
    return total;
}

void CompensatedSum::add(double v)
{
    double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
        comp_ += (sum_ - t) + v;
    else
        comp_ += (v - t) + sum_;
    sum_ = t;
}

void warn(const std::string& message)
{
    std::lock_guard<std::mutex> lock(g_warn_mutex);
    if (g_warn_seen.insert(message).second) g_warnings.push_back(message);
}

std::vector<std::string> take_warnings()
{
    std::lock_guard<std::mutex> lock(g_warn_mutex);
    std::vector<std::string> out;
    out.swap(g_warnings);
    g_warn_seen.clear();
    return out;
}

void set_thread_count(unsigned n) { g_threads = n; }

unsigned thread_count()
{
    unsigned n = g_threads.load();
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body)
{
    unsigned workers = std::min<std::size_t>(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&] {
        try {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                body(i);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = n;
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace heatlab
