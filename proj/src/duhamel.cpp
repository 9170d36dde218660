#include "heatlab/duhamel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/Dense>

#include "heatlab/numerics.hpp"
#include "heatlab/stable_kernel.hpp"

namespace heatlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

std::string fmt(double v)
{
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------- geometry

// One-sided mass of p^a(t, .) in d = 1 beyond r.
double tail_1d(const StableParams& p, double t, double r)
{
    double R = slice_extent(p, t);
    if (r >= R) return 0.5 * tail_mass(p, 1, t, r);
    return 0.5 * (radial_integral(p, 1, t, r, R, [](double) { return 1.0; }) + tail_mass(p, 1, t, R));
}

// T(r_m) for r_m = (m + 1/2) h, m = 0..count.
std::vector<double> tail_table_1d(const StableParams& p, double t, double h, int count)
{
    std::vector<double> T(count + 1);
    T[count] = tail_1d(p, t, (count + 0.5) * h);
    for (int m = count - 1; m >= 0; --m)
        T[m] = T[m + 1] + 0.5 * radial_integral(p, 1, t, (m + 0.5) * h, (m + 1.5) * h,
                                                [](double) { return 1.0; });
    return T;
}

// Angle (radians) of the circle |y - z| = rho lying inside the square [-Lp, Lp]^2.
double inside_angle(double x, double y, double rho, double Lp)
{
    std::vector<double> cuts = {0.0, 2.0 * kPi};
    auto add = [&](double c) {
        if (std::abs(c) <= 1.0) {
            double a = std::acos(c);
            cuts.push_back(a);
            cuts.push_back(2.0 * kPi - a);
        }
    };
    auto adds = [&](double s) {
        if (std::abs(s) <= 1.0) {
            double a = std::asin(s);
            cuts.push_back(a < 0 ? a + 2.0 * kPi : a);
            cuts.push_back(kPi - a);
        }
    };
    add((Lp - x) / rho);
    add((-Lp - x) / rho);
    adds((Lp - y) / rho);
    adds((-Lp - y) / rho);
    std::sort(cuts.begin(), cuts.end());
    double inside = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        double a = cuts[i], b = cuts[i + 1];
        if (b - a <= 0.0) continue;
        double m = 0.5 * (a + b);
        double px = x + rho * std::cos(m), py = y + rho * std::sin(m);
        if (std::abs(px) <= Lp && std::abs(py) <= Lp) inside += b - a;
    }
    return inside;
}

// Radii where the inside angle has kinks, sorted, within [lo, hi].
std::vector<double> arc_breaks(double x, double y, double Lp)
{
    std::vector<double> br = {Lp - x, Lp + x, Lp - y, Lp + y};
    for (double sx : {-1.0, 1.0})
        for (double sy : {-1.0, 1.0}) br.push_back(std::hypot(sx * Lp - x, sy * Lp - y));
    std::sort(br.begin(), br.end());
    return br;
}

// Exterior mass of p^a(t, . - x0) outside the square via the polar arc formula.
double exterior_2d(const StableParams& p, double t, double x, double y, double Lp)
{
    auto br = arc_breaks(x, y, Lp);
    double far = br.back();
    auto w = [&](double r) { return 1.0 - inside_angle(x, y, r, Lp) / (2.0 * kPi); };
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < br.size(); ++i) {
        if (br[i + 1] - br[i] <= 1e-14) continue;
        total += radial_integral(p, 2, t, br[i], br[i + 1], w);
    }
    double R = slice_extent(p, t);
    if (far >= R) return total + tail_mass(p, 2, t, far);
    return total + radial_integral(p, 2, t, far, R, [](double) { return 1.0; }) + tail_mass(p, 2, t, R);
}

// F(z) = int_{outside the square} |y - z|^{-2-alpha} dy.
double exterior_power_2d(double alpha, double x, double y, double Lp)
{
    auto br = arc_breaks(x, y, Lp);
    auto f = [&](double r) { return (2.0 * kPi - inside_angle(x, y, r, Lp)) * std::pow(r, -1.0 - alpha); };
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < br.size(); ++i) {
        double a = br[i], b = br[i + 1];
        if (b - a <= 1e-14) continue;
        double m = 0.5 * (a + b);
        // sqrt-type kinks at both ends of each interval
        total += gl_graded(f, a, m, 12, 12);
        total += gl_graded([&](double r) { return f(a + b - r); }, a, b - m, 12, 12);
    }
    return total + 2.0 * kPi * std::pow(br.back(), -alpha) / alpha;
}

// ---------------------------------------------------------------- quadrature

struct Rule {
    std::vector<double> x, w;
};

// Frequency nodes on [0, rho_max]: a graded first panel for the |rho|^alpha cusp and
// GL8 panels no wider than half a period of cos(m h rho) for m <= n + 1.
Rule frequency_rule(double rho_max, double h, int n)
{
    int panels = std::max(4, static_cast<int>(std::ceil(rho_max * h * (n + 1) / kPi)));
    double w = rho_max / panels;
    const auto& g = gauss_legendre(8);
    Rule r;
    auto panel = [&](double a, double b) {
        for (std::size_t i = 0; i < g.x.size(); ++i) {
            r.x.push_back(0.5 * (a + b) + 0.5 * (b - a) * g.x[i]);
            r.w.push_back(0.5 * (b - a) * g.w[i]);
        }
    };
    double lo = w * std::pow(0.5, 12);
    panel(0.0, lo);
    for (double a = lo; a < w * (1.0 - 1e-12); a *= 2.0) panel(a, std::min(2.0 * a, w));
    for (int k = 1; k < panels; ++k) panel(k * w, (k + 1) * w);
    return r;
}

double band_limit(const StableParams& p, double s, double h)
{
    return std::min(kPi / h, frequency_cutoff(p, s));
}

// Band-limited kernels at time s for offsets m = 0..n (d = 1):
//   D(m) = p_BL(s, m h), G(m) = h d/dx p_BL(s, m h), H(m) = p_BL(s, (m + 1/2) h).
struct Weights1 {
    std::vector<double> D, G, H;
};

Weights1 weights_1d(const StableParams& p, double s, double h, int n, bool want_d, bool want_gh)
{
    Rule r = frequency_rule(band_limit(p, s, h), h, n);
    Weights1 W;
    if (want_d) W.D.assign(n + 1, 0.0);
    if (want_gh) {
        W.G.assign(n + 1, 0.0);
        W.H.assign(n + 1, 0.0);
    }
    for (std::size_t q = 0; q < r.x.size(); ++q) {
        double rho = r.x[q];
        double e = r.w[q] * std::exp(-s * char_exponent_radial(p, rho)) / kPi;
        double c = std::cos(h * rho), sn = std::sin(h * rho);
        if (want_d) {
            double cm = 1.0, sm = 0.0;
            for (int m = 0; m <= n; ++m) {
                W.D[m] += e * cm;
                double nc = cm * c - sm * sn;
                sm = sm * c + cm * sn;
                cm = nc;
            }
        }
        if (want_gh) {
            double cm = 1.0, sm = 0.0;
            double ch = std::cos(0.5 * h * rho), shh = std::sin(0.5 * h * rho);
            for (int m = 0; m <= n; ++m) {
                W.G[m] -= h * e * rho * sm;
                W.H[m] += e * ch;
                double nc = cm * c - sm * sn;
                sm = sm * c + cm * sn;
                cm = nc;
                double nch = ch * c - shh * sn;
                shh = shh * c + ch * sn;
                ch = nch;
            }
        }
    }
    return W;
}

// d = 2: D(m1, m2) = p_BL(s, m h) and G1(m1, m2) = h^2 d/dx1 p_BL(s, m h) for
// m1, m2 = 0..n, stored (n+1) x (n+1). G2(m1, m2) = G1(m2, m1).
struct Weights2 {
    Mat D, G;
};

Weights2 weights_2d(const StableParams& p, double s, double h, int n, bool want_d, bool want_g)
{
    Rule r = frequency_rule(band_limit(p, s, h), h, n);
    const int Q = static_cast<int>(r.x.size());
    Mat E(Q, Q), C(n + 1, Q), S(n + 1, Q);
    for (int a = 0; a < Q; ++a)
        for (int b = 0; b < Q; ++b)
            E(a, b) = std::exp(-s * char_exponent_radial(p, std::hypot(r.x[a], r.x[b])));
    for (int m = 0; m <= n; ++m)
        for (int q = 0; q < Q; ++q) {
            C(m, q) = r.w[q] * std::cos(m * h * r.x[q]);
            S(m, q) = r.w[q] * r.x[q] * std::sin(m * h * r.x[q]);
        }
    Weights2 W;
    Mat EC = E * C.transpose();
    if (want_d) W.D = (C * EC) / (kPi * kPi);
    if (want_g) W.G = -(h * h / (kPi * kPi)) * (S * EC);
    return W;
}

struct TimeNode {
    double s, sigma, w;
};

// int_0^tau F(tau - s, s) ds split at tau/2; each half is mapped by x -> (tau/2) x^2
// toward its endpoint and graded where the band-limited kernels change on the
// h^2 scale.
std::vector<TimeNode> time_nodes(double tau, double h)
{
    double kappa = 0.5 * tau * (kPi / h) * (kPi / h);
    std::vector<double> br = {0.0};
    if (kappa > 4.0) {
        for (double u = 2.0 / std::sqrt(kappa); u < 1.0; u *= 2.0) br.push_back(u);
    }
    br.push_back(1.0);
    const auto& g = gauss_legendre(12);
    std::vector<TimeNode> out;
    for (std::size_t k = 0; k + 1 < br.size(); ++k) {
        double a = br[k], b = br[k + 1];
        for (std::size_t i = 0; i < g.x.size(); ++i) {
            double x = 0.5 * (a + b) + 0.5 * (b - a) * g.x[i];
            double wx = 0.5 * (b - a) * g.w[i] * tau * x;
            double near = 0.5 * tau * x * x;
            out.push_back({near, tau - near, wx});
            out.push_back({tau - near, near, wx});
        }
    }
    return out;
}

// ---------------------------------------------------------------- engine

// Picard layers on a per-slice internal grid tau_j = t (j/J)^2. Sources are densities
// on the grid (columns); point sources also carry their node for the exact k = 0 path.
class Engine {
public:
    Engine(const StableParams& p, const SpaceTimeGrid& g, const DriftSpec& b, Mat sources,
           std::vector<long> point_nodes)
        : p_(p), g_(g), src_(std::move(sources)), point_(std::move(point_nodes))
    {
        n_ = g.n;
        h_ = g.h();
        A_ = g.axis_nodes();
        N_ = static_cast<long>(g.size());
        S_ = src_.cols();
        bx_.assign(g.d, Vec::Zero(N_));
        for (long i = 0; i < N_; ++i) {
            Point z = g.node(i);
            Point v = b(z);
            bool finite = true;
            for (double c : v) finite = finite && std::isfinite(c);
            if (!finite) v = cell_average(b, z);
            for (int c = 0; c < g.d; ++c) bx_[c](i) = v[c];
        }
        for (long i = 0; i < N_; ++i)
            for (int c = 0; c < g.d; ++c) active_ = active_ || bx_[c](i) != 0.0;
        if (g.d == 2) {
            // tail-law leak weights: a^alpha A s grad F(z)
            gradF_.assign(2, Vec::Zero(N_));
            double Lp = g.L + 0.5 * h_, eps = 1e-3 * h_;
            for (long i = 0; i < N_; ++i) {
                if (bx_[0](i) == 0.0 && bx_[1](i) == 0.0) continue;
                Point z = g.node(i);
                gradF_[0](i) = (exterior_power_2d(p.alpha, z[0] + eps, z[1], Lp) -
                                exterior_power_2d(p.alpha, z[0] - eps, z[1], Lp)) / (2.0 * eps);
                gradF_[1](i) = (exterior_power_2d(p.alpha, z[0], z[1] + eps, Lp) -
                                exterior_power_2d(p.alpha, z[0], z[1] - eps, Lp)) / (2.0 * eps);
            }
            leak_scale_ = p.a_alpha() * levy_constant(2, p.alpha);
        }
    }

    bool active() const { return active_; }

    struct Output {
        Mat p0;                   // band-limited k = 0 at t
        std::vector<Mat> layers;  // k >= 1 at t (index k - 1)
        std::vector<Vec> leaks;   // k >= 1
        std::vector<std::vector<double>> norms;  // [k][source], k = 0 included
    };

    // Layers until every source meets the tolerance, or exactly `fixed` layers.
    Output run(double t, double tol, int max_terms, bool check_growth, int fixed = -1)
    {
        prepare(t);
        Output out;
        out.p0 = p0_band(weights_at(t, true, false));
        out.norms.push_back(col_sup(out.p0));
        inner_.assign(1, {});
        int target = fixed >= 0 ? fixed : max_terms;
        for (int k = 1; k <= target; ++k) {
            std::vector<Mat> layer(J_ + 1, Mat::Zero(N_, S_));
            Vec leak = Vec::Zero(S_);
            for (int j = 1; j <= J_; ++j) {
                auto prev = [&](std::size_t node) {
                    return k == 1 ? p0_band(slices_[j].sig[node]) : interp(inner_[k - 1], slices_[j].nodes[node].sigma);
                };
                layer[j] = integrate(j, prev, j == J_ ? &leak : nullptr);
            }
            inner_.push_back(std::move(layer));
            out.layers.push_back(inner_[k][J_]);
            out.leaks.push_back(leak);
            out.norms.push_back(col_sup(inner_[k][J_]));
            if (check_growth) {
                for (long c = 0; c < S_; ++c)
                    if (out.norms[k][c] > out.norms[k - 1][c])
                        throw ConvergenceAbort("contraction abort: Picard term " + std::to_string(k) +
                                               " grows at t=" + fmt(t));
            }
            if (fixed < 0) {
                bool done = true;
                for (long c = 0; c < S_; ++c) done = done && out.norms[k][c] <= tol * out.norms[0][c];
                if (done) break;
            }
        }
        return out;
    }

    // One more Picard step applied to the summed layers of the last run.
    Mat step_of_sum()
    {
        int K = static_cast<int>(inner_.size()) - 1;
        auto prev = [&](std::size_t node) {
            const auto& nd = slices_[J_].nodes[node];
            Mat P = p0_band(slices_[J_].sig[node]);
            for (int k = 1; k <= K; ++k) P += interp(inner_[k], nd.sigma);
            return P;
        };
        return integrate(J_, prev, nullptr);
    }

private:
    struct Slice {
        double tau = 0.0;
        std::vector<TimeNode> nodes;
        std::vector<Weights1> gs1, sig1;
        std::vector<Weights2> gs2, sig2;
        // d-independent views
        std::vector<const void*> sig;
    };

    // Kernel weights at time s in the engine's dimension.
    struct AnyWeights {
        const Weights1* w1 = nullptr;
        const Weights2* w2 = nullptr;
    };

    Weights1 tmp1_;
    Weights2 tmp2_;

    AnyWeights weights_at(double s, bool want_d, bool want_g)
    {
        if (g_.d == 1) {
            tmp1_ = weights_1d(p_, s, h_, n_, want_d, want_g);
            return {&tmp1_, nullptr};
        }
        tmp2_ = weights_2d(p_, s, h_, n_, want_d, want_g);
        return {nullptr, &tmp2_};
    }

    // Mean over a 4^d sub-lattice of the node cell; used where b is singular at the node.
    Point cell_average(const DriftSpec& b, const Point& z) const
    {
        Point acc(z.size(), 0.0);
        int count = 0;
        for (int k = 0; k < (g_.d == 1 ? 4 : 16); ++k) {
            Point y = z;
            y[0] += h_ * ((k % 4) + 0.5) / 4.0 - 0.5 * h_;
            if (g_.d == 2) y[1] += h_ * ((k / 4) + 0.5) / 4.0 - 0.5 * h_;
            Point v = b(y);
            for (std::size_t c = 0; c < v.size(); ++c) acc[c] += v[c];
            ++count;
        }
        for (double& c : acc) c /= count;
        return acc;
    }

    void prepare(double t)
    {
        if (t == t_) return;
        t_ = t;
        slices_.assign(J_ + 1, Slice());
        for (int j = 1; j <= J_; ++j) {
            Slice& sl = slices_[j];
            double v = static_cast<double>(j) / J_;
            sl.tau = t * v * v;
            sl.nodes = time_nodes(sl.tau, h_);
            for (const auto& nd : sl.nodes) {
                if (g_.d == 1) {
                    sl.gs1.push_back(weights_1d(p_, nd.s, h_, n_, false, true));
                    sl.sig1.push_back(weights_1d(p_, nd.sigma, h_, n_, true, false));
                } else {
                    sl.gs2.push_back(weights_2d(p_, nd.s, h_, n_, false, true));
                    sl.sig2.push_back(weights_2d(p_, nd.sigma, h_, n_, true, false));
                }
            }
            for (std::size_t q = 0; q < sl.nodes.size(); ++q)
                sl.sig.push_back(g_.d == 1 ? static_cast<const void*>(&sl.sig1[q])
                                           : static_cast<const void*>(&sl.sig2[q]));
        }
    }

    Mat p0_band(const void* w) const
    {
        if (g_.d == 1) return p0_band({static_cast<const Weights1*>(w), nullptr});
        return p0_band({nullptr, static_cast<const Weights2*>(w)});
    }

    Mat p0_band(AnyWeights w) const
    {
        Mat P = Mat::Zero(N_, S_);
        for (long c = 0; c < S_; ++c) {
            long src = point_.empty() ? -1 : point_[c];
            if (g_.d == 1) {
                const auto& D = w.w1->D;
                if (src >= 0) {
                    for (long i = 0; i < N_; ++i) P(i, c) = D[std::abs(i - src)];
                } else {
                    for (long i = 0; i < N_; ++i) {
                        double acc = 0.0;
                        for (long j = 0; j < N_; ++j) acc += D[std::abs(i - j)] * src_(j, c);
                        P(i, c) = acc * h_;
                    }
                }
            } else {
                const Mat& D = w.w2->D;
                long s1 = src / A_, s2 = src % A_;
                for (long i = 0; i < N_; ++i) P(i, c) = D(std::abs(i / A_ - s1), std::abs(i % A_ - s2));
            }
        }
        return P;
    }

    // Cubic Lagrange interpolation of an internal layer at time sigma (in v = sqrt(sigma/t)).
    Mat interp(const std::vector<Mat>& layer, double sigma) const
    {
        double x = std::sqrt(std::max(0.0, sigma) / t_) * J_;
        int i0 = std::clamp(static_cast<int>(std::floor(x)) - 1, 0, J_ - 3);
        Mat out = Mat::Zero(N_, S_);
        for (int a = 0; a < 4; ++a) {
            double l = 1.0;
            for (int b = 0; b < 4; ++b)
                if (b != a) l *= (x - (i0 + b)) / static_cast<double>(a - b);
            if (l != 0.0) out += l * layer[i0 + a];
        }
        return out;
    }

    template <class Prev>
    Mat integrate(int j, Prev prev, Vec* leak)
    {
        const Slice& sl = slices_[j];
        Mat acc = Mat::Zero(N_, S_);
        std::vector<Mat> q(g_.d, Mat(N_, S_));
        for (std::size_t node = 0; node < sl.nodes.size(); ++node) {
            const auto& nd = sl.nodes[node];
            Mat P = prev(node);
            for (int c = 0; c < g_.d; ++c) q[c] = bx_[c].asDiagonal() * P;
            if (g_.d == 1) {
                const auto& G = sl.gs1[node].G;
                for (long s = 0; s < S_; ++s) {
                    const double* qs = q[0].col(s).data();
                    double* out = acc.col(s).data();
                    for (long i = 0; i < N_; ++i) {
                        double v = 0.0;
                        for (long jj = 0; jj < i; ++jj) v -= G[i - jj] * qs[jj];
                        for (long jj = i + 1; jj < N_; ++jj) v += G[jj - i] * qs[jj];
                        out[i] += nd.w * v;
                    }
                }
                if (leak) {
                    const auto& H = sl.gs1[node].H;
                    for (long s = 0; s < S_; ++s) {
                        double v = 0.0;
                        for (long jj = 0; jj < N_; ++jj) v += (H[n_ - jj] - H[jj]) * q[0](jj, s);
                        (*leak)(s) += nd.w * h_ * v;
                    }
                }
            } else {
                const Mat& G = sl.gs2[node].G;
                for (long s = 0; s < S_; ++s) {
                    for (long i = 0; i < N_; ++i) {
                        long i1 = i / A_, i2 = i % A_;
                        double v = 0.0;
                        for (long jj = 0; jj < N_; ++jj) {
                            long m1 = jj / A_ - i1, m2 = jj % A_ - i2;
                            long a1 = std::abs(m1), a2 = std::abs(m2);
                            double s1 = m1 > 0 ? 1.0 : (m1 < 0 ? -1.0 : 0.0);
                            double s2 = m2 > 0 ? 1.0 : (m2 < 0 ? -1.0 : 0.0);
                            v += s1 * G(a1, a2) * q[0](jj, s) + s2 * G(a2, a1) * q[1](jj, s);
                        }
                        acc(i, s) += nd.w * v;
                    }
                    if (leak) {
                        double v = 0.0;
                        for (long jj = 0; jj < N_; ++jj)
                            v += gradF_[0](jj) * q[0](jj, s) + gradF_[1](jj) * q[1](jj, s);
                        (*leak)(s) += nd.w * leak_scale_ * nd.s * v * h_ * h_;
                    }
                }
            }
        }
        return acc;
    }

    static std::vector<double> col_sup(const Mat& M)
    {
        std::vector<double> out(M.cols());
        for (long c = 0; c < M.cols(); ++c) out[c] = M.col(c).cwiseAbs().maxCoeff();
        return out;
    }

    const StableParams p_;
    const SpaceTimeGrid g_;
    Mat src_;
    std::vector<long> point_;
    int n_ = 0;
    long A_ = 0, N_ = 0, S_ = 0;
    double h_ = 0.0;
    std::vector<Vec> bx_;
    std::vector<Vec> gradF_;
    double leak_scale_ = 0.0;
    bool active_ = false;
    int J_ = 32;
    double t_ = -1.0;
    std::vector<Slice> slices_;
    std::vector<std::vector<Mat>> inner_;

public:
    void set_internal_nodes(int J)
    {
        if (J < 4) throw DomainError("internal_nodes must be at least 4");
        J_ = J;
        t_ = -1.0;
    }
};

}  // namespace

// ---------------------------------------------------------------- public helpers

std::size_t SpaceTimeGrid::size() const
{
    std::size_t a = static_cast<std::size_t>(axis_nodes());
    return d == 1 ? a : a * a;
}

double SpaceTimeGrid::cell() const { return std::pow(h(), d); }

Point SpaceTimeGrid::node(std::size_t i) const
{
    const std::size_t A = static_cast<std::size_t>(axis_nodes());
    if (d == 1) return {-L + static_cast<double>(i) * h()};
    return {-L + static_cast<double>(i / A) * h(), -L + static_cast<double>(i % A) * h()};
}

std::size_t SpaceTimeGrid::nearest_node(const Point& x) const
{
    if (static_cast<int>(x.size()) != d) throw DomainError("source dimension does not match the grid");
    auto axis = [&](double v) {
        long k = std::lround((v + L) / h());
        if (k < 0 || k > n) throw DomainError("source " + fmt(v) + " lies outside the grid box");
        return static_cast<std::size_t>(k);
    };
    if (d == 1) return axis(x[0]);
    return axis(x[0]) * static_cast<std::size_t>(axis_nodes()) + axis(x[1]);
}

double exterior_mass(const StableParams& p, const SpaceTimeGrid& grid, double t, const Point& x0)
{
    double Lp = grid.L + 0.5 * grid.h();
    if (grid.d == 1) return tail_1d(p, t, Lp - x0[0]) + tail_1d(p, t, Lp + x0[0]);
    return exterior_2d(p, t, x0[0], x0[1], Lp);
}

void validate_grid(const SpaceTimeGrid& grid, const StableParams& p, double tail_budget)
{
    p.validate();
    if (grid.d != p.d) throw DomainError("grid dimension does not match d");
    if (grid.d != 1 && grid.d != 2) throw DomainError("heat kernel tables support d = 1 and d = 2");
    if (!(grid.L > 0.0) || grid.n < 4) throw DomainError("grid needs L > 0 and n >= 4");
    if (grid.times.empty()) throw DomainError("grid has no slice times");
    for (std::size_t j = 0; j < grid.times.size(); ++j) {
        if (!(grid.times[j] > 0.0)) throw DomainError("slice times must be positive");
        if (j > 0 && !(grid.times[j] > grid.times[j - 1])) throw DomainError("slice times must increase");
    }
    double tmax = grid.times.back();
    double out = exterior_mass(p, grid, tmax, Point(grid.d, 0.0));
    if (out > tail_budget)
        throw DomainError("grid too small: mass " + fmt(out) + " outside the box at t=" + fmt(tmax) +
                          " exceeds the tail budget " + fmt(tail_budget));
    if (std::sqrt(grid.times.front()) < grid.h())
        warn("grid under-resolved: sqrt(t_min) < h");
}

double HeatKernelTable::sup_norm(std::size_t source, std::size_t j) const
{
    double m = 0.0;
    for (double v : values[source][j]) m = std::max(m, std::abs(v));
    return m;
}

namespace {

// Point values of p^a(t, y - x0) on the grid; equal distances share one evaluation.
std::vector<double> free_values(const StableParams& p, const SpaceTimeGrid& g, double t, std::size_t src)
{
    const std::size_t N = g.size();
    const long A = g.axis_nodes();
    std::map<long, double> cache;
    std::vector<long> key(N);
    for (std::size_t i = 0; i < N; ++i) {
        long k;
        if (g.d == 1) {
            k = std::abs(static_cast<long>(i) - static_cast<long>(src));
            k = k * k;
        } else {
            long m1 = static_cast<long>(i) / A - static_cast<long>(src) / A;
            long m2 = static_cast<long>(i) % A - static_cast<long>(src) % A;
            k = m1 * m1 + m2 * m2;
        }
        key[i] = k;
        cache[k] = 0.0;
    }
    std::vector<long> keys;
    for (auto& kv : cache) keys.push_back(kv.first);
    std::vector<double> vals(keys.size());
    const double h = g.h();
    parallel_for(keys.size(), [&](std::size_t i) {
        Point x(g.d, 0.0);
        x[0] = h * std::sqrt(static_cast<double>(keys[i]));
        vals[i] = eval_density(p, t, x);
    });
    for (std::size_t i = 0; i < keys.size(); ++i) cache[keys[i]] = vals[i];
    std::vector<double> out(N);
    for (std::size_t i = 0; i < N; ++i) out[i] = cache[key[i]];
    return out;
}

std::vector<std::size_t> snap_sources(const SpaceTimeGrid& g, const std::vector<Point>& sources,
                                      std::vector<Point>& snapped)
{
    if (sources.empty()) throw DomainError("table needs at least one source");
    std::vector<std::size_t> idx;
    snapped.clear();
    for (const auto& x : sources) {
        std::size_t i = g.nearest_node(x);
        idx.push_back(i);
        snapped.push_back(g.node(i));
    }
    return idx;
}

std::string label(const Point& x)
{
    std::string s;
    for (std::size_t i = 0; i < x.size(); ++i) s += (i ? "," : "") + fmt(x[i]);
    return s;
}

HeatKernelTable empty_table(const StableParams& p, const SpaceTimeGrid& g, const DriftSpec& b,
                            std::size_t sources)
{
    HeatKernelTable tab;
    tab.grid = g;
    tab.params = p;
    tab.drift_id = b.id;
    tab.values.assign(sources, std::vector<std::vector<double>>(g.times.size()));
    tab.diagnostics.assign(sources, std::vector<SliceDiagnostics>(g.times.size()));
    return tab;
}

void finish_slice(std::vector<double>& v, SliceDiagnostics& dg, double cell, double initial_mass,
                  const SeriesOptions& opt)
{
    CompensatedSum mass;
    dg.raw_min = std::numeric_limits<double>::infinity();
    for (double& x : v) {
        dg.raw_min = std::min(dg.raw_min, x);
        if (opt.clamp && x < 0.0 && x >= -opt.noise_floor) x = 0.0;
        mass.add(x * cell);
    }
    dg.mass = mass.value();
    dg.mass_defect = std::abs(dg.mass + dg.leak - initial_mass);
}

// Shared driver for point and density sources.
SeriesResult run_series(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                        const Mat& densities, const std::vector<long>& points, int fixed_layer,
                        const SeriesOptions& opt)
{
    const bool is_point = !points.empty();
    const long S = densities.cols();
    const double cell = grid.cell();
    const double Lp = grid.L + 0.5 * grid.h();
    SeriesResult res;
    res.table = empty_table(p, grid, b, static_cast<std::size_t>(S));
    res.table.layer = fixed_layer;
    res.diagnostics.t_star = opt.t_star;
    Engine eng(p, grid, b, densities, points);
    eng.set_internal_nodes(opt.internal_nodes);
    std::vector<double> initial(S, 1.0);
    if (!is_point)
        for (long c = 0; c < S; ++c) initial[c] = densities.col(c).sum() * cell;

    double usable = 0.0;
    for (std::size_t j = 0; j < grid.times.size(); ++j) {
        const double t = grid.times[j];
        if (opt.t_star > 0.0 && t > opt.t_star * (1.0 + 1e-12))
            throw ConvergenceAbort("contraction abort: slice t=" + fmt(t) + " lies beyond t_star=" +
                                   fmt(opt.t_star) + "; largest usable t=" + fmt(opt.t_star));
        // k = 0 layer and its exact exterior mass
        std::vector<std::vector<double>> vals(S);
        std::vector<double> leak0(S, 0.0);
        Engine::Output out;
        bool need_engine = eng.active() && fixed_layer != 0;
        if (need_engine) {
            try {
                if (fixed_layer > 0)
                    out = eng.run(t, 0.0, fixed_layer, false, fixed_layer);
                else
                    out = eng.run(t, opt.tolerance, opt.max_terms, true);
            } catch (const ConvergenceAbort& e) {
                throw ConvergenceAbort(std::string(e.what()) + "; largest usable t=" + fmt(usable));
            }
        }
        std::vector<double> T1;
        if (grid.d == 1 && fixed_layer <= 0) T1 = tail_table_1d(p, t, grid.h(), 2 * grid.n + 1);
        for (long c = 0; c < S; ++c) {
            if (fixed_layer > 0) {
                if (need_engine)
                    vals[c].assign(out.layers.back().col(c).data(), out.layers.back().col(c).data() + out.layers.back().rows());
                else
                    vals[c].assign(grid.size(), 0.0);
                continue;
            }
            if (is_point) {
                vals[c] = free_values(p, grid, t, static_cast<std::size_t>(points[c]));
                Point x0 = grid.node(static_cast<std::size_t>(points[c]));
                if (grid.d == 1) {
                    long k = points[c];
                    leak0[c] = T1[grid.n - k] + T1[k];
                } else {
                    leak0[c] = exterior_2d(p, t, x0[0], x0[1], Lp);
                }
            } else {
                if (!need_engine) out.p0 = Mat();
                Mat P0 = need_engine ? out.p0 : Mat();
                if (!need_engine) {
                    // band-limited k = 0 by direct convolution
                    Weights1 W = weights_1d(p, t, grid.h(), grid.n, true, false);
                    vals[c].assign(grid.size(), 0.0);
                    for (long i = 0; i < densities.rows(); ++i) {
                        double acc = 0.0;
                        for (long k = 0; k < densities.rows(); ++k) acc += W.D[std::abs(i - k)] * densities(k, c);
                        vals[c][i] = acc * grid.h();
                    }
                } else {
                    vals[c].assign(P0.col(c).data(), P0.col(c).data() + P0.rows());
                }
                for (long k = 0; k < densities.rows(); ++k)
                    leak0[c] += densities(k, c) * cell * (T1[grid.n - k] + T1[k]);
            }
        }
        std::vector<double> slice_norms;
        int terms = 1;
        for (long c = 0; c < S; ++c) {
            SliceDiagnostics& dg = res.table.diagnostics[c][j];
            dg.t = t;
            double n0 = 0.0;
            for (double v : vals[c]) n0 = std::max(n0, std::abs(v));
            dg.term_norms.push_back(n0);
            dg.leak = leak0[c];
            if (fixed_layer < 0 && need_engine) {
                for (std::size_t k = 0; k < out.layers.size(); ++k) {
                    for (long i = 0; i < out.layers[k].rows(); ++i) vals[c][i] += out.layers[k](i, c);
                    dg.term_norms.push_back(out.norms[k + 1][c]);
                    dg.leak += out.leaks[k](c);
                }
            }
            if (fixed_layer > 0) {
                dg.term_norms = {need_engine ? out.norms.back()[c] : 0.0};
                dg.leak = need_engine ? out.leaks.back()(c) : 0.0;
            }
            dg.terms = static_cast<int>(fixed_layer < 0 ? 1 + (need_engine ? out.layers.size() : 0) : 1);
            terms = std::max(terms, dg.terms);
            if (fixed_layer > 0) {
                CompensatedSum m;
                dg.raw_min = *std::min_element(vals[c].begin(), vals[c].end());
                for (double v : vals[c]) m.add(v * cell);
                dg.mass = m.value();
                dg.mass_defect = std::abs(dg.mass + dg.leak);
            } else {
                finish_slice(vals[c], dg, cell, initial[c], opt);
            }
            if (slice_norms.size() < dg.term_norms.size()) slice_norms.resize(dg.term_norms.size(), 0.0);
            for (std::size_t k = 0; k < dg.term_norms.size(); ++k)
                slice_norms[k] = std::max(slice_norms[k], dg.term_norms[k]);
            res.table.values[c][j] = std::move(vals[c]);
        }
        res.diagnostics.term_norms.push_back(slice_norms);
        res.diagnostics.truncation_k.push_back(terms);
        res.diagnostics.ratio_sqrt_t.push_back(std::sqrt(t));
        double ratio = 0.0;
        if (need_engine && fixed_layer < 0 && !out.layers.empty())
            for (long c = 0; c < S; ++c) ratio = std::max(ratio, out.norms[1][c] / out.norms[0][c]);
        res.diagnostics.ratio.push_back(ratio);
        double rate = 0.0, step = 0.0;
        for (std::size_t k = 1; k < slice_norms.size(); ++k) {
            if (slice_norms[0] > 0.0) rate = std::max(rate, std::pow(slice_norms[k] / slice_norms[0], 1.0 / k));
            if (slice_norms[k - 1] > 0.0) step = std::max(step, slice_norms[k] / slice_norms[k - 1]);
        }
        res.diagnostics.geometric_rate.push_back(rate);
        res.diagnostics.max_term_ratio.push_back(step);
        usable = t;
    }
    res.diagnostics.largest_usable_t = usable;
    return res;
}

Mat point_densities(const SpaceTimeGrid& g, const std::vector<std::size_t>& idx)
{
    Mat M = Mat::Zero(static_cast<long>(g.size()), static_cast<long>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) M(static_cast<long>(idx[c]), static_cast<long>(c)) = 1.0 / g.cell();
    return M;
}

}  // namespace

HeatKernelTable build_table_p0(const StableParams& p, const SpaceTimeGrid& grid,
                               const std::vector<Point>& sources)
{
    return picard_term(p, grid, zero_drift(grid.d), sources, 0);
}

HeatKernelTable picard_term(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                            const std::vector<Point>& sources, int k, const SeriesOptions& opt)
{
    if (k < 0) throw DomainError("Picard index must be nonnegative");
    validate_grid(grid, p);
    std::vector<Point> snapped;
    auto idx = snap_sources(grid, sources, snapped);
    std::vector<long> pts(idx.begin(), idx.end());
    SeriesResult r = run_series(p, grid, b, point_densities(grid, idx), pts, k, opt);
    r.table.sources = snapped;
    for (const auto& x : snapped) r.table.source_labels.push_back(label(x));
    return r.table;
}

SeriesResult sum_series(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                        const std::vector<Point>& sources, const SeriesOptions& opt)
{
    validate_grid(grid, p);
    std::vector<Point> snapped;
    auto idx = snap_sources(grid, sources, snapped);
    std::vector<long> pts(idx.begin(), idx.end());
    SeriesResult r = run_series(p, grid, b, point_densities(grid, idx), pts, -1, opt);
    r.table.sources = snapped;
    for (const auto& x : snapped) r.table.source_labels.push_back(label(x));
    return r;
}

SeriesResult sum_series_density(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                                const std::vector<std::vector<double>>& densities,
                                const SeriesOptions& opt)
{
    validate_grid(grid, p);
    if (grid.d != 1) throw DomainError("density sources are supported in d = 1 only");
    if (densities.empty()) throw DomainError("table needs at least one source");
    Mat M(static_cast<long>(grid.size()), static_cast<long>(densities.size()));
    for (std::size_t c = 0; c < densities.size(); ++c) {
        if (densities[c].size() != grid.size()) throw DomainError("density size does not match the grid");
        for (std::size_t i = 0; i < grid.size(); ++i) M(static_cast<long>(i), static_cast<long>(c)) = densities[c][i];
    }
    SeriesResult r = run_series(p, grid, b, M, {}, -1, opt);
    r.table.sources.assign(densities.size(), Point());
    for (std::size_t c = 0; c < densities.size(); ++c) r.table.source_labels.push_back("density" + std::to_string(c));
    return r;
}

TStarProbe estimate_tstar(const StableParams& p, const DriftSpec& b, double L, int n, int min_level)
{
    TStarProbe probe;
    SpaceTimeGrid g;
    g.d = p.d;
    g.L = L;
    g.n = n;
    g.times = {1.0};
    std::vector<Point> pts;
    Point c = b.support_center.empty() ? Point(p.d, 0.0) : b.support_center;
    pts.push_back(c);
    if (b.compact()) {
        Point lo = c, hi = c;
        lo[0] -= 0.5 * b.support_radius;
        hi[0] += 0.5 * b.support_radius;
        pts.push_back(lo);
        pts.push_back(hi);
    }
    std::vector<long> idx;
    for (const auto& x : pts) idx.push_back(static_cast<long>(g.nearest_node(x)));
    Mat M = Mat::Zero(static_cast<long>(g.size()), static_cast<long>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) M(idx[k], static_cast<long>(k)) = 1.0 / g.cell();
    Engine eng(p, g, b, M, idx);
    if (!eng.active()) {
        probe.t_star = 1.0;
        probe.times = {1.0};
        probe.ratios = {0.0};
        return probe;
    }
    eng.set_internal_nodes(16);
    for (int k = 0; k <= min_level; ++k) {
        double t = std::ldexp(1.0, -k);
        auto out = eng.run(t, 0.0, 1, false, 1);
        double ratio = 0.0;
        for (std::size_t c = 0; c < idx.size(); ++c) ratio = std::max(ratio, out.norms[1][c] / out.norms[0][c]);
        probe.times.push_back(t);
        probe.ratios.push_back(ratio);
        if (ratio <= 0.25) {
            probe.t_star = t;
            return probe;
        }
    }
    warn("estimate_tstar: no probe time reached contraction ratio 1/4");
    probe.t_star = probe.times.back();
    return probe;
}

std::vector<double> compose(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                            const std::vector<double>& density, double s, const SeriesOptions& opt)
{
    SpaceTimeGrid g = grid;
    g.times = {s};
    SeriesOptions o = opt;
    o.t_star = 0.0;
    return sum_series_density(p, g, b, {density}, o).table.values[0][0];
}

CKReport ck_residual(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                     const Point& x0, double t, double s, const SeriesOptions& opt)
{
    SpaceTimeGrid g = grid;
    g.times = {t, t + s};
    if (s < 0.0 || t <= 0.0) throw DomainError("ck_residual needs t > 0 and s >= 0");
    if (s == 0.0) g.times = {t};
    SeriesOptions o = opt;
    o.t_star = 0.0;
    auto direct = sum_series(p, g, b, {x0}, o);
    const auto& pts = direct.table.values[0];
    CKReport rep{t, s, 0.0};
    if (s == 0.0) return rep;
    auto comp = compose(p, grid, b, pts[0], s, o);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < comp.size(); ++i) {
        num = std::max(num, std::abs(pts[1][i] - comp[i]));
        den = std::max(den, std::abs(pts[1][i]));
    }
    rep.residual = num / den;
    return rep;
}

ExtensionResult extend_chapman_kolmogorov(const StableParams& p, const SpaceTimeGrid& grid,
                                          const DriftSpec& b, const Point& x0, double t_star,
                                          const std::vector<double>& times, const SeriesOptions& opt)
{
    if (grid.d != 1) throw DomainError("extension by composition is supported in d = 1 only");
    if (!(t_star > 0.0)) throw DomainError("extension needs t_star > 0");
    SeriesOptions o = opt;
    o.t_star = 0.0;
    // each step adds its own leak; the composed density already excludes earlier losses
    double leak = 0.0;
    auto series_at = [&](double t) {
        SpaceTimeGrid g = grid;
        g.times = {t};
        auto r = sum_series(p, g, b, {x0}, o);
        leak = r.table.diagnostics[0][0].leak;
        return r.table.values[0][0];
    };
    auto step = [&](const std::vector<double>& dens, double s) {
        SpaceTimeGrid g = grid;
        g.times = {s};
        auto r = sum_series_density(p, g, b, {dens}, o);
        leak += r.table.diagnostics[0][0].leak;
        return r.table.values[0][0];
    };
    ExtensionResult ext;
    SpaceTimeGrid out_grid = grid;
    out_grid.times = times;
    ext.table = empty_table(p, out_grid, b, 1);
    ext.table.sources = {grid.node(grid.nearest_node(x0))};
    ext.table.source_labels = {label(ext.table.sources[0])};
    const double cell = grid.cell();
    for (std::size_t j = 0; j < times.size(); ++j) {
        double T = times[j];
        int k = static_cast<int>(std::floor(T / t_star * (1.0 + 1e-12)));
        double rest = T - k * t_star;
        if (rest < 1e-12 * T) rest = 0.0;
        std::vector<double> main;
        if (k == 0) {
            main = series_at(T);
        } else {
            main = series_at(t_star);
            for (int i = 1; i < k; ++i) main = step(main, t_star);
            if (rest > 0.0) main = step(main, rest);
        }
        const double main_leak = leak;
        int m = std::max(k, 1) + 2;
        double dt = T / m;
        std::vector<double> alt = series_at(dt);
        for (int i = 1; i < m; ++i) alt = compose(p, grid, b, alt, dt, o);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < main.size(); ++i) {
            num = std::max(num, std::abs(main[i] - alt[i]));
            den = std::max(den, std::abs(main[i]));
        }
        ext.composition_residual.push_back(num / den);
        SliceDiagnostics& dg = ext.table.diagnostics[0][j];
        dg.t = T;
        dg.terms = 0;
        dg.leak = main_leak;
        finish_slice(main, dg, cell, 1.0, o);
        ext.table.values[0][j] = std::move(main);
    }
    return ext;
}

DuhamelReport duhamel_residual(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                               const Point& x0, double t, const SeriesOptions& opt)
{
    SpaceTimeGrid g = grid;
    g.times = {t};
    validate_grid(g, p);
    std::size_t src = g.nearest_node(x0);
    Mat M = point_densities(g, {src});
    Engine eng(p, g, b, M, {static_cast<long>(src)});
    eng.set_internal_nodes(opt.internal_nodes);
    DuhamelReport rep;
    rep.t = t;
    rep.residual.assign(g.size(), 0.0);
    if (!eng.active()) return rep;
    auto out = eng.run(t, opt.tolerance, opt.max_terms, true);
    Mat sum = out.p0;
    for (const auto& L : out.layers) sum += L;
    Mat I = eng.step_of_sum();
    Mat R = sum - out.p0 - I;
    double pmax = sum.cwiseAbs().maxCoeff();
    for (long i = 0; i < R.rows(); ++i) {
        rep.residual[i] = R(i, 0);
        rep.sup_relative = std::max(rep.sup_relative, std::abs(R(i, 0)) / pmax);
        if (sum(i, 0) >= 1e-2 * pmax)
            rep.max_relative_bulk = std::max(rep.max_relative_bulk, std::abs(R(i, 0)) / sum(i, 0));
    }
    return rep;
}

TestFunction gaussian_test_function(double center, double width, double amplitude)
{
    if (!(width > 0.0)) throw DomainError("test function width must be positive");
    TestFunction f;
    double w2 = width * width;
    f.f = [=](double x) { double u = x - center; return amplitude * std::exp(-0.5 * u * u / w2); };
    f.df = [=](double x) { double u = x - center; return -amplitude * u / w2 * std::exp(-0.5 * u * u / w2); };
    f.d2f = [=](double x) {
        double u = x - center;
        return amplitude * (u * u / w2 - 1.0) / w2 * std::exp(-0.5 * u * u / w2);
    };
    return f;
}

double fractional_laplacian_1d(const TestFunction& f, double alpha, double x, double delta)
{
    const double A = levy_constant(1, alpha);
    double inner = f.d2f(x) * std::pow(delta, 2.0 - alpha) / (2.0 - alpha);
    auto g = [&](double y) { return (f.f(x + y) + f.f(x - y)) * std::pow(y, -1.0 - alpha); };
    double outer = -2.0 * f.f(x) * std::pow(delta, -alpha) / alpha;
    double lo = delta;
    while (lo < 1.0) {
        double hi = std::min(1.0, 2.0 * lo);
        outer += gl_integrate(g, lo, hi, 1, 16);
        lo = hi;
    }
    // the test functions are Gaussians of width <= a few units
    outer += gl_integrate(g, 1.0, std::abs(x) + 60.0, 240, 16);
    double total = A * (inner + outer);
    if (std::abs(A * inner) > 0.1 * std::abs(total) + 1e-6)
        warn("fractional Laplacian: inner-ball correction exceeds 10% of the result");
    return total;
}

GeneratorReport generator_residual(const StableParams& p, const SpaceTimeGrid& grid, const DriftSpec& b,
                                   const TestFunction& f, const TestFunction& g,
                                   const std::vector<int>& levels, const SeriesOptions& opt)
{
    if (grid.d != 1) throw DomainError("generator_residual is implemented for d = 1");
    GeneratorReport rep;
    const double aa = p.a_alpha();
    auto Lf = [&](double x) {
        double v = f.d2f(x) + b({x})[0] * f.df(x);
        if (aa > 0.0) v += aa * fractional_laplacian_1d(f, p.alpha, x);
        return v;
    };
    rep.target = gl_integrate([&](double x) { return Lf(x) * g.f(x); }, -grid.L, grid.L, 4 * grid.n, 8);
    std::vector<double> gv(grid.size()), fv(grid.size());
    double fg = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double z = grid.node(i)[0];
        gv[i] = g.f(z);
        fv[i] = f.f(z);
        fg += fv[i] * gv[i] * grid.h();
    }
    SeriesOptions o = opt;
    o.t_star = 0.0;
    o.clamp = false;
    for (int k : levels) {
        double t = std::ldexp(1.0, -k);
        SpaceTimeGrid gg = grid;
        gg.times = {t};
        auto u = sum_series_density(p, gg, b, {gv}, o).table.values[0][0];
        CompensatedSum s;
        for (std::size_t i = 0; i < u.size(); ++i) s.add(fv[i] * u[i] * grid.h());
        double D = (s.value() - fg) / t;
        rep.times.push_back(t);
        rep.D.push_back(D);
        rep.errors.push_back(std::abs(D - rep.target));
    }
    for (std::size_t i = 0; i + 1 < rep.errors.size(); ++i)
        rep.halving_ratios.push_back(rep.errors[i] / rep.errors[i + 1]);
    return rep;
}

}  // namespace heatlab
