#include "heatlab/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "heatlab/duhamel.hpp"
#include "heatlab/envelopes.hpp"
#include "heatlab/kato.hpp"
#include "heatlab/numerics.hpp"
#include "heatlab/resolvent.hpp"
#include "heatlab/sde.hpp"
#include "heatlab/stable_kernel.hpp"

namespace heatlab {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// key path -> flag name
const std::vector<std::pair<std::string, std::string>>& known_keys()
{
    static const std::vector<std::pair<std::string, std::string>> keys = {
        {"params.d", "d"},           {"params.alpha", "alpha"},   {"params.a", "a"},
        {"params.M", "M"},           {"grid.L", "L"},             {"grid.n", "n"},
        {"grid.times", "times"},     {"drift.id", "drift"},       {"run.seed", "seed"},
        {"run.N", "N"},              {"run.dt", "dt"},            {"run.tolerance", "tolerance"},
        {"run.t_star", "t-star"},    {"run.lambda", "lambda"},    {"run.threshold", "threshold"},
        {"run.x0", "x0"},            {"run.levels", "levels"},    {"run.threads", "threads"},
    };
    return keys;
}

std::string trim(const std::string& s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string unquote(std::string s)
{
    s = trim(s);
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
    return s;
}

double parse_double(const std::string& key, const std::string& text)
{
    std::string s = unquote(text);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw DomainError(key + ": expected a number, got '" + text + "'");
    return v;
}

long long parse_int(const std::string& key, const std::string& text)
{
    std::string s = unquote(text);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw DomainError(key + ": expected an integer, got '" + text + "'");
    return v;
}

std::vector<std::string> split_list(const std::string& text)
{
    std::string s = unquote(text);
    if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',' || c == ' ' || c == '\t') {
            if (!trim(cur).empty()) out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

struct Assigner {
    RunConfig& cfg;
    bool& m_set;

    void operator()(const std::string& key, const std::string& value)
    {
        if (key == "params.d") cfg.params.d = static_cast<int>(parse_int(key, value));
        else if (key == "params.alpha") cfg.params.alpha = parse_double(key, value);
        else if (key == "params.a") cfg.params.a = parse_double(key, value);
        else if (key == "params.M") {
            cfg.params.M = parse_double(key, value);
            m_set = true;
        } else if (key == "grid.L") cfg.L = parse_double(key, value);
        else if (key == "grid.n") cfg.n = static_cast<int>(parse_int(key, value));
        else if (key == "grid.times") {
            cfg.times.clear();
            for (auto& s : split_list(value)) cfg.times.push_back(parse_double(key, s));
        } else if (key == "drift.id") cfg.drift = unquote(value);
        else if (key == "run.seed") {
            std::string s = unquote(value);
            std::uint64_t v = 0;
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
                throw DomainError(key + ": expected an unsigned 64-bit integer, got '" + value + "'");
            cfg.seed = v;
        } else if (key == "run.N") {
            long long v = parse_int(key, value);
            if (v < 1) throw DomainError("run.N: must be at least 1");
            cfg.N = static_cast<std::size_t>(v);
        } else if (key == "run.dt") cfg.dt = parse_double(key, value);
        else if (key == "run.tolerance") cfg.tolerance = parse_double(key, value);
        else if (key == "run.t_star") cfg.t_star = parse_double(key, value);
        else if (key == "run.lambda") cfg.lambda = parse_double(key, value);
        else if (key == "run.threshold") cfg.threshold = parse_double(key, value);
        else if (key == "run.x0") {
            cfg.x0.clear();
            for (auto& s : split_list(value)) cfg.x0.push_back(parse_double(key, s));
        } else if (key == "run.levels") {
            cfg.levels.clear();
            for (auto& s : split_list(value)) cfg.levels.push_back(static_cast<int>(parse_int(key, s)));
        } else if (key == "run.threads") {
            long long v = parse_int(key, value);
            if (v < 0) throw DomainError("run.threads: must be nonnegative");
            cfg.threads = static_cast<unsigned>(v);
        } else {
            throw DomainError("unknown key '" + key + "'");
        }
    }
};

struct Flags {
    std::string command, config, out;
    std::map<std::string, std::string> overrides;  // key path -> value
};

void build_app(CLI::App& app, Flags& flags)
{
    app.add_option("command", flags.command, "Experiment to run")
        ->required()
        ->check(CLI::IsMember(cli_commands()));
    app.add_option("--config", flags.config, "Config file (sections params, grid, drift, run)");
    app.add_option("--out", flags.out, "Output directory");
    for (const auto& [key, flag] : known_keys()) {
        std::string k = key;
        app.add_option_function<std::string>(
            "--" + flag, [&flags, k](const std::string& v) { flags.overrides[k] = v; },
            "Override " + key);
    }
}

// --- output helpers -------------------------------------------------------

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string brief(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

class Csv {
public:
    Csv(const fs::path& file, const std::vector<std::string>& header) : os_(file, std::ios::binary)
    {
        if (!os_) throw std::runtime_error("cannot write " + file.string());
        for (std::size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
        os_ << '\n';
    }
    void row(const std::vector<double>& v)
    {
        for (std::size_t i = 0; i < v.size(); ++i) os_ << (i ? "," : "") << fmt(v[i]);
        os_ << '\n';
    }

private:
    std::ofstream os_;
};

struct Check {
    std::string name;
    double value = 0.0;
    double bound = 0.0;
    bool pass = false;
};

json to_json(const Check& c)
{
    return {{"name", c.name}, {"value", std::isfinite(c.value) ? json(c.value) : json(nullptr)},
            {"bound", c.bound}, {"pass", c.pass}};
}

Check at_most(const std::string& name, double value, double bound)
{
    return {name, value, bound, value <= bound};
}

Check at_least(const std::string& name, double value, double bound)
{
    return {name, value, bound, value >= bound};
}

Point origin_or(const RunConfig& cfg)
{
    return cfg.x0.empty() ? Point(cfg.params.d, 0.0) : cfg.x0;
}

SpaceTimeGrid make_grid(const RunConfig& cfg)
{
    SpaceTimeGrid g;
    g.d = cfg.params.d;
    g.L = cfg.L;
    g.n = cfg.n;
    g.times = cfg.times;
    return g;
}

void require_dims(const RunConfig& cfg, std::initializer_list<int> dims)
{
    if (std::find(dims.begin(), dims.end(), cfg.params.d) == dims.end()) {
        std::string s;
        for (int d : dims) s += (s.empty() ? "" : " or ") + std::to_string(d);
        throw DomainError("params.d: command '" + cfg.command + "' supports d = " + s);
    }
}

SeriesOptions series_options(const RunConfig& cfg)
{
    SeriesOptions opt;
    opt.tolerance = cfg.tolerance;
    return opt;
}

double resolve_tstar(const RunConfig& cfg, const DriftSpec& b, json& report)
{
    if (cfg.t_star > 0.0) {
        report["t_star"] = cfg.t_star;
        report["t_star_source"] = "config";
        return cfg.t_star;
    }
    auto probe = estimate_tstar(cfg.params, b);
    report["t_star"] = probe.t_star;
    report["t_star_source"] = "estimated";
    report["t_star_probe"] = {{"times", probe.times}, {"ratios", probe.ratios}};
    return probe.t_star;
}

void write_table(const fs::path& file, const HeatKernelTable& table, std::size_t source = 0)
{
    const auto& g = table.grid;
    std::vector<std::string> header = {"t"};
    for (int i = 0; i < g.d; ++i) header.push_back("y" + std::to_string(i + 1));
    header.push_back("p");
    Csv csv(file, header);
    for (std::size_t j = 0; j < g.times.size(); ++j)
        for (std::size_t i = 0; i < g.size(); ++i) {
            std::vector<double> row = {g.times[j]};
            for (double c : g.node(i)) row.push_back(c);
            row.push_back(table.slice(source, j)[i]);
            csv.row(row);
        }
}

json slice_json(const SliceDiagnostics& s)
{
    return {{"t", s.t},           {"mass", s.mass},       {"leak", s.leak},
            {"mass_defect", s.mass_defect}, {"raw_min", s.raw_min}, {"term_norms", s.term_norms},
            {"terms", s.terms}};
}

// --- commands -------------------------------------------------------------

struct Outcome {
    json report = json::object();
    std::vector<Check> checks;
};

Outcome cmd_kernel(const RunConfig& cfg, const fs::path& dir)
{
    Outcome o;
    const auto& p = cfg.params;
    const double h = 2.0 * cfg.L / cfg.n;
    Csv csv(dir / "kernel.csv", {"t", p.d == 1 ? "x" : "r", "p"});
    json masses = json::array();
    for (double t : cfg.times) {
        if (p.d == 1) {
            for (int j = 0; j <= cfg.n; ++j) {
                double x = -cfg.L + j * h;
                csv.row({t, x, eval_density(p, t, {x})});
            }
        } else {
            for (int j = 0; j <= cfg.n / 2; ++j) {
                Point x(p.d, 0.0);
                x[0] = j * h;
                csv.row({t, x[0], eval_density(p, t, x)});
            }
        }
        auto rep = normalization(p, t);
        masses.push_back({{"t", t}, {"mass", rep.mass}, {"error", rep.error}, {"tail_mass", rep.tail_mass}});
        o.checks.push_back(at_most("normalization at t=" + brief(t), std::abs(rep.mass - 1.0), p.d == 1 ? 1e-6 : 1e-4));
    }
    o.report["normalization"] = masses;
    return o;
}

Outcome cmd_grad(const RunConfig& cfg, const fs::path& dir)
{
    Outcome o;
    const auto& p = cfg.params;
    const int d = p.d;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    std::vector<std::string> header = {"t"};
    for (int i = 0; i < d; ++i) header.push_back("x" + std::to_string(i + 1));
    for (int i = 0; i < d; ++i) header.push_back("lift" + std::to_string(i + 1));
    for (int i = 0; i < d; ++i) header.push_back("fd" + std::to_string(i + 1));
    header.push_back("relative_error");
    Csv csv(dir / "grad.csv", header);
    double worst = 0.0;
    const double step = 1e-4;
    for (double t : cfg.times) {
        for (int k = 0; k < 50; ++k) {
            Point x(d);
            do {
                for (auto& c : x) c = U(rng);
            } while (norm(x) < 0.05);
            Point lift = grad_density(p, t, x), fd(d);
            for (int i = 0; i < d; ++i) {
                Point xp = x, xm = x;
                xp[i] += step;
                xm[i] -= step;
                fd[i] = (eval_density(p, t, xp) - eval_density(p, t, xm)) / (2 * step);
            }
            double rel = norm(sub(lift, fd)) / norm(fd);
            worst = std::max(worst, rel);
            std::vector<double> row = {t};
            row.insert(row.end(), x.begin(), x.end());
            row.insert(row.end(), lift.begin(), lift.end());
            row.insert(row.end(), fd.begin(), fd.end());
            row.push_back(rel);
            csv.row(row);
        }
    }
    o.report["max_relative_error"] = worst;
    o.checks.push_back(at_most("gradient lift vs finite differences", worst, 1e-5));
    return o;
}

Outcome cmd_bounds(const RunConfig& cfg, const fs::path& dir)
{
    Outcome o;
    const auto& p = cfg.params;
    const double M = p.M;
    const std::vector<double> as = {M / 8, M / 4, M / 2, M};
    const double T = cfg.times.back();
    auto lat = free_kernel_lattice(p, as, 12, 24, T);
    auto fit = fit_sandwich(p, lat);
    auto fine = fit_sandwich(p, free_kernel_lattice(p, as, 24, 48, T));
    double ratio = fit.upper.C / fit.lower.C, ratio_fine = fine.upper.C / fine.lower.C;
    Csv csv(dir / "lattice.csv", {"t", "r", "a", "value", "lower_envelope", "upper_envelope"});
    for (const auto& lp : lat) {
        StableParams q = p;
        q.a = lp.a;
        csv.row({lp.t, lp.r, lp.a, lp.value, fit.lower.C * q_envelope_radial(q, lp.d, fit.lower.beta, lp.t, lp.r),
                 fit.upper.C * q_envelope_radial(q, lp.d, fit.upper.beta, lp.t, lp.r)});
    }
    auto side = [](const EnvelopeParams& e) { return json{{"beta", e.beta}, {"C", e.C}}; };
    o.report["lower"] = side(fit.lower);
    o.report["upper"] = side(fit.upper);
    o.report["max_violation"] = fit.max_violation;
    o.report["a_values"] = as;
    o.report["constant_ratio"] = ratio;
    o.report["constant_ratio_refined"] = ratio_fine;
    o.checks.push_back(at_most("finite sandwich constants", std::isfinite(ratio) ? 0.0 : 1.0, 0.0));
    o.checks.push_back(at_most("lattice violations", fit.max_violation, 0.0));
    o.checks.push_back(at_most("constant ratio stability under refinement", std::abs(ratio_fine / ratio - 1.0), 0.05));
    return o;
}

Outcome cmd_kato(const RunConfig& cfg, const fs::path& dir)
{
    Outcome o;
    auto b = parse_drift(cfg.drift, cfg.params.d);
    std::vector<double> radii;
    for (int k = 0; k <= 8; ++k) radii.push_back(std::ldexp(1.0, -k));
    auto rep = kato_report(b, cfg.params.alpha, radii);
    Csv csv(dir / "kato.csv", {"r", "M"});
    for (std::size_t i = 0; i < rep.radii.size(); ++i) csv.row({rep.radii[i], rep.moduli[i]});
    o.report["tag"] = rep.tag;
    o.report["gamma"] = rep.gamma;
    o.report["verdict"] = rep.verdict;
    o.checks.push_back(at_least("Kato modulus tends to zero", rep.verdict ? 1.0 : 0.0, 1.0));
    return o;
}

Outcome cmd_series(const RunConfig& cfg, const fs::path& dir)
{
    require_dims(cfg, {1, 2});
    Outcome o;
    auto b = parse_drift(cfg.drift, cfg.params.d);
    auto opt = series_options(cfg);
    opt.t_star = resolve_tstar(cfg, b, o.report);
    auto res = sum_series(cfg.params, make_grid(cfg), b, {origin_or(cfg)}, opt);
    write_table(dir / "series.csv", res.table);
    const auto& dg = res.diagnostics;
    json slices = json::array();
    for (std::size_t j = 0; j < cfg.times.size(); ++j) {
        const auto& s = res.table.diagnostics[0][j];
        json e = slice_json(s);
        e["geometric_rate"] = dg.geometric_rate[j];
        e["max_term_ratio"] = dg.max_term_ratio[j];
        e["ratio"] = dg.ratio[j];
        e["truncation_k"] = dg.truncation_k[j];
        slices.push_back(e);
        std::string at = " at t=" + brief(s.t);
        o.checks.push_back(at_most("mass defect" + at, s.mass_defect, 1e-3));
        o.checks.push_back(at_least("raw positivity" + at, s.raw_min, -1e-6));
        o.checks.push_back(at_most("geometric term decay" + at, dg.geometric_rate[j], 0.25));
    }
    o.report["slices"] = slices;
    o.report["largest_usable_t"] = dg.largest_usable_t;
    return o;
}

Outcome cmd_extend(const RunConfig& cfg, const fs::path& dir)
{
    require_dims(cfg, {1});
    Outcome o;
    auto b = parse_drift(cfg.drift, 1);
    double ts = resolve_tstar(cfg, b, o.report);
    auto ext = extend_chapman_kolmogorov(cfg.params, make_grid(cfg), b, origin_or(cfg), ts, cfg.times,
                                         series_options(cfg));
    write_table(dir / "extend.csv", ext.table);
    json slices = json::array();
    for (std::size_t j = 0; j < ext.table.grid.times.size(); ++j) {
        const auto& s = ext.table.diagnostics[0][j];
        json e = slice_json(s);
        e["composition_residual"] = ext.composition_residual[j];
        slices.push_back(e);
        std::string at = " at t=" + brief(s.t);
        o.checks.push_back(at_most("composition residual" + at, ext.composition_residual[j], 3e-2));
        o.checks.push_back(at_most("mass defect" + at, s.mass_defect, 1e-3));
    }
    o.report["slices"] = slices;
    return o;
}

SimConfig sim_config(const RunConfig& cfg, const DriftSpec& b)
{
    SimConfig sc;
    sc.params = cfg.params;
    sc.drift = b;
    sc.x0 = origin_or(cfg);
    sc.T = cfg.times.back();
    sc.dt = cfg.dt > 0.0 ? cfg.dt : sc.T / 512;
    sc.N = cfg.N;
    sc.seed = cfg.seed;
    sc.times = cfg.times;
    return sc;
}

json ensemble_json(const PathEnsemble& e)
{
    return {{"N", e.N},
            {"seed", e.seed},
            {"seed_rule", e.seed_rule},
            {"dt", e.dt},
            {"jump_threshold", e.jump_threshold},
            {"times", e.times},
            {"aborted", e.aborted},
            {"aborted_fraction", e.aborted_fraction()},
            {"jump_records", e.jumps.size()}};
}

Outcome cmd_sde(const RunConfig& cfg, const fs::path& dir)
{
    Outcome o;
    auto b = parse_drift(cfg.drift, cfg.params.d);
    auto sc = sim_config(cfg, b);
    auto e = simulate_paths(sc);
    const int d = e.d;
    {
        std::vector<std::string> header = {"path", "t"};
        for (int i = 0; i < d; ++i) header.push_back("x" + std::to_string(i + 1));
        Csv csv(dir / "samples.csv", header);
        for (std::size_t j = 0; j < e.times.size(); ++j)
            for (std::size_t i = 0; i < e.N; ++i) {
                std::vector<double> row = {double(i), e.times[j]};
                for (int c = 0; c < d; ++c) row.push_back(e.samples[j][i * d + c]);
                csv.row(row);
            }
    }
    {
        Csv csv(dir / "jumps.csv", {"path", "time", "size"});
        for (const auto& j : e.jumps) csv.row({double(j.path), j.time, j.size});
    }
    auto tj = total_jump_check(e, cfg.params, sc.T);
    o.report["ensemble"] = ensemble_json(e);
    o.report["total_jumps"] = {{"mean", tj.mean}, {"standard_error", tj.standard_error},
                               {"expected_free", tj.expected}, {"z", tj.z}};
    o.checks.push_back(at_most("aborted path fraction", e.aborted_fraction(), 1e-3));
    return o;
}

Outcome cmd_compare(const RunConfig& cfg, const fs::path& dir)
{
    require_dims(cfg, {1, 2});
    Outcome o;
    auto b = parse_drift(cfg.drift, cfg.params.d);
    auto opt = series_options(cfg);
    opt.t_star = resolve_tstar(cfg, b, o.report);
    auto grid = make_grid(cfg);
    auto table = sum_series(cfg.params, grid, b, {origin_or(cfg)}, opt).table;
    auto e = simulate_paths(sim_config(cfg, b));
    std::vector<std::string> header = {"t"};
    for (int i = 0; i < grid.d; ++i) header.push_back("y" + std::to_string(i + 1));
    header.insert(header.end(), {"table", "histogram"});
    Csv csv(dir / "compare.csv", header);
    json rows = json::array();
    for (std::size_t j = 0; j < cfg.times.size(); ++j) {
        double t = cfg.times[j];
        auto est = empirical_density(e, t, grid);
        double l1 = l1_distance(est, table.slice(0, j));
        rows.push_back({{"t", t}, {"l1", l1}, {"l1_point_values", l1_distance(est, table.slice(0, j), false)},
                        {"inside_fraction", est.inside_fraction}, {"undersampled", est.undersampled}});
        o.checks.push_back(at_most("L1 table vs histogram at t=" + brief(t), l1, cfg.threshold));
        for (std::size_t i = 0; i < grid.size(); ++i) {
            std::vector<double> row = {t};
            for (double c : grid.node(i)) row.push_back(c);
            row.push_back(table.slice(0, j)[i]);
            row.push_back(est.values[i]);
            csv.row(row);
        }
    }
    o.report["comparisons"] = rows;
    o.report["ensemble"] = ensemble_json(e);
    o.checks.push_back(at_most("aborted path fraction", e.aborted_fraction(), 1e-3));
    return o;
}

Outcome cmd_resolvent(const RunConfig& cfg, const fs::path& dir)
{
    require_dims(cfg, {1, 2});
    Outcome o;
    const auto& p = cfg.params;
    double unit = resolvent_unit_mass(p, cfg.lambda);
    o.report["lambda"] = cfg.lambda;
    o.report["lambda_U1"] = unit;
    o.checks.push_back(at_most("lambda U 1 = 1", std::abs(unit - 1.0), 1e-6));

    auto b = parse_drift(cfg.drift, p.d);
    const double w = 1.5;  // support radius of the test bump f
    ScalarField f = [w](const Point& y) {
        double u = norm2(y) / (w * w);
        return u < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - u)) : 0.0;
    };
    std::vector<Point> pts;
    if (p.d == 1) {
        for (int i = -30; i <= 30; ++i) pts.push_back({i * 0.08});
    } else {
        for (int i = -8; i <= 8; ++i)
            for (int j = -8; j <= 8; ++j) pts.push_back({i * 0.25, j * 0.25});
    }
    KernelCache cache(p);
    ResolventOptions ro;
    ro.cache = &cache;
    ro.support_radius = w;
    auto rep = find_lambda0(p, b, f, 1.0, pts, ro);
    Csv csv(dir / "contraction.csv", {"lambda", "sup_grad_U_bf"});
    for (std::size_t i = 0; i < rep.lambdas.size(); ++i) csv.row({rep.lambdas[i], rep.sups[i]});
    for (std::size_t i = 0; i < rep.check_lambdas.size(); ++i) csv.row({rep.check_lambdas[i], rep.check_sups[i]});
    o.report["lambda0"] = rep.found ? json(rep.lambda0) : json(nullptr);
    o.checks.push_back(at_least("finite lambda0", rep.found ? 1.0 : 0.0, 1.0));
    for (std::size_t i = 0; i < rep.check_lambdas.size(); ++i)
        o.checks.push_back(at_most("contraction at lambda=" + brief(rep.check_lambdas[i]), rep.check_sups[i], 0.5));
    return o;
}

Outcome cmd_generator(const RunConfig& cfg, const fs::path& dir)
{
    require_dims(cfg, {1});
    Outcome o;
    auto b = parse_drift(cfg.drift, 1);
    auto f = gaussian_test_function(0.3, 0.7), g = gaussian_test_function(-0.2, 0.8);
    auto rep = generator_residual(cfg.params, make_grid(cfg), b, f, g, cfg.levels, series_options(cfg));
    Csv csv(dir / "generator.csv", {"level", "t", "D", "error"});
    for (std::size_t i = 0; i < rep.times.size(); ++i)
        csv.row({double(cfg.levels[i]), rep.times[i], rep.D[i], rep.errors[i]});
    o.report["target"] = rep.target;
    o.report["halving_ratios"] = rep.halving_ratios;
    const std::size_t n = rep.halving_ratios.size();
    for (std::size_t i = n >= 2 ? n - 2 : 0; i < n; ++i)
        o.checks.push_back(at_most("error halving ratio " + std::to_string(i + 1) + " within 30% of 2",
                                   std::abs(rep.halving_ratios[i] / 2.0 - 1.0), 0.3));
    return o;
}

}  // namespace

const std::vector<std::string>& cli_commands()
{
    static const std::vector<std::string> c = {"kernel", "grad",    "bounds",  "kato",      "series",
                                               "extend", "sde",     "compare", "resolvent", "generator"};
    return c;
}

void RunConfig::validate() const
{
    try {
        params.validate();
    } catch (const DomainError& e) {
        throw DomainError(std::string("params: ") + e.what());
    }
    if (params.d > 3) throw DomainError("params.d: dimensions above 3 are not supported");
    if (!(L > 0.0)) throw DomainError("grid.L: must be positive");
    if (n < 4 || n % 2) throw DomainError("grid.n: must be an even integer >= 4");
    if (times.empty()) throw DomainError("grid.times: at least one time is required");
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!(times[i] > 0.0)) throw DomainError("grid.times: times must be positive");
        if (i && !(times[i] > times[i - 1])) throw DomainError("grid.times: times must increase");
    }
    try {
        parse_drift(drift, params.d);
    } catch (const DomainError& e) {
        throw DomainError(std::string("drift.id: ") + e.what());
    }
    if (!(dt >= 0.0)) throw DomainError("run.dt: must be nonnegative");
    if (!(tolerance > 0.0 && tolerance < 1.0)) throw DomainError("run.tolerance: must lie in (0,1)");
    if (!(t_star >= 0.0)) throw DomainError("run.t_star: must be nonnegative");
    if (!(lambda > 0.0)) throw DomainError("run.lambda: must be positive");
    if (!(threshold > 0.0)) throw DomainError("run.threshold: must be positive");
    if (!x0.empty() && static_cast<int>(x0.size()) != params.d) throw DomainError("run.x0: needs d coordinates");
    if (levels.size() < 3) throw DomainError("run.levels: at least three levels are required");
    for (std::size_t i = 1; i < levels.size(); ++i)
        if (levels[i] <= levels[i - 1]) throw DomainError("run.levels: levels must increase");
}

namespace {

void load_into(const std::string& path, RunConfig& cfg, bool& m_set)
{
    if (!fs::exists(path)) throw DomainError("config file not found: " + path);
    Assigner assign{cfg, m_set};
    boost::property_tree::ptree pt;
    try {
        boost::property_tree::ini_parser::read_ini(path, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw DomainError("config " + path + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    for (const auto& [section, body] : pt) {
        if (body.empty()) throw DomainError("config " + path + ": key '" + section + "' outside a section");
        for (const auto& [key, value] : body) assign(section + "." + key, value.get_value<std::string>());
    }
}

}  // namespace

void load_config_file(const std::string& path, RunConfig& cfg)
{
    bool m_set = false;
    load_into(path, cfg, m_set);
}

namespace {

RunConfig resolve(const Flags& flags)
{
    RunConfig cfg;
    cfg.command = flags.command;
    bool m_set = false;
    Assigner assign{cfg, m_set};
    if (!flags.config.empty()) load_into(flags.config, cfg, m_set);
    for (const auto& [key, value] : flags.overrides) assign(key, value);
    if (!m_set) cfg.params.M = std::max(1.0, cfg.params.a);
    cfg.out = flags.out;
    cfg.validate();
    return cfg;
}

}  // namespace

RunConfig parse_config(int argc, const char* const* argv)
{
    CLI::App app{"heatlab"};
    Flags flags;
    build_app(app, flags);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        throw DomainError(e.what());
    }
    return resolve(flags);
}

std::string config_json(const RunConfig& cfg)
{
    json j;
    j["command"] = cfg.command;
    j["params"] = {{"d", cfg.params.d}, {"alpha", cfg.params.alpha}, {"a", cfg.params.a}, {"M", cfg.params.M}};
    j["grid"] = {{"L", cfg.L}, {"n", cfg.n}, {"times", cfg.times}};
    j["drift"] = {{"id", cfg.drift}};
    j["run"] = {{"seed", cfg.seed},         {"N", cfg.N},           {"dt", cfg.dt},
                {"tolerance", cfg.tolerance}, {"t_star", cfg.t_star}, {"lambda", cfg.lambda},
                {"threshold", cfg.threshold}, {"x0", cfg.x0},         {"levels", cfg.levels},
                {"threads", cfg.threads}};
    return j.dump(2) + "\n";
}

fs::path output_dir(const RunConfig& cfg)
{
    if (!cfg.out.empty()) return cfg.out;
    if (const char* env = std::getenv("HEATLAB_OUT"); env && *env) return fs::path(env) / cfg.command;
    return fs::path("heatlab_out") / cfg.command;
}

std::string sha256_file(const fs::path& file)
{
    std::ifstream is(file, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + file.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof buf);
        if (is.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(is.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::string hex;
    char two[3];
    for (unsigned i = 0; i < len; ++i) {
        std::snprintf(two, sizeof two, "%02x", md[i]);
        hex += two;
    }
    return hex;
}

int run(const RunConfig& cfg)
{
    const fs::path dir = output_dir(cfg);
    fs::create_directories(dir);
    set_thread_count(cfg.threads);
    take_warnings();
    {
        std::ofstream os(dir / "config.json", std::ios::binary);
        os << config_json(cfg);
    }
    using Cmd = Outcome (*)(const RunConfig&, const fs::path&);
    static const std::map<std::string, Cmd> table = {
        {"kernel", cmd_kernel},   {"grad", cmd_grad},       {"bounds", cmd_bounds},   {"kato", cmd_kato},
        {"series", cmd_series},   {"extend", cmd_extend},   {"sde", cmd_sde},         {"compare", cmd_compare},
        {"resolvent", cmd_resolvent}, {"generator", cmd_generator}};
    auto it = table.find(cfg.command);
    if (it == table.end()) {
        std::cerr << "error: unknown command '" << cfg.command << "'\n";
        return 2;
    }

    auto start = std::chrono::steady_clock::now();
    Outcome out;
    int status = 0;
    std::string failure;
    try {
        out = it->second(cfg, dir);
    } catch (const ConvergenceAbort& e) {
        failure = e.what();
        if (failure.rfind("contraction abort", 0) != 0) failure = "contraction abort: " + failure;
        status = 3;
    } catch (const DomainError& e) {
        failure = std::string("error: ") + e.what();
        status = 2;
    }
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (status == 0) {
        for (const auto& c : out.checks)
            if (!c.pass) {
                failure = "invariant failed: " + c.name + " (" + brief(c.value) + " vs bound " + brief(c.bound) + ")";
                status = 1;
                break;
            }
    }

    json report = out.report;
    report["command"] = cfg.command;
    report["status"] = status == 0 ? "pass" : "fail";
    if (!failure.empty()) report["failure"] = failure;
    json checks = json::array();
    for (const auto& c : out.checks) checks.push_back(to_json(c));
    report["checks"] = checks;
    report["warnings"] = take_warnings();
    {
        std::ofstream os(dir / "report.json", std::ios::binary);
        os << report.dump(2) << "\n";
    }
    {
        std::ofstream os(dir / "summary.txt", std::ios::binary);
        os << "heatlab " << cfg.command << ": " << (status == 0 ? "PASS" : "FAIL") << "\n";
        if (!failure.empty()) os << failure << "\n";
        for (const auto& c : out.checks)
            os << (c.pass ? "  ok    " : "  FAIL  ") << c.name << ": " << brief(c.value) << " (bound " << brief(c.bound)
               << ")\n";
        for (const auto& w : report["warnings"]) os << "  warning: " << w.get<std::string>() << "\n";
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.1f", seconds);
        os << "runtime " << buf << " s\n";
    }

    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() != "manifest.sha256")
            files.push_back(entry.path().filename().string());
    std::sort(files.begin(), files.end());
    {
        std::ofstream os(dir / "manifest.sha256", std::ios::binary);
        for (const auto& f : files) os << sha256_file(dir / f) << "  " << f << "\n";
    }

    if (status != 0) std::cerr << failure << "\n";
    std::cout << "heatlab " << cfg.command << ": " << (status == 0 ? "PASS" : "FAIL") << " -> " << dir.string()
              << "\n";
    return status;
}

int cli_main(int argc, const char* const* argv)
{
    CLI::App app{"heatlab: heat kernels of Delta + a^alpha Delta^{alpha/2} + b.grad"};
    Flags flags;
    build_app(app, flags);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    RunConfig cfg;
    try {
        cfg = resolve(flags);
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return run(cfg);
}

}  // namespace heatlab
