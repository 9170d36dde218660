#include "doctest.h"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "json.hpp"

#include "heatlab/cli.hpp"

using namespace heatlab;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

RunConfig parse(std::vector<std::string> args)
{
    args.insert(args.begin(), "heatlab");
    std::vector<const char*> argv;
    for (auto& a : args) argv.push_back(a.c_str());
    return parse_config(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name)
{
    fs::path p = fs::temp_directory_path() / ("heatlab_test_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

std::string slurp(const fs::path& file)
{
    std::ifstream is(file, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct Proc {
    int status = -1;
    std::string output;  // stdout and stderr
};

Proc run_binary(const std::string& args)
{
    Proc r;
    std::string cmd = std::string(HEATLAB_BIN) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
    int st = pclose(pipe);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

}  // namespace

TEST_CASE("minimal kernel flags give documented defaults")
{
    auto cfg = parse({"kernel", "--d", "1", "--alpha", "1", "--a", "1", "--times", "1"});
    CHECK(cfg.command == "kernel");
    CHECK(cfg.params.d == 1);
    CHECK(cfg.params.alpha == 1.0);
    CHECK(cfg.params.M == 1.0);
    CHECK(cfg.times == std::vector<double>{1.0});
    CHECK(cfg.L == 8.0);
    CHECK(cfg.n == 128);
    CHECK(cfg.drift == "zero");
    CHECK(cfg.seed == 1);
    CHECK(cfg.tolerance == 1e-6);
    // M follows a when not given
    CHECK(parse({"kernel", "--a", "3"}).params.M == 3.0);
}

TEST_CASE("invalid values are rejected with the key path")
{
    CHECK_THROWS_WITH_AS(parse({"kernel", "--alpha", "2.5"}), doctest::Contains("alpha must lie in (0,2)"),
                         DomainError);
    CHECK_THROWS_WITH_AS(parse({"kernel", "--n", "abc"}), doctest::Contains("grid.n"), DomainError);
    CHECK_THROWS_WITH_AS(parse({"kernel", "--times", "1,0.5"}), doctest::Contains("grid.times"), DomainError);
    CHECK_THROWS_WITH_AS(parse({"kernel", "--drift", "wobble"}), doctest::Contains("drift.id"), DomainError);
    CHECK_THROWS_AS(parse({"frobnicate"}), DomainError);
    CHECK_THROWS_AS(parse({"kernel", "--bogus", "1"}), DomainError);
}

TEST_CASE("config file, overrides and unknown keys")
{
    auto dir = scratch("config");
    fs::create_directories(dir);
    {
        std::ofstream os(dir / "run.toml");
        os << "[params]\nd = 1\nalpha = 1.5\na = 0.5\nM = 2\n\n[grid]\nL = 6\nn = 96\ntimes = [0.25, 0.5]\n\n"
              "[drift]\nid = \"bump:amplitude=2\"\n\n[run]\nseed = 42\nN = 500\n";
    }
    auto cfg = parse({"series", "--config", (dir / "run.toml").string(), "--seed", "7", "--alpha", "0.8"});
    CHECK(cfg.params.alpha == 0.8);
    CHECK(cfg.params.a == 0.5);
    CHECK(cfg.params.M == 2.0);
    CHECK(cfg.L == 6.0);
    CHECK(cfg.times == std::vector<double>{0.25, 0.5});
    CHECK(cfg.drift == "bump:amplitude=2");
    CHECK(cfg.seed == 7);
    CHECK(cfg.N == 500);
    auto echoed = json::parse(config_json(cfg));
    CHECK(echoed["run"]["seed"] == 7);
    CHECK(echoed["params"]["alpha"] == 0.8);

    {
        std::ofstream os(dir / "bad.ini");
        os << "[params]\nalpah = 1\n";
    }
    CHECK_THROWS_WITH_AS(parse({"kernel", "--config", (dir / "bad.ini").string()}),
                         doctest::Contains("unknown key 'params.alpah'"), DomainError);
    {
        std::ofstream os(dir / "section.ini");
        os << "[extras]\nfoo = 1\n";
    }
    CHECK_THROWS_WITH_AS(parse({"kernel", "--config", (dir / "section.ini").string()}),
                         doctest::Contains("unknown key 'extras.foo'"), DomainError);
    {
        std::ofstream os(dir / "loose.ini");
        os << "alpha = 1\n";
    }
    CHECK_THROWS_WITH_AS(parse({"kernel", "--config", (dir / "loose.ini").string()}),
                         doctest::Contains("outside a section"), DomainError);
    CHECK_THROWS_WITH_AS(parse({"kernel", "--config", (dir / "missing.ini").string()}),
                         doctest::Contains("not found"), DomainError);
    fs::remove_all(dir.parent_path());
}

TEST_CASE("output directory resolution")
{
    auto cfg = parse({"kernel"});
    cfg.out = "/tmp/explicit";
    CHECK(output_dir(cfg) == fs::path("/tmp/explicit"));
    cfg.out.clear();
    setenv("HEATLAB_OUT", "/tmp/root", 1);
    CHECK(output_dir(cfg) == fs::path("/tmp/root/kernel"));
    unsetenv("HEATLAB_OUT");
    CHECK(output_dir(cfg) == fs::path("heatlab_out/kernel"));
}

TEST_CASE("sha256 of known input")
{
    auto dir = scratch("sha");
    fs::create_directories(dir);
    {
        std::ofstream os(dir / "abc.txt", std::ios::binary);
        os << "abc";
    }
    CHECK(sha256_file(dir / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    fs::remove_all(dir.parent_path());
}

TEST_CASE("kernel run: artifacts, manifest, byte-identical reruns")
{
    auto a = scratch("kernel_a"), b = scratch("kernel_b");
    auto cfg = parse({"kernel", "--times", "0.1,1", "--n", "32", "--out", a.string()});
    CHECK(run(cfg) == 0);
    cfg.out = b.string();
    CHECK(run(cfg) == 0);
    for (auto f : {"config.json", "kernel.csv", "report.json", "summary.txt", "manifest.sha256"})
        CHECK(fs::exists(a / f));
    CHECK(slurp(a / "kernel.csv") == slurp(b / "kernel.csv"));
    auto csv = slurp(a / "kernel.csv");
    CHECK(csv.rfind("t,x,p\n", 0) == 0);
    CHECK(csv.find('\r') == std::string::npos);

    std::istringstream man(slurp(a / "manifest.sha256"));
    std::string hash, name;
    int listed = 0;
    while (man >> hash >> name) {
        CHECK(hash == sha256_file(a / name));
        ++listed;
    }
    CHECK(listed == 4);
    auto report = json::parse(slurp(a / "report.json"));
    CHECK(report["status"] == "pass");
    CHECK(report["normalization"].size() == 2);
    fs::remove_all(a.parent_path());
}

TEST_CASE("sde run is reproducible from the seed")
{
    auto a = scratch("sde_a"), b = scratch("sde_b"), c = scratch("sde_c");
    auto cfg = parse({"sde", "--drift", "bump:amplitude=2", "--times", "0.0625", "--N", "2000", "--out", a.string()});
    CHECK(run(cfg) == 0);
    cfg.out = b.string();
    cfg.threads = 2;
    CHECK(run(cfg) == 0);
    CHECK(slurp(a / "samples.csv") == slurp(b / "samples.csv"));
    CHECK(slurp(a / "jumps.csv") == slurp(b / "jumps.csv"));
    cfg.out = c.string();
    cfg.seed = 99;
    CHECK(run(cfg) == 0);
    CHECK(slurp(a / "samples.csv") != slurp(c / "samples.csv"));
    fs::remove_all(a.parent_path());
}

TEST_CASE("binary: exit codes")
{
    auto dir = scratch("bin");
    auto bad = run_binary("kernel --alpha 2.5 --out " + (dir / "bad").string());
    CHECK(bad.status != 0);
    CHECK(bad.output.find("alpha must lie in (0,2)") != std::string::npos);

    auto beyond = run_binary("series --drift bump:amplitude=2 --t-star 0.0625 --times 0.03125,0.5 --out " +
                             (dir / "beyond").string());
    CHECK(beyond.status != 0);
    CHECK(beyond.output.find("contraction abort") != std::string::npos);
    auto rep = json::parse(slurp(dir / "beyond" / "report.json"));
    CHECK(rep["status"] == "fail");

    auto bounds = run_binary("bounds --M 2 --a 2 --out " + (dir / "bounds").string());
    CHECK(bounds.status == 0);
    auto fit = json::parse(slurp(dir / "bounds" / "report.json"));
    CHECK(fit["lower"]["C"].is_number());
    CHECK(fit["upper"]["C"].is_number());
    CHECK(fit["upper"]["C"].get<double>() > 0.0);

    auto help = run_binary("--help");
    CHECK(help.status == 0);
    CHECK(help.output.find("--config") != std::string::npos);
    fs::remove_all(dir.parent_path());
}

TEST_CASE("binary: compare with zero drift passes")
{
    auto dir = scratch("compare");
    auto r = run_binary("compare --times 0.03125 --N 50000 --t-star 0.0625 --out " + dir.string());
    CHECK(r.status == 0);
    auto rep = json::parse(slurp(dir / "report.json"));
    CHECK(rep["comparisons"][0]["l1"].get<double>() <= 0.05);
    fs::remove_all(dir.parent_path());
}
