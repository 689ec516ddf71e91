#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "gffperc/rng.hpp"
#include "gffperc/runner.hpp"

using namespace gffperc;
using namespace gffperc::runner;
namespace fs = std::filesystem;

namespace {

RunConfig parse(const std::string& text) {
    std::istringstream is(text);
    return RunConfig::parse(is);
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("gffperc-test-" + name);
    fs::remove_all(p);
    return p;
}

// Synthetic face-crossing thresholds: a box of size N crosses at level h
// when h <= 1 + noise / sqrt(N), so every pair of curves crosses at h = 1.
std::vector<std::vector<double>> synthetic_thresholds(const std::vector<int>& sizes, int replicas,
                                                      std::uint64_t seed) {
    std::vector<std::vector<double>> t(replicas);
    for (int r = 0; r < replicas; ++r) {
        RandomStream rs(seed, std::uint32_t(r), Purpose::Misc);
        for (int n : sizes) t[r].push_back(1.0 + 2.0 * rs.normal() / std::sqrt(double(n)));
    }
    return t;
}

}  // namespace

TEST(Config, ParsesListsAndFlags) {
    const auto c = parse("experiment = one-arm-scan\nN = 2, 3,4\nh = 0.5,1.75\nrelaxed-k = true\nseed = 9\n");
    EXPECT_EQ(c.experiment, "one-arm-scan");
    EXPECT_EQ(c.N, (std::vector<int>{2, 3, 4}));
    EXPECT_EQ(c.h, (std::vector<double>{0.5, 1.75}));
    EXPECT_TRUE(c.relaxed_k);
    EXPECT_EQ(c.seed, 9u);
}

TEST(Config, UnknownKeyIsAnError) {
    EXPECT_THROW(parse("experiment = field-sample\nreplica = 3\n"), ConfigError);
}

TEST(Config, MalformedValueIsAnError) {
    try {
        parse("experiment = field-sample\nN = 4,x\n");
        FAIL();
    } catch (const ConfigError& e) {
        ASSERT_EQ(e.errors().size(), 1u);
        EXPECT_NE(e.errors()[0].find("'x'"), std::string::npos);
    }
}

TEST(Config, EmptyReplicasRejected) {
    const auto c = parse("experiment = field-sample\nN = 4\nreplicas = 0\n");
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        bool found = false;
        for (const auto& m : e.errors()) found = found || m.find("replicas") != std::string::npos;
        EXPECT_TRUE(found);
    }
}

TEST(Config, ItemizesEveryViolation) {
    const auto c = parse("experiment = one-arm-scan\nd = 4\nN = 4\nh = 1.0\nhstar-lo = 0.8\nhstar-hi = 1.4\n"
                         "replicas = 10\nnout-factor = 1\n");
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.errors().size(), 3u);  // d, level inside bracket, nout-factor
    }
}

TEST(Config, TextRoundTrip) {
    auto c = parse("experiment = coarse-grain-demo\nd = 3\nN = 1200\nK = 4\nL = 10\nrelaxed-k = true\n"
                   "domain = ball,annulus\nreplicas = 3\nrho = 0.3\n");
    const auto again = parse(c.to_text());
    EXPECT_EQ(again.to_kv(), c.to_kv());
    EXPECT_NO_THROW(again.validate());
}

TEST(Manifest, JsonRoundTrip) {
    RunManifest m;
    m.experiment = "field-sample";
    m.config = {{"experiment", "field-sample"}, {"N", "4"}};
    m.code_version = "0.1.0";
    m.tasks.push_back({"sample-0", 123, "ok", ""});
    m.outputs.push_back({"samples.csv", "ab"});
    m.warnings.push_back("w");
    m.complete = true;
    const auto back = RunManifest::from_json(m.to_json());
    EXPECT_EQ(back.to_json(), m.to_json());
    EXPECT_TRUE(back.ok());
    EXPECT_THROW(RunManifest::from_json(R"({"schema_version":"other/9"})"), std::runtime_error);
}

TEST(Seeds, TaskSeedsAreStableAndDistinct) {
    EXPECT_EQ(task_seed(1, "a"), task_seed(1, "a"));
    EXPECT_NE(task_seed(1, "a"), task_seed(1, "b"));
    EXPECT_NE(task_seed(1, "a"), task_seed(2, "a"));
    EXPECT_LT(task_seed(1, "a"), std::uint64_t(1) << 60);
}

TEST(RunDir, NeverReused) {
    const auto out = scratch("dirs");
    const auto a = allocate_run_dir(out, "x", 1);
    const auto b = allocate_run_dir(out, "x", 1);
    EXPECT_NE(a, b);
    std::ifstream latest(out / "latest");
    std::string name;
    latest >> name;
    EXPECT_EQ(name, b.filename().string());
    fs::remove_all(out);
}

TEST(Run, CapacitySweepAndRerun) {
    const auto out = scratch("sweep");
    auto c = parse("experiment = capacity-sweep\nd = 3\nN = 64,128,256\n");
    c.out = out.string();
    const auto m = run(c);
    EXPECT_TRUE(m.ok());
    ASSERT_FALSE(m.outputs.empty());
    std::ifstream csv(fs::path(m.directory) / "capacity.csv");
    std::string header;
    std::getline(csv, header);
    EXPECT_NE(header.find("N"), std::string::npos);
    const auto r = rerun(fs::path(m.directory) / "manifest.json");
    EXPECT_TRUE(r.matches);
    EXPECT_NE(r.manifest.directory, m.directory);
    fs::remove_all(out);
}

TEST(Run, FieldSampleRerunIsByteIdentical) {
    const auto out = scratch("field");
    auto c = parse("experiment = field-sample\nd = 3\nN = 4\nR = 2\nreplicas = 3\nseed = 5\n");
    c.out = out.string();
    const auto m = run(c);
    EXPECT_TRUE(m.ok());
    const auto r = rerun(fs::path(m.directory) / "manifest.json", {}, 1);
    EXPECT_TRUE(r.matches);
    for (const auto& mm : r.mismatches) ADD_FAILURE() << mm;
    fs::remove_all(out);
}

TEST(Run, InvalidConfigThrowsBeforeCompute) {
    const auto out = scratch("invalid");
    auto c = parse("experiment = hstar-estimate\nN = 8\nh = 1\nreplicas = 2\n");
    c.out = out.string();
    EXPECT_THROW(run(c), ConfigError);
    EXPECT_FALSE(fs::exists(out));
}

TEST(Analysis, FitLineExact) {
    const auto f = fit_line({1, 2, 3, 4}, {3, 5, 7, 9});
    EXPECT_NEAR(f.slope, 2, 1e-12);
    EXPECT_NEAR(f.intercept, 1, 1e-12);
    EXPECT_NEAR(f.se, 0, 1e-12);
}

TEST(Analysis, BracketContainsCrossingAndShrinks) {
    const std::vector<int> sizes{8, 16, 32};
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(0.1 * i);
    const auto small = hstar_bracket(sizes, grid, synthetic_thresholds(sizes, 200, 1));
    const auto big = hstar_bracket(sizes, grid, synthetic_thresholds(sizes, 800, 1));
    EXPECT_GT(small.lo, 0.0);
    EXPECT_LE(small.lo, 1.0);
    EXPECT_GE(small.hi, 1.0);
    EXPECT_LE(big.lo, 1.0);
    EXPECT_GE(big.hi, 1.0);
    EXPECT_LE(big.hi - big.lo, small.hi - small.lo);
    EXPECT_NEAR(big.estimate, 1.0, 0.15);
    EXPECT_FALSE(big.widened);
}

TEST(Analysis, BracketWidensWithoutCrossing) {
    const std::vector<int> sizes{8, 16, 32};
    const std::vector<double> grid{2.0, 2.5, 3.0};
    const auto b = hstar_bracket(sizes, grid, synthetic_thresholds(sizes, 200, 2));
    EXPECT_TRUE(b.widened);
    EXPECT_FALSE(b.warnings.empty());
}

TEST(Analysis, ScanCellsMonotoneInN) {
    // arm[N] decreasing in N as for any real cluster
    std::vector<std::vector<double>> arm(500);
    for (int r = 0; r < 500; ++r) {
        RandomStream rs(3, std::uint32_t(r), Purpose::Misc);
        double v = rs.normal();
        for (int n = 0; n <= 16; ++n) {
            arm[r].push_back(v);
            v -= 0.2 * rs.uniform();
        }
    }
    const auto cells = scan_cells(arm, {2, 4, 8}, {0.5}, -2.0, 0.0, 2);
    ASSERT_EQ(cells.size(), 3u);
    for (std::size_t i = 1; i < cells.size(); ++i) EXPECT_LE(cells[i].p.p, cells[i - 1].p.p);
    EXPECT_THROW(scan_cells(arm, {2}, {-1.0}, -2.0, 0.0, 2), std::invalid_argument);
    const auto fits = scan_fits(cells, -1.0);
    ASSERT_EQ(fits.size(), 1u);
    EXPECT_NEAR(fits[0].reference, std::acos(-1.0) / 6 * 1.5 * 1.5, 1e-12);
}
