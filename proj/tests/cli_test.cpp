#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>
#include <sys/wait.h>
#include <unistd.h>

#include "essvi/io.hpp"

namespace fs = std::filesystem;
using namespace essvi;

namespace {

struct CliRun {
    int status;
    std::string output;
};

CliRun run(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / ("essvi_cli_test_" + std::to_string(::getpid()) + ".log");
    const std::string cmd = std::string(ESSVI_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream text;
    text << in.rdbuf();
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, text.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / ("essvi_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        const CliRun r = run("synth --out " + (root_ / "fixture").string());
        ASSERT_EQ(r.status, 0) << r.output;
    }

    static void TearDownTestSuite() {
        fs::remove_all(root_);
        fs::remove(fs::temp_directory_path() / ("essvi_cli_test_" + std::to_string(::getpid()) + ".log"));
    }

    static fs::path root_;
};

fs::path CliTest::root_;

double fitted_objective(const fs::path& params) { return read_json_file(params.string())["fit"]["objective"].get<double>(); }

}  // namespace

TEST_F(CliTest, CalibrateWritesArtifactsAndSucceeds) {
    const fs::path out = root_ / "gj";
    const CliRun r = run("calibrate --data " + (root_ / "fixture").string() + " --out " + out.string());
    EXPECT_EQ(r.status, 0) << r.output;
    for (const char* f : {"params.json", "residuals.csv", "smiles.csv", "price_grid.csv", "arb_report.txt"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    EXPECT_EQ(slurp(out / "arb_report.txt"), "no arbitrage detected\n");
    const EssviDocument doc = parse_essvi_document(read_json_file((out / "params.json").string()));
    EXPECT_EQ(doc.params.size(), 6u);
}

TEST_F(CliTest, MmObjectiveNotAboveGj) {
    const std::string data = " --data " + (root_ / "fixture").string();
    const CliRun gj = run("calibrate" + data + " --rule=gj --out " + (root_ / "r_gj").string());
    const CliRun mm = run("calibrate" + data + " --rule=mm --out " + (root_ / "r_mm").string());
    ASSERT_EQ(gj.status, 0) << gj.output;
    ASSERT_EQ(mm.status, 0) << mm.output;
    EXPECT_LE(fitted_objective(root_ / "r_mm" / "params.json"), fitted_objective(root_ / "r_gj" / "params.json"));
}

TEST_F(CliTest, ArtifactsAreByteStable) {
    const std::string data = " --data " + (root_ / "fixture").string();
    ASSERT_EQ(run("calibrate" + data + " --out " + (root_ / "s1").string()).status, 0);
    ASSERT_EQ(run("calibrate" + data + " --out " + (root_ / "s2").string()).status, 0);
    for (const char* f : {"params.json", "residuals.csv", "smiles.csv", "price_grid.csv", "arb_report.json"})
        EXPECT_EQ(slurp(root_ / "s1" / f), slurp(root_ / "s2" / f)) << f;
}

TEST_F(CliTest, MissingCurveFileNamesThePath) {
    const CliRun r = run("calibrate --data " + (root_ / "fixture").string() + " --curve /no/such/curve.csv --out " +
                      (root_ / "missing").string());
    EXPECT_NE(r.status, 0);
    EXPECT_NE(r.output.find("/no/such/curve.csv"), std::string::npos) << r.output;
}

TEST_F(CliTest, ReportAgainstGeneratorIsExact) {
    const fs::path fx = root_ / "fixture";
    const CliRun r = run("report --data " + fx.string() + " --essvi " + (fx / "generator.json").string() + " --out " +
                      (root_ / "rep").string());
    ASSERT_EQ(r.status, 0) << r.output;
    std::istringstream in(slurp(root_ / "rep" / "report.csv"));
    std::string line;
    std::getline(in, line);
    EXPECT_NE(line.find("essvi_error_bp"), std::string::npos);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        // Quote files carry 12 significant digits; that is the zero of this comparison.
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        ASSERT_EQ(cells.size(), 10u) << line;
        EXPECT_LT(std::stod(cells[8]), 1e-6) << line;
        EXPECT_EQ(cells[9], "true") << line;
    }
    EXPECT_EQ(rows, 240u);
}

TEST_F(CliTest, CptCalibrateAndTwoModelReport) {
    const fs::path fx = root_ / "fixture";
    const fs::path out = root_ / "cpt";
    const CliRun c = run("cpt-calibrate --data " + fx.string() + " --n-cpt 4 --out " + out.string());
    ASSERT_TRUE(fs::exists(out / "params_cpt.json")) << c.output;
    EXPECT_EQ(read_json_file((out / "params_cpt.json").string())["fit"]["parameters"].get<std::size_t>(), 6u + 8u);
    EXPECT_EQ(slurp(out / "arb_report_cpt.txt"), "no arbitrage detected\n");
    const CliRun r = run("report --data " + fx.string() + " --essvi " + (fx / "generator.json").string() + " --cpt " +
                      (out / "params_cpt.json").string() + " --out " + (root_ / "rep2").string());
    ASSERT_EQ(r.status, 0) << r.output;
    std::istringstream in(slurp(root_ / "rep2" / "report.csv"));
    std::string header;
    std::getline(in, header);
    EXPECT_NE(header.find("cpt_price"), std::string::npos);
    EXPECT_NE(header.find("essvi_price"), std::string::npos);
}

TEST_F(CliTest, ReportRejectsMismatchedMaturities) {
    const fs::path fx = root_ / "fixture";
    const fs::path other = root_ / "flat";
    ASSERT_EQ(run("synth --out " + other.string() + " --flat-vol 0.2 --maturities 0.5,1").status, 0);
    const CliRun r = run("report --data " + other.string() + " --essvi " + (fx / "generator.json").string());
    EXPECT_NE(r.status, 0);
    EXPECT_NE(r.output.find("maturities"), std::string::npos) << r.output;
}

TEST_F(CliTest, CheckArbFlagsBadGrid) {
    const fs::path grid = root_ / "bad_grid.csv";
    std::ofstream(grid) << kGridHeader << "\n0.5,90,5,100,1\n0.5,100,6,100,1\n0.5,110,4,100,1\n";
    const CliRun r = run("check-arb --grid " + grid.string());
    EXPECT_EQ(r.status, 1);
    EXPECT_NE(r.output.find("VerticalSpread T=0.5 K=[90 100]"), std::string::npos) << r.output;
}

TEST_F(CliTest, SliceQueries) {
    const CliRun r = run("slice --params " + (root_ / "fixture" / "generator.json").string() + " --t 0.05 --t 3");
    ASSERT_EQ(r.status, 0) << r.output;
    EXPECT_NE(r.output.find("maturity,theta,rho,psi"), std::string::npos);
    EXPECT_NE(r.output.find("\n0.05,0.00225,"), std::string::npos) << r.output;
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
    const fs::path cfg = root_ / "run.cfg";
    std::ofstream(cfg) << "rule = mm\nmax_evals = 400  # budget\n";
    const fs::path out = root_ / "cfg";
    ASSERT_EQ(run("calibrate --data " + (root_ / "fixture").string() + " --config " + cfg.string() + " --rule=gj --out " +
                  out.string())
                  .status,
              0);
    EXPECT_EQ(read_json_file((out / "params.json").string())["rule"], "gj");
    std::ofstream(cfg) << "bogus = 1\n";
    EXPECT_EQ(run("calibrate --data " + (root_ / "fixture").string() + " --config " + cfg.string()).status, 2);
}
