#include "cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args, const std::string& stdin_text = "") {
    std::istringstream in(stdin_text);
    std::ostringstream out, err;
    const int code = balmatch::cli::run(args, in, out, err);
    return {code, out.str(), err.str()};
}

std::string data(const std::string& name) { return std::string(BALMATCH_DATA_DIR) + "/" + name; }

nlohmann::json parse(const Result& r) { return nlohmann::json::parse(r.out); }

const std::string kTwoVsThree =
    "id,group,outcome,cv_1,cv_2\na1,A,1,1,0\na2,A,0,1,0\nb1,B,1,1,0\nb2,B,0,1,0\nb3,B,0,1,0\n";

}  // namespace

TEST(Cli, DbsemJsonCarriesProvenance) {
    const Result r = run({"dbsem", "-"}, kTwoVsThree);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = parse(r);
    EXPECT_EQ(j["provenance"]["version"], balmatch::cli::kVersion);
    EXPECT_EQ(j["provenance"]["input_sha256"], balmatch::cli::sha256_hex(kTwoVsThree));
    EXPECT_EQ(j["provenance"]["command"], "dbsem");
    EXPECT_TRUE(j["provenance"]["flags"].contains("precision"));
    EXPECT_EQ(j["result"]["r_b"]["exact"], "2/3");
}

TEST(Cli, TextFormatsStartWithProvenanceComments) {
    for (const std::string fmt : {"csv", "table"}) {
        const Result r = run({"dbsem", "-", "--format", fmt}, kTwoVsThree);
        ASSERT_EQ(r.code, 0) << r.err;
        EXPECT_EQ(r.out.rfind("# balmatch ", 0), 0u) << r.out;
        EXPECT_NE(r.out.find("# input_sha256 "), std::string::npos);
    }
}

TEST(Cli, Sha256KnownVector) {
    EXPECT_EQ(balmatch::cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Cli, BootstrapNeedsSeed) {
    const Result r = run({"bootstrap", "-", "--iterations", "10"}, kTwoVsThree);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("seed required"), std::string::npos);
}

TEST(Cli, BootstrapIsDeterministic) {
    const Result a = run({"bootstrap", "-", "--iterations", "500", "--seed", "5"}, kTwoVsThree);
    const Result b = run({"bootstrap", "-", "--iterations", "500", "--seed", "5", "--threads", "3"}, kTwoVsThree);
    ASSERT_EQ(a.code, 0) << a.err;
    auto ja = parse(a), jb = parse(b);
    ja["provenance"].erase("flags");
    jb["provenance"].erase("flags");
    EXPECT_EQ(ja, jb);
    EXPECT_EQ(ja["result"]["mean_deaths_a"], 1.0);
}

TEST(Cli, EnvironmentOverrides) {
    ::setenv("BALMATCH_SEED", "5", 1);
    ::setenv("BALMATCH_ITERATIONS", "50", 1);
    const Result r = run({"bootstrap", "-"}, kTwoVsThree);
    ::unsetenv("BALMATCH_SEED");
    ::unsetenv("BALMATCH_ITERATIONS");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse(r)["provenance"]["seed"], 5);
    EXPECT_EQ(parse(r)["result"]["iterations"], 50);

    ::setenv("BALMATCH_FORMAT", "csv", 1);
    const Result c = run({"dbsem", "-"}, kTwoVsThree);
    ::unsetenv("BALMATCH_FORMAT");
    EXPECT_EQ(c.out.rfind("# balmatch", 0), 0u);
}

TEST(Cli, ValidationErrorsExitOne) {
    EXPECT_EQ(run({"dbsem", "-"}, "id,group,outcome,cv_1\np,A,0,-1\n").code, 1);
    EXPECT_EQ(run({"dbsem", "/nonexistent/file.csv"}).code, 1);
    EXPECT_EQ(run({"dbsem", "-", "--format", "xml"}, kTwoVsThree).code, 1);
    EXPECT_EQ(run({"dbsem", "-", "--precision", "abc"}, kTwoVsThree).code, 1);
    EXPECT_EQ(run({"frobnicate"}).code, 1);
    EXPECT_EQ(run({}).code, 1);
    const Result r = run({"dbsem", "-"}, "id,group,outcome,cv_1\np,A,0,1\np,B,0,1\n");
    EXPECT_NE(r.err.find("row 3"), std::string::npos) << r.err;
}

TEST(Cli, HelpExitsZero) {
    EXPECT_EQ(run({"--help"}).code, 0);
    EXPECT_EQ(run({"dbsem", "--help"}).code, 0);
}

TEST(Cli, PitfallSortOrderDemo) {
    const Result r = run({"pitfall", "sort-order", data("demo_sort_order.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = parse(r)["result"]["sort_order"];
    EXPECT_TRUE(j["greedy_differs"].get<bool>());
    EXPECT_TRUE(j["dbsem_identical"].get<bool>());
}

TEST(Cli, PitfallCollisionDemo) {
    const Result r = run({"pitfall", "collision", data("demo_collision.csv"), "--model", data("collision_model.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = parse(r)["result"]["collision"];
    EXPECT_EQ(j["collisions"]["total"], 1);
    EXPECT_EQ(j["spurious_pairs"], 1);
    EXPECT_EQ(j["covariate_pairs"], 0);
}

TEST(Cli, PitfallAllOnSynthetic) {
    const Result s = run({"synth", data("registry_small.json"), "--format", "csv"});
    ASSERT_EQ(s.code, 0) << s.err;
    const Result r = run({"pitfall", "all", "-", "--format", "table"}, s.out);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("== sort order =="), std::string::npos);
    EXPECT_NE(r.out.find("== coefficient collisions =="), std::string::npos);
}

TEST(Cli, SynthIsReproducibleAndParsable) {
    const Result a = run({"synth", data("two_vs_three.json"), "--format", "csv"});
    const Result b = run({"synth", data("two_vs_three.json"), "--format", "csv"});
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    const Result d = run({"dbsem", "-"}, a.out);
    ASSERT_EQ(d.code, 0) << d.err;
    EXPECT_EQ(parse(d)["result"]["r_b"]["exact"], "2/3");
}

TEST(Cli, PsmOutputWritesCsvAndSidecar) {
    const auto dir = std::filesystem::temp_directory_path() / "balmatch_cli_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "pairs.csv").string();
    const Result r = run({"psm", "-", "--output", path}, kTwoVsThree);
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream csv(path);
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "a_id,b_id");
    std::ifstream side(path + ".json");
    const auto j = nlohmann::json::parse(side);
    EXPECT_EQ(j["counts"]["pairs"], 2);
    EXPECT_TRUE(j.contains("provenance"));
    std::filesystem::remove_all(dir);
}

TEST(Cli, OutputIndependentOfRowOrderForDbsem) {
    const Result a = run({"dbsem", "-"}, kTwoVsThree);
    const Result b = run({"dbsem", "-", "--reverse"}, kTwoVsThree);
    EXPECT_EQ(parse(a)["result"], parse(b)["result"]);
}

TEST(Cli, StatsSubcommand) {
    const Result r = run({"stats", "chi_square", "--counts", "42,1502,32,1502"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(parse(r)["result"]["statistic"].get<double>(), 1.3855, 5e-4);
    EXPECT_EQ(run({"stats", "anova", "--counts", "1,2,1,2"}).code, 1);
    EXPECT_EQ(run({"stats", "t_test", "--counts", "1,2"}).code, 1);
}

TEST(Cli, ExtremeAndOracle) {
    const Result e = run({"extreme", "-"}, kTwoVsThree);
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_EQ(parse(e)["result"]["rows"].size(), 4u);
    const Result o = run({"oracle", "-"}, kTwoVsThree);
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_TRUE(parse(o)["result"]["agrees_with_dbsem"].get<bool>());
}

TEST(Cli, FitReportsModel) {
    const Result r = run({"fit", "-"}, "id,group,outcome,cv_1\n"
                                       "a1,A,0,0\na2,A,0,0\na3,A,0,0\na4,A,0,0\nb1,B,0,0\nb2,B,0,0\n"
                                       "a5,A,0,1\na6,A,0,1\nb3,B,0,1\nb4,B,0,1\nb5,B,0,1\n");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto m = parse(r)["result"]["model"];
    EXPECT_TRUE(m["converged"].get<bool>());
    EXPECT_NEAR(m["coefficients"][1].get<double>(), std::log(3.0), 1e-6);
}

TEST(Cli, DbsemTwiceGivesIdenticalBytes) {
    const Result a = run({"dbsem", data("demo_sort_order.csv"), "--format", "json"});
    const Result b = run({"dbsem", data("demo_sort_order.csv"), "--format", "json"});
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
}
