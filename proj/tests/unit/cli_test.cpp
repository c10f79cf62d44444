#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "fedmark/commands.hpp"
#include "fedmark/error.hpp"
#include "json.hpp"

using namespace fedmark;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("fedmark_unit_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

exp::ExperimentConfig tiny_config() {
    exp::ExperimentConfig cfg;
    cfg.cohort.subjects = 3;
    cfg.node_days = 1.0;
    cfg.unsup_rounds = 2;
    cfg.weak_rounds = 2;
    cfg.pretrain.epochs = 3;
    cfg.supervised_baseline.epochs = 3;
    return cfg;
}

std::size_t count_lines(const std::string& s) {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(Files, AtomicWriteReplacesAndLeavesNoTemp) {
    const auto dir = scratch("atomic");
    const auto path = (dir / "a.txt").string();
    cli::write_file_atomic(path, "one");
    cli::write_file_atomic(path, "two");
    EXPECT_EQ(cli::read_file(path), "two");
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir)) files += e.is_regular_file();
    EXPECT_EQ(files, 1u);
    cli::write_file_atomic((dir / "nested" / "b.txt").string(), "x");
    EXPECT_EQ(cli::read_file((dir / "nested" / "b.txt").string()), "x");
    EXPECT_THROW(cli::read_file((dir / "absent.txt").string()), DataError);
    fs::remove_all(dir);
}

TEST(Files, OutDirPrecedence) {
    ::setenv("FEDMARK_OUT", "from_env", 1);
    EXPECT_EQ(cli::resolve_out_dir(std::string("flag"), "cfg"), "flag");
    EXPECT_EQ(cli::resolve_out_dir(std::nullopt, "cfg"), "cfg");
    EXPECT_EQ(cli::resolve_out_dir(std::nullopt, ""), "from_env");
    ::unsetenv("FEDMARK_OUT");
    EXPECT_EQ(cli::resolve_out_dir(std::nullopt, ""), "fedmark_out");
}

TEST(Pipeline, TableShowsBothModesAndRatio) {
    sim::PipelineSpec spec;
    const auto table = cli::pipeline_table(spec);
    EXPECT_NE(table.find("mode,fps"), std::string::npos);
    EXPECT_NE(table.find("pipelined,9.45"), std::string::npos) << table;
    EXPECT_NE(table.find("sequential,"), std::string::npos);
    EXPECT_NE(table.find("ratio,"), std::string::npos);
    std::ostringstream out, err;
    EXPECT_EQ(cli::cmd_pipeline({spec, std::nullopt}, out, err), 0);
    spec.infer_s = -1.0;
    EXPECT_NE(cli::cmd_pipeline({spec, std::nullopt}, out, err), 0);
}

TEST(Netsim, DayOfTraceRowsAndRounds) {
    const auto dir = scratch("netsim");
    cli::NetsimOptions o;
    o.out = dir.string();
    o.seed = 3;
    std::ostringstream out, err;
    ASSERT_EQ(cli::cmd_netsim(o, out, err), 0) << err.str();
    const auto trace = cli::read_file((dir / "netsim_trace.csv").string());
    EXPECT_EQ(count_lines(trace), 1u + 24 * 60);
    const auto rounds = cli::read_file((dir / "netsim_rounds.csv").string());
    EXPECT_EQ(count_lines(rounds), 1u + 48);
    const auto summary = nlohmann::json::parse(cli::read_file((dir / "netsim_summary.json").string()));
    EXPECT_TRUE(summary.contains("night_day_round_time_ratio"));
    const auto again = scratch("netsim2");
    o.out = again.string();
    ASSERT_EQ(cli::cmd_netsim(o, out, err), 0);
    EXPECT_EQ(cli::read_file((again / "netsim_rounds.csv").string()), rounds);
    fs::remove_all(dir);
    fs::remove_all(again);
}

TEST(Simulate, BadConfigIsLineAnchoredExitTwo) {
    const auto dir = scratch("badcfg");
    const auto path = (dir / "bad.toml").string();
    cli::write_file_atomic(path, "[weak]\nlearning_rate = -1\n");
    cli::SimulateOptions o;
    o.config = path;
    o.out = (dir / "out").string();
    std::ostringstream out, err;
    EXPECT_EQ(cli::cmd_simulate(o, out, err), 2);
    EXPECT_NE(err.str().find("bad.toml:2"), std::string::npos) << err.str();
    EXPECT_FALSE(fs::exists(dir / "out" / "metrics.jsonl"));
    o.config.reset();
    o.stage = "sideways";
    EXPECT_EQ(cli::cmd_simulate(o, out, err), 2);
    fs::remove_all(dir);
}

TEST(Simulate, PretrainOnlyHasNoRoundRecords) {
    const auto dir = scratch("pretrain");
    const auto path = (dir / "c.toml").string();
    cli::write_file_atomic(path, exp::dump_config(tiny_config()));
    cli::SimulateOptions o;
    o.config = path;
    o.stage = "pretrain-only";
    o.out = (dir / "out").string();
    std::ostringstream out, err;
    ASSERT_EQ(cli::cmd_simulate(o, out, err), 0) << err.str();
    std::istringstream lines(cli::read_file((dir / "out" / "metrics.jsonl").string()));
    std::size_t summaries = 0;
    for (std::string line; std::getline(lines, line);) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_FALSE(j.contains("round")) << line;
        summaries += j.value("stage", "") == "summary";
    }
    EXPECT_EQ(summaries, 1u);
    fs::remove_all(dir);
}

TEST(Simulate, RepeatRunsAreByteIdentical) {
    const auto dir = scratch("repeat");
    const auto path = (dir / "c.toml").string();
    cli::write_file_atomic(path, exp::dump_config(tiny_config()));
    std::ostringstream out, err;
    std::string first;
    for (int i = 0; i < 2; ++i) {
        cli::SimulateOptions o;
        o.config = path;
        o.seed = 11;
        o.out = (dir / ("run" + std::to_string(i))).string();
        ASSERT_EQ(cli::cmd_simulate(o, out, err), 0) << err.str();
        const auto m = cli::read_file(*o.out + "/metrics.jsonl");
        if (i == 0) first = m;
        else EXPECT_EQ(m, first);
    }
    EXPECT_TRUE(fs::exists(dir / "run0" / "config.effective.toml"));
    EXPECT_TRUE(fs::exists(dir / "run0" / "groups.csv"));
    EXPECT_TRUE(fs::is_directory(dir / "run0" / "detections"));
    fs::remove_all(dir);
}

TEST(Analyze, IdenticalGroupsFlagNothing) {
    const auto dir = scratch("analyze");
    fs::create_directories(dir / "det");
    std::string groups = "subject_id,group\n";
    const char* g[] = {"NC", "MCI", "AD"};
    for (int s = 0; s < 9; ++s) {
        const std::string id = "s" + std::to_string(s);
        groups += id + "," + g[s % 3] + "\n";
        // the same timeline for every subject
        std::string csv = "t_s,class_idx\n";
        for (int i = 0; i < 40; ++i) csv += std::to_string(2 * i) + "," + std::to_string(1 + (i / 5) % 8) + "\n";
        cli::write_file_atomic((dir / "det" / (id + ".csv")).string(), csv);
    }
    cli::write_file_atomic((dir / "groups.csv").string(), groups);
    cli::AnalyzeOptions o;
    o.detections_dir = (dir / "det").string();
    o.groups_file = (dir / "groups.csv").string();
    o.out = (dir / "out").string();
    std::ostringstream out, err;
    ASSERT_EQ(cli::cmd_analyze(o, out, err), 0) << err.str();
    const auto summary = nlohmann::json::parse(cli::read_file((dir / "out" / "analysis_summary.json").string()));
    EXPECT_TRUE(summary["critical_features"].empty());
    EXPECT_EQ(summary["subjects"], 9);
    EXPECT_TRUE(summary.contains("levene_mean_p"));
    EXPECT_TRUE(fs::exists(dir / "out" / "anova.csv"));
    fs::remove_all(dir);
}

TEST(Analyze, MalformedCsvNamesRowAndColumn) {
    const auto dir = scratch("analyze_bad");
    fs::create_directories(dir / "det");
    cli::write_file_atomic((dir / "det" / "a.csv").string(), "t_s,class_idx\n0,1\n2,two\n");
    cli::write_file_atomic((dir / "groups.csv").string(), "subject_id,group\na,NC\n");
    cli::AnalyzeOptions o;
    o.detections_dir = (dir / "det").string();
    o.groups_file = (dir / "groups.csv").string();
    o.out = (dir / "out").string();
    std::ostringstream out, err;
    EXPECT_NE(cli::cmd_analyze(o, out, err), 0);
    EXPECT_NE(err.str().find("row 3"), std::string::npos) << err.str();
    EXPECT_NE(err.str().find("column 2"), std::string::npos) << err.str();
    fs::remove_all(dir);
}
