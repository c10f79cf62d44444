#include <gtest/gtest.h>

#include <string>

#include "fedmark/error.hpp"
#include "fedmark/experiment.hpp"
#include "fedmark/textconfig.hpp"

using namespace fedmark;

namespace {

std::string error_of(const std::string& text) {
    try {
        exp::parse_config(text, "t.toml");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(TextConfig, ScalarsArraysAndComments) {
    const auto doc = textconfig::parse(R"(# top
[a]
i = -3
f = 1e-3   # trailing
b = true
s = "q\"x\\y\n"
xs = [1, 2.5, 3]
names = ["p", "q"]
[[item]]
k = 1
[[item]]
k = 2
)");
    const auto* a = doc.table("a");
    ASSERT_TRUE(a);
    EXPECT_EQ(std::get<std::int64_t>(a->find("i")->data), -3);
    EXPECT_DOUBLE_EQ(std::get<double>(a->find("f")->data), 1e-3);
    EXPECT_TRUE(std::get<bool>(a->find("b")->data));
    EXPECT_EQ(std::get<std::string>(a->find("s")->data), "q\"x\\y\n");
    EXPECT_EQ(std::get<textconfig::Array>(a->find("xs")->data).size(), 3u);
    EXPECT_EQ(a->find("i")->line, 3);
    ASSERT_EQ(doc.table_arrays.at("item").size(), 2u);
    EXPECT_FALSE(doc.table("missing"));
}

TEST(TextConfig, ErrorsCarryLine) {
    auto err = [](const std::string& t) {
        try {
            textconfig::parse(t, "x.toml");
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(err("[a]\nk = \n").find("x.toml:2"), std::string::npos);
    EXPECT_NE(err("[a]\nk = \"open\n").find("x.toml:2"), std::string::npos);
    EXPECT_NE(err("[a]\nk = 1\nk = 2\n").find("x.toml:3"), std::string::npos);
    EXPECT_NE(err("[a\n").find("x.toml:1"), std::string::npos);
    EXPECT_NE(err("[a]\nk = [1, 2\n").find("x.toml:2"), std::string::npos);
}

TEST(TextConfig, ReaderRejectsUnreadKeys) {
    const auto doc = textconfig::parse("[s]\nx = 1\ny = 2\n", "r.toml");
    textconfig::TableReader r(*doc.table("s"), doc.source);
    EXPECT_EQ(r.get_int("x", 0), 1);
    EXPECT_EQ(r.unread(), std::vector<std::string>{"y"});
    EXPECT_THROW(r.finish(), ConfigError);
    EXPECT_EQ(r.get_double("x", 0.0), 1.0);  // integers widen
    EXPECT_THROW(r.get_bool("y", false), ConfigError);
}

TEST(Config, EmptyTextGivesDefaults) {
    const auto cfg = exp::parse_config("", "empty.toml");
    EXPECT_EQ(exp::dump_config(cfg), exp::dump_config(exp::ExperimentConfig{}));
    EXPECT_EQ(cfg.source, "empty.toml");
}

TEST(Config, DumpRoundTrips) {
    exp::ExperimentConfig cfg;
    cfg.seed = 99;
    cfg.cohort.subjects = 5;
    cfg.weak.kd.weight = 0.25;
    cfg.stages = exp::StageSelection::unsupervised;
    cfg.trace.dip_hours = {11.5};
    exp::NodeOverride n;
    n.id = "alpha";
    n.group = data::Group::AD;
    n.modalities = ModalitySet{ModalityId::depth, ModalityId::audio};
    n.label_fraction = 0.1;
    cfg.nodes.push_back(n);
    cfg.network.bands = {{"X", 3.0, 4.0}};
    const auto text = exp::dump_config(cfg);
    const auto back = exp::parse_config(text, "dump.toml");
    EXPECT_EQ(exp::dump_config(back), text);
    EXPECT_EQ(back.seed, 99u);
    ASSERT_EQ(back.nodes.size(), 1u);
    EXPECT_EQ(back.nodes[0].group, data::Group::AD);
    EXPECT_EQ(back.network.bands.front().name, "X");
}

TEST(Config, UnknownKeysAndSectionsRejectedWithLine) {
    EXPECT_NE(error_of("[weak]\nlr = 0.1\n").find("t.toml:2"), std::string::npos);
    EXPECT_NE(error_of("\n[nope]\n").find("t.toml:2"), std::string::npos);
    EXPECT_NE(error_of("seed = 1\n").find("t.toml:1"), std::string::npos);
    EXPECT_NE(error_of("[[thing]]\na = 1\n").find("[[thing]]"), std::string::npos);
}

TEST(Config, ValuesAreRangeChecked) {
    EXPECT_NE(error_of("[cohort]\nlabel_fraction = 1.5\n").find("t.toml:2"), std::string::npos);
    EXPECT_NE(error_of("[weak]\nkd_weight = 2\n").find("t.toml:2"), std::string::npos);
    EXPECT_NE(error_of("[experiment]\nstages = \"all\"\n").find("pretrain-only"), std::string::npos);
    EXPECT_NE(error_of("[pipeline]\npreprocess_s = [0.1, 0.2]\n").find("three"), std::string::npos);
    EXPECT_NE(error_of("[unsupervised]\nbatch_size = 1\n").find("batch_size"), std::string::npos);
    EXPECT_NE(error_of("[[node]]\nid = \"a\"\ngroup = \"XX\"\n").find("t.toml:3"), std::string::npos);
    EXPECT_NE(error_of("[[node]]\nid = \"a\"\n[[node]]\nid = \"a\"\n").find("duplicate"), std::string::npos);
    EXPECT_NE(error_of("[[band]]\nname = \"b\"\nuplink_mbps = 0\ndownlink_mbps = 1\n").find("t.toml:3"),
              std::string::npos);
    EXPECT_EQ(error_of("[weak]\nlocal_epochs = 3\n"), "");
}

TEST(Config, LoadMissingFile) {
    EXPECT_THROW(exp::load_config("/nonexistent/x.toml"), ConfigError);
}

TEST(Config, ShippedFilesLoad) {
    const std::string dir = std::string(FEDMARK_SOURCE_DIR) + "/configs/";
    const auto ref = exp::load_config(dir + "reference.toml");
    EXPECT_EQ(exp::dump_config(ref), exp::dump_config(exp::ExperimentConfig{}));
    const auto skew = exp::load_config(dir + "skewed.toml");
    EXPECT_EQ(skew.cohort.dirichlet_alpha, 0.1);
    EXPECT_TRUE(skew.imbalance_ablation);
    EXPECT_NO_THROW(exp::load_config(dir + "small.toml"));
}
