#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "fdnet/config.hpp"
#include "fdnet/error.hpp"

using namespace fdnet;
using namespace fdnet::config;

TEST_CASE("defaults") {
    const RunConfig c;
    CHECK(c.model.input_size == 256);
    CHECK(c.model.base_width == 16);
    CHECK(c.model.boundary_dim == 64);
    CHECK(c.train.learning_rate == 1e-3);
    CHECK(c.train.loss_weights.dice == 0.5);
    CHECK(c.train.loss_weights.bce == 0.5);
    CHECK(c.data.split.train == 0.8);
}

TEST_CASE("parse sections, comments and overrides") {
    const auto c = parse(R"(; leading comment
# another comment
[model]
input_size = 64
base_width = 8
use_sam = false
wavelet = db2
boundary_mode = disabled

[train]
learning_rate = 0.005
steps = 12
w_dice = 0.25

[data]
teeth = 3
split = 0.5,0.5
dir = some/where
)");
    CHECK(c.model.input_size == 64);
    CHECK(c.model.base_width == 8);
    CHECK_FALSE(c.model.ablation.use_sam);
    CHECK(c.model.wavelet == wavelet::Family::Db2);
    CHECK(c.model.boundary_mode == model::BoundaryMode::Disabled);
    CHECK(c.train.learning_rate == 0.005);
    CHECK(c.train.steps == 12);
    CHECK(c.train.loss_weights.dice == 0.25);
    CHECK(c.train.loss_weights.bce == 0.5);
    CHECK(c.data.phantom.tooth_count == 3);
    CHECK(c.data.split.test == 0.5);
    CHECK(c.data.dir == "some/where");

    RunConfig base;
    base.train.steps = 99;
    CHECK(parse("[model]\nbase_width = 4\n", base).train.steps == 99);
}

TEST_CASE("unknown keys list the valid set") {
    try {
        parse("[train]\nlr = 0.1\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("'lr'") != std::string::npos);
        for (const auto& k : valid_keys("train")) CHECK(msg.find(k) != std::string::npos);
    }
    CHECK_THROWS_AS(parse("[optimizer]\nbeta = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("steps = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse("[train]\nsteps = ten\n"), ConfigError);
    CHECK_THROWS_AS(parse("[train]\nsteps = 10 ; trailing\n"), ConfigError);
    CHECK_THROWS_AS(parse("[model]\nuse_sam = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse("[model]\nwavelet = coif1\n"), ConfigError);
    CHECK_THROWS_AS(parse("[model\n"), ConfigError);
    CHECK(valid_keys("nope").empty());
}

TEST_CASE("canonical text round trips") {
    RunConfig c;
    c.model.base_width = 12;
    c.model.ablation.use_lif = false;
    c.train.learning_rate = 0.1 + 0.2;
    c.data.embedding_dir = "emb";
    c.data.split = {0.7, 0.3};
    const auto text = to_text(c);
    const auto back = parse(text);
    CHECK(to_text(back) == text);
    CHECK(back.train.learning_rate == c.train.learning_rate);
    CHECK(section_text(c, "model").rfind("[model]\n", 0) == 0);
    const auto m = parse_model_echo(model_echo(c.model));
    CHECK(m.base_width == 12);
    CHECK_FALSE(m.ablation.use_lif);
}

TEST_CASE("load_file") {
    const auto p = std::filesystem::temp_directory_path() / "fdnet_test_config.ini";
    std::ofstream(p) << "[train]\nsteps = 7\n";
    CHECK(load_file(p).train.steps == 7);
    std::filesystem::remove(p);
    CHECK_THROWS_AS(load_file(p), IoError);
}
