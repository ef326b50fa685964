#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "fdnet/checkpoint.hpp"
#include "fdnet/error.hpp"
#include "fdnet/loss.hpp"
#include "fdnet/train.hpp"
#include "test_support.hpp"

using namespace fdnet;
using namespace fdnet::train;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("fdnet_test_train_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

model::ModelConfig micro() {
    model::ModelConfig c;
    c.input_size = 32;
    c.base_width = 4;
    c.boundary_dim = 8;
    c.ctb_dim = 16;
    c.vit_dim = 16;
    c.vit_heads = 2;
    c.vit_depth = 1;
    return c;
}

// 8 small phantoms shared by the loop tests.
const fs::path& dataset() {
    static const fs::path dir = [] {
        auto d = scratch("data");
        phantom::make_dataset({32, 2, 1.0, 1, 0.03, 50}, 8, {0.75, 0.25}, d);
        return d;
    }();
    return dir;
}

TrainJob job(const std::string& out, int steps, int eval_every = 2) {
    TrainJob j;
    j.data_dir = dataset();
    j.out_dir = scratch(out);
    j.model = micro();
    j.train.steps = steps;
    j.train.batch_size = 2;
    j.train.eval_every = eval_every;
    j.train.learning_rate = 3e-3;
    j.train.seed = 4;
    return j;
}

// Raw bytes, so NaN entries compare equal to themselves.
std::vector<std::string> snapshot(const model::FDNet& net) {
    std::vector<std::string> out;
    for (const auto& p : net.params().params()) {
        const auto v = p.tensor.values();
        out.emplace_back(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
    return out;
}

}  // namespace

TEST_CASE("loss golden value (scalar oracle)") {
    const std::vector<double> logits = {2.0, -1.0, 0.5, -3.0, 1.5, 0.0, -0.5, 2.5,
                                        -2.0, 1.0, 3.0, -1.5, 0.25, -0.75, 1.25, -2.5};
    const std::vector<std::uint8_t> bits = {1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 0};
    BinaryMask mask(4, 4);
    mask.data = bits;
    const auto t = ag::Tensor::constant({1, 4, 4}, logits);
    CHECK(segmentation_loss(t, mask, {}).item() == doctest::Approx(0.26110955640337447).epsilon(1e-12));
    CHECK(segmentation_loss(t, mask, {0.3, 0.7}).item() == doctest::Approx(0.2727707533690185).epsilon(1e-12));
}

TEST_CASE("loss edge cases") {
    BinaryMask mask(4, 4);
    for (int i = 0; i < 16; i += 3) mask.data[i] = 1;
    std::vector<double> perfect(16);
    for (int i = 0; i < 16; ++i) perfect[i] = mask.data[i] ? 40.0 : -40.0;
    CHECK(segmentation_loss(ag::Tensor::constant({1, 4, 4}, perfect), mask, {}).item() < 1e-12);

    const BinaryMask empty(4, 4);
    CHECK(segmentation_loss(ag::Tensor::constant({1, 4, 4}, std::vector<double>(16, -40.0)), empty, {}).item() <
          1e-12);

    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const auto logits = testing::random_tensor({1, 4, 4}, rng, false, 5.0);
        CHECK(segmentation_loss(logits, mask, {rng.uniform(), rng.uniform()}).item() >= 0.0);
    }
    BinaryMask bad(4, 4);
    bad.data[3] = 7;
    CHECK_THROWS_AS(segmentation_loss(ag::Tensor::zeros({1, 4, 4}), bad, {}), ValidationError);
    CHECK_THROWS_AS(segmentation_loss(ag::Tensor::zeros({1, 4, 5}), mask, {}), ValidationError);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.loss_weights = {0.0, 0.0};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.loss_weights = {-0.1, 1.0};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.learning_rate = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.steps = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.eval_every = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("batch order") {
    // Each epoch is a permutation.
    for (std::uint64_t seed : {0ull, 7ull}) {
        std::multiset<std::size_t> seen;
        for (int step = 1; step <= 5; ++step)
            for (auto i : batch_indices(10, 2, seed, step)) seen.insert(i);
        for (std::size_t i = 0; i < 10; ++i) CHECK(seen.count(i) == 1);
    }
    CHECK(batch_indices(10, 3, 1, 9) == batch_indices(10, 3, 1, 9));
    CHECK(batch_indices(5, 8, 1, 1).size() == 8);
}

TEST_CASE("learning rate 0 leaves parameters bit-identical") {
    model::FDNet net(micro());
    const auto before = snapshot(net);
    Adam opt(net.params(), 0.0);
    const auto examples = load_examples(dataset(), phantom::read_manifest(dataset() / phantom::kManifestFile).ids(phantom::Split::Train));
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    train_step(net, opt, {&examples[0], &examples[1]}, cfg);
    train_step(net, opt, {&examples[2]}, cfg);
    CHECK(snapshot(net) == before);
}

TEST_CASE("non-finite loss aborts with the batch ids and leaves parameters alone") {
    model::FDNet net(micro());
    const auto examples = load_examples(dataset(), {phantom::sample_id(0), phantom::sample_id(1)});
    auto head = net.params().find("head.bias")->tensor;
    head.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
    const auto before = snapshot(net);
    Adam opt(net.params(), 1e-3);
    try {
        train_step(net, opt, {&examples[0], &examples[1]}, {});
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find(phantom::sample_id(1)) != std::string::npos);
    }
    CHECK(snapshot(net) == before);
}

TEST_CASE("loss decreases on a small phantom set") {
    model::FDNet net(micro());
    const auto examples =
        load_examples(dataset(), phantom::read_manifest(dataset() / phantom::kManifestFile).ids(phantom::Split::Train));
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 2;
    Adam opt(net.params(), cfg.learning_rate);
    auto full_loss = [&] {
        ag::NoGradGuard ng;
        double s = 0;
        for (const auto& ex : examples) s += segmentation_loss(net.logits(ex.sample.image), ex.sample.mask, {}).item();
        return s / examples.size();
    };
    const double initial = full_loss();
    for (int step = 1; step <= 200; ++step) {
        std::vector<const Example*> batch;
        for (auto i : batch_indices(examples.size(), cfg.batch_size, 3, step)) batch.push_back(&examples[i]);
        train_step(net, opt, batch, cfg);
    }
    const double final = full_loss();
    MESSAGE("loss " << initial << " -> " << final);
    CHECK(final < initial);
}

TEST_CASE("train loop: one step, determinism, resume") {
    SUBCASE("steps = 1") {
        const auto j = job("one", 1, 100);
        const auto r = train_loop(j);
        CHECK(r.log.size() == 1);
        CHECK(r.log[0].step == 1);
        CHECK(fs::exists(j.out_dir / kCheckpointFile));
        CHECK(parse_log(slurp(j.out_dir / kLogFile)).size() == 1);
        CHECK(slurp(j.out_dir / kLogFile).rfind("step,loss,eval_dice\n", 0) == 0);
    }
    SUBCASE("identical reruns are byte-identical") {
        const auto a = job("det_a", 4), b = job("det_b", 4);
        train_loop(a);
        train_loop(b);
        CHECK(slurp(a.out_dir / kLogFile) == slurp(b.out_dir / kLogFile));
        CHECK(slurp(a.out_dir / kCheckpointFile) == slurp(b.out_dir / kCheckpointFile));
    }
    SUBCASE("resume reproduces the uninterrupted run") {
        const auto full = job("full", 4);
        train_loop(full);
        const auto part = job("part", 2);
        train_loop(part);
        auto rest = job("rest", 4);
        rest.resume_from = part.out_dir / kCheckpointFile;
        const auto r = train_loop(rest);
        CHECK(r.log.size() == 2);
        CHECK(slurp(rest.out_dir / kLogFile) == slurp(full.out_dir / kLogFile));
        const auto c1 = load_checkpoint(full.out_dir / kCheckpointFile);
        const auto c2 = load_checkpoint(rest.out_dir / kCheckpointFile);
        REQUIRE(c1.params.size() == c2.params.size());
        for (std::size_t i = 0; i < c1.params.size(); ++i) CHECK(c1.params[i].values == c2.params[i].values);
        CHECK(c1.optimizer->m == c2.optimizer->m);

        auto mismatch = job("mismatch", 4);
        mismatch.model.base_width = 8;
        mismatch.resume_from = part.out_dir / kCheckpointFile;
        CHECK_THROWS_AS(train_loop(mismatch), ConfigError);
    }
    SUBCASE("missing dataset surfaces the path") {
        auto j = job("nodata", 1);
        j.data_dir = scratch("does_not_exist");
        try {
            train_loop(j);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("does_not_exist") != std::string::npos);
        }
    }
}

TEST_CASE("log csv round trip") {
    const std::vector<LogRow> rows = {{1, 0.123456789012345, 0.5}, {10, 1.0 / 3.0, 0.987654321}};
    const auto text = format_log(rows);
    const auto back = parse_log(text);
    REQUIRE(back.size() == 2);
    CHECK(back[1].loss == 1.0 / 3.0);
    CHECK(format_log(back) == text);
}

TEST_CASE("ablation plan") {
    const auto p = AblationPlan::defaults();
    REQUIRE(p.variants.size() == 4);
    CHECK(p.variants[0].name == "full");
    CHECK(p.variants[1].name == "w/o SAM");
    CHECK(p.variants[2].name == "w/o LIF");
    CHECK(p.variants[3].name == "w/o LW");
    CHECK_FALSE(p.variants[1].flags.use_sam);
    CHECK_FALSE(p.variants[2].flags.use_lif);
    CHECK_FALSE(p.variants[3].flags.use_lw);
    CHECK(variant_slug("w/o SAM") == "wo_sam");
    CHECK(variant_slug("full") == "full");
    AblationPlan dup{{{"a", {}}, {"a", {}}}};
    CHECK_THROWS_AS(dup.validate(), ConfigError);
}

TEST_CASE("ablation run writes a four-row report") {
    auto j = job("ablate", 2, 100);
    const auto results = ablation_run(AblationPlan::defaults(), j);
    REQUIRE(results.size() == 4);
    for (const auto& r : results) {
        CHECK(std::isfinite(r.report.dice.mean));
        CHECK(fs::exists(j.out_dir / variant_slug(r.name) / "metrics.csv"));
    }
    CHECK(results[1].parameter_count < results[0].parameter_count);
    CHECK(results[2].parameter_count < results[0].parameter_count);
    CHECK(results[3].parameter_count == results[0].parameter_count);
    const auto table = slurp(j.out_dir / "ablation.md");
    for (const char* name : {"| full |", "| w/o SAM |", "| w/o LIF |", "| w/o LW |"})
        CHECK(table.find(name) != std::string::npos);
    CHECK(slurp(j.out_dir / "ablation.csv").rfind("variant,params,dice,iou,recall,precision\n", 0) == 0);
}
