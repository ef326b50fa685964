// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Pass criterion names as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <unistd.h>
#include <vector>

#include "fdnet/checkpoint.hpp"
#include "fdnet/loss.hpp"
#include "fdnet/metrics.hpp"
#include "fdnet/model.hpp"
#include "fdnet/phantom.hpp"
#include "fdnet/rng.hpp"
#include "fdnet/text_file.hpp"
#include "fdnet/train.hpp"
#include "fdnet/wavelet.hpp"

namespace fs = std::filesystem;
using namespace fdnet;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path work_root() {
    static const fs::path root = fs::temp_directory_path() / ("fdnet_acceptance_" + std::to_string(::getpid()));
    return root;
}

Plane random_plane(int rows, int cols, Rng& rng) {
    Plane p(rows, cols);
    for (double& v : p.data) v = rng.uniform();
    return p;
}

BinaryMask random_mask(int rows, int cols, Rng& rng, double density) {
    BinaryMask m(rows, cols);
    for (auto& v : m.data) v = rng.uniform() < density ? 1 : 0;
    return m;
}

double max_abs_diff(const Plane& a, const Plane& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

double energy(const Plane& p) {
    double e = 0.0;
    for (double v : p.data) e += v * v;
    return e;
}

// Every regular file under dir, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_text(e.path());
    }
    return out;
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
               return std::memcmp(&x, &y, sizeof x) == 0;
           });
}

// Small model used by the training criteria.
model::ModelConfig small_model() {
    model::ModelConfig c;
    c.input_size = 64;
    c.base_width = 8;
    c.boundary_dim = 16;
    c.ctb_dim = 32;
    return c;
}

phantom::PhantomSpec small_phantom(std::uint64_t seed) {
    phantom::PhantomSpec s;
    s.image_size = 64;
    s.tooth_count = 4;
    s.blur_sigma = 1.0;
    s.streak_count = 1;
    s.noise_sigma = 0.03;
    s.seed = seed;
    return s;
}

// ---- criteria ---------------------------------------------------------------

Outcome wavelet_suite() {
    Outcome o;
    Rng rng(1001);
    double recon = 0.0, energy_rel = 0.0, idem = 0.0;
    for (auto fam : {wavelet::Family::Haar, wavelet::Family::Db2}) {
        for (int i = 0; i < 100; ++i) {
            const Plane x = random_plane(64, 64, rng);
            const auto s = wavelet::dwt2(x, fam);
            recon = std::max(recon, max_abs_diff(wavelet::idwt2(s), x));
            const double e = energy(s.ll) + energy(s.lh) + energy(s.hl) + energy(s.hh);
            energy_rel = std::max(energy_rel, std::abs(e - energy(x)) / energy(x));
            if (fam == wavelet::Family::Haar) {
                const auto once = wavelet::lf_enhance(Image2D(x), fam);
                idem = std::max(idem, max_abs_diff(wavelet::lf_enhance(once, fam).plane(), once.plane()));
            } else {
                const Plane once = wavelet::lf_transform(x, fam);
                idem = std::max(idem, max_abs_diff(wavelet::lf_transform(once, fam), once));
            }
        }
    }
    o.require(recon < 1e-6, "reconstruction");
    o.require(energy_rel < 1e-6, "energy");
    o.require(idem < 1e-6, "idempotence");
    o.note("recon " + fmt("%.2e", recon) + ", energy " + fmt("%.2e", energy_rel) + ", idem " + fmt("%.2e", idem));

    bool constant_ok = true;
    for (double c : {0.0, 0.1, 0.25, 0.37, 0.5, 0.73, 0.9, 1.0}) {
        const Image2D img(64, 64, c);
        constant_ok = constant_ok && wavelet::lf_enhance(img, wavelet::Family::Haar) == img;
    }
    o.require(constant_ok, "constant invariance");

    Plane board(64, 64);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) board.at(r, c) = (r + c) % 2;
    const auto flat = wavelet::lf_enhance(Image2D(board), wavelet::Family::Haar);
    o.require(std::all_of(flat.pixels().begin(), flat.pixels().end(), [](double v) { return v == 0.5; }),
              "checkerboard");
    return o;
}

struct Oracle {
    double dice, iou, recall, precision;
};

Oracle brute_force(const BinaryMask& p, const BinaryMask& g) {
    std::size_t inter = 0, uni = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p.data[i] && g.data[i];
        uni += p.data[i] || g.data[i];
        np += p.data[i];
        ng += g.data[i];
    }
    if (uni == 0) return {1, 1, 1, 1};
    auto ratio = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
    return {ratio(2.0 * inter, double(np + ng)), ratio(double(inter), double(uni)), ratio(double(inter), double(ng)),
            ratio(double(inter), double(np))};
}

Outcome metrics_oracle() {
    Outcome o;
    std::size_t mismatches = 0;
    for (unsigned a = 0; a < 512; ++a) {
        BinaryMask p(3, 3);
        for (int k = 0; k < 9; ++k) p.data[k] = (a >> k) & 1u;
        for (unsigned b = 0; b < 512; ++b) {
            BinaryMask g(3, 3);
            for (int k = 0; k < 9; ++k) g.data[k] = (b >> k) & 1u;
            const auto c = metrics::confusion_counts(p, g);
            const auto r = brute_force(p, g);
            mismatches += metrics::dice(c) != r.dice || metrics::iou(c) != r.iou || metrics::recall(c) != r.recall ||
                          metrics::precision(c) != r.precision;
        }
    }
    o.require(mismatches == 0, "exhaustive 3x3 (" + std::to_string(mismatches) + " mismatches)");

    Rng rng(1002);
    std::size_t order = 0, symmetry = 0;
    for (int i = 0; i < 10000; ++i) {
        const double density = rng.uniform();
        const auto p = random_mask(16, 16, rng, density), g = random_mask(16, 16, rng, density);
        const auto pg = metrics::confusion_counts(p, g), gp = metrics::confusion_counts(g, p);
        order += metrics::iou(pg) > metrics::dice(pg);
        symmetry += metrics::dice(pg) != metrics::dice(gp) || metrics::iou(pg) != metrics::iou(gp) ||
                    metrics::recall(pg) != metrics::precision(gp);
    }
    o.require(order == 0, "iou <= dice");
    o.require(symmetry == 0, "symmetry");
    o.note("262144 exhaustive pairs, 10000 random pairs");
    return o;
}

Outcome shape_closure() {
    Outcome o;
    Rng rng(1003);
    for (int size : {64, 128, 256}) {
        model::ModelConfig cfg;
        cfg.input_size = size;
        cfg.check_shapes = true;
        const model::FDNet net(cfg);
        ag::NoGradGuard ng;
        const auto out = net.forward(Image2D(random_plane(size, size, rng)));
        const auto expected = model::expected_shapes(cfg);
        o.require(out.trace == expected, "trace at " + std::to_string(size));
        o.require(out.logits.shape() == ag::Shape{1, size, size}, "logits at " + std::to_string(size));
        o.note(std::to_string(size) + ": " + std::to_string(expected.size()) + " shapes");
    }
    return o;
}

Outcome gradient_checks() {
    Outcome o;
    model::ModelConfig cfg;
    cfg.input_size = 32;
    cfg.base_width = 4;
    cfg.boundary_dim = 8;
    model::FDNet net(cfg);
    Rng rng(1004);
    const Image2D img(random_plane(32, 32, rng));
    const BinaryMask mask = random_mask(32, 32, rng, 0.4);
    auto loss = [&] { return train::segmentation_loss(net.logits(img), mask, {}); };

    net.params().zero_grad();
    ag::backward(loss());
    std::size_t zero = 0;
    for (const auto& p : net.params().params()) {
        double mag = 0.0;
        for (double g : p.tensor.grad()) mag += std::abs(g);
        if (!(mag > 0.0)) {
            ++zero;
            o.note("zero gradient: " + p.name);
        }
    }
    o.require(zero == 0, "nonzero gradients");

    const auto& params = net.params().params();
    const std::size_t total = net.params().scalar_count();
    double worst = 0.0;
    for (int checked = 0; checked < 20; ++checked) {
        std::size_t flat = rng.index(total), k = 0;
        while (flat >= params[k].tensor.numel()) flat -= params[k++].tensor.numel();
        auto t = params[k].tensor;
        const double analytic = t.grad()[flat];
        auto v = t.mutable_values();
        const double keep = v[flat], h = 1e-3;
        double plus, minus;
        {
            ag::NoGradGuard ng;
            v[flat] = keep + h;
            plus = loss().item();
            v[flat] = keep - h;
            minus = loss().item();
            v[flat] = keep;
        }
        const double numeric = (plus - minus) / (2 * h);
        worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4}));
    }
    o.require(worst < 1e-2, "finite differences");
    o.note(std::to_string(params.size()) + " tensors, worst rel err " + fmt("%.2e", worst));
    return o;
}

// 8 samples, all assigned to the train split so the logged eval Dice is the
// training Dice.
fs::path overfit_data() {
    const fs::path dir = work_root() / "overfit_data";
    phantom::make_dataset(small_phantom(500), 8, {0.8, 0.2}, dir);
    phantom::DatasetManifest m;
    for (std::size_t i = 0; i < 8; ++i) m.entries.push_back({phantom::sample_id(i), phantom::Split::Train});
    phantom::write_manifest(m, dir / phantom::kManifestFile);
    return dir;
}

Outcome overfit() {
    Outcome o;
    const fs::path data = overfit_data();
    train::TrainJob job;
    job.data_dir = data;
    job.model = small_model();
    job.train.learning_rate = 3e-3;
    job.train.steps = 300;
    job.train.batch_size = 4;
    job.train.eval_every = 50;
    job.train.seed = 11;

    job.out_dir = work_root() / "overfit_a";
    const auto run = train::train_loop(job);
    job.out_dir = work_root() / "overfit_b";
    train::train_loop(job);

    const auto net = train::model_from_checkpoint(train::load_checkpoint(work_root() / "overfit_a" / train::kCheckpointFile));
    const auto examples = train::load_examples(data, phantom::read_manifest(data / phantom::kManifestFile).ids(phantom::Split::Train));
    const double dice = train::evaluate(net, examples).dice.mean;
    o.require(examples.size() == 8, "8 training samples");
    o.require(dice >= 0.95, "training Dice >= 0.95");
    o.require(snapshot(work_root() / "overfit_a") == snapshot(work_root() / "overfit_b"), "identical reruns");
    o.note("steps " + std::to_string(job.train.steps) + ", final loss " + fmt("%.4f", run.final_loss) +
           ", training Dice " + fmt("%.4f", dice));
    return o;
}

Outcome ablation() {
    Outcome o;
    const fs::path data = work_root() / "ablation_data";
    phantom::make_dataset(small_phantom(900), 32, {0.8, 0.2}, data);
    train::TrainJob job;
    job.data_dir = data;
    job.out_dir = work_root() / "ablation";
    job.model = small_model();
    job.train.learning_rate = 3e-3;
    job.train.steps = 300;
    job.train.batch_size = 4;
    job.train.seed = 12;
    const auto results = train::ablation_run(train::AblationPlan::defaults(), job);

    o.require(results.size() == 4, "four variants");
    bool finite = true;
    for (const auto& r : results) {
        for (const auto& a : {r.report.dice, r.report.iou, r.report.recall, r.report.precision}) {
            finite = finite && std::isfinite(a.mean) && std::isfinite(a.std);
        }
    }
    o.require(finite, "finite metrics");

    const std::string table = read_text(job.out_dir / "ablation.md");
    int rows = 0;
    for (const char* name : {"full", "w/o SAM", "w/o LIF", "w/o LW"}) {
        rows += table.find("| " + std::string(name) + " |") != std::string::npos;
    }
    o.require(rows == 4, "4-row report");

    if (results.size() == 4) {
        auto cfg = small_model();
        const model::FDNet full(cfg);
        cfg.ablation = {false, true, true};
        const model::FDNet no_sam(cfg);
        cfg.ablation = {true, false, true};
        const model::FDNet no_lif(cfg);
        const std::size_t n_full = results[0].parameter_count;
        o.require(n_full == full.params().scalar_count(), "full count");
        // Without the boundary branch the E_5 concat and the fusion stages
        // also lose boundary_dim input channels, so only the sign is fixed.
        o.require(results[1].parameter_count == no_sam.params().scalar_count() && results[1].parameter_count < n_full &&
                      no_sam.params().scalar_count("sam.") == 0 && full.params().scalar_count("sam.") > 0,
                  "w/o SAM has no boundary-encoder parameters");
        o.require(results[2].parameter_count == n_full - full.params().scalar_count("ctb.") &&
                      no_lif.params().scalar_count("ctb.") == 0 && full.params().scalar_count("ctb.") > 0,
                  "w/o LIF drops exactly the fusion blocks");
        o.require(results[3].parameter_count == n_full, "w/o LW keeps the full count");
        std::string counts;
        for (const auto& r : results) {
            counts += (counts.empty() ? "" : ", ") + r.name + " " + std::to_string(r.parameter_count) + " (dice " +
                      fmt("%.3f", r.report.dice.mean) + ")";
        }
        o.note(counts);
    }
    return o;
}

Outcome determinism() {
    Outcome o;
    const auto spec = small_phantom(77);
    phantom::make_dataset(spec, 6, {0.5, 0.5}, work_root() / "det_data_a");
    phantom::make_dataset(spec, 6, {0.5, 0.5}, work_root() / "det_data_b");
    o.require(snapshot(work_root() / "det_data_a") == snapshot(work_root() / "det_data_b"), "dataset bytes");

    train::TrainJob job;
    job.data_dir = work_root() / "det_data_a";
    job.model = small_model();
    job.train.steps = 20;
    job.train.eval_every = 10;
    job.train.batch_size = 2;
    job.train.seed = 5;
    job.out_dir = work_root() / "det_run_a";
    train::train_loop(job);
    job.out_dir = work_root() / "det_run_b";
    train::train_loop(job);
    const auto a = snapshot(work_root() / "det_run_a"), b = snapshot(work_root() / "det_run_b");
    o.require(a.count(train::kLogFile) && a.at(train::kLogFile) == b.at(train::kLogFile), "log bytes");
    o.require(a.count(train::kCheckpointFile) && a.at(train::kCheckpointFile) == b.at(train::kCheckpointFile),
              "checkpoint bytes");

    // Save/load round trip on a model with non-initial weights.
    const auto ckpt_path = work_root() / "det_run_a" / train::kCheckpointFile;
    const auto trained = train::model_from_checkpoint(train::load_checkpoint(ckpt_path));
    const auto copy_path = work_root() / "det_copy.bin";
    train::save_checkpoint(copy_path, train::capture(trained, nullptr, 20));
    const auto reloaded = train::model_from_checkpoint(train::load_checkpoint(copy_path));
    Rng rng(1007);
    bool same = true;
    for (int i = 0; i < 3; ++i) {
        const Image2D img(random_plane(64, 64, rng));
        ag::NoGradGuard ng;
        same = same && bit_equal(trained.logits(img).values(), reloaded.logits(img).values());
    }
    o.require(same, "forward after save/load");

    std::vector<metrics::ImageMetrics> rows;
    for (int i = 0; i < 5; ++i) {
        const auto p = random_mask(32, 32, rng, 0.5), g = random_mask(32, 32, rng, 0.5);
        rows.push_back(metrics::evaluate("img" + std::to_string(i), p, g));
    }
    const auto report = metrics::aggregate(rows);
    const std::string table = metrics::table_header() + metrics::table_row("FDNet", report);
    const std::regex row(R"(\| FDNet( \| \d+\.\d\d ± \d+\.\d\d){4} \|\n)");
    o.require(table.rfind("| Method | Dice (%) | IoU (%) | Recall | Precision |\n", 0) == 0, "column order");
    o.require(std::regex_search(table, row), "row format");
    o.require(metrics::format_mean_std({0.91234, 0.01237}) == "91.23 ± 1.24", "two-decimal rounding");
    o.note("dataset, log, checkpoint and forward compared byte for byte");
    return o;
}

struct Criterion {
    std::string name;
    std::function<Outcome()> run;
    double limit_s;  // 0 = no runtime bound
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {"wavelet_suite", wavelet_suite, 10},     {"metrics_oracle", metrics_oracle, 60},
        {"shape_closure", shape_closure, 30},     {"gradient_checks", gradient_checks, 0},
        {"overfit", overfit, 15 * 60},            {"ablation", ablation, 60 * 60},
        {"determinism_round_trips", determinism, 0},
    };
    std::set<std::string> only(argv + 1, argv + argc);
    for (const auto& name : only) {
        if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return c.name == name; })) {
            std::fprintf(stderr, "unknown criterion '%s'\n", name.c_str());
            return 2;
        }
    }

    std::error_code ec;
    fs::remove_all(work_root(), ec);
    fs::create_directories(work_root());
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.name)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out.pass = false;
            out.note(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.limit_s > 0) out.require(secs < c.limit_s, "runtime limit " + fmt("%.0f s", c.limit_s));
        std::printf("%s %s (%.1f s): %s\n", out.pass ? "PASS" : "FAIL", c.name.c_str(), secs, out.detail.c_str());
        std::fflush(stdout);
        failed += !out.pass;
    }
    fs::remove_all(work_root(), ec);
    std::printf("%d criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
