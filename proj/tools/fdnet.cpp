#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fdnet/checkpoint.hpp"
#include "fdnet/config.hpp"
#include "fdnet/error.hpp"
#include "fdnet/metrics.hpp"
#include "fdnet/phantom.hpp"
#include "fdnet/png_io.hpp"
#include "fdnet/run_manifest.hpp"
#include "fdnet/text_file.hpp"
#include "fdnet/train.hpp"
#include "fdnet/wavelet.hpp"

namespace fs = std::filesystem;
using namespace fdnet;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;  // section.key=value
};

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config: return 2;
        case ErrorKind::Io: return 3;
        case ErrorKind::Validation: return 4;
        case ErrorKind::Dimension: return 5;
        case ErrorKind::Training: return 6;
        case ErrorKind::Version: return 7;
        case ErrorKind::Internal: return 70;
    }
    return 70;
}

void fail_line(const std::string& kind, std::string msg) {
    for (char& c : msg)
        if (c == '\n' || c == '\r') c = ' ';
    std::fprintf(stderr, "fdnet: error: %s: %s\n", kind.c_str(), msg.c_str());
}

void check_device() {
    const char* dev = std::getenv("FDNET_DEVICE");
    if (dev && *dev && std::string(dev) != "cpu") {
        throw ConfigError(std::string("FDNET_DEVICE=") + dev + " is not supported (only 'cpu')");
    }
}

config::RunConfig resolve_config(const Globals& g) {
    config::RunConfig cfg;
    if (!g.config_path.empty()) cfg = config::load_file(g.config_path);
    for (const auto& o : g.overrides) {
        const auto dot = o.find('.');
        const auto eq = o.find('=');
        if (dot == std::string::npos || eq == std::string::npos || dot > eq) {
            throw ConfigError("--set expects section.key=value, got '" + o + "'");
        }
        config::set_value(cfg, o.substr(0, dot), o.substr(dot + 1, eq - dot - 1), o.substr(eq + 1));
    }
    return cfg;
}

void apply_seed(config::RunConfig& cfg, const Globals& g) {
    if (!g.seed) return;
    cfg.data.phantom.seed = *g.seed;
    cfg.train.seed = *g.seed;
    cfg.model.init_seed = *g.seed;
}

fs::path require_out(const Globals& g) {
    if (g.out.empty()) throw ConfigError("--out DIR is required");
    std::error_code ec;
    fs::create_directories(g.out, ec);
    if (ec) throw IoError("cannot create " + g.out + ": " + ec.message());
    return g.out;
}

fs::path dataset_dir(const std::string& flag, const config::RunConfig& cfg) {
    const std::string dir = flag.empty() ? cfg.data.dir : flag;
    if (dir.empty()) throw ConfigError("no dataset: pass --data DIR or set [data] dir");
    return dir;
}

std::map<std::string, std::uint64_t> seed_set(const config::RunConfig& cfg) {
    return {{"data", cfg.data.phantom.seed}, {"train", cfg.train.seed}, {"init", cfg.model.init_seed}};
}

class ManifestScope {
  public:
    ManifestScope(std::string command, const Globals& g) {
        m_.command = std::move(command);
        m_.started_at = utc_timestamp();
        if (!g.config_path.empty()) add_input(g.config_path);
    }
    void add_input(const fs::path& p) { m_.input_hashes[p.string()] = content_hash(p); }
    void set_config(const std::string& text) { m_.config = text; }
    void set_seeds(std::map<std::string, std::uint64_t> s) { m_.seeds = std::move(s); }
    void add_artifact(const std::string& rel) { m_.artifacts.push_back(rel); }
    void write(const fs::path& dir) {
        m_.finished_at = utc_timestamp();
        write_run_manifest(dir, m_);
    }

  private:
    RunManifest m_;
};

// ---- gen-data -----------------------------------------------------------

struct GenDataArgs {
    std::optional<int> size, teeth, streaks;
    std::optional<double> blur, noise;
    std::optional<std::size_t> count;
    std::optional<std::string> split;
};

void cmd_gen_data(const Globals& g, const GenDataArgs& a, ManifestScope& ms) {
    auto cfg = resolve_config(g);
    auto& p = cfg.data.phantom;
    if (a.size) p.image_size = *a.size;
    if (a.teeth) p.tooth_count = *a.teeth;
    if (a.blur) p.blur_sigma = *a.blur;
    if (a.streaks) p.streak_count = *a.streaks;
    if (a.noise) p.noise_sigma = *a.noise;
    if (a.count) cfg.data.count = *a.count;
    if (a.split) cfg.data.split = phantom::parse_split(*a.split);
    apply_seed(cfg, g);
    const auto out = require_out(g);
    const auto manifest = phantom::make_dataset(p, cfg.data.count, cfg.data.split, out);
    ms.set_config(config::section_text(cfg, "data"));
    ms.set_seeds({{"data", p.seed}});
    for (const auto& e : manifest.entries) {
        ms.add_artifact(e.id + ".png");
        ms.add_artifact(e.id + "_mask.png");
    }
    ms.add_artifact(phantom::kManifestFile);
    ms.write(out);
    std::printf("wrote %zu samples (%zu train, %zu test) to %s\n", manifest.entries.size(),
                manifest.ids(phantom::Split::Train).size(), manifest.ids(phantom::Split::Test).size(),
                out.string().c_str());
}

// ---- preprocess ---------------------------------------------------------

void cmd_preprocess(const Globals& g, const std::vector<std::string>& inputs, const std::string& family_flag,
                    ManifestScope& ms) {
    auto cfg = resolve_config(g);
    const auto family = family_flag.empty() ? cfg.model.wavelet : wavelet::parse_family(family_flag);
    if (inputs.empty()) throw ConfigError("preprocess needs at least one input image");
    const auto out = require_out(g);
    std::vector<std::string> seen;
    for (const auto& in : inputs) {
        const auto name = fs::path(in).stem().string() + ".png";
        if (std::find(seen.begin(), seen.end(), name) != seen.end()) {
            throw ConfigError("two inputs map to the same output name " + name);
        }
        seen.push_back(name);
        const auto gray = png::read_gray8(in);
        Plane plane(gray.rows, gray.cols);
        for (std::size_t i = 0; i < plane.size(); ++i) plane.data[i] = gray.data[i] / 255.0;
        const auto enhanced = wavelet::lf_enhance(Image2D(plane), family);
        png::Gray8 result{gray.rows, gray.cols, {}};
        for (double v : enhanced.pixels()) result.data.push_back(phantom::quantize(v));
        png::write_gray8(out / name, result);
        ms.add_input(in);
        ms.add_artifact(name);
    }
    ms.set_config("[preprocess]\nwavelet = " + wavelet::family_name(family) + "\n");
    ms.write(out);
    std::printf("wrote %zu enhanced image(s) to %s\n", inputs.size(), out.string().c_str());
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string data, resume, embeddings;
    std::optional<int> steps;
    bool verbose = false;
};

train::TrainJob make_job(const config::RunConfig& cfg, const fs::path& data, const fs::path& out,
                         const std::string& embeddings, bool verbose) {
    train::TrainJob job;
    job.data_dir = data;
    job.out_dir = out;
    job.embedding_dir = embeddings.empty() ? fs::path(cfg.data.embedding_dir) : fs::path(embeddings);
    job.model = cfg.model;
    job.train = cfg.train;
    job.verbose = verbose;
    return job;
}

void cmd_train(const Globals& g, const TrainArgs& a, ManifestScope& ms) {
    auto cfg = resolve_config(g);
    if (a.steps) cfg.train.steps = *a.steps;
    apply_seed(cfg, g);
    const auto data = dataset_dir(a.data, cfg);
    const auto out = require_out(g);
    auto job = make_job(cfg, data, out, a.embeddings, a.verbose);
    if (!a.resume.empty()) {
        job.resume_from = fs::path(a.resume);
        ms.add_input(a.resume);
    }
    ms.add_input(data);
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = train::train_loop(job);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(out / "config.ini", config::to_text(cfg));
    ms.set_config(config::to_text(cfg));
    ms.set_seeds(seed_set(cfg));
    ms.add_artifact(train::kCheckpointFile);
    ms.add_artifact(train::kLogFile);
    ms.add_artifact("config.ini");
    ms.write(out);
    const auto& last = result.log.back();
    std::printf("trained %d steps (%zu parameters) in %.1fs: loss %.6f, eval dice %.4f\n", last.step,
                result.parameter_count, secs, last.loss, last.eval_dice);
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, data, split = "test", embeddings, name = "FDNet";
};

void cmd_eval(const Globals& g, const EvalArgs& a, ManifestScope& ms) {
    auto cfg = resolve_config(g);
    const auto data = dataset_dir(a.data, cfg);
    if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    const auto ckpt = train::load_checkpoint(a.checkpoint);
    const auto net = train::model_from_checkpoint(ckpt);
    const auto split = a.split == "train" ? phantom::Split::Train : phantom::Split::Test;
    if (a.split != "train" && a.split != "test") throw ConfigError("--split must be train or test");
    const auto ids = phantom::read_manifest(data / phantom::kManifestFile).ids(split);
    if (ids.empty()) throw ValidationError("split '" + a.split + "' of " + data.string() + " is empty");
    const auto& mc = net.config();
    const bool need_emb = mc.sam_enabled() && mc.boundary_mode == model::BoundaryMode::Precomputed;
    const fs::path emb = a.embeddings.empty() ? fs::path(cfg.data.embedding_dir) : fs::path(a.embeddings);
    if (need_emb && emb.empty()) throw ConfigError("checkpoint uses precomputed embeddings; pass --embeddings DIR");
    const auto examples = train::load_examples(data, ids, need_emb ? emb : fs::path{});
    const auto report = train::evaluate(net, examples);

    const auto out = require_out(g);
    std::string table = metrics::table_header() + metrics::table_row(a.name, report);
    const auto empties = report.empty_convention_ids();
    if (!empties.empty()) {
        table += "\nEmpty prediction and mask (all metrics set to 1):";
        for (const auto& id : empties) table += " " + id;
        table += "\n";
    }
    write_text(out / "metrics.csv", metrics::to_csv(report));
    write_text(out / "table.md", table);
    ms.add_input(a.checkpoint);
    ms.add_input(data);
    ms.set_config(ckpt.model_config + "\n[eval]\nsplit = " + a.split + "\n");
    ms.set_seeds({{"init", mc.init_seed}});
    ms.add_artifact("metrics.csv");
    ms.add_artifact("table.md");
    ms.write(out);
    std::fputs(table.c_str(), stdout);
}

// ---- ablate -----------------------------------------------------------------

void cmd_ablate(const Globals& g, const TrainArgs& a, ManifestScope& ms) {
    auto cfg = resolve_config(g);
    if (a.steps) cfg.train.steps = *a.steps;
    apply_seed(cfg, g);
    const auto data = dataset_dir(a.data, cfg);
    const auto out = require_out(g);
    const auto plan = train::AblationPlan::defaults();
    const auto results = train::ablation_run(plan, make_job(cfg, data, out, a.embeddings, a.verbose));
    write_text(out / "config.ini", config::to_text(cfg));
    ms.add_input(data);
    ms.set_config(config::to_text(cfg));
    ms.set_seeds(seed_set(cfg));
    for (const auto& v : plan.variants) {
        const auto slug = train::variant_slug(v.name);
        for (const char* f : {train::kCheckpointFile, train::kLogFile, "metrics.csv"}) ms.add_artifact(slug + "/" + f);
    }
    for (const char* f : {"ablation.csv", "ablation.md", "config.ini"}) ms.add_artifact(f);
    ms.write(out);
    std::fputs(train::ablation_table(results).c_str(), stdout);
}

// ---- report -----------------------------------------------------------------

metrics::MetricReport means_only(double dice, double iou, double recall, double precision) {
    metrics::MetricReport r;
    r.dice.mean = dice;
    r.iou.mean = iou;
    r.recall.mean = recall;
    r.precision.mean = precision;
    return r;
}

std::string ablation_from_csv(const fs::path& file) {
    std::istringstream in(read_text(file));
    std::string line;
    if (!std::getline(in, line) || line != "variant,params,dice,iou,recall,precision") {
        throw ValidationError(file.string() + " is not an ablation CSV");
    }
    std::string out = metrics::table_header("Methods");
    std::string params;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        std::size_t count = 0;
        double d, i, r, p;
        if (comma == std::string::npos ||
            std::sscanf(line.c_str() + comma + 1, "%zu,%lf,%lf,%lf,%lf", &count, &d, &i, &r, &p) != 5) {
            throw ValidationError("malformed row in " + file.string() + ": " + line);
        }
        const auto name = line.substr(0, comma);
        out += metrics::table_row_means(name, means_only(d, i, r, p));
        params += (params.empty() ? "" : ", ") + name + " = " + std::to_string(count);
    }
    return out + "\nParameters: " + params + "\n";
}

void cmd_report(const Globals& g, const std::vector<std::string>& metric_files, const std::string& ablation,
                ManifestScope& ms) {
    if (metric_files.empty() && ablation.empty()) throw ConfigError("report needs --metrics and/or --ablation");
    std::string md;
    if (!metric_files.empty()) {
        md += "## Segmentation results\n\n" + metrics::table_header();
        for (const auto& spec : metric_files) {
            const auto eq = spec.find('=');
            const std::string name = eq == std::string::npos ? fs::path(spec).parent_path().filename().string()
                                                             : spec.substr(0, eq);
            const fs::path file = eq == std::string::npos ? fs::path(spec) : fs::path(spec.substr(eq + 1));
            md += metrics::table_row(name.empty() ? "FDNet" : name, metrics::from_csv(read_text(file)));
            ms.add_input(file);
        }
    }
    if (!ablation.empty()) {
        md += (md.empty() ? "" : "\n") + std::string("## Ablation\n\n") + ablation_from_csv(ablation);
        ms.add_input(ablation);
    }
    const auto out = require_out(g);
    write_text(out / "report.md", md);
    ms.add_artifact("report.md");
    ms.write(out);
    std::fputs(md.c_str(), stdout);
}

std::string join_args(int argc, char** argv) {
    std::string s = "fdnet";
    for (int i = 1; i < argc; ++i) s += std::string(" ") + argv[i];
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FDNet: wavelet-enhanced tooth segmentation on synthetic CBCT-like phantoms"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "INI file with [model], [train] and [data] sections");
    app.add_option("--seed", g.seed, "Overrides the data, train and init seeds");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--set", g.overrides, "Override one config key: section.key=value (repeatable)");

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a phantom dataset with a train/test manifest");
    gen_cmd->add_option("--size", gen.size, "Image side in pixels (even)");
    gen_cmd->add_option("--teeth", gen.teeth, "Teeth per image (1..16)");
    gen_cmd->add_option("--blur", gen.blur, "Gaussian blur sigma in pixels");
    gen_cmd->add_option("--streaks", gen.streaks, "Number of bright streak artifacts");
    gen_cmd->add_option("--noise", gen.noise, "Additive Gaussian noise sigma");
    gen_cmd->add_option("--count", gen.count, "Number of samples");
    gen_cmd->add_option("--split", gen.split, "Train,test fractions, e.g. 0.8,0.2");

    std::vector<std::string> pre_inputs;
    std::string pre_family;
    auto* pre_cmd = app.add_subcommand("preprocess", "Write the low-frequency enhanced version of PNG images");
    pre_cmd->add_option("inputs", pre_inputs, "Input PNG files")->required();
    pre_cmd->add_option("--family", pre_family, "Wavelet family")->check(CLI::IsMember({"haar", "db2"}));

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train FDNet and write checkpoint.bin and train_log.csv");
    train_cmd->add_option("--data", tr.data, "Dataset directory (overrides [data] dir)");
    train_cmd->add_option("--resume", tr.resume, "Checkpoint to resume from");
    train_cmd->add_option("--embeddings", tr.embeddings, "Directory of <id>.emb files (precomputed mode)");
    train_cmd->add_option("--steps", tr.steps, "Overrides [train] steps");
    train_cmd->add_flag("--verbose", tr.verbose, "Print progress at every checkpoint");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint.bin to evaluate")->required();
    eval_cmd->add_option("--data", ev.data, "Dataset directory (overrides [data] dir)");
    eval_cmd->add_option("--split", ev.split, "train or test")->check(CLI::IsMember({"train", "test"}));
    eval_cmd->add_option("--embeddings", ev.embeddings, "Directory of <id>.emb files (precomputed mode)");
    eval_cmd->add_option("--name", ev.name, "Row label in the table");

    TrainArgs ab;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate full, w/o SAM, w/o LIF and w/o LW");
    ablate_cmd->add_option("--data", ab.data, "Dataset directory (overrides [data] dir)");
    ablate_cmd->add_option("--embeddings", ab.embeddings, "Directory of <id>.emb files (precomputed mode)");
    ablate_cmd->add_option("--steps", ab.steps, "Overrides [train] steps");
    ablate_cmd->add_flag("--verbose", ab.verbose, "Print progress");

    std::vector<std::string> rep_metrics;
    std::string rep_ablation;
    auto* report_cmd = app.add_subcommand("report", "Render tables from stored metrics.csv / ablation.csv files");
    report_cmd->add_option("--metrics", rep_metrics, "NAME=path/to/metrics.csv (repeatable)");
    report_cmd->add_option("--ablation", rep_ablation, "path/to/ablation.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail_line("usage", e.what());
        return 2;
    }

    try {
        check_device();
        ManifestScope ms(join_args(argc, argv), g);
        if (gen_cmd->parsed()) cmd_gen_data(g, gen, ms);
        else if (pre_cmd->parsed()) cmd_preprocess(g, pre_inputs, pre_family, ms);
        else if (train_cmd->parsed()) cmd_train(g, tr, ms);
        else if (eval_cmd->parsed()) cmd_eval(g, ev, ms);
        else if (ablate_cmd->parsed()) cmd_ablate(g, ab, ms);
        else if (report_cmd->parsed()) cmd_report(g, rep_metrics, rep_ablation, ms);
    } catch (const Error& e) {
        fail_line(error_kind_name(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        fail_line("internal", e.what());
        return 70;
    }
    return 0;
}
