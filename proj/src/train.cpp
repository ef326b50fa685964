#include "fdnet/train.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "fdnet/checkpoint.hpp"
#include "fdnet/config.hpp"
#include "fdnet/error.hpp"
#include "fdnet/rng.hpp"
#include "fdnet/text_file.hpp"

namespace fdnet::train {
namespace {

std::string train_echo(const TrainConfig& t) {
    config::RunConfig cfg;
    cfg.train = t;
    return config::section_text(cfg, "train");
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
    if (steps <= 0) throw ConfigError("steps must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (eval_every <= 0) throw ConfigError("eval_every must be positive");
    if (loss_weights.dice < 0.0 || loss_weights.bce < 0.0 || loss_weights.dice + loss_weights.bce <= 0.0) {
        throw ConfigError("loss weights must be non-negative with w_dice + w_bce > 0");
    }
}

std::vector<Example> load_examples(const std::filesystem::path& data_dir, const std::vector<std::string>& ids,
                                   const std::filesystem::path& embedding_dir) {
    std::vector<Example> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        Example ex{phantom::load_sample(data_dir, id), std::nullopt};
        if (!embedding_dir.empty()) ex.boundary = read_embedding(embedding_path(embedding_dir, id));
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<std::size_t> batch_indices(std::size_t n, int batch_size, std::uint64_t seed, int step) {
    if (n == 0) throw ConfigError("cannot draw batches from an empty training split");
    std::vector<std::size_t> out;
    std::uint64_t cached_epoch = ~0ull;
    std::vector<std::size_t> perm(n);
    for (int i = 0; i < batch_size; ++i) {
        const std::uint64_t pos = static_cast<std::uint64_t>(step - 1) * batch_size + i;
        const std::uint64_t epoch = pos / n;
        if (epoch != cached_epoch) {
            for (std::size_t k = 0; k < n; ++k) perm[k] = k;
            Rng rng(seed * 0x9e3779b97f4a7c15ULL + epoch + 1);
            rng.shuffle(perm);
            cached_epoch = epoch;
        }
        out.push_back(perm[pos % n]);
    }
    return out;
}

double train_step(model::FDNet& net, Adam& optimizer, const std::vector<const Example*>& batch,
                  const TrainConfig& cfg) {
    if (batch.empty()) throw ConfigError("empty batch");
    net.params().zero_grad();
    const double inv = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const Example* ex : batch) {
        const auto boundary = ex->boundary ? &*ex->boundary : nullptr;
        const ag::Tensor logits = net.logits(ex->sample.image, boundary);
        const ag::Tensor loss = ag::scale(segmentation_loss(logits, ex->sample.mask, cfg.loss_weights), inv);
        total += loss.item();
        ag::backward(loss);
    }
    if (!std::isfinite(total)) {
        std::string ids;
        for (const Example* ex : batch) ids += (ids.empty() ? "" : ",") + ex->sample.id;
        net.params().zero_grad();
        throw TrainingError("non-finite loss at optimizer step " + std::to_string(optimizer.state().step + 1) +
                            " on batch [" + ids + "]");
    }
    optimizer.step();
    return total;
}

BinaryMask predict_mask(const model::FDNet& net, const Example& ex) {
    ag::NoGradGuard no_grad;
    const ag::Tensor logits = net.logits(ex.sample.image, ex.boundary ? &*ex.boundary : nullptr);
    BinaryMask m(ex.sample.image.height(), ex.sample.image.width());
    // sigmoid(x) >= 0.5  <=>  x >= 0
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits.values()[i]));
        m.data[i] = p >= kEvalThreshold ? 1 : 0;
    }
    return m;
}

metrics::MetricReport evaluate(const model::FDNet& net, const std::vector<Example>& examples) {
    std::vector<metrics::ImageMetrics> rows;
    rows.reserve(examples.size());
    for (const auto& ex : examples) rows.push_back(metrics::evaluate(ex.sample.id, predict_mask(net, ex), ex.sample.mask));
    return metrics::aggregate(std::move(rows));
}

std::string format_log(const std::vector<LogRow>& rows) {
    std::string out = "step,loss,eval_dice\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", r.step, r.loss, r.eval_dice);
        out += buf;
    }
    return out;
}

std::vector<LogRow> parse_log(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "step,loss,eval_dice") throw ValidationError("training log header missing");
    std::vector<LogRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        LogRow r;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf", &r.step, &r.loss, &r.eval_dice) != 3) {
            throw ValidationError("malformed training log row: " + line);
        }
        rows.push_back(r);
    }
    return rows;
}

TrainResult train_loop(const TrainJob& job) {
    job.train.validate();
    const auto manifest = phantom::read_manifest(job.data_dir / phantom::kManifestFile);
    const auto train_ids = manifest.ids(phantom::Split::Train);
    auto eval_ids = manifest.ids(phantom::Split::Test);
    if (train_ids.empty()) throw ConfigError("dataset " + job.data_dir.string() + " has no train split");
    if (eval_ids.empty()) eval_ids = train_ids;

    const bool need_emb = job.model.sam_enabled() && job.model.boundary_mode == model::BoundaryMode::Precomputed;
    if (need_emb && job.embedding_dir.empty()) {
        throw ConfigError("boundary_mode precomputed needs [data] embedding_dir");
    }
    const auto emb_dir = need_emb ? job.embedding_dir : std::filesystem::path{};
    const auto train_set = load_examples(job.data_dir, train_ids, emb_dir);
    const auto eval_set = load_examples(job.data_dir, eval_ids, emb_dir);

    std::error_code ec;
    std::filesystem::create_directories(job.out_dir, ec);
    if (ec) throw IoError("cannot create " + job.out_dir.string() + ": " + ec.message());

    model::FDNet net(job.model);
    Adam optimizer(net.params(), job.train.learning_rate);
    TrainResult result;
    result.parameter_count = net.params().scalar_count();
    int start = 1;
    if (job.resume_from) {
        const auto ckpt = load_checkpoint(*job.resume_from);
        if (ckpt.model_config != config::model_echo(net.config())) {
            throw ConfigError("resume checkpoint " + job.resume_from->string() + " was trained with a different model config");
        }
        restore_params(net, ckpt);
        if (ckpt.optimizer) optimizer.load_state(*ckpt.optimizer);
        start = static_cast<int>(ckpt.step) + 1;
        const auto log_path = job.resume_from->parent_path() / kLogFile;
        if (std::filesystem::exists(log_path)) {
            for (const auto& row : parse_log(read_text(log_path))) {
                if (row.step < start) result.log.push_back(row);
            }
        }
    }

    const auto ckpt_path = job.out_dir / kCheckpointFile;
    const auto log_path = job.out_dir / kLogFile;
    const std::string echo = train_echo(job.train);
    for (int step = start; step <= job.train.steps; ++step) {
        std::vector<const Example*> batch;
        for (auto i : batch_indices(train_set.size(), job.train.batch_size, job.train.seed, step)) {
            batch.push_back(&train_set[i]);
        }
        const double loss = train_step(net, optimizer, batch, job.train);
        result.final_loss = loss;
        if (step % job.train.eval_every == 0 || step == job.train.steps) {
            const double dice = evaluate(net, eval_set).dice.mean;
            result.log.push_back({step, loss, dice});
            save_checkpoint(ckpt_path, capture(net, &optimizer, static_cast<std::uint64_t>(step), echo));
            write_text(log_path, format_log(result.log));
            if (job.verbose) {
                std::fprintf(stderr, "step %d loss %.6f eval_dice %.4f\n", step, loss, dice);
            }
        }
    }
    return result;
}

// ---- ablation ---------------------------------------------------------------

AblationPlan AblationPlan::defaults() {
    return {{
        {"full", {true, true, true}},
        {"w/o SAM", {false, true, true}},
        {"w/o LIF", {true, false, true}},
        {"w/o LW", {true, true, false}},
    }};
}

void AblationPlan::validate() const {
    if (variants.empty()) throw ConfigError("ablation plan has no variants");
    std::set<std::string> names, slugs;
    for (const auto& v : variants) {
        if (!names.insert(v.name).second || !slugs.insert(variant_slug(v.name)).second) {
            throw ConfigError("duplicate ablation variant name '" + v.name + "'");
        }
    }
}

std::string variant_slug(const std::string& name) {
    std::string out;
    for (std::size_t i = 0; i < name.size(); ++i) {
        const char c = name[i];
        if (c == '/') continue;
        if (std::isalnum(static_cast<unsigned char>(c))) {
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!out.empty() && out.back() != '_') {
            out += '_';
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out.empty() ? "variant" : out;
}

std::vector<VariantResult> ablation_run(const AblationPlan& plan, const TrainJob& job) {
    plan.validate();
    const auto manifest = phantom::read_manifest(job.data_dir / phantom::kManifestFile);
    auto test_ids = manifest.ids(phantom::Split::Test);
    if (test_ids.empty()) test_ids = manifest.ids(phantom::Split::Train);

    std::vector<VariantResult> results;
    for (const auto& variant : plan.variants) {
        TrainJob vjob = job;
        vjob.model.ablation = variant.flags;
        vjob.out_dir = job.out_dir / variant_slug(variant.name);
        vjob.resume_from.reset();
        if (job.verbose) std::fprintf(stderr, "== variant %s\n", variant.name.c_str());
        const auto trained = train_loop(vjob);

        const auto ckpt = load_checkpoint(vjob.out_dir / kCheckpointFile);
        const auto net = model_from_checkpoint(ckpt);
        const bool need_emb = net.config().sam_enabled() && net.config().boundary_mode == model::BoundaryMode::Precomputed;
        const auto test_set = load_examples(job.data_dir, test_ids, need_emb ? job.embedding_dir : std::filesystem::path{});
        VariantResult r{variant.name, trained.parameter_count, evaluate(net, test_set)};
        write_text(vjob.out_dir / "metrics.csv", metrics::to_csv(r.report));
        results.push_back(std::move(r));
    }
    write_text(job.out_dir / "ablation.csv", ablation_csv(results));
    write_text(job.out_dir / "ablation.md", ablation_table(results));
    return results;
}

std::string ablation_table(const std::vector<VariantResult>& results) {
    std::string out = metrics::table_header("Methods");
    for (const auto& r : results) out += metrics::table_row_means(r.name, r.report);
    out += "\nParameters: ";
    for (std::size_t i = 0; i < results.size(); ++i) {
        out += (i ? ", " : "") + results[i].name + " = " + std::to_string(results[i].parameter_count);
    }
    return out + "\n";
}

std::string ablation_csv(const std::vector<VariantResult>& results) {
    std::string out = "variant,params,dice,iou,recall,precision\n";
    char buf[200];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g,%.17g,%.17g\n", r.parameter_count, r.report.dice.mean,
                      r.report.iou.mean, r.report.recall.mean, r.report.precision.mean);
        out += r.name + buf;
    }
    return out;
}

}  // namespace fdnet::train
