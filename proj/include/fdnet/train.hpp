#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fdnet/embedding.hpp"
#include "fdnet/loss.hpp"
#include "fdnet/metrics.hpp"
#include "fdnet/model.hpp"
#include "fdnet/optim.hpp"
#include "fdnet/phantom.hpp"

namespace fdnet::train {

struct TrainConfig {
    double learning_rate = 1e-3;
    int steps = 300;
    int batch_size = 4;
    LossWeights loss_weights;
    std::uint64_t seed = 0;
    int eval_every = 100;

    /// Throws ConfigError.
    void validate() const;
};

/// Probability threshold for mask binarisation at evaluation time.
inline constexpr double kEvalThreshold = 0.5;

/// One image with its optional precomputed boundary embedding.
struct Example {
    phantom::Sample sample;
    std::optional<EmbeddingGrid> boundary;
};

/// Loads the ids of one split (and `<id>.emb` files when embedding_dir is
/// non-empty).
std::vector<Example> load_examples(const std::filesystem::path& data_dir, const std::vector<std::string>& ids,
                                   const std::filesystem::path& embedding_dir = {});

/// Indices of the batch used at `step` (1-based): per-epoch seeded
/// permutations consumed contiguously, so any step is addressable without
/// replaying earlier ones.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch_size, std::uint64_t seed, int step);

/// One optimizer update on the mean batch loss. Returns the loss before the
/// update. Throws TrainingError (listing the batch ids) on a non-finite loss;
/// parameters are left untouched in that case.
double train_step(model::FDNet& net, Adam& optimizer, const std::vector<const Example*>& batch,
                  const TrainConfig& cfg);

/// Thresholded prediction for one image.
BinaryMask predict_mask(const model::FDNet& net, const Example& ex);

metrics::MetricReport evaluate(const model::FDNet& net, const std::vector<Example>& examples);

struct LogRow {
    int step = 0;
    double loss = 0.0;
    double eval_dice = 0.0;
};

inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kLogFile = "train_log.csv";

std::string format_log(const std::vector<LogRow>& rows);
std::vector<LogRow> parse_log(const std::string& text);

struct TrainJob {
    std::filesystem::path data_dir;
    std::filesystem::path out_dir;
    std::filesystem::path embedding_dir;  // required for boundary_mode precomputed
    model::ModelConfig model;
    TrainConfig train;
    std::optional<std::filesystem::path> resume_from;
    bool verbose = false;
};

struct TrainResult {
    std::vector<LogRow> log;
    double final_loss = 0.0;
    std::size_t parameter_count = 0;
};

/// Full loop: writes `checkpoint.bin` every eval_every steps and at the
/// end, and `train_log.csv` with one row per checkpoint. Evaluation uses the
/// test split, or the train split when the test split is empty.
TrainResult train_loop(const TrainJob& job);

// ---- ablation ---------------------------------------------------------------

struct AblationVariant {
    std::string name;
    model::Ablation flags;
};

struct AblationPlan {
    std::vector<AblationVariant> variants;

    /// full, w/o SAM, w/o LIF, w/o LW.
    static AblationPlan defaults();
    /// Throws ConfigError on duplicate names.
    void validate() const;
};

/// Directory name for a variant ("w/o SAM" -> "wo_sam").
std::string variant_slug(const std::string& name);

struct VariantResult {
    std::string name;
    std::size_t parameter_count = 0;
    metrics::MetricReport report;
};

/// Trains one model per variant with shared data, seeds and configs, then
/// evaluates each on the test split. Writes per-variant directories plus
/// `ablation.csv` and `ablation.md` under job.out_dir.
std::vector<VariantResult> ablation_run(const AblationPlan& plan, const TrainJob& job);

std::string ablation_table(const std::vector<VariantResult>& results);
std::string ablation_csv(const std::vector<VariantResult>& results);

}  // namespace fdnet::train
