#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fdnet/image.hpp"

namespace fdnet::metrics {

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::uint64_t total() const { return tp + fp + fn + tn; }
    bool operator==(const ConfusionCounts&) const = default;
};

/// Throws ValidationError on shape mismatch or values outside {0,1}.
ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt);

// When tp + fp + fn == 0 (both masks empty) every metric is 1. Any other
// zero denominator yields 0.
double dice(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double precision(const ConfusionCounts& c);

/// True when both masks are empty and the all-ones convention applies.
inline bool empty_convention(const ConfusionCounts& c) { return c.tp + c.fp + c.fn == 0; }

struct ImageMetrics {
    std::string id;
    double dice = 0, iou = 0, recall = 0, precision = 0;
    bool empty_convention = false;
};

ImageMetrics evaluate(const std::string& id, const BinaryMask& pred, const BinaryMask& gt);

struct Aggregate {
    double mean = 0;
    double std = 0;  // population (divisor n)
};

struct MetricReport {
    std::vector<ImageMetrics> per_image;
    Aggregate dice, iou, recall, precision;

    /// Ids for which the empty/empty convention was applied.
    std::vector<std::string> empty_convention_ids() const;
};

/// Mean and population std per metric. Throws ValidationError when empty.
MetricReport aggregate(std::vector<ImageMetrics> per_image);

/// `mm.mm ± ss.ss` in percent.
std::string format_mean_std(const Aggregate& a);

/// Column order used by every table: Dice (%) | IoU (%) | Recall | Precision.
std::string table_header(const std::string& first_column = "Method");
std::string table_row(const std::string& name, const MetricReport& report);
/// Mean-only row (ablation table layout), percent with two decimals.
std::string table_row_means(const std::string& name, const MetricReport& report);

/// `id,dice,iou,recall,precision` with a header line.
std::string to_csv(const MetricReport& report);
MetricReport from_csv(const std::string& text);

}  // namespace fdnet::metrics
