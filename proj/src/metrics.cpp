#include "fdnet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fdnet/error.hpp"

namespace fdnet::metrics {
namespace {

double ratio(std::uint64_t num, std::uint64_t den, const ConfusionCounts& c) {
    if (empty_convention(c)) return 1.0;
    if (den == 0) return 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
}

Aggregate summarize(const std::vector<ImageMetrics>& xs, double ImageMetrics::*field) {
    const double n = static_cast<double>(xs.size());
    double sum = 0.0;
    for (const auto& x : xs) sum += x.*field;
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& x : xs) ss += (x.*field - mean) * (x.*field - mean);
    return {mean, std::sqrt(ss / n)};
}

std::string percent2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

}  // namespace

ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.rows != gt.rows || pred.cols != gt.cols || pred.size() != gt.size()) {
        throw ValidationError("mask shape mismatch: " + std::to_string(pred.rows) + "x" + std::to_string(pred.cols) +
                              " vs " + std::to_string(gt.rows) + "x" + std::to_string(gt.cols));
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto p = pred.data[i], g = gt.data[i];
        if (p > 1 || g > 1) throw ValidationError("mask values must be 0 or 1");
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double dice(const ConfusionCounts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c); }
double iou(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp + c.fn, c); }
double recall(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn, c); }
double precision(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp, c); }

ImageMetrics evaluate(const std::string& id, const BinaryMask& pred, const BinaryMask& gt) {
    const auto c = confusion_counts(pred, gt);
    return {id, dice(c), iou(c), recall(c), precision(c), empty_convention(c)};
}

std::vector<std::string> MetricReport::empty_convention_ids() const {
    std::vector<std::string> out;
    for (const auto& m : per_image) {
        if (m.empty_convention) out.push_back(m.id);
    }
    return out;
}

MetricReport aggregate(std::vector<ImageMetrics> per_image) {
    if (per_image.empty()) throw ValidationError("cannot aggregate an empty metric list");
    MetricReport r;
    r.per_image = std::move(per_image);
    r.dice = summarize(r.per_image, &ImageMetrics::dice);
    r.iou = summarize(r.per_image, &ImageMetrics::iou);
    r.recall = summarize(r.per_image, &ImageMetrics::recall);
    r.precision = summarize(r.per_image, &ImageMetrics::precision);
    return r;
}

std::string format_mean_std(const Aggregate& a) { return percent2(a.mean) + " ± " + percent2(a.std); }

std::string table_header(const std::string& first_column) {
    return "| " + first_column + " | Dice (%) | IoU (%) | Recall | Precision |\n|---|---|---|---|---|\n";
}

std::string table_row(const std::string& name, const MetricReport& r) {
    return "| " + name + " | " + format_mean_std(r.dice) + " | " + format_mean_std(r.iou) + " | " +
           format_mean_std(r.recall) + " | " + format_mean_std(r.precision) + " |\n";
}

std::string table_row_means(const std::string& name, const MetricReport& r) {
    return "| " + name + " | " + percent2(r.dice.mean) + " | " + percent2(r.iou.mean) + " | " +
           percent2(r.recall.mean) + " | " + percent2(r.precision.mean) + " |\n";
}

std::string to_csv(const MetricReport& report) {
    std::string out = "id,dice,iou,recall,precision\n";
    char buf[160];
    for (const auto& m : report.per_image) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g\n", m.dice, m.iou, m.recall, m.precision);
        out += m.id + buf;
    }
    return out;
}

MetricReport from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "id,dice,iou,recall,precision") {
        throw ValidationError("metrics CSV must start with header 'id,dice,iou,recall,precision'");
    }
    std::vector<ImageMetrics> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ImageMetrics m;
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 5) throw ValidationError("malformed metrics CSV row: " + line);
        try {
            m.id = fields[0];
            m.dice = std::stod(fields[1]);
            m.iou = std::stod(fields[2]);
            m.recall = std::stod(fields[3]);
            m.precision = std::stod(fields[4]);
        } catch (const std::logic_error&) {
            throw ValidationError("malformed metrics CSV row: " + line);
        }
        rows.push_back(m);
    }
    return aggregate(std::move(rows));
}

}  // namespace fdnet::metrics
