#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fdnet/error.hpp"
#include "fdnet/metrics.hpp"
#include "fdnet/rng.hpp"

using namespace fdnet;
using namespace fdnet::metrics;

namespace {

BinaryMask mask_from_bits(unsigned bits, int rows, int cols) {
    BinaryMask m(rows, cols);
    for (int i = 0; i < rows * cols; ++i) m.data[i] = (bits >> i) & 1u;
    return m;
}

// Definition-level oracle: set sizes straight from the pixels.
struct OracleValues {
    double dice, iou, recall, precision;
};

OracleValues oracle(const BinaryMask& p, const BinaryMask& g) {
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

}  // namespace

TEST_CASE("confusion counts: simple cases") {
    BinaryMask gt(4, 4);
    gt.at(1, 1) = gt.at(1, 2) = gt.at(2, 1) = 1;
    auto c = confusion_counts(gt, gt);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    CHECK(c.tp == 3);
    CHECK(c.total() == 16);

    BinaryMask comp(4, 4);
    for (std::size_t i = 0; i < comp.size(); ++i) comp.data[i] = 1 - gt.data[i];
    c = confusion_counts(comp, gt);
    CHECK(c.tp == 0);
    CHECK(c.tn == 0);
}

TEST_CASE("shifted 2x2 squares overlap in two pixels") {
    BinaryMask pred(4, 4), gt(4, 4);
    pred.at(1, 1) = pred.at(1, 2) = pred.at(2, 1) = pred.at(2, 2) = 1;
    gt.at(1, 2) = gt.at(1, 3) = gt.at(2, 2) = gt.at(2, 3) = 1;
    const auto c = confusion_counts(pred, gt);
    CHECK(c == ConfusionCounts{2, 2, 2, 10});
    CHECK(dice(c) == 0.5);
    CHECK(iou(c) == 1.0 / 3.0);
    CHECK(recall(c) == 0.5);
    CHECK(precision(c) == 0.5);
}

TEST_CASE("validation errors") {
    CHECK_THROWS_AS(confusion_counts(BinaryMask(3, 3), BinaryMask(3, 4)), ValidationError);
    BinaryMask bad(2, 2);
    bad.data[0] = 2;
    CHECK_THROWS_AS(confusion_counts(bad, BinaryMask(2, 2)), ValidationError);
    CHECK_THROWS_AS(aggregate({}), ValidationError);
}

TEST_CASE("degenerate denominators") {
    const ConfusionCounts empty{0, 0, 0, 9};
    CHECK(empty_convention(empty));
    CHECK(dice(empty) == 1);
    CHECK(iou(empty) == 1);
    CHECK(recall(empty) == 1);
    CHECK(precision(empty) == 1);
    const ConfusionCounts only_fp{0, 3, 0, 6};
    CHECK(recall(only_fp) == 0);
    CHECK(precision(only_fp) == 0);
    const ConfusionCounts only_fn{0, 0, 3, 6};
    CHECK(recall(only_fn) == 0);
    CHECK(precision(only_fn) == 0);
    CHECK(dice(only_fn) == 0);
}

TEST_CASE("exhaustive 3x3 equivalence with the oracle") {
    std::size_t mismatches = 0;
    for (unsigned a = 0; a < 512; ++a) {
        const auto p = mask_from_bits(a, 3, 3);
        for (unsigned b = 0; b < 512; ++b) {
            const auto g = mask_from_bits(b, 3, 3);
            const auto c = confusion_counts(p, g);
            const auto o = oracle(p, g);
            mismatches += dice(c) != o.dice || iou(c) != o.iou || recall(c) != o.recall || precision(c) != o.precision ||
                          c.total() != 9;
        }
    }
    CHECK(mismatches == 0);
}

TEST_CASE("random 16x16 properties") {
    Rng rng(2024);
    for (int trial = 0; trial < 2000; ++trial) {
        const double density = rng.uniform();
        BinaryMask p(16, 16), g(16, 16);
        for (auto& v : p.data) v = rng.uniform() < density;
        for (auto& v : g.data) v = rng.uniform() < density;
        const auto pg = confusion_counts(p, g), gp = confusion_counts(g, p);
        CHECK(dice(pg) == dice(gp));
        CHECK(iou(pg) == iou(gp));
        CHECK(recall(pg) == precision(gp));
        CHECK(iou(pg) <= dice(pg));
        if (iou(pg) == dice(pg)) CHECK((dice(pg) == 0.0 || dice(pg) == 1.0));
        for (double v : {dice(pg), iou(pg), recall(pg), precision(pg)}) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("aggregate") {
    SUBCASE("single image") {
        const auto r = aggregate({{"a", 0.8, 0.7, 0.9, 0.6, false}});
        CHECK(format_mean_std(r.dice) == "80.00 ± 0.00");
    }
    SUBCASE("two images symmetric") {
        const auto r = aggregate({{"a", 1.0, 1.0, 1.0, 1.0, false}, {"b", 0.0, 0.0, 0.0, 0.0, false}});
        CHECK(r.dice.mean == 0.5);
        CHECK(r.dice.std == 0.5);
        CHECK(format_mean_std(r.dice) == "50.00 ± 50.00");
    }
    SUBCASE("400 entries against a two-pass oracle") {
        Rng rng(400);
        std::vector<ImageMetrics> rows;
        for (int i = 0; i < 400; ++i)
            rows.push_back({"img" + std::to_string(i), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), false});
        const auto r = aggregate(rows);
        auto two_pass = [&](double ImageMetrics::*field) {
            long double s = 0;
            for (const auto& m : rows) s += m.*field;
            const long double mean = s / rows.size();
            long double ss = 0;
            for (const auto& m : rows) ss += (m.*field - mean) * (m.*field - mean);
            return std::pair<double, double>(double(mean), double(std::sqrt(ss / rows.size())));
        };
        const std::pair<double ImageMetrics::*, const Aggregate*> fields[] = {
            {&ImageMetrics::dice, &r.dice}, {&ImageMetrics::iou, &r.iou},
            {&ImageMetrics::recall, &r.recall}, {&ImageMetrics::precision, &r.precision}};
        for (const auto& [f, agg] : fields) {
            const auto [mean, sd] = two_pass(f);
            CHECK(std::abs(agg->mean - mean) < 1e-9);
            CHECK(std::abs(agg->std - sd) < 1e-9);
        }
    }
    SUBCASE("empty convention ids are reported") {
        const auto a = evaluate("blank", BinaryMask(4, 4), BinaryMask(4, 4));
        CHECK(a.empty_convention);
        BinaryMask m(4, 4);
        m.at(0, 0) = 1;
        const auto b = evaluate("dot", m, m);
        CHECK_FALSE(b.empty_convention);
        const auto r = aggregate({a, b});
        CHECK(r.empty_convention_ids() == std::vector<std::string>{"blank"});
    }
}

TEST_CASE("table rendering") {
    CHECK(table_header() == "| Method | Dice (%) | IoU (%) | Recall | Precision |\n|---|---|---|---|---|\n");
    const auto r = aggregate({{"a", 0.9, 0.8, 0.95, 0.85, false}, {"b", 0.7, 0.6, 0.75, 0.65, false}});
    const auto row = table_row("FDNet", r);
    CHECK(row.rfind("| FDNet | 80.00 ± 10.00 | 70.00 ± 10.00 | ", 0) == 0);
    CHECK(table_row_means("full", r) == "| full | 80.00 | 70.00 | 85.00 | 75.00 |\n");
}

TEST_CASE("csv round trip") {
    const auto r = aggregate({{"x", 0.1234567890123, 0.2, 0.3, 0.4, false}, {"y", 1.0 / 3.0, 0.5, 0.6, 0.7, false}});
    const auto text = to_csv(r);
    CHECK(text.rfind("id,dice,iou,recall,precision\n", 0) == 0);
    const auto back = from_csv(text);
    REQUIRE(back.per_image.size() == 2);
    CHECK(back.per_image[1].dice == 1.0 / 3.0);
    CHECK(back.dice.mean == r.dice.mean);
    CHECK(back.dice.std == r.dice.std);
    CHECK(to_csv(back) == text);
}
