#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "clvae/metrics.hpp"
#include "clvae/rng.hpp"

using clvae::GroundTruthMask;
using clvae::MetricsReport;
using clvae::NdArray;
using clvae::Rng;

namespace {

GroundTruthMask mask_of(std::size_t h, std::size_t w, const std::vector<int>& labels) {
    GroundTruthMask gt;
    gt.height = h;
    gt.width = w;
    for (int v : labels) gt.labels.push_back(std::int8_t(v));
    return gt;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("perfect prediction scores ones across the board") {
    GroundTruthMask gt = mask_of(2, 3, {1, 0, 1, 0, 0, 1});
    NdArray pred = NdArray::from({2, 3}, {1, 0, 1, 0, 0, 1});
    auto r = clvae::score(pred, gt);
    CHECK(r.tp == 3);
    CHECK(r.tn == 3);
    CHECK(r.fp == 0);
    CHECK(r.fn == 0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.iou == 1.0);
    CHECK_FALSE(r.degenerate);
}

TEST_CASE("counts are assigned pixel by pixel and excluded labels drop out") {
    GroundTruthMask gt = mask_of(2, 4, {1, 1, 0, 0, -1, 1, 0, -1});
    NdArray pred = NdArray::from({2, 4}, {1, 0, 1, 0, 1, 0, 0, 0});
    auto r = clvae::score(pred, gt);
    CHECK(r.tp == 1);   // pixel 0
    CHECK(r.fn == 2);   // pixels 1, 5
    CHECK(r.fp == 1);   // pixel 2
    CHECK(r.tn == 2);   // pixels 3, 6
    CHECK(r.excluded_pixels == 2);
    CHECK(r.tp + r.fp + r.fn + r.tn + r.excluded_pixels == 8);
    CHECK(r.precision == doctest::Approx(0.5));
    CHECK(r.recall == doctest::Approx(1.0 / 3.0));
    CHECK(r.iou == doctest::Approx(0.25));

    GroundTruthMask wrong = mask_of(4, 2, {1, 1, 0, 0, 0, 1, 0, 0});
    CHECK_THROWS_AS(clvae::score(pred, wrong), std::invalid_argument);
}

TEST_CASE("published site row reproduces from raw counts") {
    // Recall 0.779 and precision 0.938 must land on F1 0.851 and IoU 0.741.
    auto r = clvae::report_from_counts(779000, 51490, 221000, 0);
    CHECK(r.recall == doctest::Approx(0.779).epsilon(1e-12));
    CHECK(r.precision == doctest::Approx(0.938).epsilon(1e-4));
    CHECK(std::abs(r.f1 - 0.851) < 0.0005);
    CHECK(std::abs(r.iou - 0.741) < 0.0005);
}

TEST_CASE("all-negative scenes are degenerate zeros, not NaN") {
    GroundTruthMask gt = mask_of(2, 2, {0, 0, 0, 0});
    NdArray pred = NdArray({2, 2}, 0.0);
    auto r = clvae::score(pred, gt);
    CHECK(r.tn == 4);
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);
    CHECK(r.iou == 0.0);
    CHECK(r.degenerate);
    CHECK(std::isfinite(r.f1));
}

TEST_CASE("iou and f1 satisfy their algebraic relation on random counts") {
    Rng rng(121);
    for (int trial = 0; trial < 300; ++trial) {
        const auto tp = std::size_t(rng.uniform_index(500));
        const auto fp = std::size_t(rng.uniform_index(500));
        const auto fn = std::size_t(rng.uniform_index(500));
        auto r = clvae::report_from_counts(tp, fp, fn, 10);
        if (r.f1 > 0.0) {
            CHECK(r.iou == doctest::Approx(r.f1 / (2.0 - r.f1)).epsilon(1e-12));
        }
        CHECK(r.iou <= r.f1 + 1e-15);
    }
}

TEST_CASE("scoring is invariant under a shared pixel permutation") {
    Rng rng(122);
    const std::size_t h = 6, w = 7;
    NdArray pred({h, w});
    GroundTruthMask gt;
    gt.height = h;
    gt.width = w;
    for (std::size_t i = 0; i < h * w; ++i) {
        pred[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        const double roll = rng.uniform();
        gt.labels.push_back(roll < 0.1 ? -1 : (roll < 0.5 ? 1 : 0));
    }
    auto base = clvae::score(pred, gt);

    std::vector<std::size_t> perm(h * w);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    }
    NdArray pred2({h, w});
    GroundTruthMask gt2;
    gt2.height = h;
    gt2.width = w;
    gt2.labels.resize(h * w);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        pred2[perm[i]] = pred[i];
        gt2.labels[perm[i]] = gt.labels[i];
    }
    auto shuffled = clvae::score(pred2, gt2);
    CHECK(shuffled.tp == base.tp);
    CHECK(shuffled.fp == base.fp);
    CHECK(shuffled.fn == base.fn);
    CHECK(shuffled.tn == base.tn);
    CHECK(shuffled.excluded_pixels == base.excluded_pixels);
    CHECK(shuffled.f1 == base.f1);
    CHECK(shuffled.iou == base.iou);
}

TEST_CASE("aggregation reports macro means and pooled counts separately") {
    auto a = clvae::report_from_counts(1, 3, 0, 10);  // f1 = 0.4
    auto b = clvae::report_from_counts(3, 2, 2, 10);  // f1 = 0.6
    CHECK(a.f1 == doctest::Approx(0.4));
    CHECK(b.f1 == doctest::Approx(0.6));
    auto agg = clvae::aggregate({a, b});
    CHECK(agg.report_count == 2);
    CHECK(agg.macro.f1 == doctest::Approx(0.5));
    CHECK(agg.pooled.tp == 4);
    CHECK(agg.pooled.fp == 5);
    CHECK(agg.pooled.fn == 2);
    CHECK(agg.pooled.tn == 20);

    SUBCASE("a single report aggregates to itself") {
        auto solo = clvae::aggregate({b});
        CHECK(solo.macro.precision == b.precision);
        CHECK(solo.macro.recall == b.recall);
        CHECK(solo.macro.f1 == b.f1);
        CHECK(solo.macro.iou == b.iou);
        CHECK(solo.pooled.tp == b.tp);
    }
    SUBCASE("macro and pooled disagree on unbalanced sites") {
        auto tiny = clvae::report_from_counts(1, 1, 0, 0);    // f1 = 2/3
        auto huge = clvae::report_from_counts(100, 0, 0, 0);  // f1 = 1
        auto mixed = clvae::aggregate({tiny, huge});
        CHECK(mixed.macro.f1 == doctest::Approx(5.0 / 6.0));
        CHECK(mixed.pooled.f1 == doctest::Approx(202.0 / 203.0));
        CHECK(mixed.macro.f1 != mixed.pooled.f1);
    }
    SUBCASE("empty input is rejected") {
        CHECK_THROWS_AS(clvae::aggregate({}), std::invalid_argument);
    }
}

TEST_CASE("emitters produce parseable json and the percent table") {
    auto r = clvae::report_from_counts(779, 51, 221, 949);
    auto doc = nlohmann::json::parse(clvae::metrics_report_json(r));
    CHECK(doc["tp"] == 779);
    CHECK(doc["excluded_pixels"] == 0);
    CHECK(doc["precision"].get<double>() == doctest::Approx(r.precision));
    CHECK(doc["degenerate"] == false);

    auto other = clvae::report_from_counts(500, 100, 500, 900);
    auto table = clvae::metrics_table_csv({{"site_a", r}, {"site_b", other}});
    CHECK(table.rfind("site,recall,precision,f1,iou\n", 0) == 0);
    CHECK(table.find("site_a,77.9,93.9,85.1,74.1\n") != std::string::npos);
    CHECK(table.find("site_b,50.0,83.3,62.5,45.5\n") != std::string::npos);
    CHECK(table.find("average,") != std::string::npos);

    auto single = clvae::metrics_table_csv({{"only", r}});
    CHECK(single.find("average") == std::string::npos);
    CHECK_THROWS_AS(clvae::metrics_table_csv({}), std::invalid_argument);
}

TEST_SUITE_END();
