#include <algorithm>
#include <optional>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "clvae/changepoint.hpp"
#include "clvae/rng.hpp"

using clvae::BinaryChangeMap;
using clvae::ChangePointOptions;
using clvae::ClvaeModel;
using clvae::DateChange;
using clvae::DivergenceKind;
using clvae::ModelConfig;
using clvae::NdArray;
using clvae::Rng;
using clvae::SarTile;
using clvae::ThresholdMode;

namespace {

DateChange at(const std::string& date, double pct) {
    return {clvae::Date::parse(date), pct};
}

std::vector<DateChange> window_percentages(const std::vector<double>& pcts) {
    std::vector<DateChange> out;
    for (std::size_t i = 0; i < pcts.size(); ++i) {
        out.push_back(at("2021-03-0" + std::to_string(i + 1), pcts[i]));
    }
    return out;
}

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.latent_dim = 8;
    cfg.bottleneck_units = 4;
    cfg.convlstm_filters = 4;
    cfg.residual_channels = {4, 8};
    cfg.extra_residual_blocks = 0;
    cfg.patch_size = 8;
    cfg.timesteps = 2;
    return cfg;
}

SarTile ramp_tile(std::size_t h, std::size_t w, const std::string& date, bool inverted) {
    SarTile tile;
    tile.vv = NdArray({h, w});
    tile.vh = NdArray({h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double ramp = 0.2 + 0.6 * double(x + y) / double(h + w);
            tile.vv.at({y, x}) = inverted ? 1.0 - ramp : ramp;
            tile.vh.at({y, x}) = inverted ? ramp : 1.0 - ramp;
        }
    }
    tile.acquisition_date = clvae::Date::parse(date);
    return tile;
}

}  // namespace

TEST_SUITE_BEGIN("changepoint");

TEST_CASE("percentage change counts mask pixels") {
    BinaryChangeMap all_false{NdArray({8, 8}, 0.0), -0.9};
    CHECK(clvae::percentage_change(all_false) == 0.0);

    BinaryChangeMap all_true{NdArray({8, 8}, 1.0), -0.9};
    CHECK(clvae::percentage_change(all_true) == 100.0);

    BinaryChangeMap half{NdArray({8, 8}, 0.0), -0.9};
    for (std::size_t i = 0; i < 32; ++i) half.mask[i] = 1.0;
    CHECK(clvae::percentage_change(half) == 50.0);

    BinaryChangeMap empty{NdArray({0, 4}, 0.0), 0.0};
    CHECK_THROWS_AS(clvae::percentage_change(empty), std::invalid_argument);
}

TEST_CASE("median rule thresholds at the central order statistics") {
    auto result = clvae::assemble_change_point(window_percentages({1, 1, 40, 42}),
                                               ThresholdMode::median, 0.0);
    CHECK(result.threshold_used == doctest::Approx(20.5));
    REQUIRE(result.change_point.has_value());
    CHECK(result.change_point->iso() == "2021-03-03");

    SUBCASE("odd windows use the middle value") {
        auto odd = clvae::assemble_change_point(window_percentages({3, 10, 4}),
                                                ThresholdMode::median, 0.0);
        CHECK(odd.threshold_used == 4.0);
        REQUIRE(odd.change_point.has_value());
        CHECK(odd.change_point->iso() == "2021-03-02");
    }
    SUBCASE("a flat window has no date strictly above its median") {
        auto flat = clvae::assemble_change_point(window_percentages({0, 0, 0, 0}),
                                                 ThresholdMode::median, 0.0);
        CHECK(flat.threshold_used == 0.0);
        CHECK_FALSE(flat.change_point.has_value());
    }
}

TEST_CASE("fixed rule picks the earliest strictly-exceeding date") {
    auto pcts = window_percentages({1, 1, 40, 42});
    auto low = clvae::assemble_change_point(pcts, ThresholdMode::fixed, 5.0);
    CHECK(low.threshold_used == 5.0);
    REQUIRE(low.change_point.has_value());
    CHECK(low.change_point->iso() == "2021-03-03");

    auto mid = clvae::assemble_change_point(pcts, ThresholdMode::fixed, 41.0);
    REQUIRE(mid.change_point.has_value());
    CHECK(mid.change_point->iso() == "2021-03-04");

    auto high = clvae::assemble_change_point(pcts, ThresholdMode::fixed, 50.0);
    CHECK_FALSE(high.change_point.has_value());

    SUBCASE("exact equality does not trigger") {
        auto eq = clvae::assemble_change_point(pcts, ThresholdMode::fixed, 40.0);
        REQUIRE(eq.change_point.has_value());
        CHECK(eq.change_point->iso() == "2021-03-04");
    }
}

TEST_CASE("a larger fixed threshold never yields an earlier change point") {
    Rng rng(91);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> pcts;
        const std::size_t n = 2 + rng.uniform_index(6);
        for (std::size_t i = 0; i < n; ++i) pcts.push_back(rng.uniform(0.0, 100.0));
        const double t1 = rng.uniform(0.0, 100.0);
        const double t2 = t1 + rng.uniform(0.0, 50.0);
        auto loose = clvae::assemble_change_point(window_percentages(pcts),
                                                  ThresholdMode::fixed, t1);
        auto tight = clvae::assemble_change_point(window_percentages(pcts),
                                                  ThresholdMode::fixed, t2);
        if (tight.change_point) {
            REQUIRE(loose.change_point.has_value());
            CHECK(loose.change_point->iso() <= tight.change_point->iso());
        }
    }
}

TEST_CASE("percentages after the detected date cannot move a fixed-mode point") {
    Rng rng(92);
    std::vector<double> pcts = {2.0, 3.0, 30.0, 11.0, 87.0};
    auto base = clvae::assemble_change_point(window_percentages(pcts),
                                             ThresholdMode::fixed, 10.0);
    REQUIRE(base.change_point.has_value());
    CHECK(base.change_point->iso() == "2021-03-03");
    for (int trial = 0; trial < 20; ++trial) {
        auto shuffled = pcts;
        // Reorder only the percentages after the detected index.
        std::swap(shuffled[3 + rng.uniform_index(2)], shuffled[3 + rng.uniform_index(2)]);
        auto again = clvae::assemble_change_point(window_percentages(shuffled),
                                                  ThresholdMode::fixed, 10.0);
        REQUIRE(again.change_point.has_value());
        CHECK(again.change_point->iso() == base.change_point->iso());
    }
}

TEST_CASE("degenerate windows are rejected") {
    CHECK_THROWS_AS(clvae::assemble_change_point({}, ThresholdMode::fixed, 5.0),
                    std::invalid_argument);
    std::vector<DateChange> unordered = {at("2021-03-02", 1.0), at("2021-03-01", 2.0)};
    CHECK_THROWS_AS(clvae::assemble_change_point(unordered, ThresholdMode::fixed, 5.0),
                    std::invalid_argument);
    std::vector<DateChange> duplicate = {at("2021-03-02", 1.0), at("2021-03-02", 2.0)};
    CHECK_THROWS_AS(clvae::assemble_change_point(duplicate, ThresholdMode::fixed, 5.0),
                    std::invalid_argument);
}

TEST_CASE("mode names round-trip") {
    CHECK(clvae::threshold_mode_from_string("median") == ThresholdMode::median);
    CHECK(clvae::threshold_mode_from_string("fixed") == ThresholdMode::fixed);
    CHECK(clvae::to_string(ThresholdMode::median) == "median");
    CHECK(clvae::to_string(ThresholdMode::fixed) == "fixed");
    CHECK_THROWS_AS(clvae::threshold_mode_from_string("adaptive"), std::invalid_argument);
}

TEST_CASE("detection flags the first divergent acquisition in a window") {
    ClvaeModel model(small_config(), 57);
    // Nudge all parameters so every derived mean vector is nonzero.
    {
        Rng rng(58);
        for (auto& [name, p] : model.named_parameters()) {
            for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] += 0.02 * rng.normal();
        }
    }
    const std::size_t h = 10, w = 12;
    SarTile ref = ramp_tile(h, w, "2021-02-20", false);
    std::vector<SarTile> window = {
        ramp_tile(h, w, "2021-03-01", false), ramp_tile(h, w, "2021-03-02", false),
        ramp_tile(h, w, "2021-03-03", true), ramp_tile(h, w, "2021-03-04", true)};

    ChangePointOptions opt;
    opt.kind = DivergenceKind::ED;  // any latent movement counts as change
    opt.mode = ThresholdMode::fixed;
    opt.fixed_threshold = 5.0;
    auto result = clvae::detect_change_point(ref, window, model, opt);
    REQUIRE(result.per_date.size() == 4);
    CHECK(result.per_date[0].percentage_change == 0.0);
    CHECK(result.per_date[1].percentage_change == 0.0);
    CHECK(result.per_date[2].percentage_change > 5.0);
    REQUIRE(result.change_point.has_value());
    CHECK(result.change_point->iso() == "2021-03-03");

    SUBCASE("a window identical to the reference never alarms") {
        std::vector<SarTile> same = {ramp_tile(h, w, "2021-03-01", false),
                                     ramp_tile(h, w, "2021-03-02", false),
                                     ramp_tile(h, w, "2021-03-03", false)};
        ChangePointOptions med = opt;
        med.mode = ThresholdMode::median;
        auto quiet = clvae::detect_change_point(ref, same, model, med);
        CHECK(quiet.threshold_used == 0.0);
        CHECK_FALSE(quiet.change_point.has_value());
        for (const auto& d : quiet.per_date) CHECK(d.percentage_change == 0.0);
    }
    SUBCASE("the JSON report carries the dates and the detection") {
        auto doc = nlohmann::json::parse(clvae::change_point_report_json(result));
        CHECK(doc["threshold_used"] == 5.0);
        CHECK(doc["change_point"] == "2021-03-03");
        REQUIRE(doc["dates"].size() == 4);
        CHECK(doc["dates"][0]["date"] == "2021-03-01");
        CHECK(doc["dates"][2]["percentage_change"].get<double>() > 5.0);

        clvae::ChangePointResult none;
        none.per_date = window_percentages({0.0});
        none.threshold_used = 5.0;
        auto quiet_doc = nlohmann::json::parse(clvae::change_point_report_json(none));
        CHECK(quiet_doc["change_point"].is_null());
    }
    SUBCASE("validation rejects bad windows") {
        CHECK_THROWS_AS(clvae::detect_change_point(ref, {}, model, opt),
                        std::invalid_argument);
        std::vector<SarTile> wrong_dims = {ramp_tile(h, w + 1, "2021-03-01", true)};
        CHECK_THROWS_AS(clvae::detect_change_point(ref, wrong_dims, model, opt),
                        std::invalid_argument);
        std::vector<SarTile> undated = {ramp_tile(h, w, "2021-03-01", true)};
        undated[0].acquisition_date = clvae::Date();
        CHECK_THROWS_AS(clvae::detect_change_point(ref, undated, model, opt),
                        std::invalid_argument);
        std::vector<SarTile> before_ref = {ramp_tile(h, w, "2021-01-01", true)};
        CHECK_THROWS_AS(clvae::detect_change_point(ref, before_ref, model, opt),
                        std::invalid_argument);
    }
}

TEST_SUITE_END();
