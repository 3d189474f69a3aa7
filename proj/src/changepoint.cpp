#include "clvae/changepoint.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

namespace clvae {

ThresholdMode threshold_mode_from_string(const std::string& name) {
    if (name == "median") return ThresholdMode::median;
    if (name == "fixed") return ThresholdMode::fixed;
    throw std::invalid_argument("unknown threshold mode: " + name +
                                " (expected median or fixed)");
}

std::string to_string(ThresholdMode mode) {
    return mode == ThresholdMode::median ? "median" : "fixed";
}

double percentage_change(const BinaryChangeMap& mask) {
    if (mask.mask.rank() != 2 || mask.mask.size() == 0) {
        throw std::invalid_argument("mask must be a nonempty 2-D grid");
    }
    std::size_t changed = 0;
    for (std::size_t i = 0; i < mask.mask.size(); ++i) {
        if (mask.mask[i] > 0.0) ++changed;
    }
    return 100.0 * double(changed) / double(mask.mask.size());
}

ChangePointResult assemble_change_point(std::vector<DateChange> per_date,
                                        ThresholdMode mode, double fixed_threshold) {
    if (per_date.empty()) throw std::invalid_argument("change-point window is empty");
    for (std::size_t i = 1; i < per_date.size(); ++i) {
        if (!(per_date[i - 1].date < per_date[i].date)) {
            throw std::invalid_argument("window dates must be strictly increasing");
        }
    }

    ChangePointResult result;
    if (mode == ThresholdMode::median) {
        std::vector<double> sorted;
        sorted.reserve(per_date.size());
        for (const auto& d : per_date) sorted.push_back(d.percentage_change);
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        result.threshold_used =
            n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    } else {
        result.threshold_used = fixed_threshold;
    }

    for (const auto& d : per_date) {
        if (d.percentage_change > result.threshold_used) {
            result.change_point = d.date;
            break;
        }
    }
    result.per_date = std::move(per_date);
    return result;
}

ChangePointResult detect_change_point(const SarTile& reference,
                                      const std::vector<SarTile>& window,
                                      ClvaeModel& model, const ChangePointOptions& options) {
    if (window.empty()) throw std::invalid_argument("change-point window is empty");
    reference.validate();
    for (const auto& tile : window) {
        tile.validate();
        if (tile.height() != reference.height() || tile.width() != reference.width()) {
            throw std::invalid_argument("window tile dims differ from the reference");
        }
        if (tile.acquisition_date.empty()) {
            throw std::invalid_argument("window tiles must carry acquisition dates");
        }
        if (!reference.acquisition_date.empty() &&
            !(reference.acquisition_date < tile.acquisition_date)) {
            throw std::invalid_argument("reference must predate the window");
        }
    }

    const std::size_t t = model.config().timesteps;
    const double map_threshold =
        options.map_threshold.value_or(default_threshold(options.kind));
    InferenceOptions inf;
    inf.kind = options.kind;
    inf.batch_size = options.batch_size;

    TimeSeriesStack ref_stack = replicate_post(reference, t);
    std::vector<DateChange> per_date;
    per_date.reserve(window.size());
    for (const auto& tile : window) {
        auto map = change_map(ref_stack, replicate_post(tile, t), model, inf);
        per_date.push_back(
            {tile.acquisition_date, percentage_change(binarize(map, map_threshold))});
    }
    return assemble_change_point(std::move(per_date), options.mode, options.fixed_threshold);
}

std::string change_point_report_json(const ChangePointResult& result) {
    nlohmann::json doc;
    doc["threshold_used"] = result.threshold_used;
    doc["dates"] = nlohmann::json::array();
    for (const auto& d : result.per_date) {
        doc["dates"].push_back(
            {{"date", d.date.iso()}, {"percentage_change", d.percentage_change}});
    }
    if (result.change_point) {
        doc["change_point"] = result.change_point->iso();
    } else {
        doc["change_point"] = nullptr;
    }
    return doc.dump(2) + "\n";
}

}  // namespace clvae
