#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clvae/inference.hpp"

namespace clvae {

enum class ThresholdMode { median, fixed };

ThresholdMode threshold_mode_from_string(const std::string& name);
std::string to_string(ThresholdMode mode);

struct DateChange {
    Date date;
    double percentage_change = 0.0;  // in [0,100]
};

struct ChangePointResult {
    std::vector<DateChange> per_date;  // window order, dates strictly increasing
    double threshold_used = 0.0;       // percentage threshold actually applied
    std::optional<Date> change_point;  // earliest date strictly above the threshold
};

struct ChangePointOptions {
    DivergenceKind kind = DivergenceKind::CosD;
    // Binarization threshold for each per-date change map; when unset, the
    // divergence kind's default applies.
    std::optional<double> map_threshold;
    ThresholdMode mode = ThresholdMode::fixed;
    double fixed_threshold = 5.0;  // percent; ignored in median mode
    std::size_t batch_size = 512;
};

// Share of changed pixels, in percent.
double percentage_change(const BinaryChangeMap& mask);

// Applies the threshold rule to already-computed percentages. Median mode
// thresholds at the median of the percentages (mean of the two central order
// statistics for even windows); fixed mode at the given value. The change
// point is the earliest date strictly above.
ChangePointResult assemble_change_point(std::vector<DateChange> per_date,
                                        ThresholdMode mode, double fixed_threshold);

// Scores each window acquisition against the reference: both sides are
// replicated to the model's timestep count, scored pixelwise, binarized, and
// reduced to a percentage; the threshold rule then picks the change point.
// Window dates must be strictly increasing and, when the reference is dated,
// later than the reference.
ChangePointResult detect_change_point(const SarTile& reference,
                                      const std::vector<SarTile>& window,
                                      ClvaeModel& model,
                                      const ChangePointOptions& options = {});

std::string change_point_report_json(const ChangePointResult& result);

}  // namespace clvae
