#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "clvae/inference.hpp"
#include "clvae/raster_io.hpp"

namespace clvae {

// Pixel-level confusion counts and the derived scores. A metric whose
// denominator is empty reports 0 and raises the degenerate flag instead of
// producing NaN, so reports stay aggregatable.
struct MetricsReport {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t excluded_pixels = 0;  // ground-truth label -1
    double precision = 0.0, recall = 0.0, f1 = 0.0, iou = 0.0;
    bool degenerate = false;
};

MetricsReport report_from_counts(std::size_t tp, std::size_t fp, std::size_t fn,
                                 std::size_t tn, std::size_t excluded = 0);

// Positive class is change/water (label 1); label -1 pixels are excluded.
MetricsReport score(const NdArray& pred_mask, const GroundTruthMask& gt);
MetricsReport score(const BinaryChangeMap& pred, const GroundTruthMask& gt);

struct MetricValues {
    double precision = 0.0, recall = 0.0, f1 = 0.0, iou = 0.0;
};

// Macro mean (unweighted over reports, the primary figure) plus the metrics
// of the pooled counts; the two differ whenever sites are unbalanced.
struct AggregateReport {
    MetricValues macro;
    MetricsReport pooled;
    std::size_t report_count = 0;
};

AggregateReport aggregate(const std::vector<MetricsReport>& reports);

std::string metrics_report_json(const MetricsReport& report);

// Percent table, one row per named report plus an unweighted average row,
// columns recall/precision/f1/iou.
std::string metrics_table_csv(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace clvae
