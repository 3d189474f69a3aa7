#include "clvae/metrics.hpp"

#include <cstdio>
#include <stdexcept>

#include <json.hpp>

namespace clvae {

MetricsReport report_from_counts(std::size_t tp, std::size_t fp, std::size_t fn,
                                 std::size_t tn, std::size_t excluded) {
    MetricsReport r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    r.tn = tn;
    r.excluded_pixels = excluded;
    if (tp + fp > 0) {
        r.precision = double(tp) / double(tp + fp);
    } else {
        r.degenerate = true;
    }
    if (tp + fn > 0) {
        r.recall = double(tp) / double(tp + fn);
    } else {
        r.degenerate = true;
    }
    if (r.precision + r.recall > 0.0) {
        r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    }
    if (tp + fp + fn > 0) {
        r.iou = double(tp) / double(tp + fp + fn);
    } else {
        r.degenerate = true;
    }
    return r;
}

MetricsReport score(const NdArray& pred_mask, const GroundTruthMask& gt) {
    gt.validate();
    if (pred_mask.rank() != 2 || pred_mask.dim(0) != gt.height ||
        pred_mask.dim(1) != gt.width) {
        throw std::invalid_argument("prediction dims do not match the ground truth");
    }
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0, excluded = 0;
    for (std::size_t i = 0; i < pred_mask.size(); ++i) {
        const std::int8_t label = gt.labels[i];
        if (label == -1) {
            ++excluded;
            continue;
        }
        const bool hit = pred_mask[i] > 0.0;
        const bool truth = label == 1;
        if (truth && hit) ++tp;
        else if (!truth && hit) ++fp;
        else if (truth && !hit) ++fn;
        else ++tn;
    }
    return report_from_counts(tp, fp, fn, tn, excluded);
}

MetricsReport score(const BinaryChangeMap& pred, const GroundTruthMask& gt) {
    return score(pred.mask, gt);
}

AggregateReport aggregate(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("no reports to aggregate");
    AggregateReport agg;
    agg.report_count = reports.size();
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0, excluded = 0;
    for (const auto& r : reports) {
        agg.macro.precision += r.precision;
        agg.macro.recall += r.recall;
        agg.macro.f1 += r.f1;
        agg.macro.iou += r.iou;
        tp += r.tp;
        fp += r.fp;
        fn += r.fn;
        tn += r.tn;
        excluded += r.excluded_pixels;
    }
    const double n = double(reports.size());
    agg.macro.precision /= n;
    agg.macro.recall /= n;
    agg.macro.f1 /= n;
    agg.macro.iou /= n;
    agg.pooled = report_from_counts(tp, fp, fn, tn, excluded);
    return agg;
}

std::string metrics_report_json(const MetricsReport& report) {
    nlohmann::json doc;
    doc["tp"] = report.tp;
    doc["fp"] = report.fp;
    doc["fn"] = report.fn;
    doc["tn"] = report.tn;
    doc["excluded_pixels"] = report.excluded_pixels;
    doc["precision"] = report.precision;
    doc["recall"] = report.recall;
    doc["f1"] = report.f1;
    doc["iou"] = report.iou;
    doc["degenerate"] = report.degenerate;
    return doc.dump(2) + "\n";
}

std::string metrics_table_csv(
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    if (rows.empty()) throw std::invalid_argument("no rows to tabulate");
    std::string out = "site,recall,precision,f1,iou\n";
    char line[160];
    std::vector<MetricsReport> reports;
    for (const auto& [name, r] : rows) {
        std::snprintf(line, sizeof(line), "%s,%.1f,%.1f,%.1f,%.1f\n", name.c_str(),
                      100.0 * r.recall, 100.0 * r.precision, 100.0 * r.f1, 100.0 * r.iou);
        out += line;
        reports.push_back(r);
    }
    if (rows.size() > 1) {
        const auto agg = aggregate(reports);
        std::snprintf(line, sizeof(line), "average,%.1f,%.1f,%.1f,%.1f\n",
                      100.0 * agg.macro.recall, 100.0 * agg.macro.precision,
                      100.0 * agg.macro.f1, 100.0 * agg.macro.iou);
        out += line;
    }
    return out;
}

}  // namespace clvae
