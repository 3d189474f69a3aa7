#include "clvae/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace clvae {

namespace {

// Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
    if (i < 0) return std::size_t(-i);
    if (std::size_t(i) >= n) return 2 * n - 2 - std::size_t(i);
    return std::size_t(i);
}

struct Histogram {
    std::vector<double> prob;  // normalized counts
    double lo = 0.0, width = 0.0;
    bool degenerate = false;
    double edge(std::size_t i) const { return lo + width * double(i); }
};

Histogram build_histogram(const NdArray& values, std::size_t bins) {
    if (values.size() == 0) throw std::invalid_argument("cannot threshold an empty grid");
    if (bins < 2) throw std::invalid_argument("need at least 2 histogram bins");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < values.size(); ++i) {
        lo = std::min(lo, values[i]);
        hi = std::max(hi, values[i]);
    }
    Histogram h;
    h.lo = lo;
    if (hi == lo) {
        h.degenerate = true;
        return h;
    }
    h.width = (hi - lo) / double(bins);
    h.prob.assign(bins, 0.0);
    const double inv = 1.0 / double(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto b = std::size_t((values[i] - lo) / (hi - lo) * double(bins));
        h.prob[std::min(b, bins - 1)] += inv;
    }
    return h;
}

}  // namespace

ChannelPolicy channel_policy_from_string(const std::string& name) {
    if (name == "vv") return ChannelPolicy::vv;
    if (name == "vh") return ChannelPolicy::vh;
    if (name == "mean_abs") return ChannelPolicy::mean_abs;
    throw std::invalid_argument("unknown channel policy: " + name +
                                " (expected vv, vh, or mean_abs)");
}

std::string to_string(ChannelPolicy policy) {
    switch (policy) {
        case ChannelPolicy::vv: return "vv";
        case ChannelPolicy::vh: return "vh";
        case ChannelPolicy::mean_abs: return "mean_abs";
    }
    throw std::invalid_argument("invalid channel policy");
}

NdArray lee_filter(const NdArray& db_grid, std::size_t window) {
    if (db_grid.rank() != 2) throw std::invalid_argument("lee_filter expects a 2-D grid");
    if (window < 3 || window % 2 == 0) {
        throw std::invalid_argument("lee_filter window must be odd and >= 3, got " +
                                    std::to_string(window));
    }
    const std::size_t h = db_grid.dim(0), w = db_grid.dim(1);
    const std::size_t r = window / 2;
    if (h <= r || w <= r) {
        throw std::invalid_argument("grid too small for the filter window");
    }

    NdArray mean({h, w});
    NdArray var({h, w});
    double noise_var = 0.0;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0, sq = 0.0;
            for (std::ptrdiff_t dy = -std::ptrdiff_t(r); dy <= std::ptrdiff_t(r); ++dy) {
                for (std::ptrdiff_t dx = -std::ptrdiff_t(r); dx <= std::ptrdiff_t(r); ++dx) {
                    const double v = db_grid.at({mirror(std::ptrdiff_t(y) + dy, h),
                                                 mirror(std::ptrdiff_t(x) + dx, w)});
                    s += v;
                    sq += v * v;
                }
            }
            const double n = double(window * window);
            const double m = s / n;
            mean.at({y, x}) = m;
            var.at({y, x}) = std::max(0.0, sq / n - m * m);
            noise_var += var.at({y, x});
        }
    }
    noise_var /= double(h * w);

    NdArray out({h, w});
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = var[i];
        const double k = v > 0.0 ? std::max(0.0, 1.0 - noise_var / v) : 0.0;
        out[i] = mean[i] + k * (db_grid[i] - mean[i]);
    }
    return out;
}

NdArray log_ratio(const SarTile& pre, const SarTile& post, ChannelPolicy policy,
                  std::size_t lee_window) {
    if (pre.height() != post.height() || pre.width() != post.width() ||
        pre.height() == 0) {
        throw std::invalid_argument("log_ratio tiles must share nonzero dims");
    }
    auto ratio = [&](const NdArray& a, const NdArray& b, SarChannel ch) {
        NdArray da = lee_filter(denormalize_to_db(a, ch), lee_window);
        NdArray db = lee_filter(denormalize_to_db(b, ch), lee_window);
        NdArray out({a.dim(0), a.dim(1)});
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = db[i] - da[i];
        return out;
    };
    switch (policy) {
        case ChannelPolicy::vv: return ratio(pre.vv, post.vv, SarChannel::vv);
        case ChannelPolicy::vh: return ratio(pre.vh, post.vh, SarChannel::vh);
        case ChannelPolicy::mean_abs: {
            NdArray lr_vv = ratio(pre.vv, post.vv, SarChannel::vv);
            NdArray lr_vh = ratio(pre.vh, post.vh, SarChannel::vh);
            NdArray out({lr_vv.dim(0), lr_vv.dim(1)});
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] = 0.5 * (std::abs(lr_vv[i]) + std::abs(lr_vh[i]));
            }
            return out;
        }
    }
    throw std::invalid_argument("invalid channel policy");
}

NdArray cva_magnitude(const SarTile& pre, const SarTile& post) {
    if (pre.height() != post.height() || pre.width() != post.width() ||
        pre.height() == 0) {
        throw std::invalid_argument("cva tiles must share nonzero dims");
    }
    NdArray out({pre.height(), pre.width()});
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double dvv = post.vv[i] - pre.vv[i];
        const double dvh = post.vh[i] - pre.vh[i];
        out[i] = std::sqrt(dvv * dvv + dvh * dvh);
    }
    return out;
}

ThresholdResult otsu_threshold(const NdArray& values, std::size_t bins) {
    Histogram h = build_histogram(values, bins);
    if (h.degenerate) return {h.lo, true};

    // Between-class variance w0*w1*(mu0-mu1)^2 via cumulative sums; the split
    // at edge i puts bins [0,i) left.
    double best = -1.0;
    std::size_t best_i = 0;
    double w0 = 0.0, sum0 = 0.0, total = 0.0;
    for (std::size_t b = 0; b < bins; ++b) total += h.prob[b] * (double(b) + 0.5);
    for (std::size_t i = 1; i < bins; ++i) {
        w0 += h.prob[i - 1];
        sum0 += h.prob[i - 1] * (double(i - 1) + 0.5);
        const double w1 = 1.0 - w0;
        if (w0 <= 0.0 || w1 <= 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (total - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_i = i;
        }
    }
    if (best < 0.0) return {h.lo, true};
    return {h.edge(best_i), false};
}

ThresholdResult yen_threshold(const NdArray& values, std::size_t bins) {
    Histogram h = build_histogram(values, bins);
    if (h.degenerate) return {h.lo, true};

    // Maximum-correlation criterion: maximize
    // -ln(G0*G1) + 2*ln(P0*P1), G = sum of squared bin probabilities.
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_i = 0;
    bool found = false;
    double p0 = 0.0, g0 = 0.0;
    double g_total = 0.0;
    for (std::size_t b = 0; b < bins; ++b) g_total += h.prob[b] * h.prob[b];
    for (std::size_t i = 1; i < bins; ++i) {
        p0 += h.prob[i - 1];
        g0 += h.prob[i - 1] * h.prob[i - 1];
        const double p1 = 1.0 - p0;
        const double g1 = g_total - g0;
        if (p0 <= 0.0 || p1 <= 0.0 || g0 <= 0.0 || g1 <= 0.0) continue;
        const double crit = -std::log(g0 * g1) + 2.0 * std::log(p0 * p1);
        if (crit > best) {
            best = crit;
            best_i = i;
            found = true;
        }
    }
    if (!found) return {h.lo, true};
    return {h.edge(best_i), false};
}

BaselineMethod baseline_method_from_string(const std::string& name) {
    if (name == "logratio-otsu") return BaselineMethod::logratio_otsu;
    if (name == "logratio-yen") return BaselineMethod::logratio_yen;
    if (name == "cva") return BaselineMethod::cva;
    throw std::invalid_argument("unknown baseline method: " + name +
                                " (expected logratio-otsu, logratio-yen, or cva)");
}

std::string to_string(BaselineMethod method) {
    switch (method) {
        case BaselineMethod::logratio_otsu: return "logratio-otsu";
        case BaselineMethod::logratio_yen: return "logratio-yen";
        case BaselineMethod::cva: return "cva";
    }
    throw std::invalid_argument("invalid baseline method");
}

BaselineResult run_baseline(BaselineMethod method, const SarTile& pre, const SarTile& post,
                            const BaselineOptions& options) {
    BaselineResult result;
    ThresholdResult thr;
    switch (method) {
        case BaselineMethod::logratio_otsu:
            result.map = log_ratio(pre, post, options.policy, options.lee_window);
            thr = otsu_threshold(result.map, options.histogram_bins);
            break;
        case BaselineMethod::logratio_yen:
            result.map = log_ratio(pre, post, options.policy, options.lee_window);
            thr = yen_threshold(result.map, options.histogram_bins);
            break;
        case BaselineMethod::cva:
            result.map = cva_magnitude(pre, post);
            thr = otsu_threshold(result.map, options.histogram_bins);
            break;
    }
    result.threshold = thr.value;
    result.degenerate_threshold = thr.degenerate;
    result.mask = NdArray({result.map.dim(0), result.map.dim(1)});
    for (std::size_t i = 0; i < result.map.size(); ++i) {
        result.mask[i] = result.map[i] > result.threshold ? 1.0 : 0.0;
    }
    return result;
}

}  // namespace clvae
