#pragma once

#include <cstddef>
#include <string>

#include "clvae/ndarray.hpp"
#include "clvae/raster_io.hpp"

namespace clvae {

enum class ChannelPolicy { vv, vh, mean_abs };

ChannelPolicy channel_policy_from_string(const std::string& name);
std::string to_string(ChannelPolicy policy);

// Adaptive MMSE smoothing of a dB grid: x_hat = m + k(x - m) with local mean
// m, k = max(0, 1 - noise_var/local_var). The noise variance is the mean of
// the local variances across the grid; borders are mirrored. Flat
// neighborhoods pass through untouched.
NdArray lee_filter(const NdArray& db_grid, std::size_t window = 5);

// dB(post) - dB(pre) per polarization on Lee-filtered dB grids. The vv and vh
// policies keep one signed channel; mean_abs averages the channel magnitudes
// (and is therefore symmetric in its arguments, not antisymmetric).
NdArray log_ratio(const SarTile& pre, const SarTile& post,
                  ChannelPolicy policy = ChannelPolicy::mean_abs,
                  std::size_t lee_window = 5);

// Change-vector magnitude sqrt(dVV^2 + dVH^2) on the normalized channels.
NdArray cva_magnitude(const SarTile& pre, const SarTile& post);

struct ThresholdResult {
    double value = 0.0;
    // Constant input has no interior bin edge to pick; value is the single
    // observed level and callers should not trust the split.
    bool degenerate = false;
};

// Histogram thresholds over the grid's min-max range. Candidates are the
// interior bin edges; ties resolve to the lowest edge.
ThresholdResult otsu_threshold(const NdArray& values, std::size_t bins = 256);
ThresholdResult yen_threshold(const NdArray& values, std::size_t bins = 256);

enum class BaselineMethod { logratio_otsu, logratio_yen, cva };

BaselineMethod baseline_method_from_string(const std::string& name);
std::string to_string(BaselineMethod method);

struct BaselineOptions {
    ChannelPolicy policy = ChannelPolicy::mean_abs;
    std::size_t lee_window = 5;
    std::size_t histogram_bins = 256;
};

struct BaselineResult {
    NdArray map;   // [H,W] log-ratio or CVA magnitude
    NdArray mask;  // [H,W] 1.0 where map > threshold
    double threshold = 0.0;
    bool degenerate_threshold = false;
};

BaselineResult run_baseline(BaselineMethod method, const SarTile& pre, const SarTile& post,
                            const BaselineOptions& options = {});

}  // namespace clvae
