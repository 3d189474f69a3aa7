#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "clvae/ndarray.hpp"
#include "clvae/raster_io.hpp"

namespace clvae {

// T ordered acquisitions as one [T,H,W,3] grid. Channels are (vv, vh, zero);
// the third channel exists only to satisfy the model's input width.
struct TimeSeriesStack {
    NdArray values;  // [T,H,W,3]
    std::vector<Date> dates;

    std::size_t timesteps() const { return values.rank() == 4 ? values.dim(0) : 0; }
    std::size_t height() const { return values.rank() == 4 ? values.dim(1) : 0; }
    std::size_t width() const { return values.rank() == 4 ? values.dim(2) : 0; }
};

// Stacks exactly T tiles in date order; dates must be strictly increasing.
TimeSeriesStack stack_pre_series(const std::vector<SarTile>& tiles, std::size_t T);

// All T slices are copies of one tile (the post-event stacking trick).
TimeSeriesStack replicate_post(const SarTile& tile, std::size_t T);

// Mirrors borders without repeating the edge pixel: row [a,b,c,d] padded by
// 2/0 becomes [c,b,a,b,c,d]. top_left pads the top and left edges,
// bottom_right the bottom and right edges.
TimeSeriesStack pad_reflect(const TimeSeriesStack& stack, std::size_t top_left,
                            std::size_t bottom_right);

// Inverse of pad_reflect's geometry: drops the margins again.
TimeSeriesStack crop(const TimeSeriesStack& stack, std::size_t top_left,
                     std::size_t bottom_right);

// Asymmetric margins (p/2, p/2-1) make the stride-1 patch count exactly H*W,
// with patch k anchored at original pixel (k/W, k%W). Even patch sizes only.
std::pair<std::size_t, std::size_t> inference_padding(std::size_t patch_size);

// Stride-s patch grid over a (typically padded) stack. Patches materialize on
// demand so large scenes never hold all N*T*p*p*3 values at once.
class PatchBatch {
public:
    PatchBatch(std::shared_ptr<const TimeSeriesStack> stack, std::size_t patch_size,
               std::size_t stride);

    std::size_t size() const { return rows_ * cols_; }
    std::size_t patch_size() const { return p_; }
    std::size_t stride() const { return stride_; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    // Top-left corner of patch k in the stack's coordinates. Under the
    // default inference padding this equals the original pixel the patch
    // scores.
    std::pair<std::size_t, std::size_t> anchor(std::size_t k) const;

    // Copies patches [first, last) into an [n,T,p,p,3] block.
    NdArray materialize(std::size_t first, std::size_t last) const;
    // One patch as [T,p,p,3].
    NdArray patch(std::size_t k) const;
    // Same patch geometry at an explicit anchor; used by the training sampler.
    NdArray patch_at(std::size_t row, std::size_t col) const;

private:
    std::shared_ptr<const TimeSeriesStack> stack_;
    std::size_t p_, stride_, rows_, cols_;
};

PatchBatch extract_patches(std::shared_ptr<const TimeSeriesStack> stack,
                           std::size_t patch_size, std::size_t stride);
PatchBatch extract_patches(TimeSeriesStack stack, std::size_t patch_size, std::size_t stride);

// Randomized photometric + geometric transform of one [T,p,p,3] patch:
// gamma contrast in (0.25, 2.0), 3x3 gaussian blur, left-right flip (p=0.5),
// up-down flip (p=0.2), rotation uniform in (-90, 90) degrees. The same
// spatial transform hits every timestep so temporal correspondence survives.
// Identical seeds give identical outputs; values stay in [0,1].
NdArray augment_patch(const NdArray& patch, std::uint64_t seed);

}  // namespace clvae
