#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clvae/divergence.hpp"
#include "clvae/model.hpp"
#include "clvae/patching.hpp"

namespace clvae {

// Per-pixel divergence between the latent distributions of the pre and post
// streams; same dims as the unpadded input.
struct ChangeMap {
    NdArray values;  // [H,W]
    DivergenceKind kind = DivergenceKind::CosD;

    std::size_t height() const { return values.rank() == 2 ? values.dim(0) : 0; }
    std::size_t width() const { return values.rank() == 2 ? values.dim(1) : 0; }
};

struct BinaryChangeMap {
    NdArray mask;  // [H,W], 1.0 changed / 0.0 unchanged
    double threshold = 0.0;

    std::size_t height() const { return mask.rank() == 2 ? mask.dim(0) : 0; }
    std::size_t width() const { return mask.rank() == 2 ? mask.dim(1) : 0; }
};

struct InferenceOptions {
    DivergenceKind kind = DivergenceKind::CosD;
    std::size_t batch_size = 512;
};

// Scores every pixel: reflect-pad both stacks by (p/2, p/2-1), cut stride-1
// [T,p,p,3] patches, push both streams through the same encoder with frozen
// normalization statistics, and score each anchor's latent pair. Divergences
// read the distribution parameters directly; nothing is sampled, so the map
// is deterministic and independent of batch_size.
ChangeMap change_map(const TimeSeriesStack& pre, const TimeSeriesStack& post,
                     ClvaeModel& model, const InferenceOptions& options = {});

// Tile form: stacks exactly model-timesteps pre tiles in date order and
// replicates the single post tile to the same length.
ChangeMap change_map(const std::vector<SarTile>& pre, const SarTile& post,
                     ClvaeModel& model, const InferenceOptions& options = {});

// Strict comparison: mask = values > threshold.
BinaryChangeMap binarize(const ChangeMap& map, double threshold);

// Writes change_map.tif, change_mask.tif (0/1), and change_mask.png into an
// existing directory; bounds georeference the rasters when present.
void export_change_products(const ChangeMap& map, const BinaryChangeMap& mask,
                            const std::string& out_dir,
                            const std::optional<GeoBounds>& bounds = std::nullopt);

}  // namespace clvae
