#include "clvae/inference.hpp"

#include <algorithm>
#include <filesystem>
#include <memory>
#include <stdexcept>

#include "clvae/png_io.hpp"

namespace clvae {

namespace {

void check_stack(const TimeSeriesStack& stack, const char* label, std::size_t timesteps) {
    if (stack.values.rank() != 4 || stack.values.dim(3) != kInputChannels) {
        throw std::invalid_argument(std::string(label) + " stack must be [T,H,W,3]");
    }
    if (stack.timesteps() != timesteps) {
        throw std::invalid_argument(std::string(label) + " stack has " +
                                    std::to_string(stack.timesteps()) +
                                    " timesteps, model expects " + std::to_string(timesteps));
    }
    if (stack.height() == 0 || stack.width() == 0) {
        throw std::invalid_argument(std::string(label) + " stack is empty");
    }
}

}  // namespace

ChangeMap change_map(const TimeSeriesStack& pre, const TimeSeriesStack& post,
                     ClvaeModel& model, const InferenceOptions& options) {
    const ModelConfig& cfg = model.config();
    check_stack(pre, "pre", cfg.timesteps);
    check_stack(post, "post", cfg.timesteps);
    if (pre.height() != post.height() || pre.width() != post.width()) {
        throw std::invalid_argument("pre and post grids differ: " +
                                    std::to_string(pre.height()) + "x" +
                                    std::to_string(pre.width()) + " vs " +
                                    std::to_string(post.height()) + "x" +
                                    std::to_string(post.width()));
    }
    if (options.batch_size == 0) throw std::invalid_argument("batch_size must be positive");

    const std::size_t h = pre.height();
    const std::size_t w = pre.width();
    const auto [pad_tl, pad_br] = inference_padding(cfg.patch_size);
    PatchBatch pre_patches =
        extract_patches(pad_reflect(pre, pad_tl, pad_br), cfg.patch_size, 1);
    PatchBatch post_patches =
        extract_patches(pad_reflect(post, pad_tl, pad_br), cfg.patch_size, 1);
    if (pre_patches.rows() != h || pre_patches.cols() != w) {
        throw std::logic_error("padded patch grid does not cover the scene");
    }

    ChangeMap map;
    map.kind = options.kind;
    map.values = NdArray({h, w});
    const std::size_t total = pre_patches.size();
    for (std::size_t first = 0; first < total; first += options.batch_size) {
        const std::size_t last = std::min(first + options.batch_size, total);
        auto enc_pre = model.encode(pre_patches.materialize(first, last));
        auto enc_post = model.encode(post_patches.materialize(first, last));
        auto d_pre = split_latents(enc_pre.mu->value, enc_pre.logvar->value);
        auto d_post = split_latents(enc_post.mu->value, enc_post.logvar->value);
        for (std::size_t k = first; k < last; ++k) {
            const auto [row, col] = pre_patches.anchor(k);
            map.values.at({row, col}) =
                divergence(options.kind, d_pre[k - first], d_post[k - first]);
        }
    }
    return map;
}

ChangeMap change_map(const std::vector<SarTile>& pre, const SarTile& post,
                     ClvaeModel& model, const InferenceOptions& options) {
    const std::size_t t = model.config().timesteps;
    return change_map(stack_pre_series(pre, t), replicate_post(post, t), model, options);
}

BinaryChangeMap binarize(const ChangeMap& map, double threshold) {
    if (map.values.rank() != 2) throw std::invalid_argument("change map must be 2-D");
    BinaryChangeMap out;
    out.threshold = threshold;
    out.mask = NdArray({map.height(), map.width()});
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        out.mask[i] = map.values[i] > threshold ? 1.0 : 0.0;
    }
    return out;
}

void export_change_products(const ChangeMap& map, const BinaryChangeMap& mask,
                            const std::string& out_dir,
                            const std::optional<GeoBounds>& bounds) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(out_dir)) {
        throw std::invalid_argument("output directory does not exist: " + out_dir);
    }
    if (map.height() != mask.height() || map.width() != mask.width()) {
        throw std::invalid_argument("map and mask dims differ");
    }
    save_raster(map.values, out_dir + "/change_map.tif", bounds);
    save_raster(mask.mask, out_dir + "/change_mask.tif", bounds);

    std::vector<std::uint8_t> pixels(mask.mask.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        pixels[i] = mask.mask[i] > 0.0 ? 255 : 0;
    }
    png::write_gray(out_dir + "/change_mask.png", pixels.data(), mask.width(),
                    mask.height());
}

}  // namespace clvae
