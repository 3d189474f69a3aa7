#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "clvae/autodiff.hpp"
#include "clvae/ndarray.hpp"

namespace clvae {

// Input patches always carry (vv, vh, zero) channels.
inline constexpr std::size_t kInputChannels = 3;

struct ModelConfig {
    std::size_t latent_dim = 128;
    std::size_t bottleneck_units = 8;
    std::size_t convlstm_filters = 16;
    std::vector<std::size_t> residual_channels = {32, 64};
    std::size_t extra_residual_blocks = 1;
    std::size_t patch_size = 16;
    std::size_t timesteps = 4;
    double bn_momentum = 0.9;

    // patch_size must be a multiple of 8 (the decoder expands from a
    // patch_size/8 grid) and timesteps a power of two so the stride-2
    // stages divide evenly in both directions.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& json);

// Diagonal Gaussian over the latent space.
struct LatentDistribution {
    std::vector<double> mean;
    std::vector<double> log_variance;
};

// Splits batched [N,L] mean/log-variance grids into per-item distributions.
std::vector<LatentDistribution> split_latents(const NdArray& mu, const NdArray& logvar);

// Reparameterized draw: z = mu + exp(0.5*logvar) * noise, differentiable in
// both distribution parameters. noise shape must equal mu shape.
ad::Var sample_latent(const ad::Var& mu, const ad::Var& logvar, const NdArray& noise);

// ConvLSTM front end, two downsampling residual blocks, optional extra
// blocks, pooled bottleneck with mean / log-variance heads, and a
// transpose-convolution decoder fed by U-Net style cross-connections.
class ClvaeModel {
public:
    struct Encoded {
        ad::Var mu;       // [N, latent_dim]
        ad::Var logvar;   // [N, latent_dim]
        ad::Var skip1;    // ConvLSTM sequence features, full resolution
        ad::Var skip2;    // first residual block output, half resolution
    };

    explicit ClvaeModel(ModelConfig cfg, std::uint64_t seed = 0x51ceb00c5ULL);
    ~ClvaeModel();
    ClvaeModel(ClvaeModel&&) noexcept;
    ClvaeModel& operator=(ClvaeModel&&) noexcept;
    ClvaeModel(const ClvaeModel&) = delete;
    ClvaeModel& operator=(const ClvaeModel&) = delete;

    const ModelConfig& config() const;

    // x is [N, timesteps, patch, patch, 3]. Training mode normalizes with
    // batch statistics and records pending running-stat updates; inference
    // mode uses the frozen statistics.
    Encoded encode(const ad::Var& x, bool training);
    Encoded encode(const NdArray& x, bool training = false);

    // z is [N, latent_dim]; skips must come from the same encode() call.
    ad::Var decode(const ad::Var& z, const Encoded& enc, bool training);

    // Trainable tensors in a fixed construction order; names are stable and
    // define the checkpoint layout.
    std::vector<std::pair<std::string, ad::Var>> named_parameters() const;
    // Batch-norm running statistics (not trained, saved with checkpoints).
    std::vector<std::pair<std::string, NdArray*>> named_buffers();

    std::size_t parameter_count() const;        // trainable scalars
    std::size_t total_parameter_count() const;  // trainable + running stats

    void zero_grad();
    // Folds the batch statistics recorded by the latest training-mode pass
    // into the running statistics: running = m*running + (1-m)*batch.
    void commit_bn_updates();

    void save(const std::string& path) const;
    static ClvaeModel load(const std::string& path);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Trainable parameter count for a config without keeping the model.
std::size_t parameter_count(const ModelConfig& cfg);

}  // namespace clvae
