#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clvae/autodiff.hpp"
#include "clvae/model.hpp"
#include "clvae/ndarray.hpp"
#include "clvae/patching.hpp"
#include "clvae/rng.hpp"

namespace clvae {

// Objective mixing: total = alpha*KL + beta*Recon + (1-alpha-beta)*Contrast.
struct LossWeights {
    double alpha = 0.1;
    double beta = 0.7;

    double contrastive() const { return 1.0 - alpha - beta; }
    void validate() const;
};

struct TrainSchedule {
    double initial_lr = 0.001;
    double min_lr = 0.00001;
    std::size_t plateau_patience = 2;
    std::size_t stop_patience = 4;
    std::size_t max_epochs = 10;
    std::size_t batch_size = 512;
    double improvement_tolerance = 1e-3;
    double lr_decay = 0.1;

    void validate() const;
};

// Reduce-on-plateau bookkeeping. Feed one total loss per epoch; an epoch
// improves when (best - loss)/max(|best|, tiny) >= improvement_tolerance.
// With a constant loss the first decay lands on epoch index plateau_patience
// and the stop on epoch index stop_patience (0-based).
class PlateauController {
public:
    explicit PlateauController(const TrainSchedule& schedule);

    struct Outcome {
        bool improved = false;
        bool decayed = false;
        bool stop = false;
    };
    Outcome observe(double total_loss);

    double lr() const { return lr_; }
    double best() const { return best_; }

private:
    TrainSchedule schedule_;
    double lr_;
    double best_;
    bool has_best_ = false;
    std::size_t decay_wait_ = 0;
    std::size_t stop_wait_ = 0;
};

// First-order adaptive-moment optimizer over the model's trainable tensors.
class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<std::pair<std::string, ad::Var>> params,
                           double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(double lr);

private:
    struct Slot {
        ad::Var param;
        NdArray m, v;
    };
    std::vector<Slot> slots_;
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

struct LossBreakdown {
    double kl = 0.0;
    double recon = 0.0;
    double contrastive = 0.0;
    double total = 0.0;
};

struct LossGraph {
    ad::Var total;
    LossBreakdown values;
};

// Dual-stream objective on patch batches p1, p2 of shape [N,T,p,p,3] with
// per-stream reparameterization noise of shape [N, latent_dim]. Both streams
// run through the same weights.
LossGraph total_loss(ClvaeModel& model, const NdArray& p1, const NdArray& p2,
                     const NdArray& noise1, const NdArray& noise2, const LossWeights& weights,
                     double margin, bool training);

// Two distinct anchors, uniform over a rows x cols grid. Throws when the
// grid has fewer than two cells.
std::pair<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>>
draw_anchor_pair(Rng& rng, std::size_t rows, std::size_t cols);

struct TrainOptions {
    LossWeights weights;
    TrainSchedule schedule;
    double contrastive_margin = 1.0;
    std::uint64_t seed = 0;
    // Gradient steps per epoch; 0 derives one pass over the stride-1 anchor
    // grid of the dataset (rounded up per batch).
    std::size_t steps_per_epoch = 0;
    bool augment = true;
    std::string checkpoint_dir;  // when set, writes epoch_NNN.ckpt after each epoch
    std::string history_csv;     // when set, writes the loss history table
    bool verbose = false;
};

struct EpochStats {
    std::size_t epoch = 0;  // 0-based
    double lr = 0.0;
    LossBreakdown losses;
};

struct TrainResult {
    std::vector<EpochStats> history;
    bool stopped_early = false;
    double final_lr = 0.0;
};

// Self-supervised training on pre-event stacks. Patch pairs are drawn from
// random distinct anchors of a random scene, each patch augmented under its
// own derived seed. Deterministic for a fixed (options.seed, dataset).
TrainResult train(ClvaeModel& model, const std::vector<TimeSeriesStack>& scenes,
                  const TrainOptions& options);

std::string history_to_csv(const std::vector<EpochStats>& history);

}  // namespace clvae
