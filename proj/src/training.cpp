#include "clvae/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>

#include "clvae/rng.hpp"

namespace clvae {

void LossWeights::validate() const {
    if (!std::isfinite(alpha) || !std::isfinite(beta) || alpha < 0.0 || beta < 0.0) {
        throw std::invalid_argument("LossWeights: alpha and beta must be finite and >= 0");
    }
    if (alpha + beta > 1.0) {
        throw std::invalid_argument("LossWeights: alpha + beta must not exceed 1");
    }
}

void TrainSchedule::validate() const {
    if (!(initial_lr > 0.0) || !(min_lr > 0.0)) {
        throw std::invalid_argument("TrainSchedule: learning rates must be positive");
    }
    if (min_lr >= initial_lr) {
        throw std::invalid_argument("TrainSchedule: min_lr must be below initial_lr");
    }
    if (plateau_patience < 1) {
        throw std::invalid_argument("TrainSchedule: plateau_patience must be >= 1");
    }
    if (stop_patience < 1) {
        throw std::invalid_argument("TrainSchedule: stop_patience must be >= 1");
    }
    if (max_epochs < 1) throw std::invalid_argument("TrainSchedule: max_epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainSchedule: batch_size must be >= 1");
    if (!(improvement_tolerance >= 0.0)) {
        throw std::invalid_argument("TrainSchedule: improvement_tolerance must be >= 0");
    }
    if (!(lr_decay > 0.0) || !(lr_decay < 1.0)) {
        throw std::invalid_argument("TrainSchedule: lr_decay must lie in (0,1)");
    }
}

PlateauController::PlateauController(const TrainSchedule& schedule)
    : schedule_(schedule), lr_(schedule.initial_lr), best_(0.0) {
    schedule_.validate();
}

PlateauController::Outcome PlateauController::observe(double total_loss) {
    Outcome oc;
    const bool improved =
        !has_best_ ||
        (best_ - total_loss) / std::max(std::abs(best_), 1e-12) >= schedule_.improvement_tolerance;
    if (improved) {
        best_ = total_loss;
        has_best_ = true;
        decay_wait_ = 0;
        stop_wait_ = 0;
        oc.improved = true;
        return oc;
    }
    ++decay_wait_;
    ++stop_wait_;
    if (stop_wait_ >= schedule_.stop_patience) oc.stop = true;
    if (decay_wait_ >= schedule_.plateau_patience) {
        const double next = std::max(schedule_.min_lr, lr_ * schedule_.lr_decay);
        oc.decayed = next < lr_;
        lr_ = next;
        decay_wait_ = 0;
    }
    return oc;
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, ad::Var>> params, double beta1,
                             double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.reserve(params.size());
    for (auto& [name, p] : params) {
        if (!p) throw std::invalid_argument("AdamOptimizer: null parameter '" + name + "'");
        slots_.push_back({p, NdArray(p->value.shape(), 0.0), NdArray(p->value.shape(), 0.0)});
    }
}

void AdamOptimizer::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (auto& slot : slots_) {
        double* p = slot.param->value.data();
        const bool has_grad = !slot.param->grad.empty();
        const double* g = has_grad ? slot.param->grad.data() : nullptr;
        double* m = slot.m.data();
        double* v = slot.v.data();
        for (std::size_t i = 0; i < slot.param->value.size(); ++i) {
            const double gi = g ? g[i] : 0.0;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

LossGraph total_loss(ClvaeModel& model, const NdArray& p1, const NdArray& p2,
                     const NdArray& noise1, const NdArray& noise2, const LossWeights& weights,
                     double margin, bool training) {
    weights.validate();
    if (!p1.same_shape(p2)) {
        throw std::invalid_argument("total_loss: the two patch batches must share a shape");
    }
    if (!(margin > 0.0)) throw std::invalid_argument("total_loss: margin must be positive");
    auto e1 = model.encode(ad::constant(p1), training);
    auto e2 = model.encode(ad::constant(p2), training);
    auto kl = ad::add(ad::kl_loss(e1.mu, e1.logvar), ad::kl_loss(e2.mu, e2.logvar));
    auto r1 = model.decode(sample_latent(e1.mu, e1.logvar, noise1), e1, training);
    auto r2 = model.decode(sample_latent(e2.mu, e2.logvar, noise2), e2, training);
    auto recon = ad::add(ad::mse_loss(r1, ad::constant(p1)), ad::mse_loss(r2, ad::constant(p2)));
    auto contrast = ad::contrastive_loss_rows(r1, r2, margin);
    auto total = ad::add(ad::add(ad::scale(kl, weights.alpha), ad::scale(recon, weights.beta)),
                         ad::scale(contrast, weights.contrastive()));
    LossGraph lg;
    lg.total = total;
    lg.values.kl = kl->value[0];
    lg.values.recon = recon->value[0];
    lg.values.contrastive = contrast->value[0];
    lg.values.total = total->value[0];
    return lg;
}

std::pair<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>>
draw_anchor_pair(Rng& rng, std::size_t rows, std::size_t cols) {
    if (rows * cols < 2) {
        throw std::invalid_argument("draw_anchor_pair: anchor grid needs at least two cells");
    }
    const std::size_t first = rng.uniform_index(rows * cols);
    std::size_t second = first;
    while (second == first) second = rng.uniform_index(rows * cols);
    return {{first / cols, first % cols}, {second / cols, second % cols}};
}

std::string history_to_csv(const std::vector<EpochStats>& history) {
    std::string out = "epoch,lr,kl,recon,contrastive,total\n";
    char line[256];
    for (const auto& row : history) {
        std::snprintf(line, sizeof(line), "%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", row.epoch,
                      row.lr, row.losses.kl, row.losses.recon, row.losses.contrastive,
                      row.losses.total);
        out += line;
    }
    return out;
}

TrainResult train(ClvaeModel& model, const std::vector<TimeSeriesStack>& scenes,
                  const TrainOptions& options) {
    options.weights.validate();
    options.schedule.validate();
    if (scenes.empty()) throw std::invalid_argument("train: dataset is empty");
    const ModelConfig& cfg = model.config();
    const std::size_t p = cfg.patch_size;

    // Stride-1 patch views over each scene; anchors are drawn uniformly.
    std::vector<PatchBatch> views;
    std::vector<std::size_t> grid_rows, grid_cols;
    std::size_t total_anchors = 0;
    for (const auto& scene : scenes) {
        if (scene.timesteps() != cfg.timesteps) {
            throw std::invalid_argument("train: scene timesteps " +
                                        std::to_string(scene.timesteps()) +
                                        " do not match the model's " +
                                        std::to_string(cfg.timesteps));
        }
        if (scene.height() < p || scene.width() < p) {
            throw std::invalid_argument("train: scene smaller than the patch size");
        }
        const std::size_t rows = scene.height() - p + 1;
        const std::size_t cols = scene.width() - p + 1;
        if (rows * cols < 2) {
            throw std::invalid_argument("train: scene too small to draw distinct anchor pairs");
        }
        views.push_back(extract_patches(std::make_shared<TimeSeriesStack>(scene), p, 1));
        grid_rows.push_back(rows);
        grid_cols.push_back(cols);
        total_anchors += rows * cols;
    }

    const std::size_t batch = options.schedule.batch_size;
    const std::size_t steps = options.steps_per_epoch > 0
                                  ? options.steps_per_epoch
                                  : (total_anchors + batch - 1) / batch;

    if (options.verbose) {
        std::printf("trainable parameters: %zu\n", model.parameter_count());
        std::fflush(stdout);
    }
    if (!options.checkpoint_dir.empty()) {
        std::filesystem::create_directories(options.checkpoint_dir);
    }

    AdamOptimizer adam(model.named_parameters());
    PlateauController plateau(options.schedule);
    TrainResult result;

    const std::size_t item_len = cfg.timesteps * p * p * kInputChannels;
    for (std::size_t epoch = 0; epoch < options.schedule.max_epochs; ++epoch) {
        const std::uint64_t epoch_seed = seed_combine(options.seed, epoch);
        LossBreakdown sums;
        for (std::size_t step = 0; step < steps; ++step) {
            const std::uint64_t step_seed = seed_combine(epoch_seed, step);
            NdArray b1({batch, cfg.timesteps, p, p, kInputChannels});
            NdArray b2(b1.shape());
            for (std::size_t i = 0; i < batch; ++i) {
                const std::uint64_t item_seed = seed_combine(step_seed, i);
                Rng item_rng(item_seed);
                const std::size_t s = item_rng.uniform_index(views.size());
                const auto [a1, a2] = draw_anchor_pair(item_rng, grid_rows[s], grid_cols[s]);
                NdArray patch1 = views[s].patch_at(a1.first, a1.second);
                NdArray patch2 = views[s].patch_at(a2.first, a2.second);
                if (options.augment) {
                    patch1 = augment_patch(patch1, seed_combine(item_seed, 1));
                    patch2 = augment_patch(patch2, seed_combine(item_seed, 2));
                }
                std::memcpy(b1.data() + i * item_len, patch1.data(),
                            item_len * sizeof(double));
                std::memcpy(b2.data() + i * item_len, patch2.data(),
                            item_len * sizeof(double));
            }
            Rng noise_rng(seed_combine(step_seed, 0x105e));
            NdArray n1({batch, cfg.latent_dim});
            NdArray n2({batch, cfg.latent_dim});
            for (std::size_t i = 0; i < n1.size(); ++i) n1[i] = noise_rng.normal();
            for (std::size_t i = 0; i < n2.size(); ++i) n2[i] = noise_rng.normal();

            model.zero_grad();
            LossGraph lg = total_loss(model, b1, b2, n1, n2, options.weights,
                                      options.contrastive_margin, true);
            ad::backward(lg.total);
            adam.step(plateau.lr());
            model.commit_bn_updates();

            sums.kl += lg.values.kl;
            sums.recon += lg.values.recon;
            sums.contrastive += lg.values.contrastive;
            sums.total += lg.values.total;
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = plateau.lr();
        stats.losses.kl = sums.kl / double(steps);
        stats.losses.recon = sums.recon / double(steps);
        stats.losses.contrastive = sums.contrastive / double(steps);
        stats.losses.total = sums.total / double(steps);
        result.history.push_back(stats);
        if (options.verbose) {
            std::printf("epoch %zu lr %.6g kl %.6g recon %.6g contrastive %.6g total %.6g\n",
                        epoch, stats.lr, stats.losses.kl, stats.losses.recon,
                        stats.losses.contrastive, stats.losses.total);
            std::fflush(stdout);
        }
        if (!options.checkpoint_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03zu.ckpt", epoch);
            model.save(options.checkpoint_dir + "/" + name);
        }
        const auto outcome = plateau.observe(stats.losses.total);
        if (outcome.stop) {
            result.stopped_early = true;
            break;
        }
    }
    result.final_lr = plateau.lr();
    if (!options.history_csv.empty()) {
        std::ofstream out(options.history_csv, std::ios::trunc);
        if (!out) {
            throw std::runtime_error("train: cannot write history to " + options.history_csv);
        }
        out << history_to_csv(result.history);
    }
    return result;
}

}  // namespace clvae
