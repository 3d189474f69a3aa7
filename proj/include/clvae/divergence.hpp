#pragma once

#include <string>

#include "clvae/model.hpp"

namespace clvae {

enum class DivergenceKind { KLD, JSD, ED, CosD };

DivergenceKind divergence_kind_from_string(const std::string& name);
std::string to_string(DivergenceKind kind);

// CosD binarizes at -0.9; the nonnegative measures at 0.0 (existence of
// change, not magnitude).
double default_threshold(DivergenceKind kind);

// All measures treat the encoder outputs as diagonal Gaussians with
// sigma = exp(0.5 * log_variance). KLD and JSD use the full distribution;
// ED and CosD read only the means.
double kld(const LatentDistribution& d1, const LatentDistribution& d2);
double jsd(const LatentDistribution& d1, const LatentDistribution& d2);
double ed(const LatentDistribution& d1, const LatentDistribution& d2);

// Negative cosine similarity of the means: -1 parallel, 0 orthogonal,
// +1 anti-parallel. A zero-norm mean has no direction and is rejected.
double cosd(const LatentDistribution& d1, const LatentDistribution& d2);

double divergence(DivergenceKind kind, const LatentDistribution& d1,
                  const LatentDistribution& d2);

}  // namespace clvae
