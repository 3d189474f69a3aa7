#include "clvae/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clvae {

namespace {

void check_pair(const LatentDistribution& d1, const LatentDistribution& d2) {
    if (d1.mean.empty() || d2.mean.empty()) {
        throw std::invalid_argument("latent distribution is empty");
    }
    if (d1.mean.size() != d1.log_variance.size() ||
        d2.mean.size() != d2.log_variance.size()) {
        throw std::invalid_argument("latent mean and log-variance lengths differ");
    }
    if (d1.mean.size() != d2.mean.size()) {
        throw std::invalid_argument("latent distributions have different dimensions");
    }
}

}  // namespace

DivergenceKind divergence_kind_from_string(const std::string& name) {
    if (name == "kld") return DivergenceKind::KLD;
    if (name == "jsd") return DivergenceKind::JSD;
    if (name == "ed") return DivergenceKind::ED;
    if (name == "cosd") return DivergenceKind::CosD;
    throw std::invalid_argument("unknown divergence kind: " + name +
                                " (expected kld, jsd, ed, or cosd)");
}

std::string to_string(DivergenceKind kind) {
    switch (kind) {
        case DivergenceKind::KLD: return "kld";
        case DivergenceKind::JSD: return "jsd";
        case DivergenceKind::ED: return "ed";
        case DivergenceKind::CosD: return "cosd";
    }
    throw std::invalid_argument("invalid divergence kind");
}

double default_threshold(DivergenceKind kind) {
    return kind == DivergenceKind::CosD ? -0.9 : 0.0;
}

double kld(const LatentDistribution& d1, const LatentDistribution& d2) {
    check_pair(d1, d2);
    double total = 0.0;
    for (std::size_t i = 0; i < d1.mean.size(); ++i) {
        const double lv1 = d1.log_variance[i];
        const double lv2 = d2.log_variance[i];
        const double dmu = d1.mean[i] - d2.mean[i];
        total += 0.5 * (lv2 - lv1) +
                 0.5 * (std::exp(lv1 - lv2) + dmu * dmu * std::exp(-lv2)) - 0.5;
    }
    return total;
}

double jsd(const LatentDistribution& d1, const LatentDistribution& d2) {
    check_pair(d1, d2);
    LatentDistribution mid;
    mid.mean.resize(d1.mean.size());
    mid.log_variance.resize(d1.mean.size());
    for (std::size_t i = 0; i < d1.mean.size(); ++i) {
        mid.mean[i] = 0.5 * (d1.mean[i] + d2.mean[i]);
        const double sigma_mid = 0.5 * (std::exp(0.5 * d1.log_variance[i]) +
                                        std::exp(0.5 * d2.log_variance[i]));
        mid.log_variance[i] = 2.0 * std::log(sigma_mid);
    }
    return 0.5 * kld(d1, mid) + 0.5 * kld(d2, mid);
}

double ed(const LatentDistribution& d1, const LatentDistribution& d2) {
    check_pair(d1, d2);
    double sq = 0.0;
    for (std::size_t i = 0; i < d1.mean.size(); ++i) {
        const double dmu = d1.mean[i] - d2.mean[i];
        sq += dmu * dmu;
    }
    return std::sqrt(sq);
}

double cosd(const LatentDistribution& d1, const LatentDistribution& d2) {
    check_pair(d1, d2);
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < d1.mean.size(); ++i) {
        dot += d1.mean[i] * d2.mean[i];
        n1 += d1.mean[i] * d1.mean[i];
        n2 += d2.mean[i] * d2.mean[i];
    }
    if (n1 == 0.0 || n2 == 0.0) {
        throw std::invalid_argument("cosd is undefined for a zero-norm mean");
    }
    const double value = -dot / (std::sqrt(n1) * std::sqrt(n2));
    return std::clamp(value, -1.0, 1.0);
}

double divergence(DivergenceKind kind, const LatentDistribution& d1,
                  const LatentDistribution& d2) {
    switch (kind) {
        case DivergenceKind::KLD: return kld(d1, d2);
        case DivergenceKind::JSD: return jsd(d1, d2);
        case DivergenceKind::ED: return ed(d1, d2);
        case DivergenceKind::CosD: return cosd(d1, d2);
    }
    throw std::invalid_argument("invalid divergence kind");
}

}  // namespace clvae
