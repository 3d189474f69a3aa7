#include "clvae/patching.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "clvae/rng.hpp"

namespace clvae {

namespace {

void fill_slice(NdArray& values, std::size_t t, const SarTile& tile) {
    const std::size_t h = tile.height(), w = tile.width();
    double* dst = values.data() + t * h * w * 3;
    const double* vv = tile.vv.data();
    const double* vh = tile.vh.data();
    for (std::size_t i = 0; i < h * w; ++i) {
        dst[3 * i] = vv[i];
        dst[3 * i + 1] = vh[i];
        dst[3 * i + 2] = 0.0;
    }
}

// Mirror index into [0, n) without repeating the edge sample.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (i < 0) i = -i;
    if (i >= std::ptrdiff_t(n)) i = 2 * std::ptrdiff_t(n) - 2 - i;
    return static_cast<std::size_t>(i);
}

}  // namespace

TimeSeriesStack stack_pre_series(const std::vector<SarTile>& tiles, std::size_t T) {
    if (T == 0) throw std::invalid_argument("stack_pre_series: T must be positive");
    if (tiles.size() != T)
        throw std::invalid_argument("stack_pre_series: expected " + std::to_string(T) +
                                    " tiles, got " + std::to_string(tiles.size()));
    const std::size_t h = tiles[0].height(), w = tiles[0].width();
    for (std::size_t t = 0; t < T; ++t) {
        tiles[t].validate();
        if (tiles[t].height() != h || tiles[t].width() != w)
            throw std::invalid_argument("stack_pre_series: tile " + std::to_string(t) +
                                        " is " + std::to_string(tiles[t].height()) + "x" +
                                        std::to_string(tiles[t].width()) + ", expected " +
                                        std::to_string(h) + "x" + std::to_string(w));
        if (t > 0 && !(tiles[t - 1].acquisition_date < tiles[t].acquisition_date))
            throw std::invalid_argument("stack_pre_series: dates not strictly increasing at "
                                        "position " + std::to_string(t));
    }
    TimeSeriesStack s;
    s.values = NdArray({T, h, w, 3});
    s.dates.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        fill_slice(s.values, t, tiles[t]);
        s.dates.push_back(tiles[t].acquisition_date);
    }
    return s;
}

TimeSeriesStack replicate_post(const SarTile& tile, std::size_t T) {
    if (T == 0) throw std::invalid_argument("replicate_post: T must be positive");
    tile.validate();
    TimeSeriesStack s;
    s.values = NdArray({T, tile.height(), tile.width(), 3});
    s.dates.assign(T, tile.acquisition_date);
    for (std::size_t t = 0; t < T; ++t) fill_slice(s.values, t, tile);
    return s;
}

TimeSeriesStack pad_reflect(const TimeSeriesStack& stack, std::size_t top_left,
                            std::size_t bottom_right) {
    const std::size_t T = stack.timesteps(), h = stack.height(), w = stack.width();
    const std::size_t pad = std::max(top_left, bottom_right);
    if (pad >= std::min(h, w))
        throw std::invalid_argument("pad_reflect: padding " + std::to_string(pad) +
                                    " too large for " + std::to_string(h) + "x" +
                                    std::to_string(w));
    const std::size_t hp = h + top_left + bottom_right;
    const std::size_t wp = w + top_left + bottom_right;
    TimeSeriesStack out;
    out.values = NdArray({T, hp, wp, 3});
    out.dates = stack.dates;
    const std::size_t tl = top_left;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < hp; ++y) {
            const std::size_t sy = reflect_index(std::ptrdiff_t(y) - std::ptrdiff_t(tl), h);
            const double* src_row = stack.values.data() + ((t * h + sy) * w) * 3;
            double* dst_row = out.values.data() + ((t * hp + y) * wp) * 3;
            for (std::size_t x = 0; x < wp; ++x) {
                const std::size_t sx = reflect_index(std::ptrdiff_t(x) - std::ptrdiff_t(tl), w);
                std::memcpy(dst_row + 3 * x, src_row + 3 * sx, 3 * sizeof(double));
            }
        }
    return out;
}

TimeSeriesStack crop(const TimeSeriesStack& stack, std::size_t top_left,
                     std::size_t bottom_right) {
    const std::size_t T = stack.timesteps(), hp = stack.height(), wp = stack.width();
    const std::size_t margins = top_left + bottom_right;
    if (hp <= margins || wp <= margins)
        throw std::invalid_argument("crop: margins exceed stack size");
    const std::size_t h = hp - margins, w = wp - margins;
    TimeSeriesStack out;
    out.values = NdArray({T, h, w, 3});
    out.dates = stack.dates;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < h; ++y)
            std::memcpy(out.values.data() + ((t * h + y) * w) * 3,
                        stack.values.data() + ((t * hp + y + top_left) * wp + top_left) * 3,
                        w * 3 * sizeof(double));
    return out;
}

std::pair<std::size_t, std::size_t> inference_padding(std::size_t patch_size) {
    if (patch_size < 2 || patch_size % 2 != 0)
        throw std::invalid_argument("inference_padding: patch size must be even, got " +
                                    std::to_string(patch_size));
    return {patch_size / 2, patch_size / 2 - 1};
}

PatchBatch::PatchBatch(std::shared_ptr<const TimeSeriesStack> stack, std::size_t patch_size,
                       std::size_t stride)
    : stack_(std::move(stack)), p_(patch_size), stride_(stride) {
    if (!stack_) throw std::invalid_argument("extract_patches: null stack");
    if (p_ == 0 || stride_ == 0)
        throw std::invalid_argument("extract_patches: patch size and stride must be positive");
    const std::size_t h = stack_->height(), w = stack_->width();
    if (p_ > h || p_ > w)
        throw std::invalid_argument("extract_patches: patch size " + std::to_string(p_) +
                                    " exceeds stack " + std::to_string(h) + "x" +
                                    std::to_string(w));
    rows_ = (h - p_) / stride_ + 1;
    cols_ = (w - p_) / stride_ + 1;
}

std::pair<std::size_t, std::size_t> PatchBatch::anchor(std::size_t k) const {
    if (k >= size()) throw std::out_of_range("PatchBatch::anchor: index out of range");
    return {(k / cols_) * stride_, (k % cols_) * stride_};
}

NdArray PatchBatch::materialize(std::size_t first, std::size_t last) const {
    if (first > last || last > size())
        throw std::out_of_range("PatchBatch::materialize: bad range");
    const std::size_t n = last - first;
    const std::size_t T = stack_->timesteps();
    const std::size_t w = stack_->width();
    NdArray out({n, T, p_, p_, 3});
    const std::size_t h = stack_->height();
    for (std::size_t i = 0; i < n; ++i) {
        const auto [r, c] = anchor(first + i);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t y = 0; y < p_; ++y)
                std::memcpy(out.data() + (((i * T + t) * p_ + y) * p_) * 3,
                            stack_->values.data() + ((t * h + r + y) * w + c) * 3,
                            p_ * 3 * sizeof(double));
    }
    return out;
}

NdArray PatchBatch::patch(std::size_t k) const {
    return materialize(k, k + 1).reshaped({stack_->timesteps(), p_, p_, 3});
}

NdArray PatchBatch::patch_at(std::size_t row, std::size_t col) const {
    const std::size_t T = stack_->timesteps();
    const std::size_t h = stack_->height(), w = stack_->width();
    if (row + p_ > h || col + p_ > w)
        throw std::out_of_range("PatchBatch::patch_at: anchor out of range");
    NdArray out({T, p_, p_, 3});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < p_; ++y)
            std::memcpy(out.data() + ((t * p_ + y) * p_) * 3,
                        stack_->values.data() + ((t * h + row + y) * w + col) * 3,
                        p_ * 3 * sizeof(double));
    return out;
}

PatchBatch extract_patches(std::shared_ptr<const TimeSeriesStack> stack,
                           std::size_t patch_size, std::size_t stride) {
    return PatchBatch(std::move(stack), patch_size, stride);
}

PatchBatch extract_patches(TimeSeriesStack stack, std::size_t patch_size, std::size_t stride) {
    return PatchBatch(std::make_shared<const TimeSeriesStack>(std::move(stack)), patch_size,
                      stride);
}

namespace {

// 3x3 binomial blur, separable [1,2,1]/4, edge samples clamped. A convex
// combination, so [0,1] is preserved.
void blur_plane(double* plane, std::size_t p, std::vector<double>& tmp) {
    tmp.resize(p * p);
    for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) {
            const std::size_t xl = x == 0 ? 0 : x - 1;
            const std::size_t xr = x + 1 == p ? x : x + 1;
            tmp[y * p + x] =
                0.25 * plane[y * p + xl] + 0.5 * plane[y * p + x] + 0.25 * plane[y * p + xr];
        }
    for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x) {
            const std::size_t yu = y == 0 ? 0 : y - 1;
            const std::size_t yd = y + 1 == p ? y : y + 1;
            plane[y * p + x] =
                0.25 * tmp[yu * p + x] + 0.5 * tmp[y * p + x] + 0.25 * tmp[yd * p + x];
        }
}

}  // namespace

NdArray augment_patch(const NdArray& patch, std::uint64_t seed) {
    if (patch.rank() != 4 || patch.dim(3) != 3)
        throw std::invalid_argument("augment_patch: expected [T,p,p,3], got " +
                                    patch.shape_string());
    const std::size_t T = patch.dim(0), p = patch.dim(1);
    if (patch.dim(2) != p) throw std::invalid_argument("augment_patch: patch must be square");

    Rng rng(seed);
    const bool do_gamma = rng.uniform() < 0.5;
    const double gamma = do_gamma ? rng.uniform(0.25, 2.0) : 1.0;
    const bool do_blur = rng.uniform() < 0.5;
    const bool do_lr = rng.uniform() < 0.5;
    const bool do_ud = rng.uniform() < 0.2;
    const bool do_rot = rng.uniform() < 0.5;
    const double angle = do_rot ? rng.uniform(-90.0, 90.0) * (M_PI / 180.0) : 0.0;

    NdArray out = patch;
    // Planes are processed channel-major for locality; the zero channel is
    // carried through every transform unchanged (all of them map 0 to 0).
    std::vector<double> plane(p * p), tmp;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < p * p; ++i) plane[i] = out[(t * p * p + i) * 3 + c];

            if (do_gamma)
                for (double& v : plane) v = std::pow(v, gamma);
            if (do_blur) blur_plane(plane.data(), p, tmp);
            if (do_lr)
                for (std::size_t y = 0; y < p; ++y)
                    std::reverse(plane.begin() + std::ptrdiff_t(y * p),
                                 plane.begin() + std::ptrdiff_t((y + 1) * p));
            if (do_ud)
                for (std::size_t y = 0; y < p / 2; ++y)
                    std::swap_ranges(plane.begin() + std::ptrdiff_t(y * p),
                                     plane.begin() + std::ptrdiff_t((y + 1) * p),
                                     plane.begin() + std::ptrdiff_t((p - 1 - y) * p));
            if (do_rot) {
                tmp.assign(plane.begin(), plane.end());
                const double cy = 0.5 * double(p - 1);
                const double ca = std::cos(angle), sa = std::sin(angle);
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x) {
                        // Inverse-rotate the output coordinate into the source.
                        const double dy = double(y) - cy, dx = double(x) - cy;
                        const double sy = cy + ca * dy - sa * dx;
                        const double sx = cy + sa * dy + ca * dx;
                        const double fy = std::floor(sy), fx = std::floor(sx);
                        const double wy = sy - fy, wx = sx - fx;
                        const std::size_t y0 = reflect_index(std::ptrdiff_t(fy), p);
                        const std::size_t y1 = reflect_index(std::ptrdiff_t(fy) + 1, p);
                        const std::size_t x0 = reflect_index(std::ptrdiff_t(fx), p);
                        const std::size_t x1 = reflect_index(std::ptrdiff_t(fx) + 1, p);
                        const double v = (1 - wy) * ((1 - wx) * tmp[y0 * p + x0] +
                                                     wx * tmp[y0 * p + x1]) +
                                         wy * ((1 - wx) * tmp[y1 * p + x0] +
                                               wx * tmp[y1 * p + x1]);
                        plane[y * p + x] = std::clamp(v, 0.0, 1.0);
                    }
            }

            for (std::size_t i = 0; i < p * p; ++i) out[(t * p * p + i) * 3 + c] = plane[i];
        }
    return out;
}

}  // namespace clvae
