#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clvae/ndarray.hpp"

namespace clvae {

// Calendar date as ISO "YYYY-MM-DD". For this fixed-width format the
// lexicographic order of the string equals chronological order.
class Date {
public:
    Date() = default;
    static Date parse(const std::string& s);
    const std::string& iso() const { return iso_; }
    bool empty() const { return iso_.empty(); }
    auto operator<=>(const Date&) const = default;

private:
    explicit Date(std::string iso) : iso_(std::move(iso)) {}
    std::string iso_;
};

// Axis-aligned geographic rectangle in the raster's CRS units.
struct GeoBounds {
    double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
};

enum class OrbitPass { ascending, descending };

// One preprocessed dual-polarization acquisition. Both grids hold dB values
// clipped to the channel range and normalized to [0,1].
struct SarTile {
    NdArray vv;  // [H,W]
    NdArray vh;  // [H,W]
    Date acquisition_date;
    std::optional<GeoBounds> bounds;
    std::optional<OrbitPass> orbit_pass;
    std::optional<int> relative_orbit;

    std::size_t height() const { return vv.rank() == 2 ? vv.dim(0) : 0; }
    std::size_t width() const { return vv.rank() == 2 ? vv.dim(1) : 0; }
    void validate() const;  // throws when grids disagree or values leave [0,1]
};

// Per-pixel labels: 1 change/water, 0 background, -1 missing (excluded from
// scoring).
struct GroundTruthMask {
    std::vector<std::int8_t> labels;  // row-major H*W
    std::size_t height = 0, width = 0;
    void validate() const;
};

enum class SarChannel { vv, vh };

// Clip window in dB applied before normalization: VV (-23, 0), VH (-28, -5).
std::pair<double, double> channel_clip_range(SarChannel channel);

// 10*log10 elementwise; rejects non-positive input naming the pixel.
NdArray to_db(const NdArray& linear_backscatter);

// Clamp to the channel's dB window, then map linearly onto [0,1].
NdArray clip_and_normalize(const NdArray& db_grid, SarChannel channel);

// Inverse of the normalization map (values outside [0,1] extrapolate).
NdArray denormalize_to_db(const NdArray& normalized, SarChannel channel);

// Which raster band holds which polarization when loading files.
struct ChannelMapping {
    std::size_t vv_band = 0;
    std::size_t vh_band = 1;
};

// File routing is by extension: .tif/.tiff use the GeoTIFF codec, .sarf the
// fixture format. Tiles are two-band; masks and plain rasters one-band.
SarTile load_tile(const std::string& path, const ChannelMapping& mapping = {});
void save_tile(const SarTile& tile, const std::string& path);
GroundTruthMask load_mask(const std::string& path);
void save_mask(const GroundTruthMask& mask, const std::string& path);
NdArray load_raster(const std::string& path);
void save_raster(const NdArray& grid, const std::string& path,
                 const std::optional<GeoBounds>& bounds = std::nullopt);

// Fixture format: little-endian, magic "SARF", then u32 version(=1), u32
// dtype (1=float64, 3=int8), u32 height, u32 width, u32 bands, char date[12]
// (ISO date or zeros), u32 flags (bit0: bounds follow as 4 float64), then
// band-sequential row-major samples. Round trips are bit-exact.
namespace sarf {

constexpr std::uint32_t dtype_f64 = 1;
constexpr std::uint32_t dtype_i8 = 3;

struct File {
    std::uint32_t dtype = dtype_f64;
    std::size_t height = 0, width = 0, bands = 0;
    std::string date;  // empty or ISO
    std::optional<GeoBounds> bounds;
    std::vector<double> data;  // bands * height * width
};

File read(const std::string& path);
void write(const std::string& path, const File& file);

}  // namespace sarf

}  // namespace clvae
