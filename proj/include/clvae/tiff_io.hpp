#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clvae/raster_io.hpp"

namespace clvae::tiff {

// Minimal self-contained TIFF codec. Scope: classic little-endian TIFF,
// uncompressed strips, 8/16-bit integer and 32/64-bit float samples, chunky
// or planar layout, 1..4 bands, plus the DateTime tag and the
// ModelPixelScale/ModelTiepoint pair used for georeferencing. That covers
// the rasters this project writes and typical exported Sentinel-1 tiles.

struct Image {
    std::size_t width = 0, height = 0;
    int sample_format = 3;  // 1 unsigned, 2 signed, 3 IEEE float
    int bits = 64;
    std::vector<std::vector<double>> bands;  // row-major, one vector per band
    std::string datetime;                    // raw tag value, may be empty
    std::optional<GeoBounds> bounds;
};

Image read(const std::string& path);

enum class PixelType { f64, i8 };

// Writes chunky uncompressed TIFF, one strip. datetime uses the TIFF
// "YYYY:MM:DD HH:MM:SS" convention when non-empty.
void write(const std::string& path, const std::vector<const double*>& bands,
           std::size_t width, std::size_t height, PixelType type,
           const std::string& datetime = "",
           const std::optional<GeoBounds>& bounds = std::nullopt);

}  // namespace clvae::tiff
