#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clvae/raster_io.hpp"

namespace clvae {

// Polygon vertex in pixel coordinates: x runs along columns, y along rows.
struct Vertex {
    double x = 0.0;
    double y = 0.0;
};

// Pixels inside the polygon switch to water statistics from onset_date on.
struct FloodPolygon {
    std::vector<Vertex> vertices;  // at least 3, implicitly closed
    Date onset_date;
};

// dB means for one surface class, per polarization.
struct SurfaceDb {
    double vv = 0.0;
    double vh = 0.0;
};

struct SceneSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    SurfaceDb land_db_mean{-10.0, -14.0};
    SurfaceDb water_db_mean{-20.0, -24.0};
    int speckle_looks = 4;
    std::vector<FloodPolygon> flood_polygons;
    std::vector<Date> dates;  // strictly increasing acquisition dates
    std::uint64_t seed = 0;

    void validate() const;
};

std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& json);

// Even-odd ray cast against the closed boundary.
bool point_in_polygon(const std::vector<Vertex>& vertices, double x, double y);

struct SceneFrame {
    SarTile tile;
    GroundTruthMask truth;
};

// One frame per spec date, in date order. Multiplicative gamma speckle
// (shape = looks, mean 1) over the per-pixel mean power, then dB, clip,
// normalize. Deterministic in the seed.
std::vector<SceneFrame> generate(const SceneSpec& spec);

}  // namespace clvae
