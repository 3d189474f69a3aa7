#include "clvae/synthdata.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

#include "clvae/rng.hpp"

namespace clvae {

namespace {

void check_mean_pair(const char* channel, double land, double water, SarChannel ch) {
    if (water >= land) {
        throw std::invalid_argument(std::string("scene spec: water dB mean must lie below "
                                                "land for ") +
                                    channel);
    }
    const auto [lo, hi] = channel_clip_range(ch);
    for (double mean : {land, water}) {
        if (!(mean > lo && mean < hi)) {
            throw std::invalid_argument(std::string("scene spec: ") + channel + " dB mean " +
                                        std::to_string(mean) + " leaves the clip range");
        }
    }
}

}  // namespace

void SceneSpec::validate() const {
    if (height == 0 || width == 0) {
        throw std::invalid_argument("scene spec: height and width must be positive");
    }
    if (dates.empty()) throw std::invalid_argument("scene spec: needs at least one date");
    for (std::size_t i = 0; i < dates.size(); ++i) {
        if (dates[i].empty()) throw std::invalid_argument("scene spec: empty date");
        if (i > 0 && !(dates[i - 1] < dates[i])) {
            throw std::invalid_argument("scene spec: dates must be strictly increasing");
        }
    }
    if (speckle_looks < 1) throw std::invalid_argument("scene spec: speckle_looks must be >= 1");
    check_mean_pair("vv", land_db_mean.vv, water_db_mean.vv, SarChannel::vv);
    check_mean_pair("vh", land_db_mean.vh, water_db_mean.vh, SarChannel::vh);
    for (const auto& poly : flood_polygons) {
        if (poly.vertices.size() < 3) {
            throw std::invalid_argument("scene spec: polygon needs at least 3 vertices");
        }
        if (poly.onset_date.empty()) {
            throw std::invalid_argument("scene spec: polygon onset date missing");
        }
    }
}

std::string scene_spec_to_json(const SceneSpec& spec) {
    nlohmann::json j;
    j["height"] = spec.height;
    j["width"] = spec.width;
    j["land_db_mean"] = {{"vv", spec.land_db_mean.vv}, {"vh", spec.land_db_mean.vh}};
    j["water_db_mean"] = {{"vv", spec.water_db_mean.vv}, {"vh", spec.water_db_mean.vh}};
    j["speckle_looks"] = spec.speckle_looks;
    j["seed"] = spec.seed;
    auto dates = nlohmann::json::array();
    for (const auto& d : spec.dates) dates.push_back(d.iso());
    j["dates"] = std::move(dates);
    auto polys = nlohmann::json::array();
    for (const auto& poly : spec.flood_polygons) {
        auto verts = nlohmann::json::array();
        for (const auto& v : poly.vertices) verts.push_back({v.x, v.y});
        polys.push_back({{"onset_date", poly.onset_date.iso()}, {"vertices", std::move(verts)}});
    }
    j["flood_polygons"] = std::move(polys);
    return j.dump(2) + "\n";
}

SceneSpec scene_spec_from_json(const std::string& json) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("scene spec: bad JSON: ") + e.what());
    }
    SceneSpec spec;
    try {
        if (j.contains("height")) spec.height = j["height"].get<std::size_t>();
        if (j.contains("width")) spec.width = j["width"].get<std::size_t>();
        for (auto [key, target] : {std::pair{"land_db_mean", &spec.land_db_mean},
                                   std::pair{"water_db_mean", &spec.water_db_mean}}) {
            if (!j.contains(key)) continue;
            const auto& m = j[key];
            if (m.contains("vv")) target->vv = m["vv"].get<double>();
            if (m.contains("vh")) target->vh = m["vh"].get<double>();
        }
        if (j.contains("speckle_looks")) spec.speckle_looks = j["speckle_looks"].get<int>();
        if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("dates")) {
            for (const auto& d : j["dates"]) {
                spec.dates.push_back(Date::parse(d.get<std::string>()));
            }
        }
        if (j.contains("flood_polygons")) {
            for (const auto& p : j["flood_polygons"]) {
                FloodPolygon poly;
                poly.onset_date = Date::parse(p.at("onset_date").get<std::string>());
                for (const auto& v : p.at("vertices")) {
                    poly.vertices.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
                }
                spec.flood_polygons.push_back(std::move(poly));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("scene spec: bad field type: ") + e.what());
    }
    spec.validate();
    return spec;
}

bool point_in_polygon(const std::vector<Vertex>& vertices, double x, double y) {
    bool inside = false;
    const std::size_t n = vertices.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vertex& a = vertices[i];
        const Vertex& b = vertices[j];
        if ((a.y > y) == (b.y > y)) continue;
        const double cross_x = b.x + (y - b.y) / (a.y - b.y) * (a.x - b.x);
        if (x < cross_x) inside = !inside;
    }
    return inside;
}

std::vector<SceneFrame> generate(const SceneSpec& spec) {
    spec.validate();
    const std::size_t h = spec.height;
    const std::size_t w = spec.width;
    const std::size_t n = h * w;

    // Earliest flood onset per pixel; empty means the pixel never floods.
    // Containment is tested at pixel centers.
    std::vector<Date> onset(n);
    for (const auto& poly : spec.flood_polygons) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                if (!point_in_polygon(poly.vertices, double(c) + 0.5, double(r) + 0.5)) continue;
                Date& cur = onset[r * w + c];
                if (cur.empty() || poly.onset_date < cur) cur = poly.onset_date;
            }
        }
    }

    const double looks = double(spec.speckle_looks);
    const double land_vv = std::pow(10.0, spec.land_db_mean.vv / 10.0);
    const double land_vh = std::pow(10.0, spec.land_db_mean.vh / 10.0);
    const double water_vv = std::pow(10.0, spec.water_db_mean.vv / 10.0);
    const double water_vh = std::pow(10.0, spec.water_db_mean.vh / 10.0);

    std::vector<SceneFrame> frames;
    frames.reserve(spec.dates.size());
    for (std::size_t di = 0; di < spec.dates.size(); ++di) {
        const Date& date = spec.dates[di];
        Rng rng(seed_combine(spec.seed, di));
        NdArray vv({h, w});
        NdArray vh({h, w});
        SceneFrame frame;
        frame.truth.height = h;
        frame.truth.width = w;
        frame.truth.labels.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const bool flooded = !onset[i].empty() && !(date < onset[i]);
            vv[i] = (flooded ? water_vv : land_vv) * rng.gamma(looks, 1.0 / looks);
            vh[i] = (flooded ? water_vh : land_vh) * rng.gamma(looks, 1.0 / looks);
            if (flooded) frame.truth.labels[i] = 1;
        }
        frame.tile.vv = clip_and_normalize(to_db(vv), SarChannel::vv);
        frame.tile.vh = clip_and_normalize(to_db(vh), SarChannel::vh);
        frame.tile.acquisition_date = date;
        frame.tile.validate();
        frames.push_back(std::move(frame));
    }
    return frames;
}

}  // namespace clvae
