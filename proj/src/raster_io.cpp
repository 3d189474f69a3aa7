#include "clvae/raster_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "clvae/tiff_io.hpp"

namespace clvae {

Date Date::parse(const std::string& s) {
    auto bad = [&]() -> Date {
        throw std::invalid_argument("date: '" + s + "' is not a YYYY-MM-DD date");
    };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return bad();
    for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return bad();
    const int year = std::stoi(s.substr(0, 4));
    const int month = std::stoi(s.substr(5, 2));
    const int day = std::stoi(s.substr(8, 2));
    if (month < 1 || month > 12) return bad();
    static const int days[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    const int limit = (month == 2 && leap) ? 29 : days[month - 1];
    if (day < 1 || day > limit) return bad();
    return Date(s);
}

void SarTile::validate() const {
    if (vv.rank() != 2 || vh.rank() != 2)
        throw std::invalid_argument("tile: vv/vh must be 2-D grids");
    if (!vv.same_shape(vh))
        throw std::invalid_argument("tile: vv " + vv.shape_string() + " and vh " +
                                    vh.shape_string() + " differ in size");
    auto check = [](const NdArray& g, const char* name) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = g[i];
            if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                throw std::invalid_argument(std::string("tile: ") + name + " value " +
                                            std::to_string(v) + " at index " +
                                            std::to_string(i) + " is outside [0,1]");
        }
    };
    check(vv, "vv");
    check(vh, "vh");
}

void GroundTruthMask::validate() const {
    if (labels.size() != height * width)
        throw std::invalid_argument("mask: label count does not match dimensions");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != 0 && labels[i] != 1 && labels[i] != -1)
            throw std::invalid_argument("mask: label " + std::to_string(int(labels[i])) +
                                        " at index " + std::to_string(i) +
                                        " is not in {0,1,-1}");
}

std::pair<double, double> channel_clip_range(SarChannel channel) {
    return channel == SarChannel::vv ? std::pair{-23.0, 0.0} : std::pair{-28.0, -5.0};
}

NdArray to_db(const NdArray& linear_backscatter) {
    NdArray out(linear_backscatter.shape());
    const std::size_t w = linear_backscatter.rank() == 2 ? linear_backscatter.dim(1) : 0;
    for (std::size_t i = 0; i < linear_backscatter.size(); ++i) {
        const double v = linear_backscatter[i];
        if (!(v > 0.0)) {
            std::string where = w ? "pixel (" + std::to_string(i / w) + "," +
                                        std::to_string(i % w) + ")"
                                  : "index " + std::to_string(i);
            throw std::domain_error("to_db: non-positive backscatter " + std::to_string(v) +
                                    " at " + where);
        }
        out[i] = 10.0 * std::log10(v);
    }
    return out;
}

NdArray clip_and_normalize(const NdArray& db_grid, SarChannel channel) {
    const auto [lo, hi] = channel_clip_range(channel);
    NdArray out(db_grid.shape());
    for (std::size_t i = 0; i < db_grid.size(); ++i)
        out[i] = (std::clamp(db_grid[i], lo, hi) - lo) / (hi - lo);
    return out;
}

NdArray denormalize_to_db(const NdArray& normalized, SarChannel channel) {
    const auto [lo, hi] = channel_clip_range(channel);
    NdArray out(normalized.shape());
    for (std::size_t i = 0; i < normalized.size(); ++i)
        out[i] = lo + normalized[i] * (hi - lo);
    return out;
}

namespace sarf {

namespace {

constexpr std::uint32_t k_version = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("sarf: " + path + ": truncated header");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

void put_f64(std::ofstream& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (bits >> (8 * i)) & 0xff;
    out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::ifstream& in, const std::string& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw std::runtime_error("sarf: " + path + ": truncated data");
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

File read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("sarf: " + path + ": cannot open");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SARF", 4) != 0)
        throw std::runtime_error("sarf: " + path + ": bad magic");
    if (get_u32(in, path) != k_version)
        throw std::runtime_error("sarf: " + path + ": unsupported version");
    File f;
    f.dtype = get_u32(in, path);
    if (f.dtype != dtype_f64 && f.dtype != dtype_i8)
        throw std::runtime_error("sarf: " + path + ": unknown dtype " + std::to_string(f.dtype));
    f.height = get_u32(in, path);
    f.width = get_u32(in, path);
    f.bands = get_u32(in, path);
    if (f.height == 0 || f.width == 0 || f.bands == 0 || f.bands > 16)
        throw std::runtime_error("sarf: " + path + ": implausible dimensions");
    char date[12];
    in.read(date, 12);
    if (!in) throw std::runtime_error("sarf: " + path + ": truncated header");
    f.date.assign(date, strnlen(date, 12));
    const std::uint32_t flags = get_u32(in, path);
    if (flags & 1u) {
        GeoBounds b;
        b.min_x = get_f64(in, path);
        b.min_y = get_f64(in, path);
        b.max_x = get_f64(in, path);
        b.max_y = get_f64(in, path);
        f.bounds = b;
    }
    const std::size_t n = f.bands * f.height * f.width;
    f.data.resize(n);
    if (f.dtype == dtype_f64) {
        for (std::size_t i = 0; i < n; ++i) f.data[i] = get_f64(in, path);
    } else {
        std::vector<char> raw(n);
        in.read(raw.data(), static_cast<std::streamsize>(n));
        if (!in) throw std::runtime_error("sarf: " + path + ": truncated data");
        for (std::size_t i = 0; i < n; ++i) f.data[i] = double(static_cast<std::int8_t>(raw[i]));
    }
    return f;
}

void write(const std::string& path, const File& f) {
    if (f.data.size() != f.bands * f.height * f.width)
        throw std::invalid_argument("sarf: " + path + ": data does not match dimensions");
    if (!f.date.empty()) Date::parse(f.date);  // reject malformed dates up front
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("sarf: " + path + ": cannot open for writing");
    out.write("SARF", 4);
    put_u32(out, k_version);
    put_u32(out, f.dtype);
    put_u32(out, static_cast<std::uint32_t>(f.height));
    put_u32(out, static_cast<std::uint32_t>(f.width));
    put_u32(out, static_cast<std::uint32_t>(f.bands));
    char date[12] = {};
    std::memcpy(date, f.date.data(), std::min<std::size_t>(f.date.size(), 11));
    out.write(date, 12);
    put_u32(out, f.bounds ? 1u : 0u);
    if (f.bounds) {
        put_f64(out, f.bounds->min_x);
        put_f64(out, f.bounds->min_y);
        put_f64(out, f.bounds->max_x);
        put_f64(out, f.bounds->max_y);
    }
    if (f.dtype == dtype_f64) {
        for (double v : f.data) put_f64(out, v);
    } else {
        for (double v : f.data) {
            if (v < -128.0 || v > 127.0 || v != std::floor(v))
                throw std::invalid_argument("sarf: " + path + ": value " + std::to_string(v) +
                                            " not representable as int8");
            out.put(static_cast<char>(static_cast<std::int8_t>(v)));
        }
    }
    if (!out) throw std::runtime_error("sarf: " + path + ": write error");
}

}  // namespace sarf

namespace {

enum class Format { sarf, tif };

Format format_of(const std::string& path) {
    const auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == "tif" || ext == "tiff") return Format::tif;
    if (ext == "sarf") return Format::sarf;
    throw std::runtime_error("raster: " + path +
                             ": unknown extension (expected .tif, .tiff or .sarf)");
}

std::string tiff_datetime(const Date& d) {
    return d.empty() ? std::string() : d.iso().substr(0, 4) + ":" + d.iso().substr(5, 2) + ":" +
                                           d.iso().substr(8, 2) + " 00:00:00";
}

Date date_from_tiff(const std::string& dt) {
    if (dt.size() < 10) return Date();
    std::string iso = dt.substr(0, 10);
    std::replace(iso.begin(), iso.end(), ':', '-');
    return Date::parse(iso);
}

}  // namespace

SarTile load_tile(const std::string& path, const ChannelMapping& mapping) {
    SarTile tile;
    std::size_t bands = 0, h = 0, w = 0;
    std::vector<std::vector<double>> planes;
    if (format_of(path) == Format::tif) {
        tiff::Image img = tiff::read(path);
        bands = img.bands.size();
        h = img.height;
        w = img.width;
        planes = std::move(img.bands);
        if (!img.datetime.empty()) tile.acquisition_date = date_from_tiff(img.datetime);
        tile.bounds = img.bounds;
    } else {
        sarf::File f = sarf::read(path);
        bands = f.bands;
        h = f.height;
        w = f.width;
        planes.resize(bands);
        for (std::size_t b = 0; b < bands; ++b)
            planes[b].assign(f.data.begin() + static_cast<std::ptrdiff_t>(b * h * w),
                             f.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * h * w));
        if (!f.date.empty()) tile.acquisition_date = Date::parse(f.date);
        tile.bounds = f.bounds;
    }
    if (bands < 2)
        throw std::runtime_error("raster: " + path + ": expected 2 bands (vv, vh), found " +
                                 std::to_string(bands));
    if (mapping.vv_band >= bands || mapping.vh_band >= bands)
        throw std::runtime_error("raster: " + path + ": channel mapping exceeds " +
                                 std::to_string(bands) + " bands");
    tile.vv = NdArray::from({h, w}, std::move(planes[mapping.vv_band]));
    tile.vh = NdArray::from({h, w}, std::move(planes[mapping.vh_band]));
    tile.validate();
    return tile;
}

void save_tile(const SarTile& tile, const std::string& path) {
    tile.validate();
    if (format_of(path) == Format::tif) {
        tiff::write(path, {tile.vv.data(), tile.vh.data()}, tile.width(), tile.height(),
                    tiff::PixelType::f64, tiff_datetime(tile.acquisition_date), tile.bounds);
        return;
    }
    sarf::File f;
    f.dtype = sarf::dtype_f64;
    f.height = tile.height();
    f.width = tile.width();
    f.bands = 2;
    f.date = tile.acquisition_date.iso();
    f.bounds = tile.bounds;
    f.data.reserve(2 * f.height * f.width);
    f.data.insert(f.data.end(), tile.vv.storage().begin(), tile.vv.storage().end());
    f.data.insert(f.data.end(), tile.vh.storage().begin(), tile.vh.storage().end());
    sarf::write(path, f);
}

GroundTruthMask load_mask(const std::string& path) {
    GroundTruthMask m;
    std::vector<double> values;
    if (format_of(path) == Format::tif) {
        tiff::Image img = tiff::read(path);
        if (img.bands.size() != 1)
            throw std::runtime_error("mask: " + path + ": expected 1 band, found " +
                                     std::to_string(img.bands.size()));
        m.height = img.height;
        m.width = img.width;
        values = std::move(img.bands[0]);
    } else {
        sarf::File f = sarf::read(path);
        if (f.bands != 1)
            throw std::runtime_error("mask: " + path + ": expected 1 band, found " +
                                     std::to_string(f.bands));
        m.height = f.height;
        m.width = f.width;
        values = std::move(f.data);
    }
    m.labels.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        if (v != 0.0 && v != 1.0 && v != -1.0)
            throw std::runtime_error("mask: " + path + ": value " + std::to_string(v) +
                                     " at index " + std::to_string(i) + " is not in {0,1,-1}");
        m.labels[i] = static_cast<std::int8_t>(v);
    }
    m.validate();
    return m;
}

void save_mask(const GroundTruthMask& mask, const std::string& path) {
    mask.validate();
    std::vector<double> values(mask.labels.begin(), mask.labels.end());
    if (format_of(path) == Format::tif) {
        tiff::write(path, {values.data()}, mask.width, mask.height, tiff::PixelType::i8);
        return;
    }
    sarf::File f;
    f.dtype = sarf::dtype_i8;
    f.height = mask.height;
    f.width = mask.width;
    f.bands = 1;
    f.data = std::move(values);
    sarf::write(path, f);
}

NdArray load_raster(const std::string& path) {
    if (format_of(path) == Format::tif) {
        tiff::Image img = tiff::read(path);
        if (img.bands.size() != 1)
            throw std::runtime_error("raster: " + path + ": expected 1 band, found " +
                                     std::to_string(img.bands.size()));
        return NdArray::from({img.height, img.width}, std::move(img.bands[0]));
    }
    sarf::File f = sarf::read(path);
    if (f.bands != 1)
        throw std::runtime_error("raster: " + path + ": expected 1 band, found " +
                                 std::to_string(f.bands));
    return NdArray::from({f.height, f.width}, std::move(f.data));
}

void save_raster(const NdArray& grid, const std::string& path,
                 const std::optional<GeoBounds>& bounds) {
    if (grid.rank() != 2) throw std::invalid_argument("raster: " + path + ": grid must be 2-D");
    if (!grid.all_finite())
        throw std::invalid_argument("raster: " + path + ": grid contains non-finite values");
    if (format_of(path) == Format::tif) {
        tiff::write(path, {grid.data()}, grid.dim(1), grid.dim(0), tiff::PixelType::f64, "",
                    bounds);
        return;
    }
    sarf::File f;
    f.dtype = sarf::dtype_f64;
    f.height = grid.dim(0);
    f.width = grid.dim(1);
    f.bands = 1;
    f.bounds = bounds;
    f.data = grid.storage();
    sarf::write(path, f);
}

}  // namespace clvae
