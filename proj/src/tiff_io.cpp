#include "clvae/tiff_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace clvae::tiff {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
    throw std::runtime_error("tiff: " + path + ": " + msg);
}

std::size_t type_size(std::uint16_t t) {
    switch (t) {
        case 1: case 2: case 6: case 7: return 1;  // BYTE, ASCII, SBYTE, UNDEFINED
        case 3: case 8: return 2;                  // SHORT, SSHORT
        case 4: case 9: case 11: return 4;         // LONG, SLONG, FLOAT
        case 5: case 10: case 12: return 8;        // RATIONAL, SRATIONAL, DOUBLE
        default: return 0;
    }
}

struct Parser {
    std::string path;
    std::vector<unsigned char> buf;

    std::uint16_t u16(std::size_t off) const {
        if (off + 2 > buf.size()) fail(path, "truncated file");
        return static_cast<std::uint16_t>(buf[off] | (buf[off + 1] << 8));
    }
    std::uint32_t u32(std::size_t off) const {
        if (off + 4 > buf.size()) fail(path, "truncated file");
        return static_cast<std::uint32_t>(buf[off]) | (static_cast<std::uint32_t>(buf[off + 1]) << 8) |
               (static_cast<std::uint32_t>(buf[off + 2]) << 16) |
               (static_cast<std::uint32_t>(buf[off + 3]) << 24);
    }
    double f64(std::size_t off) const {
        if (off + 8 > buf.size()) fail(path, "truncated file");
        std::uint64_t bits = 0;
        for (int i = 7; i >= 0; --i) bits = (bits << 8) | buf[off + i];
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    float f32(std::size_t off) const {
        std::uint32_t bits = u32(off);
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
};

struct Entry {
    std::uint16_t type = 0;
    std::uint32_t count = 0;
    std::size_t value_off = 0;  // position of the data, inline or external
};

// Integral tag values widened to uint32 (BYTE/SHORT/LONG).
std::vector<std::uint32_t> int_values(const Parser& p, const Entry& e) {
    std::vector<std::uint32_t> out(e.count);
    for (std::uint32_t i = 0; i < e.count; ++i) {
        switch (e.type) {
            case 1: out[i] = p.buf[e.value_off + i]; break;
            case 3: out[i] = p.u16(e.value_off + 2 * i); break;
            case 4: out[i] = p.u32(e.value_off + 4 * i); break;
            default: fail(p.path, "unsupported integer tag type " + std::to_string(e.type));
        }
    }
    return out;
}

std::vector<double> double_values(const Parser& p, const Entry& e) {
    if (e.type != 12) fail(p.path, "expected DOUBLE tag type, got " + std::to_string(e.type));
    std::vector<double> out(e.count);
    for (std::uint32_t i = 0; i < e.count; ++i) out[i] = p.f64(e.value_off + 8 * i);
    return out;
}

}  // namespace

Image read(const std::string& path) {
    Parser p;
    p.path = path;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) fail(path, "cannot open");
        in.seekg(0, std::ios::end);
        p.buf.resize(static_cast<std::size_t>(in.tellg()));
        in.seekg(0);
        in.read(reinterpret_cast<char*>(p.buf.data()), static_cast<std::streamsize>(p.buf.size()));
        if (!in) fail(path, "read error");
    }
    if (p.buf.size() < 8) fail(path, "not a TIFF (too short)");
    if (p.buf[0] == 'M' && p.buf[1] == 'M') fail(path, "big-endian TIFF not supported");
    if (!(p.buf[0] == 'I' && p.buf[1] == 'I')) fail(path, "not a TIFF (bad byte order mark)");
    if (p.u16(2) != 42) fail(path, "not a classic TIFF (bad magic)");

    const std::size_t ifd = p.u32(4);
    const std::uint16_t n_entries = p.u16(ifd);
    std::map<std::uint16_t, Entry> tags;
    for (std::uint16_t i = 0; i < n_entries; ++i) {
        const std::size_t at = ifd + 2 + 12 * std::size_t(i);
        Entry e;
        const std::uint16_t tag = p.u16(at);
        e.type = p.u16(at + 2);
        e.count = p.u32(at + 4);
        const std::size_t bytes = type_size(e.type) * e.count;
        e.value_off = bytes <= 4 ? at + 8 : p.u32(at + 8);
        tags[tag] = e;
    }

    auto get_int = [&](std::uint16_t tag, std::uint32_t fallback,
                       bool required) -> std::uint32_t {
        auto it = tags.find(tag);
        if (it == tags.end()) {
            if (required) fail(path, "missing required tag " + std::to_string(tag));
            return fallback;
        }
        return int_values(p, it->second)[0];
    };

    Image img;
    img.width = get_int(256, 0, true);
    img.height = get_int(257, 0, true);
    if (img.width == 0 || img.height == 0) fail(path, "zero-sized image");
    if (get_int(259, 1, false) != 1) fail(path, "compressed TIFF not supported");
    const std::uint32_t spp = get_int(277, 1, false);
    if (spp == 0 || spp > 4) fail(path, "unsupported samples per pixel " + std::to_string(spp));

    std::uint32_t bits = 8;
    if (auto it = tags.find(258); it != tags.end()) {
        auto v = int_values(p, it->second);
        bits = v[0];
        for (auto b : v)
            if (b != bits) fail(path, "heterogeneous bits per sample not supported");
    }
    std::uint32_t fmt = 1;
    if (auto it = tags.find(339); it != tags.end()) fmt = int_values(p, it->second)[0];
    img.bits = static_cast<int>(bits);
    img.sample_format = static_cast<int>(fmt);

    const bool ok = (fmt == 1 && (bits == 8 || bits == 16)) ||
                    (fmt == 2 && (bits == 8 || bits == 16)) ||
                    (fmt == 3 && (bits == 32 || bits == 64));
    if (!ok)
        fail(path, "unsupported sample type: format " + std::to_string(fmt) + ", " +
                       std::to_string(bits) + " bits");

    const std::uint32_t planar = get_int(284, 1, false);
    if (planar != 1 && planar != 2) fail(path, "unsupported planar configuration");
    std::uint32_t rows_per_strip = get_int(278, static_cast<std::uint32_t>(img.height), false);
    if (rows_per_strip == 0 || rows_per_strip > img.height)
        rows_per_strip = static_cast<std::uint32_t>(img.height);

    auto offsets_it = tags.find(273);
    if (offsets_it == tags.end()) fail(path, "missing strip offsets");
    const auto strip_offsets = int_values(p, offsets_it->second);
    const std::size_t strips_per_image =
        (img.height + rows_per_strip - 1) / rows_per_strip;
    const std::size_t expected_strips =
        planar == 2 ? strips_per_image * spp : strips_per_image;
    if (strip_offsets.size() != expected_strips)
        fail(path, "expected " + std::to_string(expected_strips) + " strips, found " +
                       std::to_string(strip_offsets.size()));

    const std::size_t sample_bytes = bits / 8;
    img.bands.assign(spp, std::vector<double>(img.width * img.height));

    auto decode = [&](std::size_t off) -> double {
        switch (fmt) {
            case 1: return bits == 8 ? double(p.buf[off]) : double(p.u16(off));
            case 2:
                return bits == 8 ? double(static_cast<std::int8_t>(p.buf[off]))
                                 : double(static_cast<std::int16_t>(p.u16(off)));
            default: return bits == 32 ? double(p.f32(off)) : p.f64(off);
        }
    };

    for (std::size_t s = 0; s < strip_offsets.size(); ++s) {
        const std::size_t band0 = planar == 2 ? s / strips_per_image : 0;
        const std::size_t strip_idx = planar == 2 ? s % strips_per_image : s;
        const std::size_t row0 = strip_idx * rows_per_strip;
        const std::size_t rows = std::min<std::size_t>(rows_per_strip, img.height - row0);
        const std::size_t values = rows * img.width * (planar == 2 ? 1 : spp);
        std::size_t off = strip_offsets[s];
        if (off + values * sample_bytes > p.buf.size()) fail(path, "strip exceeds file size");
        for (std::size_t v = 0; v < values; ++v, off += sample_bytes) {
            const double x = decode(off);
            if (planar == 2) {
                img.bands[band0][row0 * img.width + v] = x;
            } else {
                const std::size_t pixel = row0 * img.width + v / spp;
                img.bands[v % spp][pixel] = x;
            }
        }
    }

    if (auto it = tags.find(306); it != tags.end()) {
        const Entry& e = it->second;
        if (e.value_off + e.count > p.buf.size()) fail(path, "truncated DateTime");
        const char* s = reinterpret_cast<const char*>(p.buf.data() + e.value_off);
        img.datetime.assign(s, strnlen(s, e.count));
    }
    auto scale_it = tags.find(33550);
    auto tie_it = tags.find(33922);
    if (scale_it != tags.end() && tie_it != tags.end()) {
        const auto scale = double_values(p, scale_it->second);
        const auto tie = double_values(p, tie_it->second);
        if (scale.size() >= 2 && tie.size() >= 6) {
            GeoBounds b;
            b.min_x = tie[3] - tie[0] * scale[0];
            b.max_y = tie[4] + tie[1] * scale[1];
            b.max_x = b.min_x + double(img.width) * scale[0];
            b.min_y = b.max_y - double(img.height) * scale[1];
            img.bounds = b;
        }
    }
    return img;
}

namespace {

struct Builder {
    std::vector<unsigned char> buf;
    void u16(std::uint16_t v) {
        buf.push_back(v & 0xff);
        buf.push_back((v >> 8) & 0xff);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back((v >> (8 * i)) & 0xff);
    }
    void f64(double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        for (int i = 0; i < 8; ++i) buf.push_back((bits >> (8 * i)) & 0xff);
    }
    void bytes(const void* src, std::size_t n) {
        const auto* s = static_cast<const unsigned char*>(src);
        buf.insert(buf.end(), s, s + n);
    }
};

struct TagEntry {
    std::uint16_t tag, type;
    std::uint32_t count, value;
};

}  // namespace

void write(const std::string& path, const std::vector<const double*>& bands,
           std::size_t width, std::size_t height, PixelType type,
           const std::string& datetime, const std::optional<GeoBounds>& bounds) {
    if (bands.empty() || bands.size() > 4)
        throw std::invalid_argument("tiff: " + path + ": band count must be 1..4");
    if (width == 0 || height == 0)
        throw std::invalid_argument("tiff: " + path + ": zero-sized image");

    const std::size_t spp = bands.size();
    const std::size_t sample_bytes = type == PixelType::f64 ? 8 : 1;
    const std::size_t data_bytes = width * height * spp * sample_bytes;
    const std::uint16_t bits = type == PixelType::f64 ? 64 : 8;
    const std::uint16_t fmt = type == PixelType::f64 ? 3 : 2;

    Builder b;
    b.bytes("II", 2);
    b.u16(42);
    b.u32(0);  // IFD offset patched below

    // Pixel data, chunky interleave, single strip.
    const std::size_t data_off = b.buf.size();
    if (type == PixelType::f64) {
        for (std::size_t i = 0; i < width * height; ++i)
            for (std::size_t c = 0; c < spp; ++c) b.f64(bands[c][i]);
    } else {
        for (std::size_t i = 0; i < width * height; ++i)
            for (std::size_t c = 0; c < spp; ++c) {
                const double v = std::clamp(std::round(bands[c][i]), -128.0, 127.0);
                b.buf.push_back(static_cast<unsigned char>(static_cast<std::int8_t>(v)));
            }
    }
    (void)data_bytes;

    // External value arrays.
    std::size_t datetime_off = 0;
    if (!datetime.empty()) {
        datetime_off = b.buf.size();
        char field[20] = {};
        std::snprintf(field, sizeof field, "%.19s", datetime.c_str());
        b.bytes(field, 20);
    }
    std::size_t scale_off = 0, tie_off = 0;
    if (bounds) {
        scale_off = b.buf.size();
        b.f64((bounds->max_x - bounds->min_x) / double(width));
        b.f64((bounds->max_y - bounds->min_y) / double(height));
        b.f64(0.0);
        tie_off = b.buf.size();
        const double tie[6] = {0, 0, 0, bounds->min_x, bounds->max_y, 0};
        for (double v : tie) b.f64(v);
    }
    if (b.buf.size() % 2) b.buf.push_back(0);

    std::vector<TagEntry> entries;
    auto add = [&](std::uint16_t tag, std::uint16_t t, std::uint32_t count, std::uint32_t value) {
        entries.push_back({tag, t, count, value});
    };
    auto inline_shorts = [](std::initializer_list<std::uint16_t> vs) {
        std::uint32_t v = 0;
        int shift = 0;
        for (std::uint16_t x : vs) {
            v |= std::uint32_t(x) << shift;
            shift += 16;
        }
        return v;
    };

    add(256, 4, 1, static_cast<std::uint32_t>(width));
    add(257, 4, 1, static_cast<std::uint32_t>(height));
    if (spp <= 2) {
        add(258, 3, static_cast<std::uint32_t>(spp),
            spp == 1 ? inline_shorts({bits}) : inline_shorts({bits, bits}));
    } else {
        // 3..4 shorts do not fit inline; reuse the aux region.
        const std::size_t off = b.buf.size();
        for (std::size_t i = 0; i < spp; ++i) b.u16(bits);
        add(258, 3, static_cast<std::uint32_t>(spp), static_cast<std::uint32_t>(off));
    }
    add(259, 3, 1, 1);
    add(262, 3, 1, 1);
    add(273, 4, 1, static_cast<std::uint32_t>(data_off));
    add(277, 3, 1, static_cast<std::uint32_t>(spp));
    add(278, 4, 1, static_cast<std::uint32_t>(height));
    add(279, 4, 1, static_cast<std::uint32_t>(width * height * spp * sample_bytes));
    add(284, 3, 1, 1);
    if (datetime_off) add(306, 2, 20, static_cast<std::uint32_t>(datetime_off));
    if (spp > 1) {
        // Extra channels are unspecified data, not alpha.
        if (spp == 2)
            add(338, 3, 1, 0);
        else {
            const std::size_t off = b.buf.size();
            for (std::size_t i = 0; i + 1 < spp; ++i) b.u16(0);
            if (b.buf.size() % 2) b.buf.push_back(0);
            add(338, 3, static_cast<std::uint32_t>(spp - 1), static_cast<std::uint32_t>(off));
        }
    }
    if (spp <= 2) {
        add(339, 3, static_cast<std::uint32_t>(spp),
            spp == 1 ? inline_shorts({fmt}) : inline_shorts({fmt, fmt}));
    } else {
        const std::size_t off = b.buf.size();
        for (std::size_t i = 0; i < spp; ++i) b.u16(fmt);
        add(339, 3, static_cast<std::uint32_t>(spp), static_cast<std::uint32_t>(off));
    }
    if (bounds) {
        add(33550, 12, 3, static_cast<std::uint32_t>(scale_off));
        add(33922, 12, 6, static_cast<std::uint32_t>(tie_off));
    }

    if (b.buf.size() % 2) b.buf.push_back(0);
    const std::size_t ifd_off = b.buf.size();
    b.u16(static_cast<std::uint16_t>(entries.size()));
    for (const TagEntry& e : entries) {
        b.u16(e.tag);
        b.u16(e.type);
        b.u32(e.count);
        b.u32(e.value);
    }
    b.u32(0);  // no next IFD

    // Patch the IFD pointer in the header.
    b.buf[4] = ifd_off & 0xff;
    b.buf[5] = (ifd_off >> 8) & 0xff;
    b.buf[6] = (ifd_off >> 16) & 0xff;
    b.buf[7] = (ifd_off >> 24) & 0xff;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("tiff: " + path + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(b.buf.data()),
              static_cast<std::streamsize>(b.buf.size()));
    if (!out) throw std::runtime_error("tiff: " + path + ": write error");
}

}  // namespace clvae::tiff
