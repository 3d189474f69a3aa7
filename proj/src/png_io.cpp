#include "clvae/png_io.hpp"

#include <zlib.h>

#include <fstream>
#include <stdexcept>
#include <vector>

namespace clvae::png {

namespace {

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    b.push_back((v >> 24) & 0xff);
    b.push_back((v >> 16) & 0xff);
    b.push_back((v >> 8) & 0xff);
    b.push_back(v & 0xff);
}

void put_chunk(std::vector<unsigned char>& out, const char type[5],
               const std::vector<unsigned char>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0, out.data() + crc_start, static_cast<uInt>(4 + data.size()));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_gray(const std::string& path, const std::uint8_t* pixels,
                std::size_t width, std::size_t height) {
    if (width == 0 || height == 0)
        throw std::invalid_argument("png: " + path + ": zero-sized image");

    // Each scanline is prefixed with filter type 0 (none).
    std::vector<unsigned char> raw((width + 1) * height);
    for (std::size_t y = 0; y < height; ++y) {
        raw[y * (width + 1)] = 0;
        std::copy(pixels + y * width, pixels + (y + 1) * width,
                  raw.begin() + static_cast<std::ptrdiff_t>(y * (width + 1) + 1));
    }
    uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> z(zlen);
    if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: " + path + ": deflate failed");
    z.resize(zlen);

    std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<unsigned char> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(width));
    put_be32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);  // deflate
    ihdr.push_back(0);  // adaptive filtering
    ihdr.push_back(0);  // no interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("png: " + path + ": cannot open for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("png: " + path + ": write error");
}

}  // namespace clvae::png
