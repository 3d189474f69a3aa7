#pragma once

#include <cstdint>
#include <string>

namespace clvae::png {

// 8-bit grayscale PNG via zlib. Enough for change-mask previews.
void write_gray(const std::string& path, const std::uint8_t* pixels,
                std::size_t width, std::size_t height);

}  // namespace clvae::png
