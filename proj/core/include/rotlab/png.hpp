#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rotlab {

// Minimal 8-bit grayscale PNG writer. Compression settings are pinned, so
// identical pixels always produce identical bytes.
void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<std::uint8_t>& pixels);

std::vector<std::uint8_t> encode_png_gray8(int width, int height,
                                           const std::vector<std::uint8_t>& pixels);

}  // namespace rotlab
