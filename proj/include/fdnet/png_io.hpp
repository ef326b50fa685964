#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fdnet::png {

struct Gray8 {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> data;
};

/// Writes an 8-bit grayscale PNG. Output bytes depend only on the pixels.
void write_gray8(const std::filesystem::path& path, const Gray8& img);

/// Reads any PNG and converts it to 8-bit grayscale. Throws IoError with the
/// path on a missing or corrupt file.
Gray8 read_gray8(const std::filesystem::path& path);

}  // namespace fdnet::png
