#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace fdnet {

/// Externally produced boundary-encoder output for one image.
///
/// File layout (`<id>.emb`, little-endian):
///   7 bytes   magic "FDNEMB1"
///   u32       grid_h
///   u32       grid_w
///   u32       channels
///   f32 * (grid_h * grid_w * channels), row-major over (grid_h, grid_w, channels)
struct EmbeddingGrid {
    int grid_h = 0;
    int grid_w = 0;
    int channels = 0;
    std::vector<float> data;  // HWC

    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * grid_w + x) * channels + c];
    }
};

inline constexpr char kEmbeddingMagic[7] = {'F', 'D', 'N', 'E', 'M', 'B', '1'};

void write_embedding(const std::filesystem::path& path, const EmbeddingGrid& grid);
/// Throws IoError (with path) on missing, truncated or mis-tagged files.
EmbeddingGrid read_embedding(const std::filesystem::path& path);
std::filesystem::path embedding_path(const std::filesystem::path& dir, const std::string& id);

}  // namespace fdnet
