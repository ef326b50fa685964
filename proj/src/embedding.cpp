#include "fdnet/embedding.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "fdnet/error.hpp"

namespace fdnet {
namespace {

static_assert(std::endian::native == std::endian::little, "embedding I/O assumes a little-endian host");

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::ifstream& in, const std::filesystem::path& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated embedding header: " + path.string());
    return v;
}

}  // namespace

void write_embedding(const std::filesystem::path& path, const EmbeddingGrid& grid) {
    const std::size_t n = static_cast<std::size_t>(grid.grid_h) * grid.grid_w * grid.channels;
    if (grid.grid_h <= 0 || grid.grid_w <= 0 || grid.channels <= 0 || grid.data.size() != n) {
        throw DimensionError("inconsistent embedding grid for " + path.string());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write embedding " + path.string());
    out.write(kEmbeddingMagic, sizeof kEmbeddingMagic);
    put_u32(out, static_cast<std::uint32_t>(grid.grid_h));
    put_u32(out, static_cast<std::uint32_t>(grid.grid_w));
    put_u32(out, static_cast<std::uint32_t>(grid.channels));
    out.write(reinterpret_cast<const char*>(grid.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!out) throw IoError("write failed for embedding " + path.string());
}

EmbeddingGrid read_embedding(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("embedding file not found: " + path.string());
    char magic[sizeof kEmbeddingMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kEmbeddingMagic, sizeof magic) != 0) {
        throw IoError("bad embedding magic in " + path.string());
    }
    EmbeddingGrid g;
    g.grid_h = static_cast<int>(get_u32(in, path));
    g.grid_w = static_cast<int>(get_u32(in, path));
    g.channels = static_cast<int>(get_u32(in, path));
    if (g.grid_h <= 0 || g.grid_w <= 0 || g.channels <= 0 || g.grid_h > 65536 || g.grid_w > 65536 ||
        g.channels > 65536) {
        throw IoError("implausible embedding header in " + path.string());
    }
    const std::size_t n = static_cast<std::size_t>(g.grid_h) * g.grid_w * g.channels;
    g.data.resize(n);
    if (!in.read(reinterpret_cast<char*>(g.data.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
        throw IoError("truncated embedding payload in " + path.string());
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in embedding " + path.string());
    return g;
}

std::filesystem::path embedding_path(const std::filesystem::path& dir, const std::string& id) {
    return dir / (id + ".emb");
}

}  // namespace fdnet
