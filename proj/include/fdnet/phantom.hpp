#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fdnet/image.hpp"

namespace fdnet::phantom {

/// Parameters of one synthetic CBCT-like slice.
struct PhantomSpec {
    int image_size = 256;
    int tooth_count = 4;
    double blur_sigma = 1.0;
    int streak_count = 1;
    double noise_sigma = 0.03;
    std::uint64_t seed = 0;
};

struct Sample {
    Image2D image;
    BinaryMask mask;
    std::string id;
};

/// Rejects sizes/counts that cannot be laid out without touching teeth.
void validate(const PhantomSpec& spec);

/// Maximum non-touching tooth count for a square image of this size.
int tooth_capacity(int image_size);

/// Ellipse row with blurred edges, streak artifacts and additive noise.
/// The mask is the uncorrupted ellipse union.
Sample generate_phantom(const PhantomSpec& spec);

/// Ellipse rendering after blur only (no streaks, no noise).
Plane render_blurred(const PhantomSpec& spec);

/// Number of 4-connected foreground components.
int count_components(const BinaryMask& mask);

/// 8-bit quantisation used by every file format here: round(255 * v).
std::uint8_t quantize(double v);

/// Writes `<id>.png` and `<id>_mask.png` (mask stored as {0,255}).
void save_sample(const Sample& sample, const std::filesystem::path& dir);
Sample load_sample(const std::filesystem::path& dir, const std::string& id);

enum class Split { Train, Test };
const char* split_name(Split s);

struct ManifestEntry {
    std::string id;
    Split split;
    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    std::vector<std::string> ids(Split s) const;
    bool operator==(const DatasetManifest&) const = default;
};

struct SplitFractions {
    double train = 0.8;
    double test = 0.2;
};

/// Parses "0.8,0.2" style text.
SplitFractions parse_split(const std::string& text);

std::string sample_id(std::size_t index);

/// Split membership for n samples; train gets llround(n * train) randomly
/// chosen ids (seeded), the rest are test.
DatasetManifest make_manifest(std::size_t n, SplitFractions split, std::uint64_t seed);

/// Generates n samples (seed + index each), writes them and `manifest.txt`.
DatasetManifest make_dataset(const PhantomSpec& spec, std::size_t n, SplitFractions split,
                             const std::filesystem::path& dir);

inline constexpr const char* kManifestFile = "manifest.txt";

void write_manifest(const DatasetManifest& m, const std::filesystem::path& file);
DatasetManifest read_manifest(const std::filesystem::path& file);

}  // namespace fdnet::phantom
