#include "fdnet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "fdnet/error.hpp"
#include "fdnet/png_io.hpp"
#include "fdnet/rng.hpp"

namespace fdnet::phantom {
namespace {

constexpr double kMarginFraction = 0.05;
constexpr double kMinSlot = 8.0;
constexpr double kStreakIntensity = 0.8;

struct Ellipse {
    double cx, cy, rx, ry;
};

std::vector<Ellipse> layout(const PhantomSpec& spec, Rng& rng) {
    const double size = spec.image_size;
    const double margin = kMarginFraction * size;
    const double slot = (size - 2.0 * margin) / spec.tooth_count;
    std::vector<Ellipse> teeth;
    for (int i = 0; i < spec.tooth_count; ++i) {
        // Centre jitter <= 0.05 slot and rx <= 0.32 slot keep >= 2 px between
        // neighbouring ellipses, so rasterised teeth never 4-touch.
        Ellipse e{};
        e.cx = margin + slot * (i + 0.5) + rng.uniform(-0.05, 0.05) * slot;
        e.rx = rng.uniform(0.25, 0.32) * slot;
        e.ry = std::min(0.35 * size, e.rx * rng.uniform(1.4, 2.2));
        const double cy = size / 2.0 + rng.uniform(-0.08, 0.08) * size;
        e.cy = std::clamp(cy, e.ry + 1.0, size - e.ry - 1.0);
        teeth.push_back(e);
    }
    return teeth;
}

BinaryMask rasterize(const std::vector<Ellipse>& teeth, int size) {
    BinaryMask mask(size, size);
    for (const auto& e : teeth) {
        const int r0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)) - 1);
        const int r1 = std::min(size - 1, static_cast<int>(std::ceil(e.cy + e.ry)) + 1);
        const int c0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)) - 1);
        const int c1 = std::min(size - 1, static_cast<int>(std::ceil(e.cx + e.rx)) + 1);
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                const double dx = (c + 0.5 - e.cx) / e.rx;
                const double dy = (r + 0.5 - e.cy) / e.ry;
                if (dx * dx + dy * dy <= 1.0) mask.at(r, c) = 1;
            }
        }
    }
    return mask;
}

Plane gaussian_blur(const Plane& src, double sigma) {
    if (sigma <= 0.0) return src;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
        total += kernel[k + radius];
    }
    for (double& k : kernel) k /= total;

    auto clamp_idx = [](int i, int n) { return std::clamp(i, 0, n - 1); };
    Plane tmp(src.rows, src.cols), out(src.rows, src.cols);
    for (int r = 0; r < src.rows; ++r) {
        for (int c = 0; c < src.cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * src.at(r, clamp_idx(c + k, src.cols));
            tmp.at(r, c) = acc;
        }
    }
    for (int r = 0; r < src.rows; ++r) {
        for (int c = 0; c < src.cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(clamp_idx(r + k, src.rows), c);
            out.at(r, c) = acc;
        }
    }
    return out;
}

void draw_streak(Plane& img, Rng& rng) {
    const double size = img.rows;
    const double px = rng.uniform(0.2, 0.8) * size;
    const double py = rng.uniform(0.2, 0.8) * size;
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double half_width = rng.uniform(1.0, 3.0) / 2.0;
    // Unit normal of the line direction (cos a, sin a).
    const double nx = -std::sin(angle), ny = std::cos(angle);
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c) {
            const double dist = std::abs((c + 0.5 - px) * nx + (r + 0.5 - py) * ny);
            if (dist <= half_width) img.at(r, c) = std::max(img.at(r, c), kStreakIntensity);
        }
    }
}

struct Rendered {
    BinaryMask mask;
    Plane blurred;
};

Rendered render(const PhantomSpec& spec, Rng& rng) {
    validate(spec);
    const auto teeth = layout(spec, rng);
    BinaryMask mask = rasterize(teeth, spec.image_size);
    Plane clean(spec.image_size, spec.image_size);
    for (std::size_t i = 0; i < mask.size(); ++i) clean.data[i] = mask.data[i];
    return {std::move(mask), gaussian_blur(clean, spec.blur_sigma)};
}

}  // namespace

int tooth_capacity(int image_size) {
    const double usable = image_size * (1.0 - 2.0 * kMarginFraction);
    return std::min(16, static_cast<int>(std::floor(usable / kMinSlot)));
}

void validate(const PhantomSpec& spec) {
    if (spec.image_size <= 0 || spec.image_size % 2 != 0) {
        throw ConfigError("phantom image_size must be a positive even integer, got " + std::to_string(spec.image_size));
    }
    if (spec.tooth_count < 1 || spec.tooth_count > 16) {
        throw ConfigError("tooth_count must be in 1..16, got " + std::to_string(spec.tooth_count));
    }
    if (spec.tooth_count > tooth_capacity(spec.image_size)) {
        throw ConfigError("tooth_count " + std::to_string(spec.tooth_count) + " exceeds capacity " +
                          std::to_string(tooth_capacity(spec.image_size)) + " for image_size " +
                          std::to_string(spec.image_size));
    }
    if (!(spec.blur_sigma >= 0.0) || !(spec.noise_sigma >= 0.0) || spec.streak_count < 0) {
        throw ConfigError("blur_sigma, noise_sigma and streak_count must be non-negative");
    }
}

Plane render_blurred(const PhantomSpec& spec) {
    Rng rng(spec.seed);
    return render(spec, rng).blurred;
}

Sample generate_phantom(const PhantomSpec& spec) {
    Rng rng(spec.seed);
    auto [mask, img] = render(spec, rng);
    for (int s = 0; s < spec.streak_count; ++s) draw_streak(img, rng);
    if (spec.noise_sigma > 0.0) {
        for (double& v : img.data) v += spec.noise_sigma * rng.normal();
    }
    return {Image2D::clamped(std::move(img)), std::move(mask), "phantom_" + std::to_string(spec.seed)};
}

int count_components(const BinaryMask& mask) {
    std::vector<int> label(mask.size(), 0);
    std::vector<std::size_t> stack;
    int components = 0;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask.data[start] || label[start]) continue;
        ++components;
        label[start] = components;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            const int r = static_cast<int>(i / mask.cols), c = static_cast<int>(i % mask.cols);
            const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& n : nbr) {
                if (n[0] < 0 || n[0] >= mask.rows || n[1] < 0 || n[1] >= mask.cols) continue;
                const std::size_t j = static_cast<std::size_t>(n[0]) * mask.cols + n[1];
                if (mask.data[j] && !label[j]) {
                    label[j] = components;
                    stack.push_back(j);
                }
            }
        }
    }
    return components;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void save_sample(const Sample& sample, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

    png::Gray8 img{sample.image.height(), sample.image.width(), {}};
    img.data.reserve(sample.image.pixels().size());
    for (double v : sample.image.pixels()) img.data.push_back(quantize(v));
    png::write_gray8(dir / (sample.id + ".png"), img);

    png::Gray8 mask{sample.mask.rows, sample.mask.cols, {}};
    mask.data.reserve(sample.mask.size());
    for (auto v : sample.mask.data) mask.data.push_back(v ? 255 : 0);
    png::write_gray8(dir / (sample.id + "_mask.png"), mask);
}

Sample load_sample(const std::filesystem::path& dir, const std::string& id) {
    const auto img_path = dir / (id + ".png");
    const auto mask_path = dir / (id + "_mask.png");
    const auto img = png::read_gray8(img_path);
    const auto mask = png::read_gray8(mask_path);
    if (img.rows != mask.rows || img.cols != mask.cols) {
        throw IoError("image/mask shape mismatch for " + mask_path.string());
    }
    Plane pixels(img.rows, img.cols);
    for (std::size_t i = 0; i < img.data.size(); ++i) pixels.data[i] = img.data[i] / 255.0;
    BinaryMask m(mask.rows, mask.cols);
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        if (mask.data[i] != 0 && mask.data[i] != 255) throw IoError("non-binary mask value in " + mask_path.string());
        m.data[i] = mask.data[i] ? 1 : 0;
    }
    return {Image2D(std::move(pixels)), std::move(m), id};
}

const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

std::vector<std::string> DatasetManifest::ids(Split s) const {
    std::vector<std::string> out;
    for (const auto& e : entries) {
        if (e.split == s) out.push_back(e.id);
    }
    return out;
}

SplitFractions parse_split(const std::string& text) {
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw ConfigError("split must be 'train,test', got '" + text + "'");
    try {
        SplitFractions s;
        s.train = std::stod(text.substr(0, comma));
        s.test = std::stod(text.substr(comma + 1));
        return s;
    } catch (const std::logic_error&) {
        throw ConfigError("split must be two numbers 'train,test', got '" + text + "'");
    }
}

std::string sample_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%04zu", index);
    return buf;
}

DatasetManifest make_manifest(std::size_t n, SplitFractions split, std::uint64_t seed) {
    if (n < 2) throw ConfigError("dataset needs at least 2 samples");
    if (split.train < 0.0 || split.test < 0.0 || std::abs(split.train + split.test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be non-negative and sum to 1");
    }
    auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * split.train));
    if (split.train > 0.0 && split.test > 0.0) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed ^ 0x5eed5a11ULL);
    rng.shuffle(order);

    DatasetManifest m;
    m.entries.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.entries[i] = {sample_id(i), Split::Test};
    for (std::size_t k = 0; k < n_train; ++k) m.entries[order[k]].split = Split::Train;
    return m;
}

DatasetManifest make_dataset(const PhantomSpec& spec, std::size_t n, SplitFractions split,
                             const std::filesystem::path& dir) {
    validate(spec);
    DatasetManifest m = make_manifest(n, split, spec.seed);
    for (std::size_t i = 0; i < n; ++i) {
        PhantomSpec s = spec;
        s.seed = spec.seed + i;
        Sample sample = generate_phantom(s);
        sample.id = m.entries[i].id;
        save_sample(sample, dir);
    }
    write_manifest(m, dir / kManifestFile);
    return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + file.string());
    for (const auto& e : m.entries) out << e.id << ' ' << split_name(e.split) << '\n';
    if (!out) throw IoError("write failed for manifest " + file.string());
}

DatasetManifest read_manifest(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read manifest " + file.string());
    DatasetManifest m;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, split, extra;
        if (!(ls >> id >> split) || (ls >> extra) || (split != "train" && split != "test")) {
            throw IoError("malformed manifest line " + std::to_string(line_no) + " in " + file.string());
        }
        m.entries.push_back({id, split == "train" ? Split::Train : Split::Test});
    }
    return m;
}

}  // namespace fdnet::phantom
