#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fdnet {

/// Row-major real-valued 2D array with no range restriction. Used for
/// wavelet coefficients and intermediate (unclamped) pixel data.
struct Plane {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Plane() = default;
    Plane(int rows_, int cols_, double fill = 0.0);

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Plane& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Plane& o) const = default;
};

/// Single-channel image with every pixel finite and inside [0,1].
class Image2D {
  public:
    Image2D() = default;
    Image2D(int height, int width, double fill = 0.0);
    /// Throws ValidationError if any value is non-finite or outside [0,1].
    explicit Image2D(Plane pixels);

    /// Clamps into [0,1]; non-finite values throw.
    static Image2D clamped(Plane pixels);

    int height() const { return plane_.rows; }
    int width() const { return plane_.cols; }
    double at(int r, int c) const { return plane_.at(r, c); }
    std::span<const double> pixels() const { return plane_.data; }
    const Plane& plane() const { return plane_; }

    bool operator==(const Image2D& o) const = default;

  private:
    Plane plane_;
};

/// Binary mask with values in {0,1}.
struct BinaryMask {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int rows_, int cols_, std::uint8_t fill = 0);

    std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const { return data.size(); }
    std::size_t count() const;

    bool operator==(const BinaryMask& o) const = default;
};

/// Thresholds `values >= threshold` into a mask.
BinaryMask threshold(const Plane& values, double threshold);

}  // namespace fdnet
