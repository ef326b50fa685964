#include "fdnet/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fdnet/error.hpp"

namespace fdnet {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Dimension: return "dimension";
        case ErrorKind::Config: return "config";
        case ErrorKind::Io: return "io";
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Training: return "training";
        case ErrorKind::Version: return "version";
        case ErrorKind::Internal: return "internal";
    }
    return "internal";
}

Plane::Plane(int rows_, int cols_, double fill)
    : rows(rows_), cols(cols_), data(static_cast<std::size_t>(rows_) * cols_, fill) {
    if (rows_ < 0 || cols_ < 0) throw DimensionError("negative plane extent");
}

Image2D::Image2D(int height, int width, double fill) : Image2D(Plane(height, width, fill)) {}

Image2D::Image2D(Plane pixels) : plane_(std::move(pixels)) {
    if (plane_.rows <= 0 || plane_.cols <= 0) throw DimensionError("image must have positive extent");
    for (double v : plane_.data) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw ValidationError("image pixel outside [0,1]: " + std::to_string(v));
        }
    }
}

Image2D Image2D::clamped(Plane pixels) {
    for (double& v : pixels.data) {
        if (!std::isfinite(v)) throw ValidationError("non-finite pixel value");
        v = std::clamp(v, 0.0, 1.0);
    }
    return Image2D(std::move(pixels));
}

BinaryMask::BinaryMask(int rows_, int cols_, std::uint8_t fill)
    : rows(rows_), cols(cols_), data(static_cast<std::size_t>(rows_) * cols_, fill) {}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

BinaryMask threshold(const Plane& values, double thr) {
    BinaryMask m(values.rows, values.cols);
    for (std::size_t i = 0; i < values.size(); ++i) m.data[i] = values.data[i] >= thr ? 1 : 0;
    return m;
}

}  // namespace fdnet
