#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>

#include "fdnet/image.hpp"

namespace fdnet::wavelet {

enum class Family { Haar, Db2 };

/// Parses "haar" / "db2"; anything else is a ConfigError.
Family parse_family(std::string_view name);
std::string family_name(Family family);

/// Orthonormal analysis low-pass taps. The high-pass filter is the
/// quadrature mirror g[k] = (-1)^k h[L-1-k].
std::span<const double> lowpass_taps(Family family);
std::span<const double> highpass_taps(Family family);

/// One-level 2D decomposition. The first letter names the filter applied
/// along the vertical axis (rows), the second along the horizontal axis:
///   ll = low/low, lh = low vertical, high horizontal,
///   hl = high vertical, low horizontal, hh = high/high.
struct SubbandSet {
    Plane ll, lh, hl, hh;
    Family family = Family::Haar;
    int orig_rows = 0;
    int orig_cols = 0;
};

/// Forward transform with periodic extension. Requires even extents.
SubbandSet dwt2(const Plane& img, Family family);
SubbandSet dwt2(const Image2D& img, Family family);

/// Inverse of dwt2. Throws DimensionError on inconsistent subband shapes.
Plane idwt2(const SubbandSet& sub);

/// Keeps ll and zeroes the three detail bands.
SubbandSet lf_extract(const SubbandSet& sub);

/// Reflect-pads the right/bottom edge to even extents (identity for even input).
Plane pad_to_even(const Plane& img);

/// W^-1(LF(W(x))) without clamping, including the odd-size pad/crop.
/// Linear in its input.
Plane lf_transform(const Plane& img, Family family);

/// lf_transform clamped back into [0,1].
Image2D lf_enhance(const Image2D& img, Family family);

/// Two-channel network input: channel 0 is the original image, channel 1
/// its low-frequency enhanced counterpart.
struct ComposedInput {
    Image2D original;
    Image2D enhanced;
};

ComposedInput compose_input(const Image2D& img, Family family);

}  // namespace fdnet::wavelet
