#include "fdnet/wavelet.hpp"

#include <cmath>

#include "fdnet/error.hpp"

namespace fdnet::wavelet {
namespace {

const double kSqrt2 = std::sqrt(2.0);
const double kSqrt3 = std::sqrt(3.0);

const std::array<double, 2> kHaarLow = {1.0 / kSqrt2, 1.0 / kSqrt2};
const std::array<double, 2> kHaarHigh = {1.0 / kSqrt2, -1.0 / kSqrt2};

const std::array<double, 4> kDb2Low = {
    (1.0 + kSqrt3) / (4.0 * kSqrt2),
    (3.0 + kSqrt3) / (4.0 * kSqrt2),
    (3.0 - kSqrt3) / (4.0 * kSqrt2),
    (1.0 - kSqrt3) / (4.0 * kSqrt2),
};
const std::array<double, 4> kDb2High = {kDb2Low[3], -kDb2Low[2], kDb2Low[1], -kDb2Low[0]};

int wrap(int i, int n) { return ((i % n) + n) % n; }

// Periodic analysis of one 1D signal read with a stride.
void analyze(const double* in, int n, int stride, std::span<const double> lo, std::span<const double> hi,
             double* out_lo, double* out_hi, int out_stride) {
    const int half = n / 2;
    const int taps = static_cast<int>(lo.size());
    for (int k = 0; k < half; ++k) {
        double a = 0.0, d = 0.0;
        for (int t = 0; t < taps; ++t) {
            const double x = in[static_cast<std::ptrdiff_t>(wrap(2 * k + t, n)) * stride];
            a += lo[t] * x;
            d += hi[t] * x;
        }
        out_lo[static_cast<std::ptrdiff_t>(k) * out_stride] = a;
        out_hi[static_cast<std::ptrdiff_t>(k) * out_stride] = d;
    }
}

// Adjoint of analyze (its exact inverse for orthonormal taps).
void synthesize(const double* in_lo, const double* in_hi, int half, int in_stride, std::span<const double> lo,
                std::span<const double> hi, double* out, int out_stride) {
    const int n = 2 * half;
    const int taps = static_cast<int>(lo.size());
    for (int m = 0; m < n; ++m) out[static_cast<std::ptrdiff_t>(m) * out_stride] = 0.0;
    for (int k = 0; k < half; ++k) {
        const double a = in_lo[static_cast<std::ptrdiff_t>(k) * in_stride];
        const double d = in_hi[static_cast<std::ptrdiff_t>(k) * in_stride];
        for (int t = 0; t < taps; ++t) {
            out[static_cast<std::ptrdiff_t>(wrap(2 * k + t, n)) * out_stride] += lo[t] * a + hi[t] * d;
        }
    }
}

// The separable orthonormal Haar pair collapses to an exact factor of 1/2 in
// 2D; computing it that way keeps constant images exactly invariant.
SubbandSet haar_forward(const Plane& img) {
    const int hr = img.rows / 2, hc = img.cols / 2;
    SubbandSet out{Plane(hr, hc), Plane(hr, hc), Plane(hr, hc), Plane(hr, hc), Family::Haar, img.rows, img.cols};
    for (int r = 0; r < hr; ++r) {
        for (int c = 0; c < hc; ++c) {
            const double a = img.at(2 * r, 2 * c), b = img.at(2 * r, 2 * c + 1);
            const double d = img.at(2 * r + 1, 2 * c), e = img.at(2 * r + 1, 2 * c + 1);
            out.ll.at(r, c) = ((a + b) + (d + e)) / 2.0;
            out.lh.at(r, c) = ((a - b) + (d - e)) / 2.0;
            out.hl.at(r, c) = ((a + b) - (d + e)) / 2.0;
            out.hh.at(r, c) = ((a - b) - (d - e)) / 2.0;
        }
    }
    return out;
}

Plane haar_inverse(const SubbandSet& sub) {
    Plane out(sub.orig_rows, sub.orig_cols);
    for (int r = 0; r < sub.ll.rows; ++r) {
        for (int c = 0; c < sub.ll.cols; ++c) {
            const double ll = sub.ll.at(r, c), lh = sub.lh.at(r, c);
            const double hl = sub.hl.at(r, c), hh = sub.hh.at(r, c);
            out.at(2 * r, 2 * c) = ((ll + lh) + (hl + hh)) / 2.0;
            out.at(2 * r, 2 * c + 1) = ((ll - lh) + (hl - hh)) / 2.0;
            out.at(2 * r + 1, 2 * c) = ((ll + lh) - (hl + hh)) / 2.0;
            out.at(2 * r + 1, 2 * c + 1) = ((ll - lh) - (hl - hh)) / 2.0;
        }
    }
    return out;
}

}  // namespace

Family parse_family(std::string_view name) {
    if (name == "haar") return Family::Haar;
    if (name == "db2") return Family::Db2;
    throw ConfigError("unknown wavelet family '" + std::string(name) + "' (valid: haar, db2)");
}

std::string family_name(Family family) { return family == Family::Haar ? "haar" : "db2"; }

std::span<const double> lowpass_taps(Family family) {
    if (family == Family::Haar) return kHaarLow;
    return kDb2Low;
}

std::span<const double> highpass_taps(Family family) {
    if (family == Family::Haar) return kHaarHigh;
    return kDb2High;
}

SubbandSet dwt2(const Plane& img, Family family) {
    if (img.rows <= 0 || img.cols <= 0 || img.rows % 2 != 0 || img.cols % 2 != 0) {
        throw DimensionError("dwt2 requires even extents, got " + std::to_string(img.rows) + "x" +
                             std::to_string(img.cols));
    }
    if (family == Family::Haar) return haar_forward(img);
    const auto lo = lowpass_taps(family);
    const auto hi = highpass_taps(family);
    const int hr = img.rows / 2, hc = img.cols / 2;

    // Horizontal pass: each row -> [low | high] halves.
    Plane row_lo(img.rows, hc), row_hi(img.rows, hc);
    for (int r = 0; r < img.rows; ++r) {
        analyze(&img.data[static_cast<std::size_t>(r) * img.cols], img.cols, 1, lo, hi, &row_lo.at(r, 0),
                &row_hi.at(r, 0), 1);
    }

    SubbandSet out;
    out.family = family;
    out.orig_rows = img.rows;
    out.orig_cols = img.cols;
    out.ll = Plane(hr, hc);
    out.lh = Plane(hr, hc);
    out.hl = Plane(hr, hc);
    out.hh = Plane(hr, hc);
    // Vertical pass over columns.
    for (int c = 0; c < hc; ++c) {
        analyze(&row_lo.at(0, c), img.rows, hc, lo, hi, &out.ll.at(0, c), &out.hl.at(0, c), hc);
        analyze(&row_hi.at(0, c), img.rows, hc, lo, hi, &out.lh.at(0, c), &out.hh.at(0, c), hc);
    }
    return out;
}

SubbandSet dwt2(const Image2D& img, Family family) { return dwt2(img.plane(), family); }

Plane idwt2(const SubbandSet& sub) {
    const int hr = sub.orig_rows / 2, hc = sub.orig_cols / 2;
    const bool consistent = sub.orig_rows > 0 && sub.orig_cols > 0 && sub.orig_rows % 2 == 0 &&
                            sub.orig_cols % 2 == 0;
    for (const Plane* p : {&sub.ll, &sub.lh, &sub.hl, &sub.hh}) {
        if (!consistent || p->rows != hr || p->cols != hc) {
            throw DimensionError("subband shapes inconsistent with original extent " +
                                 std::to_string(sub.orig_rows) + "x" + std::to_string(sub.orig_cols));
        }
    }
    if (sub.family == Family::Haar) return haar_inverse(sub);
    const auto lo = lowpass_taps(sub.family);
    const auto hi = highpass_taps(sub.family);

    Plane row_lo(sub.orig_rows, hc), row_hi(sub.orig_rows, hc);
    for (int c = 0; c < hc; ++c) {
        synthesize(sub.ll.data.data() + c, sub.hl.data.data() + c, hr, hc, lo, hi, &row_lo.at(0, c), hc);
        synthesize(sub.lh.data.data() + c, sub.hh.data.data() + c, hr, hc, lo, hi, &row_hi.at(0, c), hc);
    }
    Plane out(sub.orig_rows, sub.orig_cols);
    for (int r = 0; r < sub.orig_rows; ++r) {
        synthesize(&row_lo.at(r, 0), &row_hi.at(r, 0), hc, 1, lo, hi, &out.at(r, 0), 1);
    }
    return out;
}

SubbandSet lf_extract(const SubbandSet& sub) {
    SubbandSet out = sub;
    for (Plane* p : {&out.lh, &out.hl, &out.hh}) std::fill(p->data.begin(), p->data.end(), 0.0);
    return out;
}

Plane pad_to_even(const Plane& img) {
    const int rows = img.rows + img.rows % 2;
    const int cols = img.cols + img.cols % 2;
    if (rows == img.rows && cols == img.cols) return img;
    // numpy-style reflect (edge not repeated); a single pixel has nothing to
    // reflect and is replicated.
    auto reflect = [](int i, int n) { return i < n ? i : (n >= 2 ? 2 * n - 2 - i : n - 1); };
    Plane out(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) out.at(r, c) = img.at(reflect(r, img.rows), reflect(c, img.cols));
    }
    return out;
}

Plane lf_transform(const Plane& img, Family family) {
    const Plane padded = pad_to_even(img);
    const Plane full = idwt2(lf_extract(dwt2(padded, family)));
    if (full.same_shape(img)) return full;
    Plane out(img.rows, img.cols);
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c) out.at(r, c) = full.at(r, c);
    }
    return out;
}

Image2D lf_enhance(const Image2D& img, Family family) { return Image2D::clamped(lf_transform(img.plane(), family)); }

ComposedInput compose_input(const Image2D& img, Family family) { return {img, lf_enhance(img, family)}; }

}  // namespace fdnet::wavelet
