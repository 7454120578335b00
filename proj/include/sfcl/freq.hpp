#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sfcl/tensor.hpp"

// Pixel image -> block spectra: color conversion, grid cropping, 8×8
// orthonormal DCT-II, zigzag scan, and the [channels × 64 × rows × cols]
// arrangement.

namespace sfcl::freq {

inline constexpr std::size_t kBlock = 8;
inline constexpr std::size_t kBands = 64;
inline constexpr std::size_t kChannels = 3;

enum class ColorSpace { rgb, ycbcr };

/// Three planes of samples in [0,255], tagged with their color space.
template <Scalar T>
struct PlanarImage {
  ColorSpace space = ColorSpace::rgb;
  std::size_t height = 0;
  std::size_t width = 0;
  std::array<std::vector<T>, 3> planes;

  PlanarImage() = default;
  PlanarImage(ColorSpace cs, std::size_t h, std::size_t w) : space(cs), height(h), width(w) {
    for (auto& p : planes) p.assign(h * w, T{0});
  }

  T& at(std::size_t c, std::size_t y, std::size_t x) { return planes[c][y * width + x]; }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const { return planes[c][y * width + x]; }
};

/// Pixel rectangle, top-left origin.
struct BBox {
  long x = 0, y = 0, w = 0, h = 0;
};

/// Restructured block spectra, dims [3 × 64 × block_rows × block_cols].
template <Scalar T>
struct BlockSpectra {
  Tensor<T> coeffs;

  std::size_t block_rows() const { return coeffs.dim(2); }
  std::size_t block_cols() const { return coeffs.dim(3); }
  T at(std::size_t c, std::size_t band, std::size_t r, std::size_t col) const { return coeffs.at(c, band, r, col); }
};

// ---------------------------------------------------------------- color

/// Full-range BT.601, clamped to [0,255].
template <Scalar T>
PlanarImage<T> rgb_to_ycbcr(const PlanarImage<T>& img) {
  if (img.space != ColorSpace::rgb) throw UsageError("rgb_to_ycbcr: image is not tagged RGB");
  PlanarImage<T> out(ColorSpace::ycbcr, img.height, img.width);
  auto clamp = [](double v) { return static_cast<T>(std::clamp(v, 0.0, 255.0)); };
  for (std::size_t i = 0; i < img.height * img.width; ++i) {
    const double r = img.planes[0][i], g = img.planes[1][i], b = img.planes[2][i];
    // Rows of the matrix sum to 1, 0, 0; written relative to G so gray
    // pixels map to (v, 128, 128) exactly.
    const double rg = r - g, bg = b - g;
    out.planes[0][i] = clamp(g + 0.299 * rg + 0.114 * bg);
    out.planes[1][i] = clamp(128.0 + 0.5 * bg - 0.168736 * rg);
    out.planes[2][i] = clamp(128.0 + 0.5 * rg - 0.081312 * bg);
  }
  return out;
}

/// Inverse of rgb_to_ycbcr (no clamping); used to synthesize test images.
template <Scalar T>
PlanarImage<T> ycbcr_to_rgb(const PlanarImage<T>& img) {
  if (img.space != ColorSpace::ycbcr) throw UsageError("ycbcr_to_rgb: image is not tagged YCbCr");
  PlanarImage<T> out(ColorSpace::rgb, img.height, img.width);
  for (std::size_t i = 0; i < img.height * img.width; ++i) {
    const double y = img.planes[0][i], cb = img.planes[1][i] - 128.0, cr = img.planes[2][i] - 128.0;
    out.planes[0][i] = static_cast<T>(y + 1.402 * cr);
    out.planes[1][i] = static_cast<T>(y - 0.344136 * cb - 0.714136 * cr);
    out.planes[2][i] = static_cast<T>(y + 1.772 * cb);
  }
  return out;
}

// ----------------------------------------------------------------- crop

/// Pixel region actually analyzed: bbox clamped to the image, then trimmed
/// bottom/right to multiples of 8.
struct GridRegion {
  std::size_t x = 0, y = 0, w = 0, h = 0;
};

inline GridRegion grid_region(std::size_t height, std::size_t width, const std::optional<BBox>& bbox) {
  long x0 = 0, y0 = 0, x1 = static_cast<long>(width), y1 = static_cast<long>(height);
  if (bbox) {
    if (bbox->w <= 0 || bbox->h <= 0) throw InputError("bounding box has non-positive size");
    x0 = std::max(0L, bbox->x);
    y0 = std::max(0L, bbox->y);
    x1 = std::min(static_cast<long>(width), bbox->x + bbox->w);
    y1 = std::min(static_cast<long>(height), bbox->y + bbox->h);
    if (x1 <= x0 || y1 <= y0) throw InputError("bounding box does not intersect the image");
  }
  GridRegion r;
  r.x = static_cast<std::size_t>(x0);
  r.y = static_cast<std::size_t>(y0);
  r.w = static_cast<std::size_t>(x1 - x0) / kBlock * kBlock;
  r.h = static_cast<std::size_t>(y1 - y0) / kBlock * kBlock;
  if (r.w < kBlock || r.h < kBlock)
    throw InputError("region " + std::to_string(x1 - x0) + "x" + std::to_string(y1 - y0) + " is smaller than one 8x8 block");
  return r;
}

template <Scalar T>
PlanarImage<T> crop_to_grid(const PlanarImage<T>& img, const std::optional<BBox>& bbox = std::nullopt) {
  const GridRegion r = grid_region(img.height, img.width, bbox);
  PlanarImage<T> out(img.space, r.h, r.w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < r.h; ++y)
      for (std::size_t x = 0; x < r.w; ++x) out.at(c, y, x) = img.at(c, r.y + y, r.x + x);
  return out;
}

// ------------------------------------------------------------------ DCT

/// Orthonormal DCT-II basis: basis[u][x] = a(u)·cos((2x+1)uπ/16).
inline const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> m{};
    const double pi = std::acos(-1.0);
    for (std::size_t u = 0; u < 8; ++u)
      for (std::size_t x = 0; x < 8; ++x)
        m[u][x] = (u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) * std::cos((2.0 * x + 1.0) * u * pi / 16.0);
    return m;
  }();
  return basis;
}

/// out = basis · in · basisᵀ (forward) or basisᵀ · in · basis (inverse).
inline void dct8_block(const double* in, std::size_t in_stride, double* out, std::size_t out_stride, bool inverse) {
  const auto& c = dct_basis();
  double tmp[8][8];
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t x = 0; x < 8; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < 8; ++k) s += (inverse ? c[k][u] : c[u][k]) * in[k * in_stride + x];
      tmp[u][x] = s;
    }
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t v = 0; v < 8; ++v) {
      double s = 0.0;
      for (std::size_t k = 0; k < 8; ++k) s += tmp[u][k] * (inverse ? c[k][v] : c[v][k]);
      out[u * out_stride + v] = s;
    }
}

/// Blockwise forward DCT of a [H×W] plane (H, W multiples of 8). Each 8×8
/// tile of the result holds that tile's coefficients in natural order.
template <Scalar T>
Tensor<T> block_dct8(const Tensor<T>& plane, bool level_shift = true) {
  if (plane.rank() != 2 || plane.dim(0) % kBlock != 0 || plane.dim(1) % kBlock != 0)
    throw UsageError("block_dct8: plane dims " + shape_str(plane.dims()) + " are not multiples of 8; crop first");
  const std::size_t h = plane.dim(0), w = plane.dim(1);
  Tensor<T> out(plane.dims());
  double in[64], res[64];
  for (std::size_t by = 0; by < h; by += 8)
    for (std::size_t bx = 0; bx < w; bx += 8) {
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
          in[y * 8 + x] = static_cast<double>(plane[(by + y) * w + bx + x]) - (level_shift ? 128.0 : 0.0);
      dct8_block(in, 8, res, 8, false);
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) out[(by + y) * w + bx + x] = static_cast<T>(res[y * 8 + x]);
    }
  return out;
}

/// Inverse of block_dct8.
template <Scalar T>
Tensor<T> idct8(const Tensor<T>& coeffs, bool level_shift = true) {
  if (coeffs.rank() != 2 || coeffs.dim(0) % kBlock != 0 || coeffs.dim(1) % kBlock != 0)
    throw ShapeError("idct8: coefficient plane " + shape_str(coeffs.dims()) + " is not a whole number of blocks");
  const std::size_t h = coeffs.dim(0), w = coeffs.dim(1);
  Tensor<T> out(coeffs.dims());
  double in[64], res[64];
  for (std::size_t by = 0; by < h; by += 8)
    for (std::size_t bx = 0; bx < w; bx += 8) {
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) in[y * 8 + x] = static_cast<double>(coeffs[(by + y) * w + bx + x]);
      dct8_block(in, 8, res, 8, true);
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
          out[(by + y) * w + bx + x] = static_cast<T>(res[y * 8 + x] + (level_shift ? 128.0 : 0.0));
    }
  return out;
}

// --------------------------------------------------------------- zigzag

/// zigzag position -> natural (row*8 + col) index, JPEG order.
inline constexpr std::array<std::size_t, 64> kZigzag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,  12, 19, 26, 33, 40, 48,
    41, 34, 27, 20, 13, 6,  7,  14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23,
    30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

template <typename V>
std::array<V, 64> zigzag_flatten(const std::array<V, 64>& block) {
  std::array<V, 64> out{};
  for (std::size_t i = 0; i < 64; ++i) out[i] = block[kZigzag[i]];
  return out;
}

template <typename V>
std::array<V, 64> zigzag_unflatten(const std::array<V, 64>& seq) {
  std::array<V, 64> out{};
  for (std::size_t i = 0; i < 64; ++i) out[kZigzag[i]] = seq[i];
  return out;
}

// ---------------------------------------------------------- restructure

/// Spectra of an already color-converted, grid-cropped YCbCr image.
template <Scalar T>
BlockSpectra<T> spectra_from_ycbcr(const PlanarImage<T>& ycc) {
  if (ycc.space != ColorSpace::ycbcr) throw UsageError("spectra: DCT is only applied to YCbCr images");
  if (ycc.height % kBlock != 0 || ycc.width % kBlock != 0 || ycc.height == 0 || ycc.width == 0)
    throw UsageError("spectra: image must be grid-cropped to multiples of 8");
  const std::size_t rows = ycc.height / kBlock, cols = ycc.width / kBlock;
  BlockSpectra<T> s{Tensor<T>({kChannels, kBands, rows, cols})};
  for (std::size_t c = 0; c < kChannels; ++c) {
    Tensor<T> plane({ycc.height, ycc.width}, ycc.planes[c]);
    const Tensor<T> coeffs = block_dct8(plane);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t q = 0; q < cols; ++q)
        for (std::size_t band = 0; band < kBands; ++band) {
          const std::size_t nat = kZigzag[band];
          s.coeffs[((c * kBands + band) * rows + r) * cols + q] =
              coeffs[(r * kBlock + nat / 8) * ycc.width + q * kBlock + nat % 8];
        }
  }
  return s;
}

/// RGB image -> YCbCr -> grid crop -> blockwise DCT -> zigzag -> [3×64×rows×cols].
template <Scalar T>
BlockSpectra<T> restructure(const PlanarImage<T>& rgb, const std::optional<BBox>& bbox = std::nullopt) {
  return spectra_from_ycbcr(crop_to_grid(rgb_to_ycbcr(rgb), bbox));
}

/// Inverse path back to the (cropped) YCbCr image.
template <Scalar T>
PlanarImage<T> inverse_restructure(const BlockSpectra<T>& s) {
  const std::size_t rows = s.block_rows(), cols = s.block_cols();
  PlanarImage<T> out(ColorSpace::ycbcr, rows * kBlock, cols * kBlock);
  for (std::size_t c = 0; c < kChannels; ++c) {
    Tensor<T> coeffs({out.height, out.width});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t q = 0; q < cols; ++q)
        for (std::size_t band = 0; band < kBands; ++band) {
          const std::size_t nat = kZigzag[band];
          coeffs[(r * kBlock + nat / 8) * out.width + q * kBlock + nat % 8] = s.at(c, band, r, q);
        }
    out.planes[c] = idct8(coeffs).values();
  }
  return out;
}

}  // namespace sfcl::freq
