#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sfcl/freq.hpp"

// Scale-invariant differential analysis: adjacent-block and adjacent-band
// differences of the block spectra, summarized by four moments of their
// absolute values per (channel, band). The result has a fixed length of
// 2304 whatever the image size.

namespace sfcl::sida {

enum class DiffMode { row = 0, col = 1, intra = 2 };
enum class Stat { mean = 0, std = 1, skew = 2, kurt = 3 };

inline constexpr std::size_t kModes = 3;
inline constexpr std::size_t kStats = 4;
inline constexpr std::size_t kPerMode = freq::kChannels * freq::kBands;  // 192
inline constexpr std::size_t kPerStat = kModes * kPerMode;               // 576
inline constexpr std::size_t kDescriptorLength = kStats * kPerStat;      // 2304

inline const char* to_string(DiffMode m) {
  switch (m) {
    case DiffMode::row: return "row";
    case DiffMode::col: return "col";
    case DiffMode::intra: return "intra";
  }
  return "?";
}

template <Scalar T>
struct DifferentialMap {
  DiffMode mode = DiffMode::row;
  Tensor<T> values;  // [3 × 64 × rows' × cols']
};

/// Position of (stat, mode, channel, band) in the descriptor: stat-major,
/// then mode, channel, band.
constexpr std::size_t descriptor_index(Stat s, DiffMode m, std::size_t channel, std::size_t band) {
  return static_cast<std::size_t>(s) * kPerStat + static_cast<std::size_t>(m) * kPerMode + channel * freq::kBands + band;
}

template <Scalar T>
struct SidaDescriptor {
  std::vector<T> values = std::vector<T>(kDescriptorLength, T{0});

  T at(Stat s, DiffMode m, std::size_t channel, std::size_t band) const {
    return values[descriptor_index(s, m, channel, band)];
  }
};

template <Scalar T>
DifferentialMap<T> block_differential(const freq::BlockSpectra<T>& spectra, DiffMode mode) {
  const Tensor<T>& x = spectra.coeffs;
  if (x.rank() != 4 || x.dim(1) != freq::kBands)
    throw ShapeError("block_differential: spectra must be [C x 64 x rows x cols], got " + shape_str(x.dims()));
  const std::size_t ch = x.dim(0), bands = x.dim(1), rows = x.dim(2), cols = x.dim(3);
  DifferentialMap<T> out;
  out.mode = mode;
  switch (mode) {
    case DiffMode::row: {
      if (rows < 2) throw InputError("block_differential: row mode needs at least 2 block rows");
      out.values = Tensor<T>({ch, bands, rows - 1, cols});
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t b = 0; b < bands; ++b)
          for (std::size_t r = 0; r + 1 < rows; ++r)
            for (std::size_t q = 0; q < cols; ++q)
              out.values.at(c, b, r, q) = x.at(c, b, r + 1, q) - x.at(c, b, r, q);
      break;
    }
    case DiffMode::col: {
      if (cols < 2) throw InputError("block_differential: col mode needs at least 2 block columns");
      out.values = Tensor<T>({ch, bands, rows, cols - 1});
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t b = 0; b < bands; ++b)
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t q = 0; q + 1 < cols; ++q)
              out.values.at(c, b, r, q) = x.at(c, b, r, q + 1) - x.at(c, b, r, q);
      break;
    }
    case DiffMode::intra: {
      // 63 band differences, zero-padded back to 64.
      out.values = Tensor<T>({ch, bands, rows, cols});
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t b = 0; b + 1 < bands; ++b)
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t q = 0; q < cols; ++q)
              out.values.at(c, b, r, q) = x.at(c, b + 1, r, q) - x.at(c, b, r, q);
      break;
    }
  }
  return out;
}

/// Per-(channel, band) moments over the spatial extent of a map.
struct MomentStats {
  std::size_t channels = 0, bands = 0;
  std::vector<double> mean, std, skew, kurt;  // each channels*bands, channel-major
};

inline constexpr double kDegenerateStd = 1e-12;

/// Population moments of |values| over the trailing two axes. skew = m3/σ³,
/// kurt = m4/σ⁴ (not excess); both are 0 when σ < 1e-12.
template <Scalar T>
MomentStats moment_stats(const DifferentialMap<T>& map) {
  const Tensor<T>& v = map.values;
  if (v.rank() != 4) throw ShapeError("moment_stats: map must be rank 4, got " + shape_str(v.dims()));
  MomentStats s;
  s.channels = v.dim(0);
  s.bands = v.dim(1);
  const std::size_t n = v.dim(2) * v.dim(3);
  const std::size_t slots = s.channels * s.bands;
  s.mean.assign(slots, 0.0);
  s.std.assign(slots, 0.0);
  s.skew.assign(slots, 0.0);
  s.kurt.assign(slots, 0.0);
  for (std::size_t k = 0; k < slots; ++k) {
    const T* p = v.data() + k * n;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::abs(static_cast<double>(p[i]));
    const double mu = sum / static_cast<double>(n);
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = std::abs(static_cast<double>(p[i])) - mu;
      const double d2 = d * d;
      m2 += d2;
      m3 += d2 * d;
      m4 += d2 * d2;
    }
    m2 /= static_cast<double>(n);
    m3 /= static_cast<double>(n);
    m4 /= static_cast<double>(n);
    const double sd = std::sqrt(m2);
    s.mean[k] = mu;
    s.std[k] = sd;
    if (sd >= kDegenerateStd) {
      s.skew[k] = m3 / (sd * sd * sd);
      s.kurt[k] = m4 / (m2 * m2);
    }
  }
  return s;
}

/// Statistics for each differential mode, any of which may be missing.
struct ModeStats {
  std::optional<MomentStats> row, col, intra;
};

template <Scalar T>
SidaDescriptor<T> assemble_descriptor(const ModeStats& stats) {
  const std::array<const std::optional<MomentStats>*, 3> modes{&stats.row, &stats.col, &stats.intra};
  SidaDescriptor<T> d;
  for (std::size_t m = 0; m < kModes; ++m) {
    const auto& ms = *modes[m];
    if (!ms) throw UsageError(std::string("assemble_descriptor: missing ") + to_string(static_cast<DiffMode>(m)) + " statistics");
    if (ms->channels != freq::kChannels || ms->bands != freq::kBands)
      throw ShapeError("assemble_descriptor: statistics must cover 3 channels x 64 bands");
    const std::array<const std::vector<double>*, 4> by_stat{&ms->mean, &ms->std, &ms->skew, &ms->kurt};
    for (std::size_t s = 0; s < kStats; ++s)
      for (std::size_t k = 0; k < kPerMode; ++k)
        d.values[s * kPerStat + m * kPerMode + k] = static_cast<T>((*by_stat[s])[k]);
  }
  return d;
}

template <Scalar T>
SidaDescriptor<T> sida_from_spectra(const freq::BlockSpectra<T>& spectra) {
  if (spectra.block_rows() < 2 || spectra.block_cols() < 2)
    throw InputError("SIDA needs a region of at least 16x16 pixels after grid cropping");
  ModeStats st;
  st.row = moment_stats(block_differential(spectra, DiffMode::row));
  st.col = moment_stats(block_differential(spectra, DiffMode::col));
  st.intra = moment_stats(block_differential(spectra, DiffMode::intra));
  return assemble_descriptor<T>(st);
}

/// Descriptor of the bbox region at its original resolution.
template <Scalar T>
SidaDescriptor<T> sida_from_image(const freq::PlanarImage<T>& rgb, const std::optional<freq::BBox>& bbox = std::nullopt) {
  return sida_from_spectra(freq::restructure(rgb, bbox));
}

}  // namespace sfcl::sida
