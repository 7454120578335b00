#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <variant>
#include <vector>

#include "json.hpp"

#include "sfcl/nn.hpp"
#include "sfcl/synth.hpp"

namespace sfcl::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ------------------------------------------------------------------ PPM

/// Binary P6, maxval 255. Header tokens may be separated by whitespace and
/// '#' comments; exactly one whitespace byte follows maxval.
inline synth::RgbImage decode_ppm(const std::string& bytes, const std::string& what = "ppm") {
  std::size_t pos = 0;
  auto fail = [&](const std::string& m) { throw InputError(what + ": " + m); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0;
    const char* b = bytes.data() + pos;
    auto [p, ec] = std::from_chars(b, bytes.data() + bytes.size(), v);
    if (ec != std::errc() || p == b) fail("malformed header");
    pos += static_cast<std::size_t>(p - b);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') fail("not a binary PPM (P6)");
  pos = 2;
  const std::size_t w = read_uint(), h = read_uint(), maxval = read_uint();
  if (w == 0 || h == 0) fail("zero image dimension");
  if (maxval != 255) fail("only 8-bit PPM (maxval 255) is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) fail("missing whitespace after maxval");
  ++pos;
  if (bytes.size() - pos < w * h * 3) fail("truncated pixel data");
  synth::RgbImage img(freq::ColorSpace::rgb, h, w);
  for (std::size_t i = 0; i < w * h; ++i)
    for (std::size_t c = 0; c < 3; ++c) img.planes[c][i] = static_cast<unsigned char>(bytes[pos + i * 3 + c]);
  return img;
}

inline std::string encode_ppm(const synth::RgbImage& img) {
  if (img.space != freq::ColorSpace::rgb) throw UsageError("encode_ppm: image must be RGB");
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + img.width * img.height * 3);
  for (std::size_t i = 0; i < img.width * img.height; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(std::round(img.planes[c][i]), 0.0, 255.0);
      out[header + i * 3 + c] = static_cast<char>(static_cast<unsigned char>(v));
    }
  return out;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + p.string());
}

inline synth::RgbImage read_ppm(const fs::path& p) { return decode_ppm(read_file(p), p.string()); }
inline void write_ppm(const fs::path& p, const synth::RgbImage& img) { write_file(p, encode_ppm(img)); }

// ------------------------------------------------------------ manifests

struct ManifestEntry {
  std::string file;
  std::optional<int> label;
  std::optional<freq::BBox> bbox;
};

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(what + ": invalid JSON: " + e.what());
  }
}

inline freq::BBox bbox_from_json(const json& j, const std::string& what) {
  try {
    return freq::BBox{j.at("x").get<long>(), j.at("y").get<long>(), j.at("w").get<long>(), j.at("h").get<long>()};
  } catch (const json::exception& e) {
    throw InputError(what + ": bad bounding box: " + e.what());
  }
}

/// Bounding-box manifest: [{file, x, y, w, h}, ...].
inline std::vector<ManifestEntry> parse_bbox_manifest(const std::string& text) {
  const json j = parse_json(text, "bbox manifest");
  if (!j.is_array()) throw InputError("bbox manifest: expected a JSON array");
  std::vector<ManifestEntry> out;
  for (const auto& rec : j) {
    if (!rec.is_object() || !rec.contains("file")) throw InputError("bbox manifest: record without 'file'");
    out.push_back(ManifestEntry{rec["file"].get<std::string>(), std::nullopt, bbox_from_json(rec, "bbox manifest")});
  }
  return out;
}

/// Dataset manifest: [{file, label, bbox?: {x, y, w, h}}, ...].
inline std::vector<ManifestEntry> parse_dataset_manifest(const std::string& text) {
  const json j = parse_json(text, "dataset manifest");
  if (!j.is_array()) throw InputError("dataset manifest: expected a JSON array");
  std::vector<ManifestEntry> out;
  for (const auto& rec : j) {
    if (!rec.is_object() || !rec.contains("file") || !rec.contains("label"))
      throw InputError("dataset manifest: each record needs 'file' and 'label'");
    ManifestEntry e;
    e.file = rec["file"].get<std::string>();
    e.label = rec["label"].get<int>();
    if (*e.label != 0 && *e.label != 1) throw InputError("dataset manifest: label must be 0 or 1 for " + e.file);
    if (rec.contains("bbox") && !rec["bbox"].is_null()) e.bbox = bbox_from_json(rec["bbox"], "dataset manifest");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string dataset_manifest_json(const std::vector<synth::Sample>& samples) {
  json j = json::array();
  for (const auto& s : samples) {
    json rec{{"file", s.name}, {"label", s.label}};
    if (s.bbox) rec["bbox"] = json{{"x", s.bbox->x}, {"y", s.bbox->y}, {"w", s.bbox->w}, {"h", s.bbox->h}};
    j.push_back(std::move(rec));
  }
  return j.dump(2) + "\n";
}

/// Writes every sample as a PPM plus manifest.json into `dir`.
inline void write_dataset(const fs::path& dir, const std::vector<synth::Sample>& samples) {
  fs::create_directories(dir);
  for (const auto& s : samples) write_ppm(dir / s.name, s.image);
  write_file(dir / "manifest.json", dataset_manifest_json(samples));
}

inline std::vector<synth::Sample> read_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) throw InputError("dataset: no manifest.json in " + dir.string());
  std::vector<synth::Sample> out;
  for (auto& e : parse_dataset_manifest(read_file(manifest)))
    out.push_back(synth::Sample{e.file, read_ppm(dir / e.file), e.bbox, *e.label});
  if (out.empty()) throw InputError("dataset: manifest lists no images");
  return out;
}

// ----------------------------------------------------------- model file

/// One tensor of a model file, kept in either precision.
struct StoredTensor {
  std::string name;
  Shape dims;
  std::variant<std::vector<float>, std::vector<double>> data;

  std::uint8_t dtype() const { return data.index() == 0 ? 0 : 1; }
};

inline constexpr char kModelMagic[4] = {'S', 'F', 'C', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {
template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw InputError("model file: truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};
}  // namespace detail

inline std::string encode_model(const std::vector<StoredTensor>& tensors) {
  std::string out(kModelMagic, 4);
  detail::put_le<std::uint32_t>(out, kModelVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw UsageError("model file: tensor name too long");
    if (t.dims.size() > 0xFF) throw UsageError("model file: tensor rank too large");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(t.dtype()));
    out.push_back(static_cast<char>(t.dims.size()));
    for (std::size_t d : t.dims) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    std::visit(
        [&](const auto& vec) {
          if (vec.size() != numel(t.dims)) throw ShapeError("model file: tensor " + t.name + " data/dims mismatch");
          for (auto v : vec) {
            if constexpr (std::is_same_v<std::decay_t<decltype(v)>, float>)
              detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
            else
              detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
          }
        },
        t.data);
  }
  return out;
}

inline std::vector<StoredTensor> decode_model(const std::string& bytes) {
  detail::Reader r(bytes);
  if (r.take(4) != std::string(kModelMagic, 4)) throw InputError("model file: bad magic (expected SFCL)");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelVersion) throw InputError("model file: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<StoredTensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    StoredTensor t;
    t.name = r.take(r.get<std::uint16_t>());
    const auto dtype = r.get<std::uint8_t>();
    const auto ndim = r.get<std::uint8_t>();
    for (std::uint8_t i = 0; i < ndim; ++i) t.dims.push_back(r.get<std::uint32_t>());
    const std::size_t n = numel(t.dims);
    if (dtype == 0) {
      std::vector<float> v(n);
      for (auto& x : v) x = std::bit_cast<float>(r.get<std::uint32_t>());
      t.data = std::move(v);
    } else if (dtype == 1) {
      std::vector<double> v(n);
      for (auto& x : v) x = std::bit_cast<double>(r.get<std::uint64_t>());
      t.data = std::move(v);
    } else {
      throw InputError("model file: unknown dtype " + std::to_string(dtype) + " for " + t.name);
    }
    out.push_back(std::move(t));
  }
  if (!r.done()) throw InputError("model file: trailing bytes");
  return out;
}

template <Scalar T>
std::vector<StoredTensor> snapshot(const nn::ParamStore<T>& store) {
  std::vector<StoredTensor> out;
  for (const auto& e : store.entries()) out.push_back(StoredTensor{e.name, e.var.dims(), e.var.value().values()});
  return out;
}

/// Copies stored tensors into `store`. Names, order, dims and dtype must
/// match exactly.
template <Scalar T>
void restore(nn::ParamStore<T>& store, const std::vector<StoredTensor>& tensors) {
  const auto& entries = store.entries();
  if (tensors.size() != entries.size())
    throw InputError("model file: holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                     std::to_string(entries.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    auto var = entries[i].var;
    if (t.name != entries[i].name) throw InputError("model file: tensor " + std::to_string(i) + " is '" + t.name + "', expected '" + entries[i].name + "'");
    if (t.dims != var.dims()) throw InputError("model file: tensor " + t.name + " has dims " + shape_str(t.dims) + ", expected " + shape_str(var.dims()));
    const auto* vec = std::get_if<std::vector<T>>(&t.data);
    if (!vec) throw InputError("model file: tensor " + t.name + " has the wrong precision for this model");
    var.mutable_value().values() = *vec;
  }
}

template <Scalar T>
void save_model(const fs::path& p, const nn::ParamStore<T>& store) {
  write_file(p, encode_model(snapshot(store)));
}

template <Scalar T>
void load_model(const fs::path& p, nn::ParamStore<T>& store) {
  restore(store, decode_model(read_file(p)));
}

// ------------------------------------------------------------------ CSV

/// Shortest round-trip decimal form, independent of the C++ locale.
inline std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw IoError("number formatting failed");
  return std::string(buf, p);
}

/// Accumulates rows and writes them with ',' separators and LF endings.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) { add_row(header); }

  void add_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += escape(cells[i]);
    }
    text_ += '\n';
  }

  const std::string& str() const { return text_; }

 private:
  static std::string escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  }
  std::string text_;
};

}  // namespace sfcl::io
