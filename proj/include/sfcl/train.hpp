#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sfcl/metrics.hpp"
#include "sfcl/model.hpp"
#include "sfcl/optim.hpp"
#include "sfcl/sida.hpp"
#include "sfcl/synth.hpp"

namespace sfcl::train {

enum class Precision { single, double_ };

inline const char* to_string(Precision p) { return p == Precision::single ? "single" : "double"; }

inline Precision precision_from_string(const std::string& s) {
  if (s == "single" || s == "f32") return Precision::single;
  if (s == "double" || s == "f64") return Precision::double_;
  throw ConfigError("train: unknown precision '" + s + "' (expected single or double)");
}

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-8;
  std::size_t batch = 20;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  Precision precision = Precision::single;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be finite and non-negative");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
    if (batch < 2) throw ConfigError("train: batch must be at least 2 (batch norm needs batch statistics)");
    if (epochs == 0) throw ConfigError("train: epochs must be positive");
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double acc = 0.0;
};

// ------------------------------------------------------------ threading

/// Worker cap from SFCL_THREADS, else hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("SFCL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    throw ConfigError(std::string("SFCL_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs f(i) for i in [0, n). Each index owns its output slot, so results
/// do not depend on scheduling. The lowest-index exception is rethrown.
template <typename F>
void parallel_for(std::size_t n, F&& f, std::size_t workers = worker_count()) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ------------------------------------------------------------- features

/// Everything the model consumes for one image, in double precision.
struct SampleFeatures {
  synth::RgbImage crop;                  // grid-aligned region, 0..255
  freq::BlockSpectra<double> spectra;    // [3 × 64 × Hb × Wb]
  sida::SidaDescriptor<double> descriptor;
};

inline SampleFeatures extract_features(const synth::RgbImage& rgb, const std::optional<freq::BBox>& bbox) {
  SampleFeatures f;
  f.crop = freq::crop_to_grid(rgb, bbox);
  f.spectra = freq::spectra_from_ycbcr(freq::rgb_to_ycbcr(f.crop));
  f.descriptor = sida::sida_from_spectra(f.spectra);
  return f;
}

template <Scalar T>
struct FeatureSet {
  Tensor<T> images;       // [N × 3 × H × W] in [0,1]
  Tensor<T> spectra;      // [N × 3 × 64 × Hb × Wb]
  Tensor<T> descriptors;  // [N × 2304]
  std::vector<int> labels;
  std::vector<std::string> names;

  std::size_t size() const { return labels.size(); }
};

/// Extracts features for every sample (in parallel) and stacks them. All
/// crops must share one size.
template <Scalar T>
FeatureSet<T> prepare_features(const std::vector<synth::Sample>& samples) {
  if (samples.empty()) throw InputError("features: empty dataset");
  std::vector<SampleFeatures> feats(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    try {
      feats[i] = extract_features(samples[i].image, samples[i].bbox);
    } catch (const InputError& e) {
      throw InputError(samples[i].name + ": " + e.what());
    }
  });

  const std::size_t n = samples.size(), h = feats[0].crop.height, w = feats[0].crop.width;
  for (std::size_t i = 1; i < n; ++i)
    if (feats[i].crop.height != h || feats[i].crop.width != w)
      throw InputError("features: " + samples[i].name + " crops to " + std::to_string(feats[i].crop.height) + "x" +
                       std::to_string(feats[i].crop.width) + " but " + samples[0].name + " crops to " + std::to_string(h) +
                       "x" + std::to_string(w) + "; training needs one region size");
  const std::size_t hb = h / freq::kBlock, wb = w / freq::kBlock;
  FeatureSet<T> out;
  out.images = Tensor<T>({n, 3, h, w});
  out.spectra = Tensor<T>({n, freq::kChannels, freq::kBands, hb, wb});
  out.descriptors = Tensor<T>({n, sida::kDescriptorLength});
  const std::size_t img_len = 3 * h * w, spec_len = freq::kChannels * freq::kBands * hb * wb;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < h * w; ++p) out.images[i * img_len + c * h * w + p] = static_cast<T>(feats[i].crop.planes[c][p] / 255.0);
    for (std::size_t k = 0; k < spec_len; ++k) out.spectra[i * spec_len + k] = static_cast<T>(feats[i].spectra.coeffs[k]);
    for (std::size_t k = 0; k < sida::kDescriptorLength; ++k)
      out.descriptors[i * sida::kDescriptorLength + k] = static_cast<T>(feats[i].descriptor.values[k]);
    out.labels.push_back(samples[i].label);
    out.names.push_back(samples[i].name);
  }
  return out;
}

namespace detail {
template <Scalar T>
Tensor<T> gather_rows(const Tensor<T>& src, std::span<const std::size_t> idx) {
  Shape dims = src.dims();
  const std::size_t row = src.size() / dims[0];
  dims[0] = idx.size();
  Tensor<T> out(dims);
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(src.data() + idx[k] * row, row, out.data() + k * row);
  return out;
}
}  // namespace detail

template <Scalar T>
ModelInput<T> gather(const FeatureSet<T>& set, std::span<const std::size_t> idx) {
  return ModelInput<T>{detail::gather_rows(set.images, idx), detail::gather_rows(set.spectra, idx),
                       detail::gather_rows(set.descriptors, idx)};
}

// ------------------------------------------------------------- training

/// Fits the descriptor normalizer on `data`, then runs Adam over shuffled
/// mini-batches. A trailing batch of one sample is skipped (batch norm).
/// Deterministic for a fixed (model seed, cfg, data).
template <Scalar T>
std::vector<EpochLog> train(SfclModel<T>& model, const FeatureSet<T>& data, const TrainConfig& cfg,
                            const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (data.size() < 2) throw InputError("train: need at least two samples");
  model.fit_descriptor_normalizer(data.descriptors);
  optim::Adam<T> adam(model.params(), optim::AdamConfig{.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng rng(cfg.seed ^ 0x5fc15eedULL);
  std::vector<std::size_t> order(data.size());
  std::vector<EpochLog> logs;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t start = 0, step = 0; start < order.size(); start += cfg.batch, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      if (end - start < 2) break;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<T> labels;
      for (std::size_t i : idx) labels.push_back(static_cast<T>(data.labels[i]));

      model.params().zero_grad();
      Tape<T> tape;
      TapeScope<T> scope(tape);
      const auto out = model.forward(gather(data, idx), Mode::train);
      const std::string where = "epoch " + std::to_string(epoch) + " step " + std::to_string(step + 1);
      Var<T> loss;
      try {
        loss = bce_with_logits(out.logits, labels);
      } catch (const NumericError& e) {
        throw NumericError("train: diverged at " + where + ": " + e.what());
      }
      const double l = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(l)) throw NumericError("train: loss is not finite at " + where);
      tape.backward(loss);
      adam.step();

      loss_sum += l * static_cast<double>(idx.size());
      seen += idx.size();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const int pred = out.logits.value()[k] >= T{0} ? 1 : 0;
        correct += pred == data.labels[idx[k]] ? 1 : 0;
      }
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(seen), static_cast<double>(correct) / static_cast<double>(seen)};
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

/// Fake-class probabilities in inference mode, in sample order.
template <Scalar T>
std::vector<double> predict(const SfclModel<T>& model, const FeatureSet<T>& data, std::size_t batch = 50) {
  std::vector<double> probs;
  probs.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) idx.push_back(i);
    const auto out = model.forward(gather(data, idx), Mode::infer);
    for (std::size_t k = 0; k < idx.size(); ++k) probs.push_back(fusion::probability<double>(out.logits.value()[k]));
  }
  return probs;
}

struct EvalResult {
  double acc = 0.0;
  double auc = 0.0;
  std::size_t count = 0;
};

template <Scalar T>
EvalResult evaluate(const SfclModel<T>& model, const FeatureSet<T>& data) {
  const auto probs = predict(model, data);
  return EvalResult{metrics::accuracy(probs, data.labels), metrics::auc(probs, data.labels), data.size()};
}

}  // namespace sfcl::train
