#pragma once

#include <set>
#include <string>

#include "json.hpp"
#include "sfcl/model.hpp"
#include "sfcl/synth.hpp"
#include "sfcl/train.hpp"

// JSON run configuration. Parsing is strict: every object is checked for
// keys it does not know, and the error names the full key path.

namespace sfcl {

enum class Profile { desk, full, tiny };

inline Profile profile_from_string(const std::string& s) {
  if (s == "desk") return Profile::desk;
  if (s == "full") return Profile::full;
  if (s == "tiny") return Profile::tiny;
  throw ConfigError("config: unknown profile '" + s + "' (expected desk, full or tiny)");
}

inline const char* to_string(Profile p) {
  switch (p) {
    case Profile::desk: return "desk";
    case Profile::full: return "full";
    case Profile::tiny: return "tiny";
  }
  return "?";
}

inline ModelConfig model_config_for(Profile p) {
  switch (p) {
    case Profile::desk: return ModelConfig::desk();
    case Profile::tiny: return ModelConfig::tiny();
    case Profile::full: break;
  }
  ModelConfig c;
  c.link();
  return c;
}

struct RunConfig {
  Profile profile = Profile::desk;
  ModelConfig model = ModelConfig::desk();
  train::TrainConfig train;
  synth::SynthConfig synth;

  void validate() const {
    model.sbcm.validate();
    model.cnnf.validate();
    model.backbone.validate();
    model.faae.validate();
    model.hcma.validate();
    train.validate();
    synth.validate();
    if (!(model.spectra_scale > 0.0)) throw ConfigError("config: spectra_scale must be positive");
  }
};

namespace detail {

using json = nlohmann::json;

/// Reads known keys out of one JSON object and rejects the rest.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + display() + "' must be a JSON object");
  }

  template <typename V>
  void get(const std::string& key, V& dst) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      dst = it->template get<V>();
    } catch (const json::exception&) {
      throw ConfigError("config: key '" + child(key) + "' has the wrong type");
    }
  }

  /// Calls f(StrictObject) when `key` is present.
  template <typename F>
  void object(const std::string& key, F&& f) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    StrictObject sub(*it, child(key));
    f(sub);
    sub.finish();
  }

  template <typename F>
  void array(const std::string& key, F&& f) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_array()) throw ConfigError("config: key '" + child(key) + "' must be an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      StrictObject sub((*it)[i], child(key) + "[" + std::to_string(i) + "]");
      f(sub, i);
      sub.finish();
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + child(k) + "'");
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  std::string child(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_stages(StrictObject& o, const std::string& key, std::vector<spatial::StageConfig>& dst) {
  bool present = false;
  std::vector<spatial::StageConfig> stages;
  o.array(key, [&](StrictObject& s, std::size_t) {
    present = true;
    spatial::StageConfig st;
    s.get("out", st.out);
    s.get("stride", st.stride);
    stages.push_back(st);
  });
  if (present) dst = stages;
}

}  // namespace detail

/// Parses a run configuration. The "profile" key (default "desk") picks the
/// base model widths; every other key overrides one field.
inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  detail::StrictObject root(j, "");
  RunConfig rc;
  std::string profile = "desk";
  root.get("profile", profile);
  rc.profile = profile_from_string(profile);
  rc.model = model_config_for(rc.profile);
  ModelConfig& m = rc.model;

  root.get("spectra_scale", m.spectra_scale);
  root.object("sbcm", [&](detail::StrictObject& o) {
    o.get("kernels", m.sbcm.kernels);
    o.get("strides", m.sbcm.strides);
    o.get("widths", m.sbcm.widths);
    o.get("batchnorm", m.sbcm.batchnorm);
  });
  root.object("cnnf", [&](detail::StrictObject& o) {
    bool present = false;
    std::vector<local::SeparableBlockConfig> blocks;
    o.array("blocks", [&](detail::StrictObject& b, std::size_t) {
      present = true;
      local::SeparableBlockConfig bc;
      b.get("out", bc.out);
      b.get("stride", bc.stride);
      blocks.push_back(bc);
    });
    if (present) m.cnnf.blocks = blocks;
    o.get("depthwise_kernel", m.cnnf.depthwise_kernel);
  });
  root.object("backbone", [&](detail::StrictObject& o) {
    detail::read_stages(o, "stem", m.backbone.stem);
    detail::read_stages(o, "deep", m.backbone.deep);
    o.get("kernel", m.backbone.kernel);
    o.get("deep_kernel", m.backbone.deep_kernel);
    o.get("head_dim", m.backbone.head_dim);
  });
  root.object("faae", [&](detail::StrictObject& o) {
    o.get("attn_dim", m.faae.attn_dim);
    o.get("gamma_init", m.faae.gamma_init);
    o.get("zero_init_out", m.faae.zero_init_out);
  });
  root.object("hcma", [&](detail::StrictObject& o) {
    o.get("embed_dim", m.hcma.embed_dim);
    o.get("heads", m.hcma.heads);
    o.get("tokens", m.hcma.tokens);
  });
  root.object("ablation", [&](detail::StrictObject& o) {
    o.get("use_sbcm", m.ablation.use_sbcm);
    o.get("use_hcmf", m.ablation.use_hcmf);
    o.get("use_sida_gate", m.ablation.use_sida_gate);
  });
  root.object("train", [&](detail::StrictObject& o) {
    o.get("lr", rc.train.lr);
    o.get("weight_decay", rc.train.weight_decay);
    o.get("batch", rc.train.batch);
    o.get("epochs", rc.train.epochs);
    o.get("seed", rc.train.seed);
    std::string precision = train::to_string(rc.train.precision);
    o.get("precision", precision);
    rc.train.precision = train::precision_from_string(precision);
  });
  root.object("synth", [&](detail::StrictObject& o) {
    o.get("count", rc.synth.count);
    o.get("height", rc.synth.height);
    o.get("width", rc.synth.width);
    o.get("seed", rc.synth.seed);
    o.get("noise_sigma", rc.synth.noise_sigma);
    std::string recipe = synth::to_string(rc.synth.recipe);
    o.get("recipe", recipe);
    rc.synth.recipe = synth::recipe_from_string(recipe);
  });
  root.finish();
  m.link();
  rc.validate();
  return rc;
}

/// Full configuration with every field spelled out; parses back to itself.
inline nlohmann::json run_config_json(const RunConfig& rc) {
  using nlohmann::json;
  const ModelConfig& m = rc.model;
  auto stages = [](const std::vector<spatial::StageConfig>& v) {
    json a = json::array();
    for (const auto& s : v) a.push_back({{"out", s.out}, {"stride", s.stride}});
    return a;
  };
  json blocks = json::array();
  for (const auto& b : m.cnnf.blocks) blocks.push_back({{"out", b.out}, {"stride", b.stride}});
  return json{
      {"profile", to_string(rc.profile)},
      {"spectra_scale", m.spectra_scale},
      {"sbcm", {{"kernels", m.sbcm.kernels}, {"strides", m.sbcm.strides}, {"widths", m.sbcm.widths}, {"batchnorm", m.sbcm.batchnorm}}},
      {"cnnf", {{"blocks", blocks}, {"depthwise_kernel", m.cnnf.depthwise_kernel}}},
      {"backbone",
       {{"stem", stages(m.backbone.stem)},
        {"deep", stages(m.backbone.deep)},
        {"kernel", m.backbone.kernel},
        {"deep_kernel", m.backbone.deep_kernel},
        {"head_dim", m.backbone.head_dim}}},
      {"faae", {{"attn_dim", m.faae.attn_dim}, {"gamma_init", m.faae.gamma_init}, {"zero_init_out", m.faae.zero_init_out}}},
      {"hcma", {{"embed_dim", m.hcma.embed_dim}, {"heads", m.hcma.heads}, {"tokens", m.hcma.tokens}}},
      {"ablation",
       {{"use_sbcm", m.ablation.use_sbcm}, {"use_hcmf", m.ablation.use_hcmf}, {"use_sida_gate", m.ablation.use_sida_gate}}},
      {"train",
       {{"lr", rc.train.lr},
        {"weight_decay", rc.train.weight_decay},
        {"batch", rc.train.batch},
        {"epochs", rc.train.epochs},
        {"seed", rc.train.seed},
        {"precision", train::to_string(rc.train.precision)}}},
      {"synth",
       {{"count", rc.synth.count},
        {"height", rc.synth.height},
        {"width", rc.synth.width},
        {"seed", rc.synth.seed},
        {"recipe", synth::to_string(rc.synth.recipe)},
        {"noise_sigma", rc.synth.noise_sigma}}},
  };
}

}  // namespace sfcl
