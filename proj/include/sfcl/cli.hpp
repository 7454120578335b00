#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sfcl/checks.hpp"
#include "sfcl/config.hpp"
#include "sfcl/io.hpp"
#include "sfcl/train.hpp"

namespace sfcl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Process exit status for each error kind.
inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return 1;
    case ErrorKind::numeric: return 3;
    case ErrorKind::input:
    case ErrorKind::shape:
    case ErrorKind::config:
    case ErrorKind::io: return 2;
  }
  return 2;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Closest candidate within a small edit distance, if any.
inline std::optional<std::string> suggest(const std::string& word, const std::vector<std::string>& candidates) {
  std::optional<std::string> best;
  std::size_t best_d = std::max<std::size_t>(2, word.size() / 3) + 1;
  for (const auto& c : candidates) {
    const std::size_t d = edit_distance(word, c);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

namespace detail {

inline freq::BBox parse_bbox(const std::string& s) {
  std::vector<long> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stol(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("--bbox expects x,y,w,h integers, got '" + s + "'");
    }
  }
  if (v.size() != 4) throw UsageError("--bbox expects x,y,w,h integers, got '" + s + "'");
  return freq::BBox{v[0], v[1], v[2], v[3]};
}

/// Images of a directory: its manifest.json when present, else every .ppm
/// file in name order (full-image, unlabeled).
inline std::vector<io::ManifestEntry> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  if (fs::exists(dir / "manifest.json")) return io::parse_dataset_manifest(io::read_file(dir / "manifest.json"));
  std::vector<io::ManifestEntry> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back({e.path().filename().string(), std::nullopt, std::nullopt});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.file < b.file; });
  return out;
}

/// Descriptors of every entry, computed in parallel, in entry order.
inline std::vector<sida::SidaDescriptor<double>> descriptors_for(const fs::path& dir, const std::vector<io::ManifestEntry>& entries) {
  std::vector<sida::SidaDescriptor<double>> out(entries.size());
  train::parallel_for(entries.size(), [&](std::size_t i) {
    try {
      out[i] = sida::sida_from_image(io::read_ppm(dir / entries[i].file), entries[i].bbox);
    } catch (const InputError& e) {
      throw InputError(entries[i].file + ": " + e.what());
    }
  });
  return out;
}

inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-")
    out << text;
  else
    io::write_file(path, text);
}

inline RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return parse_run_config(io::read_file(path));
}

inline std::size_t channel_index(const std::string& s) {
  if (s == "Y" || s == "y" || s == "0") return 0;
  if (s == "Cb" || s == "cb" || s == "1") return 1;
  if (s == "Cr" || s == "cr" || s == "2") return 2;
  throw UsageError("--channel must be Y, Cb or Cr, got '" + s + "'");
}

template <Scalar T>
json run_training(const RunConfig& rc, const std::vector<synth::Sample>& samples, const std::string& model_path,
                  const std::string& log_path, std::ostream& out) {
  SfclModel<T> model(rc.model, rc.train.seed);
  const auto features = train::prepare_features<T>(samples);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw IoError("cannot write " + log_path);
  }
  const auto logs = train::train(model, features, rc.train, [&](const train::EpochLog& e) {
    const std::string line = json{{"epoch", e.epoch}, {"loss", e.loss}, {"acc", e.acc}}.dump() + "\n";
    out << line << std::flush;
    if (log) log << line << std::flush;
  });
  io::save_model(model_path, model.params());
  io::write_file(model_path + ".json", run_config_json(rc).dump(2) + "\n");
  return json{{"model", model_path}, {"samples", features.size()}, {"epochs", logs.size()},
              {"final_loss", logs.back().loss}, {"final_acc", logs.back().acc}};
}

template <Scalar T>
json run_eval(const RunConfig& rc, const std::string& model_path, const std::vector<synth::Sample>& samples,
              const std::string& predictions_path) {
  SfclModel<T> model(rc.model, rc.train.seed);
  io::load_model(model_path, model.params());
  const auto features = train::prepare_features<T>(samples);
  const auto probs = train::predict(model, features);
  if (!predictions_path.empty()) {
    io::CsvWriter csv({"file", "label", "prob_fake"});
    for (std::size_t i = 0; i < probs.size(); ++i)
      csv.add_row({features.names[i], std::to_string(features.labels[i]), io::format_number(probs[i])});
    io::write_file(predictions_path, csv.str());
  }
  return json{{"count", probs.size()}, {"acc", metrics::accuracy(probs, features.labels)},
              {"auc", metrics::auc(probs, features.labels)}};
}

}  // namespace detail

// ----------------------------------------------------------- exporters

/// |coefficient| of one band and channel per block, as an Hb×Wb CSV matrix.
inline std::string export_heatmap(const synth::RgbImage& img, const std::optional<freq::BBox>& bbox, long band, std::size_t channel) {
  if (band < 0 || band >= static_cast<long>(freq::kBands))
    throw UsageError("export-heatmap: band must be in [0, 63], got " + std::to_string(band));
  if (channel >= freq::kChannels) throw UsageError("export-heatmap: channel must be 0, 1 or 2");
  const auto spectra = freq::restructure(img, bbox);
  std::string text;
  for (std::size_t r = 0; r < spectra.block_rows(); ++r) {
    for (std::size_t c = 0; c < spectra.block_cols(); ++c) {
      if (c) text += ',';
      text += io::format_number(std::abs(spectra.at(channel, static_cast<std::size_t>(band), r, c)));
    }
    text += '\n';
  }
  return text;
}

/// Y-channel mean-statistic slice of a descriptor: row ‖ col ‖ intra, 192 values.
inline std::vector<double> sida_plot_slice(const sida::SidaDescriptor<double>& d) {
  std::vector<double> out;
  for (auto mode : {sida::DiffMode::row, sida::DiffMode::col, sida::DiffMode::intra})
    for (std::size_t b = 0; b < freq::kBands; ++b) out.push_back(d.values[sida::descriptor_index(sida::Stat::mean, mode, 0, b)]);
  return out;
}

inline std::string export_sida_plot(const std::vector<sida::SidaDescriptor<double>>& real,
                                    const std::vector<sida::SidaDescriptor<double>>& fake) {
  if (real.empty() || fake.empty()) throw UsageError("export-sida-plot: both image sets must be non-empty");
  auto average = [](const std::vector<sida::SidaDescriptor<double>>& set) {
    std::vector<double> acc(sida::kPerMode, 0.0);
    for (const auto& d : set) {
      const auto s = sida_plot_slice(d);
      for (std::size_t i = 0; i < s.size(); ++i) acc[i] += s[i];
    }
    for (auto& v : acc) v /= static_cast<double>(set.size());
    return acc;
  };
  const auto r = average(real), f = average(fake);
  io::CsvWriter csv({"index", "real_mean", "fake_mean", "diff"});
  for (std::size_t i = 0; i < r.size(); ++i)
    csv.add_row({std::to_string(i), io::format_number(r[i]), io::format_number(f[i]), io::format_number(f[i] - r[i])});
  return csv.str();
}

// ------------------------------------------------------------ dispatch

/// Runs one subcommand. argv[0] is the program name. Returns the exit code;
/// failures are reported as one JSON object per line on `err`.
inline int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"sfcl: frequency/spatial deepfake detector toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sfcl 1.0");

  std::string out_path, config_path, data_dir, image_path, bbox_str, model_path, log_path, images_dir, bboxes_path;
  std::string real_dir, fake_dir, recipe, channel = "Y", module, predictions_path;
  std::optional<std::size_t> count, height, width, epochs;
  std::optional<std::uint64_t> seed;
  long band = -1;
  std::uint64_t gc_seed = 0;
  std::size_t gc_coords = 600;

  auto* synth_cmd = app.add_subcommand("dataset-synth", "Generate a seeded synthetic real/fake dataset");
  synth_cmd->add_option("--out", out_path, "Output directory")->required();
  synth_cmd->add_option("--config", config_path, "Run config JSON (synth section)");
  synth_cmd->add_option("--count", count, "Images per class");
  synth_cmd->add_option("--height", height, "Image height");
  synth_cmd->add_option("--width", width, "Image width");
  synth_cmd->add_option("--seed", seed, "Generator seed");
  synth_cmd->add_option("--recipe", recipe, "resample | blend | mixed");

  auto* spectra_cmd = app.add_subcommand("extract-spectra", "Write the block DCT spectra of one image as CSV");
  spectra_cmd->add_option("--image", image_path, "PPM image")->required();
  spectra_cmd->add_option("--bbox", bbox_str, "Region x,y,w,h");
  spectra_cmd->add_option("--out", out_path, "Output CSV (default stdout)");

  auto* sida_cmd = app.add_subcommand("features-sida", "Write 2304-d SIDA descriptors as CSV");
  sida_cmd->add_option("--images", images_dir, "Image directory")->required();
  sida_cmd->add_option("--bboxes", bboxes_path, "Bounding box manifest JSON");
  sida_cmd->add_option("--out", out_path, "Output CSV (default stdout)");

  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  train_cmd->add_option("--config", config_path, "Run config JSON");
  train_cmd->add_option("--data", data_dir, "Dataset directory with manifest.json")->required();
  train_cmd->add_option("--out", model_path, "Model file to write")->required();
  train_cmd->add_option("--log", log_path, "JSON-lines training log");
  train_cmd->add_option("--epochs", epochs, "Override train.epochs");
  train_cmd->add_option("--seed", seed, "Override train.seed");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained model (Acc, AUC)");
  eval_cmd->add_option("--model", model_path, "Model file")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory with manifest.json")->required();
  eval_cmd->add_option("--config", config_path, "Run config JSON (default: <model>.json)");
  eval_cmd->add_option("--predictions", predictions_path, "Per-image probability CSV");

  auto* heat_cmd = app.add_subcommand("export-heatmap", "Per-block |DCT coefficient| matrix for one band");
  heat_cmd->add_option("--image", image_path, "PPM image")->required();
  heat_cmd->add_option("--bbox", bbox_str, "Region x,y,w,h (default full image)");
  heat_cmd->add_option("--band", band, "Zigzag band 0..63")->required();
  heat_cmd->add_option("--channel", channel, "Y | Cb | Cr");
  heat_cmd->add_option("--out", out_path, "Output CSV (default stdout)");

  auto* plot_cmd = app.add_subcommand("export-sida-plot", "Average Y-channel SIDA means of two image sets");
  plot_cmd->add_option("--real", real_dir, "Directory of real images")->required();
  plot_cmd->add_option("--fake", fake_dir, "Directory of fake images")->required();
  plot_cmd->add_option("--out", out_path, "Output CSV (default stdout)");

  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check of one module");
  gc_cmd->add_option("--module", module, "sbcm | cnnf | backbone | faae | hcma | gate | classifier | model")->required();
  gc_cmd->add_option("--seed", gc_seed, "Seed");
  gc_cmd->add_option("--coords", gc_coords, "Coordinates probed (0 = all)");

  auto fail = [&](ErrorKind kind, const std::string& message, const std::optional<std::string>& hint = std::nullopt) {
    json j{{"error", to_string(kind)}, {"message", message}};
    if (hint) j["suggestion"] = *hint;
    err << j.dump() << "\n";
    return exit_code(kind);
  };

  // Unknown flags get a suggestion before CLI11 sees them.
  if (argv.size() >= 2) {
    std::vector<std::string> subnames;
    for (auto* s : app.get_subcommands({})) subnames.push_back(s->get_name());
    const std::string& name = argv[1];
    CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands({}))
      if (s->get_name() == name) sub = s;
    if (!sub && name.rfind("-", 0) != 0) {
      auto hint = suggest(name, subnames);
      return fail(ErrorKind::usage, "unknown subcommand '" + name + "'" + (hint ? "; did you mean '" + *hint + "'?" : ""), hint);
    }
    if (sub) {
      std::vector<std::string> flags{"--help"};
      for (const auto* opt : sub->get_options())
        for (const auto& l : opt->get_lnames()) flags.push_back("--" + l);
      for (std::size_t i = 2; i < argv.size(); ++i) {
        const std::string& a = argv[i];
        if (a.rfind("--", 0) != 0) continue;
        const std::string flag = a.substr(0, a.find('='));
        if (std::find(flags.begin(), flags.end(), flag) != flags.end()) continue;
        auto hint = suggest(flag, flags);
        return fail(ErrorKind::usage,
                    "unknown flag '" + flag + "' for " + name + (hint ? "; did you mean '" + *hint + "'?" : ""), hint);
      }
    }
  }

  try {
    std::vector<std::string> rev(argv.rbegin(), argv.rend() - 1);
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return fail(ErrorKind::usage, e.what());
  }

  try {
    if (*synth_cmd) {
      RunConfig rc = detail::load_config(config_path);
      synth::SynthConfig sc = rc.synth;
      if (count) sc.count = *count;
      if (height) sc.height = *height;
      if (width) sc.width = *width;
      if (seed) sc.seed = *seed;
      if (!recipe.empty()) sc.recipe = synth::recipe_from_string(recipe);
      const auto samples = synth::synth_generate(sc);
      io::write_dataset(out_path, samples);
      out << json{{"dir", out_path}, {"real", sc.count}, {"fake", sc.count}, {"recipe", synth::to_string(sc.recipe)}}.dump() << "\n";
    } else if (*spectra_cmd) {
      std::optional<freq::BBox> bbox;
      if (!bbox_str.empty()) bbox = detail::parse_bbox(bbox_str);
      const auto s = freq::restructure(io::read_ppm(image_path), bbox);
      io::CsvWriter csv({"channel", "band", "block_row", "block_col", "coeff"});
      for (std::size_t c = 0; c < freq::kChannels; ++c)
        for (std::size_t b = 0; b < freq::kBands; ++b)
          for (std::size_t r = 0; r < s.block_rows(); ++r)
            for (std::size_t k = 0; k < s.block_cols(); ++k)
              csv.add_row({std::to_string(c), std::to_string(b), std::to_string(r), std::to_string(k), io::format_number(s.at(c, b, r, k))});
      detail::emit(out_path, csv.str(), out);
    } else if (*sida_cmd) {
      const auto entries = bboxes_path.empty() ? detail::list_images(images_dir) : io::parse_bbox_manifest(io::read_file(bboxes_path));
      if (entries.empty()) throw InputError("features-sida: no images found");
      const auto descs = detail::descriptors_for(images_dir, entries);
      // A label column appears only when every image comes with a label.
      const bool labeled = std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.label.has_value(); });
      std::vector<std::string> header{"file"};
      if (labeled) header.push_back("label");
      for (std::size_t k = 0; k < sida::kDescriptorLength; ++k) header.push_back("d" + std::to_string(k));
      io::CsvWriter csv(header);
      for (std::size_t i = 0; i < entries.size(); ++i) {
        std::vector<std::string> row{entries[i].file};
        if (labeled) row.push_back(std::to_string(*entries[i].label));
        for (double v : descs[i].values) row.push_back(io::format_number(v));
        csv.add_row(row);
      }
      detail::emit(out_path, csv.str(), out);
    } else if (*train_cmd) {
      RunConfig rc = detail::load_config(config_path);
      if (epochs) rc.train.epochs = *epochs;
      if (seed) rc.train.seed = *seed;
      rc.validate();
      const auto samples = io::read_dataset(data_dir);
      const json summary = rc.train.precision == train::Precision::single
                               ? detail::run_training<float>(rc, samples, model_path, log_path, out)
                               : detail::run_training<double>(rc, samples, model_path, log_path, out);
      out << summary.dump() << "\n";
    } else if (*eval_cmd) {
      if (config_path.empty()) {
        config_path = model_path + ".json";
        if (!fs::exists(config_path)) throw InputError("eval: no --config given and " + config_path + " does not exist");
      }
      const RunConfig rc = detail::load_config(config_path);
      const auto samples = io::read_dataset(data_dir);
      const json result = rc.train.precision == train::Precision::single
                              ? detail::run_eval<float>(rc, model_path, samples, predictions_path)
                              : detail::run_eval<double>(rc, model_path, samples, predictions_path);
      out << result.dump() << "\n";
    } else if (*heat_cmd) {
      std::optional<freq::BBox> bbox;
      if (!bbox_str.empty()) bbox = detail::parse_bbox(bbox_str);
      const std::size_t ch = detail::channel_index(channel);
      if (band < 0 || band > 63) throw UsageError("export-heatmap: band must be in [0, 63], got " + std::to_string(band));
      detail::emit(out_path, export_heatmap(io::read_ppm(image_path), bbox, band, ch), out);
    } else if (*plot_cmd) {
      const auto real_entries = detail::list_images(real_dir), fake_entries = detail::list_images(fake_dir);
      if (real_entries.empty() || fake_entries.empty()) throw UsageError("export-sida-plot: both image sets must be non-empty");
      detail::emit(out_path,
                   export_sida_plot(detail::descriptors_for(real_dir, real_entries), detail::descriptors_for(fake_dir, fake_entries)),
                   out);
    } else if (*gc_cmd) {
      const auto r = checks::module_gradcheck(module, gc_seed, gc_coords);
      const bool pass = r.max_rel_err < checks::kGradTolerance;
      out << json{{"module", module}, {"seed", gc_seed}, {"coords", r.coords}, {"max_rel_err", r.max_rel_err},
                  {"tolerance", checks::kGradTolerance}, {"pass", pass}}
                 .dump()
          << "\n";
      if (!pass) return fail(ErrorKind::numeric, "gradcheck: " + module + " max relative error " + io::format_number(r.max_rel_err) + " exceeds 1e-4");
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(ErrorKind::io, e.what());
  } catch (const std::exception& e) {
    return fail(ErrorKind::input, e.what());
  }
  return 0;
}

}  // namespace sfcl::cli
