#include <gtest/gtest.h>

#include <clocale>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "sfcl/cli.hpp"
#include "sfcl/config.hpp"
#include "sfcl/io.hpp"

using namespace sfcl;
namespace fs = std::filesystem;

namespace {

/// Fresh scratch directory, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("sfcl_test_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "sfcl");
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

synth::RgbImage random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  synth::RgbImage img(freq::ColorSpace::rgb, h, w);
  for (auto& p : img.planes)
    for (auto& v : p) v = static_cast<double>(rng.below(256));
  return img;
}

std::vector<std::vector<std::string>> split_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(PpmTest, RoundTrip) {
  auto img = random_image(5, 7, 1);
  auto bytes = io::encode_ppm(img);
  EXPECT_EQ(bytes.substr(0, 11), "P6\n7 5\n255\n");
  auto back = io::decode_ppm(bytes);
  EXPECT_EQ(back.planes, img.planes);
  EXPECT_EQ(io::encode_ppm(back), bytes);
}

TEST(PpmTest, CommentsAccepted) {
  std::string bytes = "P6\n# made by hand\n1 1\n255\n";
  bytes += std::string("\x01\x02\x03", 3);
  auto img = io::decode_ppm(bytes);
  EXPECT_EQ(img.at(0, 0, 0), 1.0);
  EXPECT_EQ(img.at(2, 0, 0), 3.0);
}

TEST(PpmTest, MalformedRejected) {
  EXPECT_THROW((void)io::decode_ppm("P3\n1 1\n255\n1 2 3"), InputError);
  EXPECT_THROW((void)io::decode_ppm("P6\n1 1\n65535\n"), InputError);
  EXPECT_THROW((void)io::decode_ppm("P6\n2 2\n255\nabc"), InputError);
  EXPECT_THROW((void)io::decode_ppm(""), InputError);
  EXPECT_THROW((void)io::read_ppm("/nonexistent/x.ppm"), IoError);
}

TEST(ManifestTest, Parsing) {
  auto e = io::parse_dataset_manifest(R"([{"file":"a.ppm","label":1,"bbox":{"x":1,"y":2,"w":16,"h":24}},{"file":"b.ppm","label":0}])");
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(*e[0].label, 1);
  EXPECT_EQ(e[0].bbox->h, 24);
  EXPECT_FALSE(e[1].bbox);
  EXPECT_THROW((void)io::parse_dataset_manifest(R"([{"file":"a.ppm","label":2}])"), InputError);
  EXPECT_THROW((void)io::parse_dataset_manifest(R"({"file":"a.ppm"})"), InputError);
  EXPECT_THROW((void)io::parse_dataset_manifest("[{"), InputError);
  auto b = io::parse_bbox_manifest(R"([{"file":"c.ppm","x":0,"y":0,"w":8,"h":8}])");
  EXPECT_EQ(b[0].bbox->w, 8);
  EXPECT_FALSE(b[0].label);
}

TEST(ManifestTest, DatasetRoundTrip) {
  TempDir dir("dataset");
  synth::SynthConfig sc;
  sc.count = 2;
  sc.height = sc.width = 16;
  auto samples = synth::synth_generate(sc);
  io::write_dataset(dir.path, samples);
  auto back = io::read_dataset(dir.path);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].label, samples[i].label);
    EXPECT_EQ(back[i].image.planes, samples[i].image.planes);
  }
}

TEST(ModelFileTest, RoundTripIsByteIdentical) {
  SfclModel<float> m(ModelConfig::tiny(), 5);
  auto bytes = io::encode_model(io::snapshot(m.params()));
  EXPECT_EQ(bytes.substr(0, 4), "SFCL");
  SfclModel<float> other(ModelConfig::tiny(), 6);
  EXPECT_NE(io::encode_model(io::snapshot(other.params())), bytes);
  io::restore(other.params(), io::decode_model(bytes));
  EXPECT_EQ(io::encode_model(io::snapshot(other.params())), bytes);
}

TEST(ModelFileTest, RejectsBadFiles) {
  SfclModel<float> m(ModelConfig::tiny(), 5);
  auto bytes = io::encode_model(io::snapshot(m.params()));
  auto bumped = bytes;
  bumped[4] = 2;
  try {
    (void)io::decode_model(bumped);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  EXPECT_THROW((void)io::decode_model(bytes.substr(0, bytes.size() - 1)), InputError);
  EXPECT_THROW((void)io::decode_model(bytes + "x"), InputError);
  EXPECT_THROW((void)io::decode_model("JUNK"), InputError);

  SfclModel<double> d(ModelConfig::tiny(), 5);
  EXPECT_THROW(io::restore(d.params(), io::decode_model(bytes)), InputError);
  SfclModel<float> desk(ModelConfig::desk(), 5);
  EXPECT_THROW(io::restore(desk.params(), io::decode_model(bytes)), InputError);
}

TEST(ConfigTest, DefaultsAndOverrides) {
  auto rc = parse_run_config(R"({"profile":"tiny","train":{"epochs":3,"precision":"double"},"synth":{"count":4}})");
  EXPECT_EQ(rc.profile, Profile::tiny);
  EXPECT_EQ(rc.train.epochs, 3u);
  EXPECT_EQ(rc.train.precision, train::Precision::double_);
  EXPECT_EQ(rc.train.batch, 20u);
  EXPECT_EQ(rc.synth.count, 4u);
  EXPECT_DOUBLE_EQ(rc.train.lr, 1e-3);
  EXPECT_DOUBLE_EQ(rc.train.weight_decay, 1e-8);
}

TEST(ConfigTest, UnknownKeyNamed) {
  try {
    (void)parse_run_config(R"({"train":{"learning_rate":0.1}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.learning_rate"), std::string::npos) << e.what();
  }
  EXPECT_THROW((void)parse_run_config(R"({"train":{"epochs":"ten"}})"), ConfigError);
  EXPECT_THROW((void)parse_run_config(R"({"train":{"batch":1}})"), ConfigError);
  EXPECT_THROW((void)parse_run_config("[1,2]"), ConfigError);
}

TEST(ConfigTest, JsonRoundTrip) {
  auto rc = parse_run_config(R"({"profile":"desk","train":{"seed":42},"ablation":{"use_sbcm":false}})");
  auto text = run_config_json(rc).dump();
  auto again = parse_run_config(text);
  EXPECT_EQ(run_config_json(again).dump(), text);
  EXPECT_FALSE(again.model.ablation.use_sbcm);
  EXPECT_EQ(again.train.seed, 42u);
}

TEST(CsvTest, LocaleIndependentNumbers) {
  const char* prev = std::setlocale(LC_NUMERIC, "de_DE.UTF-8");
  EXPECT_EQ(io::format_number(0.5), "0.5");
  EXPECT_EQ(io::format_number(-1.25e-7), "-1.25e-07");
  if (prev) std::setlocale(LC_NUMERIC, "C");
  io::CsvWriter csv({"a", "b"});
  csv.add_row({"x,y", "q\"z"});
  EXPECT_EQ(csv.str(), "a,b\n\"x,y\",\"q\"\"z\"\n");
}

TEST(CliTest, UsageErrors) {
  auto unknown = run({"trian"});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("\"suggestion\":\"train\""), std::string::npos) << unknown.err;
  auto flag = run({"export-heatmap", "--imag", "x.ppm", "--band", "1"});
  EXPECT_EQ(flag.code, 1);
  EXPECT_NE(flag.err.find("--image"), std::string::npos) << flag.err;
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"gradcheck", "--module", "warp"}).code, 1);
}

TEST(CliTest, InputErrorsExitTwo) {
  auto r = run({"extract-spectra", "--image", "/nonexistent/a.ppm"});
  EXPECT_EQ(r.code, 2);
  auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error"], "io");
  TempDir dir("badcfg");
  io::write_file(dir.path / "c.json", R"({"bogus":1})");
  auto c = run({"dataset-synth", "--out", (dir.path / "d").string(), "--config", (dir.path / "c.json").string()});
  EXPECT_EQ(c.code, 2);
  EXPECT_NE(c.err.find("bogus"), std::string::npos);
}

TEST(CliTest, GradcheckPasses) {
  auto r = run({"gradcheck", "--module", "hcma", "--seed", "7"});
  EXPECT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_LT(j["max_rel_err"].get<double>(), 1e-4);
}

TEST(CliTest, ExtractSpectraRows) {
  TempDir dir("spectra");
  io::write_ppm(dir.path / "a.ppm", random_image(16, 24, 3));
  auto r = run({"extract-spectra", "--image", (dir.path / "a.ppm").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = split_csv(r.out);
  EXPECT_EQ(rows.size(), 1u + 3 * 64 * 2 * 3);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"channel", "band", "block_row", "block_col", "coeff"}));
}

TEST(CliTest, FeaturesSidaColumns) {
  TempDir dir("sida");
  for (int i = 0; i < 3; ++i) io::write_ppm(dir.path / ("img" + std::to_string(i) + ".ppm"), random_image(32, 32, 10 + i));
  io::write_file(dir.path / "boxes.json",
                 R"([{"file":"img0.ppm","x":0,"y":0,"w":24,"h":24},{"file":"img2.ppm","x":8,"y":8,"w":24,"h":24}])");
  auto r = run({"features-sida", "--images", dir.path.string(), "--bboxes", (dir.path / "boxes.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = split_csv(r.out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].size(), 2305u);
  EXPECT_EQ(rows[1][0], "img0.ppm");
  auto expect = sida::sida_from_image(io::read_ppm(dir.path / "img2.ppm"), freq::BBox{8, 8, 24, 24});
  for (std::size_t k = 0; k < 2304; k += 97) EXPECT_EQ(std::stod(rows[2][k + 1]), expect.values[k]);

  auto all = run({"features-sida", "--images", dir.path.string()});
  EXPECT_EQ(split_csv(all.out).size(), 4u);
}

TEST(CliTest, HeatmapMatchesSpectra) {
  TempDir dir("heat");
  auto img = random_image(24, 32, 4);
  io::write_ppm(dir.path / "a.ppm", img);
  auto r = run({"export-heatmap", "--image", (dir.path / "a.ppm").string(), "--band", "5", "--channel", "Cb"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = split_csv(r.out);
  ASSERT_EQ(rows.size(), 3u);
  ASSERT_EQ(rows[0].size(), 4u);
  auto s = freq::restructure(img);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(std::stod(rows[i][k]), std::abs(s.at(1, 5, i, k)));

  synth::RgbImage gray(freq::ColorSpace::rgb, 16, 16);
  for (auto& p : gray.planes) std::fill(p.begin(), p.end(), 128.0);
  io::write_ppm(dir.path / "g.ppm", gray);
  auto g = run({"export-heatmap", "--image", (dir.path / "g.ppm").string(), "--band", "0"});
  for (const auto& row : split_csv(g.out))
    for (const auto& c : row) EXPECT_LT(std::abs(std::stod(c)), 1e-9);

  EXPECT_EQ(run({"export-heatmap", "--image", (dir.path / "a.ppm").string(), "--band", "64"}).code, 1);
  EXPECT_EQ(run({"export-heatmap", "--image", (dir.path / "a.ppm").string(), "--band", "1", "--channel", "Q"}).code, 1);
}

TEST(CliTest, SidaPlot) {
  TempDir dir("plot");
  fs::create_directories(dir.path / "r");
  fs::create_directories(dir.path / "f");
  std::vector<std::array<std::vector<double>, 3>> real;
  for (int i = 0; i < 2; ++i) {
    auto img = random_image(32, 32, 20 + i);
    io::write_ppm(dir.path / "r" / ("a" + std::to_string(i) + ".ppm"), img);
    io::write_ppm(dir.path / "f" / ("a" + std::to_string(i) + ".ppm"), img);
    real.push_back(img.planes);
  }
  auto r = run({"export-sida-plot", "--real", (dir.path / "r").string(), "--fake", (dir.path / "f").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = split_csv(r.out);
  ASSERT_EQ(rows.size(), 193u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"index", "real_mean", "fake_mean", "diff"}));
  auto d0 = oracle::sida_descriptor(real[0], 32, 32), d1 = oracle::sida_descriptor(real[1], 32, 32);
  for (std::size_t i = 0; i < 192; ++i) {
    EXPECT_EQ(std::stod(rows[i + 1][3]), 0.0);
    const std::size_t mode = i / 64, band = i % 64;
    const std::size_t k = mode * 192 + band;  // mean stat, Y channel
    EXPECT_LT(oracle::rel_err_floor(std::stod(rows[i + 1][1]), (d0[k] + d1[k]) / 2), 1e-6) << i;
  }
  fs::create_directories(dir.path / "empty");
  EXPECT_EQ(run({"export-sida-plot", "--real", (dir.path / "r").string(), "--fake", (dir.path / "empty").string()}).code, 1);
}

TEST(CliTest, TrainEvalDeterministic) {
  TempDir dir("train");
  const auto data = (dir.path / "data").string();
  io::write_file(dir.path / "cfg.json", R"({"profile":"tiny","train":{"epochs":2,"batch":4}})");
  const auto cfg = (dir.path / "cfg.json").string();
  ASSERT_EQ(run({"dataset-synth", "--out", data, "--count", "4", "--height", "16", "--width", "16"}).code, 0);
  auto a = run({"train", "--config", cfg, "--data", data, "--out", (dir.path / "a.bin").string(), "--log", (dir.path / "a.jsonl").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  auto b = run({"train", "--config", cfg, "--data", data, "--out", (dir.path / "b.bin").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(io::read_file(dir.path / "a.bin"), io::read_file(dir.path / "b.bin"));
  std::ifstream log(dir.path / "a.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["epoch"].get<std::size_t>(), ++lines);
  }
  EXPECT_EQ(lines, 2u);

  auto e = run({"eval", "--model", (dir.path / "a.bin").string(), "--data", data, "--predictions", (dir.path / "p.csv").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  auto j = nlohmann::json::parse(e.out);
  EXPECT_EQ(j["count"].get<std::size_t>(), 8u);
  EXPECT_EQ(split_csv(io::read_file(dir.path / "p.csv")).size(), 9u);

  io::write_file(dir.path / "bad.bin", "SFCL");
  EXPECT_EQ(run({"eval", "--model", (dir.path / "bad.bin").string(), "--data", data, "--config", cfg}).code, 2);
}
