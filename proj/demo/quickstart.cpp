// Library walkthrough: synthesize a small dataset, look at one image's
// spectra and SIDA descriptor, train the tiny profile briefly, evaluate.
#include <cstdio>

#include "sfcl/sfcl.hpp"

using namespace sfcl;

int main() {
  synth::SynthConfig sc;
  sc.count = 40;
  sc.height = sc.width = 32;
  const auto train_set = synth::synth_generate(sc);
  sc.count = 20;
  sc.seed = 2;
  const auto test_set = synth::synth_generate(sc);

  const auto& img = train_set.front().image;
  const auto spectra = freq::restructure(img);
  std::printf("spectra dims: 3 x 64 x %zu x %zu\n", spectra.block_rows(), spectra.block_cols());
  const auto d = sida::sida_from_image(img);
  std::printf("SIDA length %zu, Y row mean band 0 = %.3f\n", d.values.size(),
              d.values[sida::descriptor_index(sida::Stat::mean, sida::DiffMode::row, 0, 0)]);

  const auto train_data = train::prepare_features<float>(train_set);
  const auto test_data = train::prepare_features<float>(test_set);
  SfclModel<float> model(ModelConfig::tiny(), 1);
  train::TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch = 16;
  train::train(model, train_data, cfg, [](const train::EpochLog& log) {
    std::printf("epoch %zu  loss %.4f  acc %.3f\n", log.epoch, log.loss, log.acc);
  });
  const auto r = train::evaluate(model, test_data);
  std::printf("test: %zu images, acc %.3f, auc %.3f\n", r.count, r.acc, r.auc);
}
