// Synthesizes a small dataset, trains a TCN with and without the P/S channel
// for a few epochs, and prints test L1 for both.

#include <iostream>

#include "epd/data/prepare.hpp"
#include "epd/data/synth.hpp"
#include "epd/train.hpp"

int main() {
  epd::data::SyntheticSpec spec;
  spec.n = 200;
  spec.noise_sigma = 0.5;
  spec.seed = 1;
  epd::data::SplitSpec split;
  split.seed = 1;
  const auto splits = epd::data::split(epd::data::synth_dataset(spec), split);

  epd::train::TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.seed = 1;

  for (bool ps : {false, true}) {
    epd::nn::ModelConfig mc;
    mc.arch = epd::nn::Arch::TCN;
    mc.in_channels = ps ? 4 : 3;
    mc.seed = 1;
    const auto result = epd::train::train(mc, tc, splits, [&](const epd::train::EpochMetrics& e) {
      std::cout << (ps ? "ps   " : "no-ps") << " epoch " << e.epoch << " train " << e.train_l1_km << " km, val "
                << e.val_l1_km << " km\n";
    });
    std::cout << (ps ? "ps   " : "no-ps") << " test L1 " << result.metrics.test_l1_km << " km\n";
  }
}
