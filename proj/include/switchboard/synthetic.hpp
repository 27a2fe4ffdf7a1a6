#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace switchboard::synth {

// Generated stores with known answers.  Inputs have a few high-variance axes
// (scales 4, 3.5, 3, then 1); y = W x + b + nonlinear part.
enum class Kind {
  Linear,        // no nonlinear part
  Bump,          // a fraction of tokens get sign(x.u) * v, tagged with token id 7
  PlantedCubic,  // cubic of the three leading axes
  TwoBranch,     // axis 0 is bimodal; a different cubic on axes 1..3 per sign
  Noise,         // nonlinear part independent of x
};

struct Options {
  Kind kind = Kind::Linear;
  int layer = 0;
  int d = 64;
  std::size_t n = 20000;
  std::uint32_t window_len = 256;
  std::uint64_t seed = 0;
  double noise = 0.01;
  double bump_fraction = 0.05;
  double bump_amplitude = 10.0;
};

struct Truth {
  std::vector<std::uint8_t> special;  // bump tokens, or positive-branch tokens
};

Truth write_store(const std::filesystem::path& dir, const Options& options);

}  // namespace switchboard::synth
