#pragma once

// A small GPT-2-vocabulary model, a synthetic corpus and a layer-1 profile
// so the whole table pipeline can run without the released assets.

#include "switchboard/model.hpp"
#include "switchboard/routing.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace demo {

struct Paths {
  std::filesystem::path model, corpus, profile;
};

inline switchboard::model::ModelConfig config() {
  switchboard::model::ModelConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.d_hidden = 128;
  c.n_heads = 2;
  c.n_ctx = 64;
  c.vocab = 50257;
  return c;
}

// Random GPT-2 initialisation with sharpened MLP input weights and a spread
// of biases, so neurons span firing rates from rare to nearly always.
inline switchboard::model::ModelWeights model(std::uint64_t seed = 5) {
  auto w = switchboard::model::random_weights(config(), seed);
  for (auto& l : w.layers) {
    l.w_in *= 20.0f;
    for (Eigen::Index i = 0; i < l.b_in.size(); ++i) {
      l.b_in[i] = -3.0f + 6.0f * static_cast<float>(i) / static_cast<float>(l.b_in.size() - 1);
    }
  }
  return w;
}

inline std::string corpus_text(std::size_t words, std::uint64_t seed = 9) {
  static const std::vector<std::string> vocab{
      "the", "of", "and", "in", "to", "a", "was", "is", "for", "on", "as", "with", "by", "he", "she", "it",
      "his", "her", "at", "from", "that", "had", "were", "which", "an", "be", "this", "are", "first", "after",
      "city", "river", "album", "season", "game", "team", "war", "army", "church", "school", "song", "film",
      "north", "south", "early", "later", "new", "old", "large", "small", "known", "called", "played", "built",
      "released", "won", "moved", "became", "during", "between", "under", "against", "three", "two", "1998",
      "2004", "century", "station", "island", "court", "music", "record", "line", "road", "house", "king"};
  std::mt19937_64 rng(seed);
  std::string text;
  std::size_t n = 0;
  int title = 0;
  while (n < words) {
    text += " = Section " + std::to_string(++title) + " = \n \n";
    const int sentences = 3 + static_cast<int>(rng() % 5);
    text += " ";
    for (int s = 0; s < sentences; ++s) {
      const int len = 6 + static_cast<int>(rng() % 12);
      for (int i = 0; i < len; ++i, ++n) {
        std::string w = vocab[rng() % vocab.size()];
        if (i == 0) w[0] = static_cast<char>(std::toupper(w[0]));
        text += w;
        text += (i + 1 == len) ? ". " : (rng() % 9 == 0 ? " , " : " ");
      }
    }
    text += "\n \n";
  }
  return text;
}

inline Paths write(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Paths p{dir / "demo.safetensors", dir / "corpus.txt", dir / "profile.json"};
  switchboard::model::save_weights(model(), p.model);
  std::ofstream(p.corpus, std::ios::binary) << corpus_text(9000);
  switchboard::routing::Profile prof;
  prof.layer = 1;
  prof.handler = 20;
  prof.consensus = {100, 104, 108, 112, 116, 120, 124};
  prof.pattern_neurons = {40, 50, 60, 64, 70, 80, 90, 10};
  std::ofstream(p.profile) << prof.to_json().dump(2) << "\n";
  return p;
}

}  // namespace demo
