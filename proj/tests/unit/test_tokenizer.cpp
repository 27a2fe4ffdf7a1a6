#include "switchboard/error.hpp"
#include "switchboard/tokenizer.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <thread>

using namespace switchboard;
using namespace switchboard::tok;

namespace {

const std::filesystem::path kRoot = SWITCHBOARD_SOURCE_DIR;

const BpeVocab& vocab() {
  static const BpeVocab v =
      BpeVocab::load(kRoot / "assets/gpt2/vocab.json", kRoot / "assets/gpt2/merges.txt");
  return v;
}

nlohmann::json fixtures() {
  std::ifstream in(kRoot / "tests/fixtures/tokenizer_cases.json");
  return nlohmann::json::parse(in);
}

std::filesystem::path scratch_file(const std::string& name, const std::string& contents) {
  auto p = std::filesystem::temp_directory_path() / ("switchboard_tok_" + name);
  std::ofstream(p, std::ios::binary) << contents;
  return p;
}

}  // namespace

TEST_CASE("vocabulary shape") {
  CHECK(vocab().size() == 50257);
  CHECK(vocab().token_of(kEndOfText) == "<|endoftext|>");
  CHECK(vocab().merge_count() == 50000);
  CHECK(vocab().bytes_of(kEndOfText) == "<|endoftext|>");
}

TEST_CASE("well-known ids") {
  CHECK(bpe_encode("hello world", vocab()) == std::vector<TokenId>{31373, 995});
  CHECK(bpe_encode("the", vocab()) == std::vector<TokenId>{1169});
  CHECK(bpe_encode(" the", vocab()) == std::vector<TokenId>{262});
  CHECK(bpe_encode("\n\n", vocab()) == std::vector<TokenId>{628});
  CHECK(bpe_encode("", vocab()).empty());
}

TEST_CASE("matches reference tokenizer on fixture cases") {
  const auto fx = fixtures();
  for (const auto& c : fx["cases"]) {
    const auto text = c["text"].get<std::string>();
    CAPTURE(text);
    CHECK(bpe_encode(text, vocab()) == c["ids"].get<std::vector<TokenId>>());
  }
}

TEST_CASE("matches reference id histogram on a prose passage") {
  const auto fx = fixtures();
  const auto text = fx["passage"]["text"].get<std::string>();
  const auto want = fx["passage"]["ids"].get<std::vector<TokenId>>();
  const auto got = bpe_encode(text, vocab());
  std::map<TokenId, int> hw, hg;
  for (auto id : want) ++hw[id];
  for (auto id : got) ++hg[id];
  CHECK(hg == hw);
  CHECK(got == want);
}

TEST_CASE("pretokenize splits contractions and keeps leading spaces") {
  const auto parts = pretokenize("I'm  here\n\nnow");
  std::vector<std::string> s(parts.begin(), parts.end());
  CHECK(s == std::vector<std::string>{"I", "'m", " ", " here", "\n", "\n", "now"});
}

TEST_CASE("pretokenize pieces concatenate back to the input") {
  std::mt19937 rng(7);
  const std::string alphabet = "ab \n\t'.,1\xc3\xa9\xe4\xb8\xad";
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const int len = static_cast<int>(rng() % 60);
    for (int i = 0; i < len; ++i) text += alphabet[rng() % alphabet.size()];
    std::string joined;
    for (auto p : pretokenize(text)) {
      CHECK(!p.empty());
      joined += p;
    }
    CHECK(joined == text);
  }
}

TEST_CASE("round trip on random bytes") {
  std::mt19937_64 rng(11);
  std::string text(1 << 20, '\0');
  for (auto& ch : text) ch = static_cast<char>(rng() & 0xFF);
  const auto ids = bpe_encode(text, vocab());
  CHECK(bpe_decode(ids, vocab()) == text);
}

TEST_CASE("round trip on fixture texts") {
  for (const auto& c : fixtures()["cases"]) {
    const auto text = c["text"].get<std::string>();
    CHECK(bpe_decode(bpe_encode(text, vocab()), vocab()) == text);
  }
}

TEST_CASE("every id decodes and single-byte tokens re-encode to themselves") {
  for (int b = 0; b < 256; ++b) {
    const std::string s(1, static_cast<char>(b));
    const auto ids = bpe_encode(s, vocab());
    REQUIRE(ids.size() == 1);
    CHECK(vocab().bytes_of(ids[0]) == s);
  }
}

TEST_CASE("decode rejects out-of-range ids with the offending index") {
  const std::vector<TokenId> ids{10, 20, 50257};
  CHECK_THROWS_AS(bpe_decode(ids, vocab()), InvalidArgument);
  try {
    bpe_decode(ids, vocab());
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("index 2") != std::string::npos);
  }
  const std::vector<TokenId> neg{-1};
  CHECK_THROWS_AS(bpe_decode(neg, vocab()), InvalidArgument);
}

TEST_CASE("concurrent encodes agree") {
  const std::string text = fixtures()["passage"]["text"].get<std::string>();
  std::vector<TokenId> a, b;
  std::thread t1([&] { a = bpe_encode(text, vocab()); });
  std::thread t2([&] { b = bpe_encode(text, vocab()); });
  t1.join();
  t2.join();
  CHECK(a == b);
}

TEST_CASE("load rejects malformed files") {
  const auto merges = kRoot / "assets/gpt2/merges.txt";
  const auto vocab_path = kRoot / "assets/gpt2/vocab.json";
  CHECK_THROWS_AS(BpeVocab::load(scratch_file("trunc.json", "{\"a\": 0,"), merges), FormatError);
  CHECK_THROWS_AS(BpeVocab::load(kRoot / "no/such/file.json", merges), FormatError);
  CHECK_THROWS_AS(BpeVocab::load(vocab_path, merges, 50000), FormatError);
  CHECK_THROWS_AS(BpeVocab::load(vocab_path, scratch_file("bad_merges.txt", "#version: 0.2\nzzq qqz\n")),
                  FormatError);
  CHECK_THROWS_AS(BpeVocab::load(vocab_path, scratch_file("empty_merges.txt", "#version: 0.2\n")),
                  FormatError);
}
