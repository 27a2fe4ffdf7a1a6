#include "switchboard/tokenizer.hpp"

#include "switchboard/error.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

namespace switchboard::tok {
namespace {

std::string utf8_of(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string pair_key(const std::string& a, const std::string& b) {
  std::string key;
  key.reserve(a.size() + b.size() + 1);
  key += a;
  key += '\0';
  key += b;
  return key;
}

enum class CharClass : std::uint8_t { Letter, Number, Space, Other };

CharClass classify(UChar32 c) {
  if (c < 0) return CharClass::Other;
  const auto mask = U_GET_GC_MASK(c);
  if (mask & U_GC_L_MASK) return CharClass::Letter;
  if (mask & U_GC_N_MASK) return CharClass::Number;
  if (u_isUWhiteSpace(c) || (c >= 0x1C && c <= 0x1F)) return CharClass::Space;
  return CharClass::Other;
}

struct Glyph {
  std::size_t offset;
  CharClass cls;
  bool is_space_char;  // U+0020 specifically
};

std::size_t contraction_length(std::string_view rest) {
  if (rest.size() < 2 || rest[0] != '\'') return 0;
  static constexpr std::string_view kTwo[] = {"re", "ve", "ll"};
  for (auto s : kTwo) {
    if (rest.substr(1, 2) == s) return 3;
  }
  switch (rest[1]) {
    case 's': case 't': case 'm': case 'd':
      return 2;
    default:
      return 0;
  }
}

}  // namespace

BpeVocab BpeVocab::load(const std::filesystem::path& vocab_json,
                        const std::filesystem::path& merges_txt, TokenId expected_size) {
  BpeVocab v;

  // Printable bytes map to themselves; the rest to U+0100 onwards.
  int next = 0;
  for (int b = 0; b < 256; ++b) {
    const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE);
    const char32_t cp = printable ? static_cast<char32_t>(b) : static_cast<char32_t>(256 + next++);
    v.byte_encoder_[b] = utf8_of(cp);
    v.byte_decoder_[cp] = static_cast<std::uint8_t>(b);
  }

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(vocab_json));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", vocab_json.string(), e.what()));
  }
  if (!j.is_object()) throw FormatError(fmt::format("{}: expected a JSON object", vocab_json.string()));
  if (static_cast<std::int64_t>(j.size()) != expected_size) {
    throw FormatError(fmt::format("{}: {} entries, expected {}", vocab_json.string(), j.size(), expected_size));
  }
  v.id_to_token_.assign(static_cast<std::size_t>(expected_size), std::string{});
  std::vector<bool> seen(static_cast<std::size_t>(expected_size), false);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number_integer()) {
      throw FormatError(fmt::format("{}: non-integer id for token {}", vocab_json.string(), it.key()));
    }
    const auto id = it.value().get<std::int64_t>();
    if (id < 0 || id >= expected_size || seen[static_cast<std::size_t>(id)]) {
      throw FormatError(fmt::format("{}: bad or duplicate id {}", vocab_json.string(), id));
    }
    seen[static_cast<std::size_t>(id)] = true;
    v.id_to_token_[static_cast<std::size_t>(id)] = it.key();
    v.token_to_id_.emplace(it.key(), static_cast<TokenId>(id));
  }

  std::istringstream merges(read_file(merges_txt));
  std::string line;
  int rank = 0;
  std::size_t line_no = 0;
  while (std::getline(merges, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.starts_with("#version")) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() ||
        line.find(' ', sp + 1) != std::string::npos) {
      throw FormatError(fmt::format("{}:{}: malformed merge line", merges_txt.string(), line_no));
    }
    std::string a = line.substr(0, sp);
    std::string b = line.substr(sp + 1);
    if (!v.token_to_id_.contains(a + b)) {
      throw FormatError(fmt::format("{}:{}: merge result '{}' not in vocabulary", merges_txt.string(),
                                    line_no, a + b));
    }
    v.merge_ranks_.emplace(pair_key(a, b), rank++);
  }
  if (rank == 0) throw FormatError(fmt::format("{}: no merges", merges_txt.string()));
  for (const auto& e : v.byte_encoder_) {
    if (!v.token_to_id_.contains(e)) throw FormatError("vocabulary lacks a single-byte token");
  }
  return v;
}

TokenId BpeVocab::id_of(const std::string& encoded_token) const {
  auto it = token_to_id_.find(encoded_token);
  return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& BpeVocab::token_of(TokenId id) const {
  if (id < 0 || id >= size()) throw InvalidArgument(fmt::format("token id {} out of range [0, {})", id, size()));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::string BpeVocab::bytes_of(TokenId id) const {
  const std::string& s = token_of(id);
  std::string out;
  std::int32_t i = 0;
  const auto len = static_cast<std::int32_t>(s.size());
  while (i < len) {
    UChar32 c;
    U8_NEXT(s.data(), i, len, c);
    const int b = decode_surrogate(static_cast<char32_t>(c));
    if (b < 0) {
      // Special tokens such as <|endoftext|> are spelled in plain ASCII.
      return s;
    }
    out += static_cast<char>(b);
  }
  return out;
}

int BpeVocab::merge_rank(const std::string& left, const std::string& right) const {
  auto it = merge_ranks_.find(pair_key(left, right));
  return it == merge_ranks_.end() ? -1 : it->second;
}

int BpeVocab::decode_surrogate(char32_t cp) const {
  auto it = byte_decoder_.find(cp);
  return it == byte_decoder_.end() ? -1 : it->second;
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<Glyph> g;
  g.reserve(text.size());
  {
    std::int32_t i = 0;
    const auto len = static_cast<std::int32_t>(text.size());
    while (i < len) {
      const auto start = static_cast<std::size_t>(i);
      UChar32 c;
      U8_NEXT(text.data(), i, len, c);
      g.push_back({start, classify(c), c == 0x20});
    }
  }
  const std::size_t n = g.size();
  auto offset = [&](std::size_t k) { return k < n ? g[k].offset : text.size(); };

  std::vector<std::string_view> out;
  std::size_t k = 0;
  while (k < n) {
    const std::size_t begin = k;
    if (const auto c = contraction_length(text.substr(g[k].offset)); c > 0) {
      out.push_back(text.substr(g[k].offset, c));
      k += c;  // contraction characters are single-byte ASCII
      continue;
    }
    std::size_t j = k;
    if (g[j].is_space_char && j + 1 < n && g[j + 1].cls != CharClass::Space) ++j;
    const CharClass cls = g[j].cls;
    if (cls != CharClass::Space) {
      while (j < n && g[j].cls == cls) ++j;
      out.push_back(text.substr(offset(begin), offset(j) - offset(begin)));
      k = j;
      continue;
    }
    while (j < n && g[j].cls == CharClass::Space) ++j;
    // A whitespace run followed by non-space gives up its last character.
    if (j < n && j - k > 1) --j;
    out.push_back(text.substr(offset(begin), offset(j) - offset(begin)));
    k = j;
  }
  return out;
}

namespace {

void bpe_word(std::string_view word, const BpeVocab& vocab, std::vector<TokenId>& out) {
  std::vector<std::string> sym;
  sym.reserve(word.size());
  for (unsigned char b : word) sym.push_back(vocab.encode_byte(b));

  while (sym.size() > 1) {
    int best = std::numeric_limits<int>::max();
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
      const int r = vocab.merge_rank(sym[i], sym[i + 1]);
      if (r >= 0 && r < best) {
        best = r;
        best_at = i;
      }
    }
    if (best == std::numeric_limits<int>::max()) break;
    const std::string a = sym[best_at];
    const std::string b = sym[best_at + 1];
    std::vector<std::string> merged;
    merged.reserve(sym.size());
    for (std::size_t i = 0; i < sym.size();) {
      if (i + 1 < sym.size() && sym[i] == a && sym[i + 1] == b) {
        merged.push_back(a + b);
        i += 2;
      } else {
        merged.push_back(std::move(sym[i]));
        ++i;
      }
    }
    sym = std::move(merged);
  }
  for (const auto& s : sym) {
    const TokenId id = vocab.id_of(s);
    if (id < 0) throw FormatError(fmt::format("BPE produced unknown symbol '{}'", s));
    out.push_back(id);
  }
}

}  // namespace

std::vector<TokenId> bpe_encode(std::string_view text, const BpeVocab& vocab) {
  std::unordered_map<std::string_view, std::vector<TokenId>> cache;
  std::vector<TokenId> ids;
  ids.reserve(text.size() / 3 + 1);
  std::vector<TokenId> piece;
  for (std::string_view w : pretokenize(text)) {
    auto it = cache.find(w);
    if (it == cache.end()) {
      piece.clear();
      bpe_word(w, vocab, piece);
      it = cache.emplace(w, piece).first;
    }
    ids.insert(ids.end(), it->second.begin(), it->second.end());
  }
  return ids;
}

std::string bpe_decode(std::span<const TokenId> ids, const BpeVocab& vocab) {
  std::string out;
  out.reserve(ids.size() * 4);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab.size()) {
      throw InvalidArgument(
          fmt::format("token id {} at index {} out of range [0, {})", ids[i], i, vocab.size()));
    }
    out += vocab.bytes_of(ids[i]);
  }
  return out;
}

}  // namespace switchboard::tok
