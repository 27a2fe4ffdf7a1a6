#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace switchboard::tok {

using TokenId = std::int32_t;

inline constexpr TokenId kGpt2VocabSize = 50257;
inline constexpr TokenId kEndOfText = 50256;

// GPT-2 byte-level BPE tables.  Tokens are stored in their byte-encoded
// (printable unicode surrogate) spelling, exactly as in vocab.json.
class BpeVocab {
 public:
  // Throws FormatError on malformed files, a wrong id count, or a merge whose
  // concatenation is not a token.
  static BpeVocab load(const std::filesystem::path& vocab_json,
                       const std::filesystem::path& merges_txt,
                       TokenId expected_size = kGpt2VocabSize);

  TokenId size() const { return static_cast<TokenId>(id_to_token_.size()); }

  // -1 when absent.
  TokenId id_of(const std::string& encoded_token) const;
  const std::string& token_of(TokenId id) const;  // byte-encoded spelling
  // Raw bytes a token decodes to.
  std::string bytes_of(TokenId id) const;

  // Rank of merging the two byte-encoded symbols, or -1.
  int merge_rank(const std::string& left, const std::string& right) const;
  std::size_t merge_count() const { return merge_ranks_.size(); }

  // UTF-8 spelling of the printable surrogate for byte b, and its inverse.
  const std::string& encode_byte(std::uint8_t b) const { return byte_encoder_[b]; }
  int decode_surrogate(char32_t cp) const;

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> merge_ranks_;  // key: left + '\x00' + right
  std::array<std::string, 256> byte_encoder_;
  std::unordered_map<char32_t, std::uint8_t> byte_decoder_;
};

// GPT-2 word splitting: contractions, optional-space + letter run,
// optional-space + digit run, optional-space + symbol run, whitespace not
// followed by non-space, whitespace.  Invalid UTF-8 bytes act as symbols.
std::vector<std::string_view> pretokenize(std::string_view text);

std::vector<TokenId> bpe_encode(std::string_view text, const BpeVocab& vocab);

// Throws InvalidArgument naming the first out-of-range index.
std::string bpe_decode(std::span<const TokenId> ids, const BpeVocab& vocab);

}  // namespace switchboard::tok
