#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace moldiff::tok {

enum class SmilesTokenizer { Regex, AtomLevel, Ais };

SmilesTokenizer parse_tokenizer_kind(std::string_view name);
const char* to_string(SmilesTokenizer kind);

/// Reserved ids 0..7, in this order, in every vocabulary.
enum SpecialId : int { kPad = 0, kBos, kEos, kUnk, kHead, kRel, kTail, kSep };
inline constexpr std::array<std::string_view, 8> kSpecialTokens{
    "[PAD]", "[BOS]", "[EOS]", "[UNK]", "[HEAD]", "[REL]", "[TAIL]", "[SEP]"};

/// Separates an AIS atom token from its context code.
inline constexpr char kAisSeparator = ';';

using TokenSeq = std::vector<int>;

enum class ErrorCode { EmptyCorpus, IdOutOfRange, BadVocabFile };

class TokenizerError : public std::runtime_error {
 public:
  TokenizerError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Segments a SMILES string. Throws chem::ChemError when the string does
/// not parse. `detokenize` of the result reproduces the input exactly.
std::vector<std::string> tokenize(std::string_view smiles, SmilesTokenizer kind);

/// Concatenates tokens, dropping AIS context codes.
std::string detokenize(std::span<const std::string> tokens);

/// Caption-side tokenizer: lowercase, split on whitespace, punctuation
/// characters become their own tokens.
std::vector<std::string> tokenize_text(std::string_view text);

class Vocab {
 public:
  /// Specials first, then tokens with count >= min_count ordered by
  /// (count desc, token asc).
  static Vocab build(std::span<const std::vector<std::string>> corpus, int min_count);
  static Vocab from_tokens(std::vector<std::string> tokens);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  /// kUnk for unknown tokens.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenSeq encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  /// 64-bit FNV-1a of the serialized file.
  std::uint64_t fingerprint() const;

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  explicit Vocab(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::uint64_t fnv1a64(std::string_view data);

}  // namespace moldiff::tok
