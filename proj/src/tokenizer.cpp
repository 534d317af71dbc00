#include "moldiff/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "moldiff/chem.hpp"

namespace moldiff::tok {

namespace {

bool is_atom_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

// Regex-style pieces: bracket atoms, Cl/Br, %nn and single characters.
std::vector<std::string> regex_pieces(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == '[') {
      const std::size_t close = s.find(']', i);
      out.emplace_back(s.substr(i, close - i + 1));
      i = close + 1;
    } else if ((c == 'C' && i + 1 < s.size() && s[i + 1] == 'l') || (c == 'B' && i + 1 < s.size() && s[i + 1] == 'r')) {
      out.emplace_back(s.substr(i, 2));
      i += 2;
    } else if (c == '%') {
      out.emplace_back(s.substr(i, 3));
      i += 3;
    } else {
      out.emplace_back(1, c);
      ++i;
    }
  }
  return out;
}

// Splits "[NH4+]" into "[", "N", "H", "4", "+", "]", keeping the element whole.
void split_bracket(const std::string& bracket, std::vector<std::string>& out) {
  out.emplace_back("[");
  std::size_t i = 1;
  const std::size_t end = bracket.size() - 1;
  while (i < end && std::isdigit(static_cast<unsigned char>(bracket[i]))) out.emplace_back(1, bracket[i++]);
  if (i < end) {
    std::size_t len = 1;
    if (i + 1 < end && std::islower(static_cast<unsigned char>(bracket[i + 1]))) {
      const std::string two = bracket.substr(i, 2);
      std::string cap = two;
      cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
      if (chem::is_supported_element(cap) && (std::isupper(static_cast<unsigned char>(two[0])) || two == "se" || two == "as" || two == "te")) {
        len = 2;
      }
    }
    out.emplace_back(bracket.substr(i, len));
    i += len;
  }
  while (i < end) out.emplace_back(1, bracket[i++]);
  out.emplace_back("]");
}

std::string ais_code(const chem::MolGraph& g, const std::vector<char>& in_ring, int atom) {
  const auto& a = g.atom(atom);
  std::string code = in_ring[static_cast<std::size_t>(atom)] ? "R" : "!R";
  if (a.aromatic) code += "a";
  if (a.formal_charge != 0) code += (a.formal_charge > 0 ? "+" : "") + std::to_string(a.formal_charge);
  return code;
}

}  // namespace

SmilesTokenizer parse_tokenizer_kind(std::string_view name) {
  if (name == "regex") return SmilesTokenizer::Regex;
  if (name == "atom_level" || name == "atom-level" || name == "atom") return SmilesTokenizer::AtomLevel;
  if (name == "ais") return SmilesTokenizer::Ais;
  throw std::invalid_argument("unknown tokenizer kind '" + std::string(name) + "'");
}

const char* to_string(SmilesTokenizer kind) {
  switch (kind) {
    case SmilesTokenizer::Regex: return "regex";
    case SmilesTokenizer::AtomLevel: return "atom_level";
    case SmilesTokenizer::Ais: return "ais";
  }
  return "regex";
}

std::vector<std::string> tokenize(std::string_view smiles, SmilesTokenizer kind) {
  const chem::MolGraph g = chem::parse_smiles(smiles);
  const auto pieces = regex_pieces(smiles);
  if (kind == SmilesTokenizer::Regex) return pieces;

  std::vector<std::string> out;
  if (kind == SmilesTokenizer::AtomLevel) {
    for (const auto& p : pieces) {
      if (p.front() == '[') {
        split_bracket(p, out);
      } else if (p.front() == '%') {
        for (char c : p) out.emplace_back(1, c);
      } else {
        out.push_back(p);
      }
    }
    return out;
  }

  // AIS: atoms appear in the same order as the parser creates them
  const auto in_ring = chem::ring_atoms(g);
  int atom = 0;
  for (const auto& p : pieces) {
    if (p.front() == '[' || is_atom_start(p.front())) {
      out.push_back(p + kAisSeparator + ais_code(g, in_ring, atom));
      ++atom;
    } else {
      out.push_back(p);
    }
  }
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    const auto cut = t.find(kAisSeparator);
    out.append(t, 0, cut);
  }
  return out;
}

std::vector<std::string> tokenize_text(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      word.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw TokenizerError(ErrorCode::BadVocabFile, "duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }
  for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
    if (tokens_.size() <= i || tokens_[i] != kSpecialTokens[i]) {
      throw TokenizerError(ErrorCode::BadVocabFile, "special token " + std::string(kSpecialTokens[i]) + " not at id " + std::to_string(i));
    }
  }
}

Vocab Vocab::build(std::span<const std::vector<std::string>> corpus, int min_count) {
  if (corpus.empty()) throw TokenizerError(ErrorCode::EmptyCorpus, "cannot build a vocabulary from an empty corpus");
  std::map<std::string, long> counts;
  for (const auto& doc : corpus) {
    for (const auto& t : doc) ++counts[t];
  }
  std::vector<std::pair<std::string, long>> ranked;
  for (const auto& [tok, n] : counts) {
    const bool special = std::find(kSpecialTokens.begin(), kSpecialTokens.end(), tok) != kSpecialTokens.end();
    if (!special && n >= min_count) ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens(kSpecialTokens.begin(), kSpecialTokens.end());
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return Vocab(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) { return Vocab(std::move(tokens)); }

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TokenizerError(ErrorCode::BadVocabFile, "cannot open vocabulary " + path);
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) tokens.push_back(line);
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TokenizerError(ErrorCode::BadVocabFile, "cannot write vocabulary " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

int Vocab::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw TokenizerError(ErrorCode::IdOutOfRange, "token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenSeq Vocab::encode(std::span<const std::string> tokens) const {
  TokenSeq ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(token(id));
  return out;
}

std::uint64_t Vocab::fingerprint() const {
  std::string text;
  for (const auto& t : tokens_) {
    text += t;
    text += '\n';
  }
  return fnv1a64(text);
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace moldiff::tok
