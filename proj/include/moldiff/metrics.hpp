#pragma once

#include <bitset>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "moldiff/chem.hpp"

namespace moldiff::metrics {

inline constexpr std::size_t kFingerprintBits = 2048;

struct FingerprintBits {
  std::bitset<kFingerprintBits> bits;
  int radius = 2;
  friend bool operator==(const FingerprintBits&, const FingerprintBits&) = default;
};

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// True iff both strings parse and canonicalize identically.
bool exact_match(std::string_view pred, std::string_view truth);

/// Each atom's radius-r environment (element, charge, aromatic flag and
/// bond orders, grown one shell at a time with sorted neighbor codes) is
/// hashed with FNV-1a and set at hash mod 2048, for r = 0..radius.
FingerprintBits circular_fingerprint(const chem::MolGraph& g, int radius = 2);
/// 1.0 when both are empty. Throws MetricError on differing radius.
double tanimoto(const FingerprintBits& a, const FingerprintBits& b);
/// Tanimoto of the two molecules' fingerprints, 0 when either fails to parse.
double tanimoto_smiles(std::string_view pred, std::string_view truth, int radius = 2);

/// Fraction that parse and pass the valence check; 0 for an empty list.
double validity_rate(std::span<const std::string> preds);

/// Corpus-free sentence BLEU: clipped n-gram precisions for n = 1..max_n,
/// zero matches at n >= 2 smoothed to (0 + 1) / (count + 1), times the
/// brevity penalty against the closest reference length.
double bleu(std::span<const std::string> pred, std::span<const std::vector<std::string>> refs, int max_n = 4);
double bleu(std::span<const std::string> pred, std::span<const std::string> ref, int max_n = 4);

/// Character n-gram F-beta (whitespace removed) for n = 1..char_n plus word
/// n-grams for n = 1..word_order, averaged over the orders that occur in
/// either string. Two empty strings score 1.
double chrf(std::string_view pred, std::string_view ref, int char_n = 6, int word_order = 2, double beta = 2.0);

struct Report {
  double exact_match = 0.0;
  double validity = 0.0;
  double tanimoto_mean = 0.0;
  double bleu = 0.0;
  double chrf = 0.0;
  int n_examples = 0;
};

/// Molecule outputs score every field; caption outputs leave the molecule
/// fields at 0. Text is tokenized with the caption tokenizer for BLEU.
Report evaluate(std::span<const std::string> preds, std::span<const std::string> refs, bool molecules);
std::string to_json(const Report& r);

}  // namespace moldiff::metrics
