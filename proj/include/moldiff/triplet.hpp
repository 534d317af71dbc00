#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "moldiff/chem.hpp"
#include "moldiff/tokenizer.hpp"

namespace moldiff::triplet {

enum class Relation { Single, Double, Triple, Aromatic, None };

const char* to_string(Relation rel);
std::optional<Relation> parse_relation(std::string_view token);

/// Atom label plus its 1-based position in canonical order. The label is
/// the SMILES atom text, optionally followed by an AIS context code.
struct AtomRef {
  std::string label;
  int index = 0;
  friend bool operator==(const AtomRef&, const AtomRef&) = default;
};

struct Triplet {
  AtomRef head;
  Relation rel = Relation::Single;
  AtomRef tail;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Bond triplets plus, for bond-free molecules, the single isolated atom.
struct TripletSeq {
  std::vector<Triplet> triplets;
  std::optional<AtomRef> isolated;

  bool empty() const { return triplets.empty() && !isolated; }
  friend bool operator==(const TripletSeq&, const TripletSeq&) = default;
};

enum class DecodeMode { Strict, Robust };

enum class ErrorCode { MalformedSegment, IndexConflict, BondConflict, IndexGap, EmptyTriplets, DisconnectedGraph };

class TripletError : public std::runtime_error {
 public:
  TripletError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Fused atom token, e.g. "C_1".
std::string atom_token(const AtomRef& atom);
/// Inverse of atom_token; nullopt when the token is not label_index or
/// the label is not a single SMILES atom.
std::optional<AtomRef> parse_atom_token(std::string_view token);

/// One triplet per bond, atoms numbered by canonical rank, ordered by
/// (head, tail). Throws chem::ChemError for invalid or multi-fragment graphs.
TripletSeq graph_to_triplets(const chem::MolGraph& g, tok::SmilesTokenizer style = tok::SmilesTokenizer::Regex);

/// [HEAD] h [REL] r [TAIL] t segments joined by [SEP]. A bond-free
/// molecule becomes the single segment [HEAD] h [REL] NONE [TAIL] h.
std::vector<std::string> triplets_to_tokens(const TripletSeq& ts);

struct DecodeResult {
  TripletSeq triplets;
  int skipped = 0;
};

/// Reads segments up to the first [EOS]; [PAD] and [BOS] are ignored.
/// Robust mode skips and counts malformed segments, strict mode throws.
DecodeResult tokens_to_triplets(std::span<const std::string> tokens, DecodeMode mode);

/// Merges triplets into a graph. Robust mode resolves label conflicts by
/// majority (first occurrence on ties), keeps the first relation of a
/// repeated bond, compacts index gaps and keeps the largest fragment.
chem::MolGraph triplets_to_graph(const TripletSeq& ts, DecodeMode mode);

/// Full molecule-side decode: tokens -> triplets -> graph -> canonical
/// SMILES. nullopt when any stage fails or the graph is not valid.
std::optional<std::string> decode_smiles(std::span<const std::string> tokens, DecodeMode mode = DecodeMode::Robust);

/// Serialization of a SMILES string as tokens, throws on invalid input.
std::vector<std::string> encode_smiles(std::string_view smiles, tok::SmilesTokenizer style = tok::SmilesTokenizer::Regex);

}  // namespace moldiff::triplet
