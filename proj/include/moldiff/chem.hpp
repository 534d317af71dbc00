#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace moldiff::chem {

enum class BondOrder : std::uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

enum class ErrorCode {
  EmptyInput,
  UnclosedRing,
  UnbalancedBranch,
  UnknownElement,
  SyntaxError,
  MultiFragment,
  InvalidGraph,
  DisconnectedGraph,
};

const char* to_string(ErrorCode code);

class ChemError : public std::runtime_error {
 public:
  ChemError(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// One heavy (or explicit hydrogen) atom. `explicit_h` only counts for
/// bracket atoms; organic-subset atoms get their hydrogens from the
/// valence table once the graph is complete.
struct Atom {
  std::string element;
  bool aromatic = false;
  int formal_charge = 0;
  int explicit_h = 0;
  bool bracket = false;
  int index = 0;
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::Single;
};

struct Neighbor {
  int atom;
  BondOrder order;
};

class MolGraph {
 public:
  int add_atom(Atom atom);
  /// Throws ChemError(SyntaxError) on self loops, duplicate pairs or
  /// out-of-range endpoints.
  void add_bond(int a, int b, BondOrder order);

  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<Bond>& bonds() const { return bonds_; }
  const Atom& atom(int i) const { return atoms_.at(static_cast<std::size_t>(i)); }
  std::span<const Neighbor> neighbors(int i) const { return adjacency_.at(static_cast<std::size_t>(i)); }
  int num_atoms() const { return static_cast<int>(atoms_.size()); }
  int num_bonds() const { return static_cast<int>(bonds_.size()); }
  int degree(int i) const { return static_cast<int>(neighbors(i).size()); }

  /// nullptr when a and b are not bonded.
  const Bond* find_bond(int a, int b) const;

 private:
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<Neighbor>> adjacency_;
};

struct CanonicalSmiles {
  std::string text;
  friend bool operator==(const CanonicalSmiles&, const CanonicalSmiles&) = default;
};

struct ParseWarnings {
  std::vector<std::string> messages;
};

bool is_supported_element(std::string_view symbol);
int atomic_number(std::string_view symbol);

/// Parses the supported SMILES subset. Stereo markers are accepted and
/// dropped; a note is appended to `warnings` when one is supplied.
MolGraph parse_smiles(std::string_view smiles, ParseWarnings* warnings = nullptr);

/// Sum of bond orders with aromatic bonds counted as one.
int bond_order_sum(const MolGraph& g, int atom);
/// Hydrogens the atom would carry if written without brackets.
int implicit_hydrogens(const MolGraph& g, int atom);
/// Bracket atoms report their explicit count; others the implicit one.
int hydrogen_count(const MolGraph& g, int atom);

bool validate_valence(const MolGraph& g);
bool is_connected(const MolGraph& g);
/// 1 for atoms lying on at least one cycle.
std::vector<char> ring_atoms(const MolGraph& g);

/// SMILES atom token for `atom` as the writer emits it (organic symbol or
/// full bracket form).
std::string atom_text(const MolGraph& g, int atom);

struct CanonicalForm {
  std::string text;
  /// Atom indices of `g` in the order they appear in `text`.
  std::vector<int> order;
};

CanonicalForm canonical_form(const MolGraph& g);
CanonicalSmiles canonicalize(const MolGraph& g);
CanonicalSmiles canonicalize(std::string_view smiles);

/// Writes the graph in input atom order (DFS from atom 0).
std::string write_smiles(const MolGraph& g);

/// Relabels atoms: atom i of `g` becomes atom perm[i] of the result.
MolGraph permute(const MolGraph& g, std::span<const int> perm);

}  // namespace moldiff::chem
