#include "moldiff/triplet.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>

namespace moldiff::triplet {

namespace {

Relation relation_of(chem::BondOrder order) {
  switch (order) {
    case chem::BondOrder::Single: return Relation::Single;
    case chem::BondOrder::Double: return Relation::Double;
    case chem::BondOrder::Triple: return Relation::Triple;
    case chem::BondOrder::Aromatic: return Relation::Aromatic;
  }
  return Relation::Single;
}

chem::BondOrder order_of(Relation rel) {
  switch (rel) {
    case Relation::Double: return chem::BondOrder::Double;
    case Relation::Triple: return chem::BondOrder::Triple;
    case Relation::Aromatic: return chem::BondOrder::Aromatic;
    default: return chem::BondOrder::Single;
  }
}

std::string strip_context(std::string_view label) {
  return std::string(label.substr(0, label.find(tok::kAisSeparator)));
}

chem::Atom atom_from_label(const std::string& label) {
  // labels were validated by parse_atom_token
  const chem::MolGraph one = chem::parse_smiles(strip_context(label));
  return one.atom(0);
}

std::string ais_label(const chem::MolGraph& g, const std::vector<char>& in_ring, int atom) {
  const auto& a = g.atom(atom);
  std::string code = in_ring[static_cast<std::size_t>(atom)] ? "R" : "!R";
  if (a.aromatic) code += "a";
  if (a.formal_charge != 0) code += (a.formal_charge > 0 ? "+" : "") + std::to_string(a.formal_charge);
  return chem::atom_text(g, atom) + tok::kAisSeparator + code;
}

}  // namespace

const char* to_string(Relation rel) {
  switch (rel) {
    case Relation::Single: return "SINGLE";
    case Relation::Double: return "DOUBLE";
    case Relation::Triple: return "TRIPLE";
    case Relation::Aromatic: return "AROMATIC";
    case Relation::None: return "NONE";
  }
  return "NONE";
}

std::optional<Relation> parse_relation(std::string_view token) {
  for (Relation r : {Relation::Single, Relation::Double, Relation::Triple, Relation::Aromatic, Relation::None}) {
    if (token == to_string(r)) return r;
  }
  return std::nullopt;
}

std::string atom_token(const AtomRef& atom) { return atom.label + "_" + std::to_string(atom.index); }

std::optional<AtomRef> parse_atom_token(std::string_view token) {
  const auto cut = token.rfind('_');
  if (cut == std::string_view::npos || cut == 0 || cut + 1 >= token.size()) return std::nullopt;
  const std::string_view digits = token.substr(cut + 1);
  int index = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), index);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || index < 1) return std::nullopt;
  AtomRef ref{std::string(token.substr(0, cut)), index};
  try {
    const chem::MolGraph one = chem::parse_smiles(strip_context(ref.label));
    if (one.num_atoms() != 1) return std::nullopt;
  } catch (const chem::ChemError&) {
    return std::nullopt;
  }
  return ref;
}

TripletSeq graph_to_triplets(const chem::MolGraph& g, tok::SmilesTokenizer style) {
  const chem::CanonicalForm form = chem::canonical_form(g);
  std::vector<int> position(static_cast<std::size_t>(g.num_atoms()));
  for (std::size_t k = 0; k < form.order.size(); ++k) position[static_cast<std::size_t>(form.order[k])] = static_cast<int>(k) + 1;

  const auto in_ring = chem::ring_atoms(g);
  auto ref = [&](int atom) {
    std::string label = style == tok::SmilesTokenizer::Ais ? ais_label(g, in_ring, atom) : chem::atom_text(g, atom);
    return AtomRef{std::move(label), position[static_cast<std::size_t>(atom)]};
  };

  TripletSeq out;
  if (g.num_bonds() == 0) {
    out.isolated = ref(0);
    return out;
  }
  for (const auto& b : g.bonds()) {
    int h = b.a;
    int t = b.b;
    if (position[static_cast<std::size_t>(h)] > position[static_cast<std::size_t>(t)]) std::swap(h, t);
    out.triplets.push_back({ref(h), relation_of(b.order), ref(t)});
  }
  std::sort(out.triplets.begin(), out.triplets.end(), [](const Triplet& x, const Triplet& y) {
    return std::pair(x.head.index, x.tail.index) < std::pair(y.head.index, y.tail.index);
  });
  return out;
}

std::vector<std::string> triplets_to_tokens(const TripletSeq& ts) {
  std::vector<std::string> out;
  auto segment = [&](const AtomRef& h, Relation r, const AtomRef& t) {
    if (!out.empty()) out.emplace_back(tok::kSpecialTokens[tok::kSep]);
    out.emplace_back(tok::kSpecialTokens[tok::kHead]);
    out.push_back(atom_token(h));
    out.emplace_back(tok::kSpecialTokens[tok::kRel]);
    out.emplace_back(to_string(r));
    out.emplace_back(tok::kSpecialTokens[tok::kTail]);
    out.push_back(atom_token(t));
  };
  if (ts.triplets.empty() && ts.isolated) segment(*ts.isolated, Relation::None, *ts.isolated);
  for (const auto& t : ts.triplets) segment(t.head, t.rel, t.tail);
  return out;
}

DecodeResult tokens_to_triplets(std::span<const std::string> tokens, DecodeMode mode) {
  const std::string_view head = tok::kSpecialTokens[tok::kHead];
  const std::string_view rel = tok::kSpecialTokens[tok::kRel];
  const std::string_view tail = tok::kSpecialTokens[tok::kTail];
  const std::string_view sep = tok::kSpecialTokens[tok::kSep];

  std::vector<std::vector<std::string_view>> segments(1);
  for (const auto& t : tokens) {
    if (t == tok::kSpecialTokens[tok::kEos]) break;
    if (t == tok::kSpecialTokens[tok::kPad] || t == tok::kSpecialTokens[tok::kBos]) continue;
    if (t == sep) {
      segments.emplace_back();
    } else {
      segments.back().push_back(t);
    }
  }
  if (segments.size() == 1 && segments[0].empty()) return {};

  DecodeResult result;
  auto reject = [&](std::size_t k, const char* why) {
    if (mode == DecodeMode::Strict) {
      throw TripletError(ErrorCode::MalformedSegment, "segment " + std::to_string(k) + ": " + why);
    }
    ++result.skipped;
  };
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto& s = segments[k];
    if (s.size() != 6 || s[0] != head || s[2] != rel || s[4] != tail) {
      reject(k, "expected [HEAD] atom [REL] relation [TAIL] atom");
      continue;
    }
    auto h = parse_atom_token(s[1]);
    auto r = parse_relation(s[3]);
    auto t = parse_atom_token(s[5]);
    if (!h || !r || !t) {
      reject(k, "unreadable atom or relation token");
      continue;
    }
    if (*r == Relation::None) {
      if (h->index != t->index || h->label != t->label) {
        reject(k, "NONE relation must repeat the same atom");
        continue;
      }
      if (!result.triplets.isolated) result.triplets.isolated = *h;
      continue;
    }
    if (h->index == t->index) {
      reject(k, "bond from an atom to itself");
      continue;
    }
    if (h->index > t->index) {
      if (mode == DecodeMode::Strict) {
        reject(k, "head index must be below tail index");
        continue;
      }
      std::swap(h, t);
    }
    result.triplets.triplets.push_back({std::move(*h), *r, std::move(*t)});
  }
  return result;
}

chem::MolGraph triplets_to_graph(const TripletSeq& ts, DecodeMode mode) {
  if (ts.empty()) throw TripletError(ErrorCode::EmptyTriplets, "no triplets to merge");
  const bool strict = mode == DecodeMode::Strict;

  // label votes per index, in order of first appearance
  struct Votes {
    std::vector<std::pair<std::string, int>> labels;
    void add(const std::string& label) {
      for (auto& [l, n] : labels) {
        if (l == label) {
          ++n;
          return;
        }
      }
      labels.emplace_back(label, 1);
    }
  };
  std::map<int, Votes> votes;
  auto vote = [&](const AtomRef& a) {
    const std::string label = strip_context(a.label);
    auto& v = votes[a.index];
    v.add(label);
    if (strict && v.labels.size() > 1) {
      throw TripletError(ErrorCode::IndexConflict, "atom index " + std::to_string(a.index) + " has conflicting labels");
    }
  };
  if (ts.isolated) vote(*ts.isolated);
  std::map<std::pair<int, int>, Relation> bonds;
  std::vector<std::pair<int, int>> bond_order;
  for (const auto& t : ts.triplets) {
    vote(t.head);
    vote(t.tail);
    const auto key = std::minmax(t.head.index, t.tail.index);
    const auto [it, inserted] = bonds.emplace(std::pair(key.first, key.second), t.rel);
    if (inserted) {
      bond_order.emplace_back(key.first, key.second);
    } else if (it->second != t.rel && strict) {
      throw TripletError(ErrorCode::BondConflict, "bond " + std::to_string(key.first) + "-" + std::to_string(key.second) + " listed with two relations");
    }
  }

  std::map<int, int> node;  // triplet index -> graph atom
  int expected = 1;
  for (const auto& [index, v] : votes) {
    if (strict && index != expected) throw TripletError(ErrorCode::IndexGap, "atom indices are not contiguous from 1");
    ++expected;
    const int id = static_cast<int>(node.size());
    node.emplace(index, id);
  }

  chem::MolGraph full;
  for (const auto& [index, v] : votes) {
    const auto best = std::max_element(v.labels.begin(), v.labels.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    full.add_atom(atom_from_label(best->first));
  }
  for (const auto& key : bond_order) {
    full.add_bond(node.at(key.first), node.at(key.second), order_of(bonds.at(key)));
  }
  if (chem::is_connected(full)) return full;
  if (strict) throw TripletError(ErrorCode::DisconnectedGraph, "triplets describe more than one fragment");

  // keep the largest fragment; ties go to the one holding the lowest index
  const int n = full.num_atoms();
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  std::vector<int> sizes;
  for (int s = 0; s < n; ++s) {
    if (comp[static_cast<std::size_t>(s)] >= 0) continue;
    const int c = static_cast<int>(sizes.size());
    sizes.push_back(0);
    std::vector<int> stack{s};
    comp[static_cast<std::size_t>(s)] = c;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      ++sizes.back();
      for (const auto& nb : full.neighbors(u)) {
        if (comp[static_cast<std::size_t>(nb.atom)] < 0) {
          comp[static_cast<std::size_t>(nb.atom)] = c;
          stack.push_back(nb.atom);
        }
      }
    }
  }
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::vector<int> remap(static_cast<std::size_t>(n), -1);
  chem::MolGraph out;
  for (int i = 0; i < n; ++i) {
    if (comp[static_cast<std::size_t>(i)] == keep) remap[static_cast<std::size_t>(i)] = out.add_atom(full.atom(i));
  }
  for (const auto& b : full.bonds()) {
    if (comp[static_cast<std::size_t>(b.a)] == keep) {
      out.add_bond(remap[static_cast<std::size_t>(b.a)], remap[static_cast<std::size_t>(b.b)], b.order);
    }
  }
  return out;
}

std::optional<std::string> decode_smiles(std::span<const std::string> tokens, DecodeMode mode) {
  try {
    const DecodeResult decoded = tokens_to_triplets(tokens, mode);
    if (decoded.triplets.empty()) return std::nullopt;
    const chem::MolGraph g = triplets_to_graph(decoded.triplets, mode);
    if (!chem::validate_valence(g)) return std::nullopt;
    return chem::canonicalize(g).text;
  } catch (const TripletError&) {
    return std::nullopt;
  } catch (const chem::ChemError&) {
    return std::nullopt;
  }
}

std::vector<std::string> encode_smiles(std::string_view smiles, tok::SmilesTokenizer style) {
  return triplets_to_tokens(graph_to_triplets(chem::parse_smiles(smiles), style));
}

}  // namespace moldiff::triplet
