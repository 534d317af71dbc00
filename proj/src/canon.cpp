// Canonical atom ranking and SMILES writing.
//
// Ranks start from per-atom invariants and are refined by neighbourhood
// codes until the partition stops splitting. Remaining ties are broken by
// trying every member of the first tied class and keeping the
// lexicographically smallest string, so the result depends only on the
// graph and never on the input atom order.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include "moldiff/chem.hpp"

namespace moldiff::chem {

namespace {

constexpr int kMaxLeaves = 4096;

int bond_code(BondOrder order) { return static_cast<int>(order); }

std::vector<int> dense_ranks(const std::vector<std::vector<long>>& keys) {
  const std::size_t n = keys.size();
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return keys[a] < keys[b]; });
  std::vector<int> rank(n, 0);
  int r = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0 && keys[idx[k]] != keys[idx[k - 1]]) ++r;
    rank[idx[k]] = r;
  }
  return rank;
}

int count_classes(const std::vector<int>& rank) {
  return rank.empty() ? 0 : *std::max_element(rank.begin(), rank.end()) + 1;
}

std::vector<int> initial_ranks(const MolGraph& g) {
  std::vector<std::vector<long>> keys;
  keys.reserve(static_cast<std::size_t>(g.num_atoms()));
  for (int i = 0; i < g.num_atoms(); ++i) {
    const Atom& a = g.atom(i);
    keys.push_back({g.degree(i), atomic_number(a.element), a.aromatic ? 1 : 0, a.formal_charge,
                    hydrogen_count(g, i), bond_order_sum(g, i)});
  }
  return dense_ranks(keys);
}

std::vector<int> refine(const MolGraph& g, std::vector<int> rank) {
  int classes = count_classes(rank);
  while (true) {
    std::vector<std::vector<long>> keys(rank.size());
    for (int i = 0; i < g.num_atoms(); ++i) {
      std::vector<std::pair<int, int>> nbr;
      for (const auto& n : g.neighbors(i)) nbr.emplace_back(rank[static_cast<std::size_t>(n.atom)], bond_code(n.order));
      std::sort(nbr.begin(), nbr.end());
      auto& key = keys[static_cast<std::size_t>(i)];
      key.push_back(rank[static_cast<std::size_t>(i)]);
      for (const auto& [r, b] : nbr) {
        key.push_back(r);
        key.push_back(b);
      }
    }
    auto next = dense_ranks(keys);
    const int next_classes = count_classes(next);
    rank = std::move(next);
    if (next_classes == classes) return rank;
    classes = next_classes;
  }
}

std::string bond_symbol(const MolGraph& g, int a, int b, BondOrder order) {
  const bool both_aromatic = g.atom(a).aromatic && g.atom(b).aromatic;
  switch (order) {
    case BondOrder::Single: return both_aromatic ? "-" : "";
    case BondOrder::Double: return "=";
    case BondOrder::Triple: return "#";
    case BondOrder::Aromatic: return both_aromatic ? "" : ":";
  }
  return "";
}

std::string ring_label(int digit) {
  if (digit < 10) return std::to_string(digit);
  return "%" + std::to_string(digit);
}

// Writes the graph by DFS where the start atom and neighbour visiting order
// follow `priority` (lower first).
class Writer {
 public:
  Writer(const MolGraph& g, const std::vector<int>& priority) : g_(g), priority_(priority) {
    const auto n = static_cast<std::size_t>(g.num_atoms());
    visited_.assign(n, 0);
    children_.resize(n);
    ring_open_.resize(n);
    ring_close_.resize(n);
    sorted_nbrs_.resize(n);
    for (int i = 0; i < g.num_atoms(); ++i) {
      auto& v = sorted_nbrs_[static_cast<std::size_t>(i)];
      for (const auto& nb : g.neighbors(i)) v.push_back(nb.atom);
      std::sort(v.begin(), v.end(), [&](int a, int b) { return priority_[a] < priority_[b]; });
    }
  }

  CanonicalForm write() {
    if (g_.num_atoms() == 0) throw ChemError(ErrorCode::InvalidGraph, "empty graph");
    int start = 0;
    for (int i = 1; i < g_.num_atoms(); ++i) {
      if (priority_[static_cast<std::size_t>(i)] < priority_[static_cast<std::size_t>(start)]) start = i;
    }
    discover(start, -1);
    if (static_cast<int>(order_.size()) != g_.num_atoms()) {
      throw ChemError(ErrorCode::DisconnectedGraph, "graph has more than one fragment");
    }
    std::string out;
    emit(start, out);
    return {out, order_};
  }

 private:
  void discover(int u, int parent) {
    visited_[static_cast<std::size_t>(u)] = 1;
    order_.push_back(u);
    for (int v : sorted_nbrs_[static_cast<std::size_t>(u)]) {
      if (v == parent) continue;
      if (visited_[static_cast<std::size_t>(v)]) {
        // seen from the descendant side first; the ancestor side is skipped
        const auto key = std::minmax(u, v);
        if (ring_edges_.insert({key.first, key.second}).second) {
          ring_open_[static_cast<std::size_t>(v)].push_back(u);
          ring_close_[static_cast<std::size_t>(u)].push_back(v);
        }
        continue;
      }
      children_[static_cast<std::size_t>(u)].push_back(v);
      discover(v, u);
    }
  }

  int take_digit() {
    for (int d = 1;; ++d) {
      if (!used_digits_.count(d)) {
        used_digits_.insert(d);
        return d;
      }
    }
  }

  void emit(int u, std::string& out) {
    out += atom_text(g_, u);
    const auto uz = static_cast<std::size_t>(u);
    std::vector<int> freed;
    // closings: partner opened the ring earlier and holds the digit
    for (int v : ring_close_[uz]) {
      const auto key = std::minmax(u, v);
      const int digit = open_digits_.at({key.first, key.second});
      out += ring_label(digit);
      freed.push_back(digit);
    }
    auto opens = ring_open_[uz];
    std::sort(opens.begin(), opens.end(), [&](int a, int b) { return priority_[a] < priority_[b]; });
    for (int v : opens) {
      const int digit = take_digit();
      const auto key = std::minmax(u, v);
      open_digits_[{key.first, key.second}] = digit;
      out += bond_symbol(g_, u, v, g_.find_bond(u, v)->order);
      out += ring_label(digit);
    }
    for (int d : freed) used_digits_.erase(d);
    const auto& kids = children_[uz];
    for (std::size_t k = 0; k < kids.size(); ++k) {
      const int v = kids[k];
      const bool branch = k + 1 < kids.size();
      if (branch) out += "(";
      out += bond_symbol(g_, u, v, g_.find_bond(u, v)->order);
      emit(v, out);
      if (branch) out += ")";
    }
  }

  const MolGraph& g_;
  const std::vector<int>& priority_;
  std::vector<char> visited_;
  std::vector<int> order_;
  std::vector<std::vector<int>> sorted_nbrs_;
  std::vector<std::vector<int>> children_;
  std::vector<std::vector<int>> ring_open_;
  std::vector<std::vector<int>> ring_close_;
  std::set<std::pair<int, int>> ring_edges_;
  std::map<std::pair<int, int>, int> open_digits_;
  std::set<int> used_digits_;
};

struct Search {
  const MolGraph& g;
  int leaves = 0;
  bool have_best = false;
  CanonicalForm best;

  void run(std::vector<int> rank) {
    rank = refine(g, std::move(rank));
    if (count_classes(rank) == g.num_atoms()) {
      ++leaves;
      CanonicalForm form = Writer(g, rank).write();
      if (!have_best || form.text < best.text) {
        best = std::move(form);
        have_best = true;
      }
      return;
    }
    // first tied class
    std::vector<int> counts(static_cast<std::size_t>(count_classes(rank)), 0);
    for (int r : rank) ++counts[static_cast<std::size_t>(r)];
    int tied = 0;
    while (counts[static_cast<std::size_t>(tied)] < 2) ++tied;
    for (int i = 0; i < g.num_atoms(); ++i) {
      if (rank[static_cast<std::size_t>(i)] != tied) continue;
      // FIXME: the leaf cap keeps highly symmetric cages tractable but makes
      // their output depend on input order once it is reached.
      if (have_best && leaves >= kMaxLeaves) return;
      std::vector<int> split(rank.size());
      for (std::size_t k = 0; k < rank.size(); ++k) split[k] = 2 * rank[k] + 1;
      split[static_cast<std::size_t>(i)] -= 1;
      run(std::move(split));
    }
  }
};

}  // namespace

CanonicalForm canonical_form(const MolGraph& g) {
  if (g.num_atoms() == 0) throw ChemError(ErrorCode::InvalidGraph, "empty graph");
  if (!validate_valence(g)) throw ChemError(ErrorCode::InvalidGraph, "valence check failed");
  if (!is_connected(g)) throw ChemError(ErrorCode::DisconnectedGraph, "graph has more than one fragment");
  Search search{g, 0, false, {}};
  search.run(initial_ranks(g));
  return std::move(search.best);
}

CanonicalSmiles canonicalize(const MolGraph& g) { return {canonical_form(g).text}; }

CanonicalSmiles canonicalize(std::string_view smiles) { return canonicalize(parse_smiles(smiles)); }

std::string write_smiles(const MolGraph& g) {
  if (g.num_atoms() == 0) throw ChemError(ErrorCode::InvalidGraph, "empty graph");
  if (!validate_valence(g)) throw ChemError(ErrorCode::InvalidGraph, "valence check failed");
  std::vector<int> identity(static_cast<std::size_t>(g.num_atoms()));
  std::iota(identity.begin(), identity.end(), 0);
  return Writer(g, identity).write().text;
}

}  // namespace moldiff::chem
