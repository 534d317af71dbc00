#include "moldiff/chem.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <optional>

namespace moldiff::chem {

namespace {

struct ElementInfo {
  std::string_view symbol;
  int number;
  std::array<int, 3> valences;  // ascending, 0 = unused
  bool organic;                 // may appear outside brackets
};

// Organic subset first; the rest are only reachable through brackets.
constexpr std::array<ElementInfo, 22> kElements{{
    {"H", 1, {1, 0, 0}, true},
    {"B", 5, {3, 0, 0}, true},
    {"C", 6, {4, 0, 0}, true},
    {"N", 7, {3, 0, 0}, true},
    {"O", 8, {2, 0, 0}, true},
    {"F", 9, {1, 0, 0}, true},
    {"P", 15, {3, 5, 0}, true},
    {"S", 16, {2, 4, 6}, true},
    {"Cl", 17, {1, 0, 0}, true},
    {"Br", 35, {1, 0, 0}, true},
    {"I", 53, {1, 0, 0}, true},
    {"Li", 3, {1, 0, 0}, false},
    {"Na", 11, {1, 0, 0}, false},
    {"K", 19, {1, 0, 0}, false},
    {"Mg", 12, {2, 0, 0}, false},
    {"Ca", 20, {2, 0, 0}, false},
    {"Zn", 30, {2, 0, 0}, false},
    {"Al", 13, {3, 0, 0}, false},
    {"Si", 14, {4, 0, 0}, false},
    {"Se", 34, {2, 4, 6}, false},
    {"As", 33, {3, 5, 0}, false},
    {"Te", 52, {2, 4, 6}, false},
}};

const ElementInfo* find_element(std::string_view symbol) {
  for (const auto& e : kElements) {
    if (e.symbol == symbol) return &e;
  }
  return nullptr;
}

bool pi_donor(std::string_view element) {
  return element == "C" || element == "N" || element == "P" || element == "B";
}

bool is_metal(int number) {
  switch (number) {
    case 3: case 11: case 19: case 12: case 20: case 30: case 13:
      return true;
    default:
      return false;
  }
}

// Allowed valences after accounting for formal charge.
std::vector<int> allowed_valences(const Atom& atom) {
  const ElementInfo* info = find_element(atom.element);
  std::vector<int> out;
  if (info == nullptr) return out;
  const int q = atom.formal_charge;
  for (int v : info->valences) {
    if (v == 0) continue;
    int adj = v;
    switch (info->number) {
      case 6: case 14: case 1: adj = v - std::abs(q); break;
      case 5: adj = v - q; break;
      default: adj = is_metal(info->number) ? v - q : v + q; break;
    }
    if (adj >= 0) out.push_back(adj);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string capitalize(std::string_view s) {
  std::string out(s);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

class SmilesParser {
 public:
  SmilesParser(std::string_view text, ParseWarnings* warnings) : s_(text), warnings_(warnings) {}

  MolGraph run() {
    if (s_.empty()) throw ChemError(ErrorCode::EmptyInput, "empty SMILES");
    for (char c : s_) {
      if (static_cast<unsigned char>(c) > 127) fail(ErrorCode::SyntaxError, "non-ASCII character");
    }
    while (pos_ < s_.size()) step();
    if (pending_bond_) fail(ErrorCode::SyntaxError, "dangling bond symbol");
    if (!branches_.empty()) fail(ErrorCode::UnbalancedBranch, "unclosed '('");
    if (!rings_.empty()) {
      fail(ErrorCode::UnclosedRing, "ring label " + std::to_string(rings_.begin()->first) + " never closed");
    }
    if (g_.num_atoms() == 0) fail(ErrorCode::EmptyInput, "no atoms");
    return std::move(g_);
  }

 private:
  struct OpenRing {
    int atom;
    std::optional<BondOrder> order;
  };

  [[noreturn]] void fail(ErrorCode code, const std::string& msg) const {
    throw ChemError(code, msg + " at offset " + std::to_string(pos_) + " in '" + std::string(s_) + "'");
  }

  void warn(const std::string& msg) {
    if (warnings_ != nullptr) warnings_->messages.push_back(msg);
  }

  char peek(std::size_t off = 0) const { return pos_ + off < s_.size() ? s_[pos_ + off] : '\0'; }

  void step() {
    const char c = peek();
    switch (c) {
      case '(':
        if (prev_ < 0 || pending_bond_) fail(ErrorCode::SyntaxError, "branch without a preceding atom");
        branches_.push_back(prev_);
        branch_open_ = true;
        ++pos_;
        return;
      case ')':
        if (branches_.empty()) fail(ErrorCode::UnbalancedBranch, "unmatched ')'");
        if (branch_open_ || pending_bond_) fail(ErrorCode::SyntaxError, "empty branch");
        prev_ = branches_.back();
        branches_.pop_back();
        ++pos_;
        return;
      case '-': set_bond(BondOrder::Single); return;
      case '=': set_bond(BondOrder::Double); return;
      case '#': set_bond(BondOrder::Triple); return;
      case ':': set_bond(BondOrder::Aromatic); return;
      case '/':
      case '\\':
        warn("stereo bond marker discarded");
        set_bond(BondOrder::Single);
        return;
      case '.':
        fail(ErrorCode::MultiFragment, "multi-fragment SMILES are not supported");
      case '%': {
        if (!std::isdigit(static_cast<unsigned char>(peek(1))) ||
            !std::isdigit(static_cast<unsigned char>(peek(2)))) {
          fail(ErrorCode::SyntaxError, "'%' must be followed by two digits");
        }
        const int label = (peek(1) - '0') * 10 + (peek(2) - '0');
        pos_ += 3;
        ring_bond(label);
        return;
      }
      case '[':
        bracket_atom();
        return;
      default:
        break;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      ++pos_;
      ring_bond(c - '0');
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      organic_atom();
      return;
    }
    fail(ErrorCode::SyntaxError, std::string("unexpected character '") + c + "'");
  }

  void set_bond(BondOrder order) {
    if (pending_bond_) fail(ErrorCode::SyntaxError, "consecutive bond symbols");
    if (prev_ < 0) fail(ErrorCode::SyntaxError, "bond without a preceding atom");
    pending_bond_ = order;
    ++pos_;
  }

  BondOrder default_order(int a, int b) const {
    return g_.atom(a).aromatic && g_.atom(b).aromatic ? BondOrder::Aromatic : BondOrder::Single;
  }

  void attach(Atom atom) {
    const int idx = g_.add_atom(std::move(atom));
    if (prev_ >= 0) {
      const BondOrder order = pending_bond_.value_or(default_order(prev_, idx));
      g_.add_bond(prev_, idx, order);
    } else if (pending_bond_) {
      fail(ErrorCode::SyntaxError, "bond without a preceding atom");
    }
    pending_bond_.reset();
    prev_ = idx;
    branch_open_ = false;
  }

  void ring_bond(int label) {
    if (prev_ < 0) fail(ErrorCode::SyntaxError, "ring label before any atom");
    auto it = rings_.find(label);
    if (it == rings_.end()) {
      rings_.emplace(label, OpenRing{prev_, pending_bond_});
      pending_bond_.reset();
      return;
    }
    const OpenRing open = it->second;
    rings_.erase(it);
    if (open.atom == prev_) fail(ErrorCode::SyntaxError, "ring closure onto the same atom");
    std::optional<BondOrder> order = open.order;
    if (pending_bond_) {
      if (order && *order != *pending_bond_) fail(ErrorCode::SyntaxError, "conflicting ring bond symbols");
      order = pending_bond_;
    }
    pending_bond_.reset();
    if (g_.find_bond(open.atom, prev_) != nullptr) fail(ErrorCode::SyntaxError, "duplicate bond via ring closure");
    g_.add_bond(open.atom, prev_, order.value_or(default_order(open.atom, prev_)));
  }

  void organic_atom() {
    const char c = peek();
    Atom atom;
    if (c == 'C' && peek(1) == 'l') {
      atom.element = "Cl";
      pos_ += 2;
    } else if (c == 'B' && peek(1) == 'r') {
      atom.element = "Br";
      pos_ += 2;
    } else {
      switch (c) {
        case 'B': case 'C': case 'N': case 'O': case 'P': case 'S': case 'F': case 'I': case 'H':
          atom.element = std::string(1, c);
          break;
        case 'b': case 'c': case 'n': case 'o': case 'p': case 's':
          atom.element = std::string(1, static_cast<char>(std::toupper(c)));
          atom.aromatic = true;
          break;
        default:
          fail(ErrorCode::UnknownElement, std::string("unknown element '") + c + "'");
      }
      ++pos_;
    }
    attach(std::move(atom));
  }

  void bracket_atom() {
    const std::size_t start = pos_;
    const std::size_t close = s_.find(']', pos_);
    if (close == std::string_view::npos) fail(ErrorCode::SyntaxError, "unterminated bracket atom");
    ++pos_;
    // isotope
    bool isotope = false;
    while (std::isdigit(static_cast<unsigned char>(peek()))) {
      ++pos_;
      isotope = true;
    }
    if (isotope) warn("isotope label discarded");
    Atom atom;
    atom.bracket = true;
    // element: aromatic two-letter forms first, then capitalised symbols
    std::string sym;
    const char c0 = peek();
    const char c1 = peek(1);
    if (std::islower(static_cast<unsigned char>(c0))) {
      const std::string two{c0, c1};
      if ((two == "se" || two == "as" || two == "te") && pos_ + 1 < close) {
        sym = two;
        pos_ += 2;
      } else {
        sym = std::string(1, c0);
        ++pos_;
      }
      atom.aromatic = true;
      atom.element = capitalize(sym);
      if (!find_element(atom.element)) fail(ErrorCode::UnknownElement, "unknown aromatic element '" + sym + "'");
    } else if (std::isupper(static_cast<unsigned char>(c0))) {
      if (std::islower(static_cast<unsigned char>(c1)) && find_element(std::string{c0, c1}) != nullptr) {
        atom.element = std::string{c0, c1};
        pos_ += 2;
      } else {
        atom.element = std::string(1, c0);
        ++pos_;
        if (std::islower(static_cast<unsigned char>(peek())) || !find_element(atom.element)) {
          fail(ErrorCode::UnknownElement, "unknown element in '" + std::string(s_.substr(start, close - start + 1)) + "'");
        }
      }
    } else {
      fail(ErrorCode::SyntaxError, "bracket atom without element");
    }
    // chirality
    if (peek() == '@') {
      warn("chirality marker discarded");
      while (peek() == '@') ++pos_;
      while (std::isalnum(static_cast<unsigned char>(peek())) && peek() != 'H') ++pos_;
    }
    if (peek() == 'H') {
      ++pos_;
      int count = 1;
      if (std::isdigit(static_cast<unsigned char>(peek()))) {
        count = 0;
        while (std::isdigit(static_cast<unsigned char>(peek()))) count = count * 10 + (s_[pos_++] - '0');
      }
      atom.explicit_h = count;
    }
    if (peek() == '+' || peek() == '-') {
      const char sign = peek();
      int magnitude = 0;
      while (peek() == sign) {
        ++magnitude;
        ++pos_;
      }
      if (magnitude == 1 && std::isdigit(static_cast<unsigned char>(peek()))) {
        magnitude = 0;
        while (std::isdigit(static_cast<unsigned char>(peek()))) magnitude = magnitude * 10 + (s_[pos_++] - '0');
      }
      atom.formal_charge = sign == '+' ? magnitude : -magnitude;
    }
    if (peek() == ':') {
      ++pos_;
      while (std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
    }
    if (pos_ != close) fail(ErrorCode::SyntaxError, "malformed bracket atom");
    ++pos_;
    attach(std::move(atom));
  }

  std::string_view s_;
  ParseWarnings* warnings_;
  std::size_t pos_ = 0;
  MolGraph g_;
  int prev_ = -1;
  bool branch_open_ = false;
  std::optional<BondOrder> pending_bond_;
  std::vector<int> branches_;
  std::map<int, OpenRing> rings_;
};

}  // namespace

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnclosedRing: return "UnclosedRing";
    case ErrorCode::UnbalancedBranch: return "UnbalancedBranch";
    case ErrorCode::UnknownElement: return "UnknownElement";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::MultiFragment: return "MultiFragment";
    case ErrorCode::InvalidGraph: return "InvalidGraph";
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
  }
  return "Unknown";
}

ChemError::ChemError(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

int MolGraph::add_atom(Atom atom) {
  atom.index = num_atoms();
  atoms_.push_back(std::move(atom));
  adjacency_.emplace_back();
  return atoms_.back().index;
}

void MolGraph::add_bond(int a, int b, BondOrder order) {
  if (a < 0 || b < 0 || a >= num_atoms() || b >= num_atoms()) {
    throw ChemError(ErrorCode::SyntaxError, "bond endpoint out of range");
  }
  if (a == b) throw ChemError(ErrorCode::SyntaxError, "self bond");
  if (find_bond(a, b) != nullptr) throw ChemError(ErrorCode::SyntaxError, "duplicate bond");
  bonds_.push_back({a, b, order});
  adjacency_[static_cast<std::size_t>(a)].push_back({b, order});
  adjacency_[static_cast<std::size_t>(b)].push_back({a, order});
}

const Bond* MolGraph::find_bond(int a, int b) const {
  for (const auto& bond : bonds_) {
    if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a)) return &bond;
  }
  return nullptr;
}

bool is_supported_element(std::string_view symbol) { return find_element(symbol) != nullptr; }

int atomic_number(std::string_view symbol) {
  const ElementInfo* info = find_element(symbol);
  return info != nullptr ? info->number : 0;
}

MolGraph parse_smiles(std::string_view smiles, ParseWarnings* warnings) {
  return SmilesParser(smiles, warnings).run();
}

int bond_order_sum(const MolGraph& g, int atom) {
  int sum = 0;
  for (const auto& n : g.neighbors(atom)) {
    sum += n.order == BondOrder::Aromatic ? 1 : static_cast<int>(n.order);
  }
  return sum;
}

int implicit_hydrogens(const MolGraph& g, int atom) {
  const Atom& a = g.atom(atom);
  const ElementInfo* info = find_element(a.element);
  if (info == nullptr || !info->organic || a.formal_charge != 0) return 0;
  int sum = bond_order_sum(g, atom);
  if (a.aromatic && pi_donor(a.element)) {
    bool has_aromatic = false;
    for (const auto& n : g.neighbors(atom)) has_aromatic |= n.order == BondOrder::Aromatic;
    // one valence unit goes to the delocalised double bond, unless an
    // exocyclic double bond already took it
    bool has_double = false;
    for (const auto& n : g.neighbors(atom)) has_double |= n.order == BondOrder::Double;
    if (has_aromatic && !has_double) sum += 1;
  }
  for (int v : info->valences) {
    if (v != 0 && v >= sum) return v - sum;
  }
  return 0;
}

int hydrogen_count(const MolGraph& g, int atom) {
  const Atom& a = g.atom(atom);
  return a.bracket ? a.explicit_h : implicit_hydrogens(g, atom);
}

bool validate_valence(const MolGraph& g) {
  for (int i = 0; i < g.num_atoms(); ++i) {
    const auto allowed = allowed_valences(g.atom(i));
    if (allowed.empty()) return false;
    if (bond_order_sum(g, i) + hydrogen_count(g, i) > allowed.back()) return false;
  }
  return true;
}

bool is_connected(const MolGraph& g) {
  if (g.num_atoms() == 0) return false;
  std::vector<char> seen(static_cast<std::size_t>(g.num_atoms()), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (const auto& n : g.neighbors(u)) {
      if (!seen[static_cast<std::size_t>(n.atom)]) {
        seen[static_cast<std::size_t>(n.atom)] = 1;
        ++count;
        stack.push_back(n.atom);
      }
    }
  }
  return count == g.num_atoms();
}

std::vector<char> ring_atoms(const MolGraph& g) {
  // an atom is on a cycle iff one of its bonds is not a bridge
  const auto n = static_cast<std::size_t>(g.num_atoms());
  std::vector<int> disc(n, -1), low(n, 0);
  std::vector<char> in_ring(n, 0);
  int timer = 0;
  auto dfs = [&](auto&& self, int u, int parent) -> void {
    disc[static_cast<std::size_t>(u)] = low[static_cast<std::size_t>(u)] = timer++;
    for (const auto& nb : g.neighbors(u)) {
      const auto v = static_cast<std::size_t>(nb.atom);
      if (nb.atom == parent) continue;
      if (disc[v] >= 0) {
        low[static_cast<std::size_t>(u)] = std::min(low[static_cast<std::size_t>(u)], disc[v]);
        continue;
      }
      self(self, nb.atom, u);
      low[static_cast<std::size_t>(u)] = std::min(low[static_cast<std::size_t>(u)], low[v]);
      if (low[v] <= disc[static_cast<std::size_t>(u)]) {
        in_ring[static_cast<std::size_t>(u)] = 1;
        in_ring[v] = 1;
      }
    }
  };
  for (int i = 0; i < g.num_atoms(); ++i) {
    if (disc[static_cast<std::size_t>(i)] < 0) dfs(dfs, i, -1);
  }
  return in_ring;
}

std::string atom_text(const MolGraph& g, int atom) {
  const Atom& a = g.atom(atom);
  const ElementInfo* info = find_element(a.element);
  const bool aromatic_organic =
      a.element == "B" || a.element == "C" || a.element == "N" || a.element == "O" || a.element == "P" || a.element == "S";
  const int hydrogens = hydrogen_count(g, atom);
  const bool organic = info != nullptr && info->organic && a.element != "H" && (!a.aromatic || aromatic_organic);
  const bool needs_bracket = !organic || a.formal_charge != 0 || hydrogens != implicit_hydrogens(g, atom);
  const std::string symbol = a.aromatic ? lower(a.element) : a.element;
  if (!needs_bracket) return symbol;
  std::string out = "[" + symbol;
  if (hydrogens > 0) {
    out += "H";
    if (hydrogens > 1) out += std::to_string(hydrogens);
  }
  if (a.formal_charge != 0) {
    out += a.formal_charge > 0 ? "+" : "-";
    if (std::abs(a.formal_charge) > 1) out += std::to_string(std::abs(a.formal_charge));
  }
  out += "]";
  return out;
}

MolGraph permute(const MolGraph& g, std::span<const int> perm) {
  const int n = g.num_atoms();
  if (static_cast<int>(perm.size()) != n) throw std::invalid_argument("permutation size mismatch");
  std::vector<int> inverse(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    const int p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= n || inverse[static_cast<std::size_t>(p)] != -1) throw std::invalid_argument("not a permutation");
    inverse[static_cast<std::size_t>(p)] = i;
  }
  MolGraph out;
  for (int j = 0; j < n; ++j) out.add_atom(g.atom(inverse[static_cast<std::size_t>(j)]));
  for (const auto& b : g.bonds()) {
    out.add_bond(perm[static_cast<std::size_t>(b.a)], perm[static_cast<std::size_t>(b.b)], b.order);
  }
  return out;
}

}  // namespace moldiff::chem
