#include "moldiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <optional>

#include "json.hpp"
#include "moldiff/tokenizer.hpp"

namespace moldiff::metrics {

namespace {

std::optional<chem::MolGraph> try_parse(std::string_view s) {
  try {
    return chem::parse_smiles(s);
  } catch (const chem::ChemError&) {
    return std::nullopt;
  }
}

std::optional<std::string> try_canonical(std::string_view s) {
  try {
    return chem::canonicalize(s).text;
  } catch (const chem::ChemError&) {
    return std::nullopt;
  }
}

template <typename T>
using Counts = std::map<std::vector<T>, int>;

template <typename T>
Counts<T> ngrams(std::span<const T> seq, int n) {
  Counts<T> out;
  const auto len = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + len <= seq.size(); ++i) ++out[std::vector<T>(seq.begin() + i, seq.begin() + i + len)];
  return out;
}

template <typename T>
int total(const Counts<T>& c) {
  int s = 0;
  for (const auto& [k, v] : c) s += v;
  return s;
}

template <typename T>
int overlap(const Counts<T>& a, const Counts<T>& b) {
  int s = 0;
  for (const auto& [k, v] : a) {
    if (auto it = b.find(k); it != b.end()) s += std::min(v, it->second);
  }
  return s;
}

std::vector<std::string> code_points(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 1;
    len = std::min(len, s.size() - i);
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// F-beta for one n-gram order, or nullopt when neither side has n-grams.
std::optional<double> order_f(std::span<const std::string> pred, std::span<const std::string> ref, int n, double beta) {
  const auto p = ngrams(pred, n);
  const auto r = ngrams(ref, n);
  const int tp = total(p), tr = total(r);
  if (tp == 0 && tr == 0) return std::nullopt;
  const int m = overlap(p, r);
  if (m == 0) return 0.0;
  const double prec = static_cast<double>(m) / tp;
  const double rec = static_cast<double>(m) / tr;
  const double b2 = beta * beta;
  return (1.0 + b2) * prec * rec / (b2 * prec + rec);
}

// Unparseable predictions still get partial n-gram credit, one piece per
// character.
std::vector<std::string> smiles_pieces(const std::string& s) {
  try {
    return tok::tokenize(s, tok::SmilesTokenizer::Regex);
  } catch (const std::exception&) {
    return code_points(s);
  }
}

}  // namespace

bool exact_match(std::string_view pred, std::string_view truth) {
  const auto a = try_canonical(pred);
  if (!a) return false;
  const auto b = try_canonical(truth);
  return b && *a == *b;
}

FingerprintBits circular_fingerprint(const chem::MolGraph& g, int radius) {
  if (radius < 0) throw MetricError("fingerprint radius must be nonnegative");
  if (g.num_atoms() == 0) throw chem::ChemError(chem::ErrorCode::InvalidGraph, "fingerprint of an empty graph");
  FingerprintBits fp;
  fp.radius = radius;
  std::vector<std::string> code(static_cast<std::size_t>(g.num_atoms()));
  for (int i = 0; i < g.num_atoms(); ++i) {
    const chem::Atom& a = g.atom(i);
    code[static_cast<std::size_t>(i)] = a.element + "," + std::to_string(a.formal_charge) + "," + (a.aromatic ? "a" : "n");
  }
  for (int r = 0;; ++r) {
    for (const auto& c : code) fp.bits.set(tok::fnv1a64(std::to_string(r) + ":" + c) % kFingerprintBits);
    if (r == radius) break;
    std::vector<std::string> next(code.size());
    for (int i = 0; i < g.num_atoms(); ++i) {
      std::vector<std::string> shell;
      for (const chem::Neighbor& nb : g.neighbors(i)) {
        shell.push_back(std::to_string(static_cast<int>(nb.order)) + code[static_cast<std::size_t>(nb.atom)]);
      }
      std::sort(shell.begin(), shell.end());
      std::string s = code[static_cast<std::size_t>(i)] + "(";
      for (const auto& x : shell) s += x + ";";
      next[static_cast<std::size_t>(i)] = s + ")";
    }
    code = std::move(next);
  }
  return fp;
}

double tanimoto(const FingerprintBits& a, const FingerprintBits& b) {
  if (a.radius != b.radius) throw MetricError("fingerprints built with different radii");
  const std::size_t uni = (a.bits | b.bits).count();
  if (uni == 0) return 1.0;
  return static_cast<double>((a.bits & b.bits).count()) / static_cast<double>(uni);
}

double tanimoto_smiles(std::string_view pred, std::string_view truth, int radius) {
  const auto a = try_parse(pred);
  const auto b = try_parse(truth);
  if (!a || !b || a->num_atoms() == 0 || b->num_atoms() == 0) return 0.0;
  return tanimoto(circular_fingerprint(*a, radius), circular_fingerprint(*b, radius));
}

double validity_rate(std::span<const std::string> preds) {
  if (preds.empty()) {
    std::clog << "warning: validity of an empty prediction list is reported as 0\n";
    return 0.0;
  }
  int ok = 0;
  for (const auto& p : preds) {
    const auto g = try_parse(p);
    ok += g && chem::validate_valence(*g);
  }
  return static_cast<double>(ok) / static_cast<double>(preds.size());
}

double bleu(std::span<const std::string> pred, std::span<const std::vector<std::string>> refs, int max_n) {
  if (pred.empty() || refs.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto p = ngrams(pred, n);
    std::map<std::vector<std::string>, int> clip;
    for (const auto& ref : refs) {
      for (const auto& [k, v] : ngrams(std::span<const std::string>(ref), n)) clip[k] = std::max(clip[k], v);
    }
    const int count = total(p);
    const int matched = overlap(p, clip);
    double prec;
    if (matched > 0) {
      prec = static_cast<double>(matched) / count;
    } else if (n >= 2) {
      prec = 1.0 / (count + 1.0);
    } else {
      return 0.0;
    }
    log_sum += std::log(prec);
  }
  const auto c = static_cast<double>(pred.size());
  double r = static_cast<double>(refs.front().size());
  for (const auto& ref : refs) {
    const auto len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

double bleu(std::span<const std::string> pred, std::span<const std::string> ref, int max_n) {
  const std::vector<std::vector<std::string>> refs{std::vector<std::string>(ref.begin(), ref.end())};
  return bleu(pred, refs, max_n);
}

double chrf(std::string_view pred, std::string_view ref, int char_n, int word_order, double beta) {
  auto chars = [](std::string_view s) {
    std::vector<std::string> out;
    for (auto& cp : code_points(s)) {
      if (cp != " " && cp != "\t" && cp != "\n" && cp != "\r") out.push_back(std::move(cp));
    }
    return out;
  };
  const auto pc = chars(pred), rc = chars(ref);
  const auto pw = words(pred), rw = words(ref);
  double sum = 0.0;
  int orders = 0;
  auto add = [&](std::optional<double> f) {
    if (f) {
      sum += *f;
      ++orders;
    }
  };
  for (int n = 1; n <= char_n; ++n) add(order_f(pc, rc, n, beta));
  for (int n = 1; n <= word_order; ++n) add(order_f(pw, rw, n, beta));
  return orders == 0 ? 1.0 : sum / orders;
}

Report evaluate(std::span<const std::string> preds, std::span<const std::string> refs, bool molecules) {
  if (preds.size() != refs.size()) throw MetricError("prediction and reference counts differ");
  Report r;
  r.n_examples = static_cast<int>(preds.size());
  if (preds.empty()) return r;
  const auto n = static_cast<double>(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::vector<std::string> p, q;
    if (molecules) {
      r.exact_match += exact_match(preds[i], refs[i]);
      r.tanimoto_mean += tanimoto_smiles(preds[i], refs[i]);
      p = smiles_pieces(preds[i]);
      q = smiles_pieces(refs[i]);
    } else {
      r.exact_match += preds[i] == refs[i];
      p = tok::tokenize_text(preds[i]);
      q = tok::tokenize_text(refs[i]);
    }
    r.bleu += bleu(p, q);
    r.chrf += chrf(preds[i], refs[i]);
  }
  r.exact_match /= n;
  r.tanimoto_mean /= n;
  r.bleu /= n;
  r.chrf /= n;
  if (molecules) r.validity = validity_rate(preds);
  return r;
}

std::string to_json(const Report& r) {
  const nlohmann::ordered_json j = {{"exact_match", r.exact_match}, {"validity", r.validity}, {"tanimoto_mean", r.tanimoto_mean},
                                    {"bleu", r.bleu},               {"chrf", r.chrf},         {"n_examples", r.n_examples}};
  return j.dump(2) + "\n";
}

}  // namespace moldiff::metrics
