#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "moldiff/chem.hpp"
#include "moldiff/triplet.hpp"
#include "test_util.hpp"

using namespace moldiff;
using namespace moldiff::triplet;
using Tokens = std::vector<std::string>;

namespace {

ErrorCode strict_error(const TripletSeq& ts) {
  try {
    triplets_to_graph(ts, DecodeMode::Strict);
  } catch (const TripletError& e) {
    return e.code();
  }
  FAIL("expected a strict-mode error");
  return ErrorCode::MalformedSegment;
}

Triplet single(const char* h, int i, const char* t, int j) { return {{h, i}, Relation::Single, {t, j}}; }

}  // namespace

TEST_CASE("ethanol serializes to two single-bond triplets") {
  const TripletSeq ts = graph_to_triplets(chem::parse_smiles("CCO"));
  REQUIRE(ts.triplets.size() == 2);
  CHECK(ts.triplets[0] == single("C", 1, "C", 2));
  CHECK(ts.triplets[1] == single("C", 2, "O", 3));
  CHECK_FALSE(ts.isolated);
  CHECK(graph_to_triplets(chem::parse_smiles("OCC")) == ts);
}

TEST_CASE("ethanol token sequence") {
  const Tokens expected{"[HEAD]", "C_1", "[REL]", "SINGLE", "[TAIL]", "C_2", "[SEP]",
                        "[HEAD]", "C_2", "[REL]", "SINGLE", "[TAIL]", "O_3"};
  const TripletSeq ts = graph_to_triplets(chem::parse_smiles("CCO"));
  CHECK(triplets_to_tokens(ts) == expected);
  const DecodeResult back = tokens_to_triplets(expected, DecodeMode::Strict);
  CHECK(back.triplets == ts);
  CHECK(back.skipped == 0);
  CHECK(chem::canonicalize(triplets_to_graph(back.triplets, DecodeMode::Strict)).text == chem::canonicalize(chem::parse_smiles("CCO")).text);
}

TEST_CASE("single atoms use an empty triplet list and a degenerate segment") {
  const TripletSeq ts = graph_to_triplets(chem::parse_smiles("N"));
  CHECK(ts.triplets.empty());
  REQUIRE(ts.isolated);
  CHECK(ts.isolated->label == "N");
  const Tokens tokens = triplets_to_tokens(ts);
  CHECK(tokens == Tokens{"[HEAD]", "N_1", "[REL]", "NONE", "[TAIL]", "N_1"});
  CHECK(decode_smiles(tokens, DecodeMode::Strict) == std::optional<std::string>("N"));
}

TEST_CASE("benzene gives six aromatic triplets forming a cycle") {
  const TripletSeq ts = graph_to_triplets(chem::parse_smiles("c1ccccc1"));
  REQUIRE(ts.triplets.size() == 6);
  std::vector<int> degree(7, 0);
  for (const auto& t : ts.triplets) {
    CHECK(t.rel == Relation::Aromatic);
    CHECK(t.head.index < t.tail.index);
    ++degree[static_cast<std::size_t>(t.head.index)];
    ++degree[static_cast<std::size_t>(t.tail.index)];
  }
  for (int i = 1; i <= 6; ++i) CHECK(degree[static_cast<std::size_t>(i)] == 2);
  CHECK(chem::is_connected(triplets_to_graph(ts, DecodeMode::Strict)));
}

TEST_CASE("token counts") {
  CHECK(triplets_to_tokens(TripletSeq{}).empty());
  TripletSeq one;
  one.triplets.push_back(single("C", 1, "O", 2));
  const Tokens t = triplets_to_tokens(one);
  CHECK(t.size() == 6);
  CHECK(std::count(t.begin(), t.end(), "[SEP]") == 0);
  CHECK(tokens_to_triplets(Tokens{}, DecodeMode::Strict).triplets.empty());
}

TEST_CASE("robust decoding skips a segment without its tail") {
  const Tokens broken{"[HEAD]", "C_1", "[REL]", "SINGLE", "[TAIL]", "C_2", "[SEP]",
                      "[HEAD]", "C_2", "[REL]", "SINGLE", "O_3", "[SEP]",
                      "[HEAD]", "C_2", "[REL]", "DOUBLE", "[TAIL]", "O_3"};
  const DecodeResult r = tokens_to_triplets(broken, DecodeMode::Robust);
  CHECK(r.skipped == 1);
  REQUIRE(r.triplets.triplets.size() == 2);
  CHECK(r.triplets.triplets[1].rel == Relation::Double);
  try {
    tokens_to_triplets(broken, DecodeMode::Strict);
    FAIL("strict mode accepted a malformed segment");
  } catch (const TripletError& e) {
    CHECK(e.code() == ErrorCode::MalformedSegment);
  }
}

TEST_CASE("decoding stops at EOS and ignores padding") {
  const Tokens t{"[HEAD]", "C_1", "[REL]", "SINGLE", "[TAIL]", "O_2", "[EOS]", "[HEAD]", "garbage", "[PAD]"};
  CHECK(decode_smiles(t, DecodeMode::Strict) == std::optional<std::string>("CO"));
}

TEST_CASE("unreadable atom tokens are malformed") {
  CHECK_FALSE(parse_atom_token("C_0"));
  CHECK_FALSE(parse_atom_token("C1"));
  CHECK_FALSE(parse_atom_token("Xx_3"));
  CHECK_FALSE(parse_atom_token("CC_3"));
  CHECK(parse_atom_token("[NH3+]_12") == std::optional<AtomRef>(AtomRef{"[NH3+]", 12}));
  CHECK(parse_atom_token("c;Ra_4") == std::optional<AtomRef>(AtomRef{"c;Ra", 4}));
}

TEST_CASE("duplicate identical bonds merge into one") {
  TripletSeq ts;
  ts.triplets = {single("C", 1, "C", 2), single("C", 1, "C", 2), single("C", 2, "O", 3)};
  const chem::MolGraph g = triplets_to_graph(ts, DecodeMode::Strict);
  CHECK(g.num_bonds() == 2);
  CHECK(chem::canonicalize(g).text == chem::canonicalize(chem::parse_smiles("CCO")).text);
}

TEST_CASE("label conflicts resolve by majority, ties to the first label") {
  TripletSeq tie;
  tie.triplets = {single("C", 1, "C", 2), single("N", 2, "O", 3)};
  const chem::MolGraph g = triplets_to_graph(tie, DecodeMode::Robust);
  CHECK(g.atom(1).element == "C");
  CHECK(strict_error(tie) == ErrorCode::IndexConflict);

  TripletSeq majority;
  majority.triplets = {single("C", 1, "C", 2), single("N", 2, "O", 3), single("N", 2, "C", 4)};
  CHECK(triplets_to_graph(majority, DecodeMode::Robust).atom(1).element == "N");
}

TEST_CASE("strict-mode structural errors") {
  CHECK(strict_error(TripletSeq{}) == ErrorCode::EmptyTriplets);

  TripletSeq conflict;
  conflict.triplets = {single("C", 1, "C", 2), {{"C", 1}, Relation::Double, {"C", 2}}};
  CHECK(strict_error(conflict) == ErrorCode::BondConflict);

  TripletSeq gap;
  gap.triplets = {single("C", 1, "C", 3)};
  CHECK(strict_error(gap) == ErrorCode::IndexGap);
  CHECK(triplets_to_graph(gap, DecodeMode::Robust).num_atoms() == 2);

  TripletSeq split;
  split.triplets = {single("C", 1, "C", 2), single("C", 3, "O", 4), single("O", 4, "N", 5)};
  CHECK(strict_error(split) == ErrorCode::DisconnectedGraph);
  const chem::MolGraph kept = triplets_to_graph(split, DecodeMode::Robust);
  CHECK(chem::canonicalize(kept).text == chem::canonicalize(chem::parse_smiles("CON")).text);
}

TEST_CASE("corpus round trip for every tokenizer style") {
  for (auto style : {tok::SmilesTokenizer::Regex, tok::SmilesTokenizer::Ais}) {
    for (const auto& s : test::corpus_smiles()) {
      const chem::MolGraph g = chem::parse_smiles(s);
      const std::string canonical = chem::canonicalize(g).text;
      const TripletSeq ts = graph_to_triplets(g, style);
      CHECK(static_cast<int>(ts.triplets.size()) == g.num_bonds());
      const Tokens tokens = triplets_to_tokens(ts);
      const DecodeResult back = tokens_to_triplets(tokens, DecodeMode::Strict);
      CHECK(back.triplets == ts);
      CHECK(chem::canonicalize(triplets_to_graph(back.triplets, DecodeMode::Strict)).text == canonical);
    }
  }
}

TEST_CASE("serialization depends only on the molecule, not its atom numbering") {
  std::mt19937 rng(11);
  for (const char* s : {"CC(=O)Nc1ccc(O)cc1", "C1CC2CCC1C2", "OC(=O)C[NH3+]"}) {
    const chem::MolGraph g = chem::parse_smiles(s);
    const Tokens reference = triplets_to_tokens(graph_to_triplets(g));
    std::vector<int> perm(static_cast<std::size_t>(g.num_atoms()));
    std::iota(perm.begin(), perm.end(), 0);
    for (int k = 0; k < 30; ++k) {
      std::shuffle(perm.begin(), perm.end(), rng);
      CHECK(triplets_to_tokens(graph_to_triplets(chem::permute(g, perm))) == reference);
    }
  }
}
