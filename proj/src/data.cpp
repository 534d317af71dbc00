#include "moldiff/data.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "moldiff/chem.hpp"
#include "moldiff/rng.hpp"

namespace moldiff::data {

std::string normalize_caption(const std::string& text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw DataError(ErrorCode::FormatError, "ICU NFC normalizer unavailable");
  icu::UnicodeString s = nfc->normalize(icu::UnicodeString::fromUTF8(text), status);
  if (U_FAILURE(status)) throw DataError(ErrorCode::FormatError, "caption is not valid text");
  s.toLower(icu::Locale::getRoot());

  icu::UnicodeString collapsed;
  bool pending_space = false;
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      pending_space = !collapsed.isEmpty();
      continue;
    }
    if (pending_space) collapsed.append(static_cast<UChar>(' '));
    pending_space = false;
    collapsed.append(c);
  }
  std::string out;
  collapsed.toUTF8String(out);
  return out;
}

LoadReport load_corpus(std::istream& in, int max_smiles_len, bool strict) {
  LoadReport report;
  std::string line;
  int line_no = 0;
  int data_index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (line_no == 1 && line.substr(0, tab) == "smiles") continue;
    const int id = data_index++;
    if (tab == std::string::npos) {
      if (strict) throw DataError(ErrorCode::FormatError, "line " + std::to_string(line_no) + ": expected smiles<TAB>caption");
      ++report.malformed;
      continue;
    }
    const std::string smiles = line.substr(0, tab);
    if (static_cast<int>(smiles.size()) > max_smiles_len) {
      ++report.too_long;
      continue;
    }
    std::string canonical;
    try {
      canonical = chem::canonicalize(smiles).text;
    } catch (const chem::ChemError&) {
      ++report.invalid_smiles;
      continue;
    }
    std::string caption = normalize_caption(line.substr(tab + 1));
    if (caption.empty()) {
      ++report.empty_caption;
      continue;
    }
    report.records.push_back({std::move(canonical), std::move(caption), id});
  }
  return report;
}

LoadReport load_corpus(const std::string& path, int max_smiles_len, bool strict) {
  std::ifstream in(path);
  if (!in) throw DataError(ErrorCode::IoError, "cannot open corpus " + path);
  return load_corpus(in, max_smiles_len, strict);
}

Split split(std::span<const PairRecord> records, std::array<double, 3> fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions) {
    if (f < 0.0) throw DataError(ErrorCode::BadFractions, "split fractions must be non-negative");
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError(ErrorCode::BadFractions, "split fractions must sum to 1");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const auto n = static_cast<double>(records.size());
  // the epsilon keeps e.g. 10 * 0.1 from flooring to 0 after rounding
  const auto n_valid = static_cast<std::size_t>(std::floor(n * fractions[1] + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(n * fractions[2] + 1e-9));
  const std::size_t n_train = records.size() - n_valid - n_test;
  Split out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const PairRecord& r = records[order[k]];
    if (k < n_train) {
      out.train.push_back(r);
    } else if (k < n_train + n_valid) {
      out.valid.push_back(r);
    } else {
      out.test.push_back(r);
    }
  }
  return out;
}

void write_manifest(const std::string& path, std::span<const PairRecord> records) {
  std::ofstream out(path);
  if (!out) throw DataError(ErrorCode::IoError, "cannot write manifest " + path);
  for (const auto& r : records) out << r.id << '\n';
}

}  // namespace moldiff::data
