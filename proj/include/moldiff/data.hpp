#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moldiff::data {

struct PairRecord {
  std::string smiles;
  std::string caption;
  int id = 0;
  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

enum class ErrorCode { IoError, FormatError, BadFractions };

class DataError : public std::runtime_error {
 public:
  DataError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct LoadReport {
  std::vector<PairRecord> records;
  int malformed = 0;
  int invalid_smiles = 0;
  int too_long = 0;
  int empty_caption = 0;

  int dropped() const { return malformed + invalid_smiles + too_long + empty_caption; }
};

/// NFC, whitespace runs collapsed to one space and trimmed, lowercase.
std::string normalize_caption(const std::string& text);

/// Reads `smiles<TAB>caption` lines; a first line whose first cell is
/// literally "smiles" is a header. Record ids are 0-based data line
/// numbers. Stored SMILES are canonical. Strict mode throws FormatError on
/// a line without a tab; otherwise such lines are counted and skipped.
LoadReport load_corpus(std::istream& in, int max_smiles_len = 256, bool strict = false);
LoadReport load_corpus(const std::string& path, int max_smiles_len = 256, bool strict = false);

struct Split {
  std::vector<PairRecord> train;
  std::vector<PairRecord> valid;
  std::vector<PairRecord> test;
};

/// Seeded shuffle, then floor(n * f) records for valid and test each and
/// the remainder for train.
Split split(std::span<const PairRecord> records, std::array<double, 3> fractions = {0.8, 0.1, 0.1}, std::uint64_t seed = 0);

/// One record id per line.
void write_manifest(const std::string& path, std::span<const PairRecord> records);

}  // namespace moldiff::data
