#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "moldiff/denoiser.hpp"
#include "moldiff/schedule.hpp"
#include "moldiff/tokenizer.hpp"
#include "moldiff/trainer.hpp"

namespace moldiff::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  train::TrainConfig config;
  long step = 0;
  model::ModelParams params;
  sched::TokenSchedule schedule;
  tok::Vocab target_vocab;
  tok::Vocab cond_vocab;
};

/// Writes `<dir>/model.bin` plus both vocab files. The archive is the
/// magic "MDCK", a u32 manifest length, the JSON manifest, then the
/// arrays it lists: parameters as f32, the schedule as f64, all
/// little-endian.
void save(const std::string& dir, const train::TrainConfig& cfg, long step, const model::ModelParams& params,
          const sched::TokenSchedule& schedule, const tok::Vocab& target_vocab, const tok::Vocab& cond_vocab);

/// Validates the format version, vocab hashes and every array shape
/// against the stored config.
Checkpoint load(const std::string& dir);

}  // namespace moldiff::ckpt
