#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moldiff/data.hpp"
#include "moldiff/denoiser.hpp"
#include "moldiff/diffusion.hpp"
#include "moldiff/schedule.hpp"
#include "moldiff/tokenizer.hpp"

namespace moldiff::train {

enum class Direction { S2G, G2S };
enum class ScheduleKind { UniformSqrt, TokenAware };

Direction parse_direction(std::string_view name);
const char* to_string(Direction d);
ScheduleKind parse_schedule_kind(std::string_view name);
const char* to_string(ScheduleKind k);

struct TrainConfig {
  Direction direction = Direction::S2G;
  ScheduleKind schedule = ScheduleKind::TokenAware;
  sched::Mapping mapping = sched::Mapping::Linear;
  tok::SmilesTokenizer tokenizer = tok::SmilesTokenizer::Ais;
  int T = 2000;
  long steps = 10000;
  int batch = 64;
  double lr = 5e-5;
  long K = 2000;
  std::uint64_t seed = 0;

  int d = 64;
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int ff = 256;
  int max_target = 128;
  int max_cond = 64;
  double sigma0 = 0.0;
  double clip = 1.0;
  int stride = 1;
  bool clamp = true;

  /// Defaults per direction: batch 64 with lr 5e-5 for
  /// text-to-molecule, lr 1e-4 for captioning.
  static TrainConfig preset(Direction d);
  model::ModelConfig model_config(int target_vocab, int cond_vocab) const;
  diff::DiffusionConfig diffusion_config() const;
};

/// Token sequences for one direction and the vocabularies that id them.
class Task {
 public:
  /// Builds both vocabularies from the records.
  static Task build(std::span<const data::PairRecord> records, Direction dir, tok::SmilesTokenizer kind);
  static Task with_vocabs(Direction dir, tok::SmilesTokenizer kind, tok::Vocab target, tok::Vocab cond);

  Direction direction() const { return dir_; }
  tok::SmilesTokenizer tokenizer() const { return kind_; }
  const tok::Vocab& target_vocab() const { return target_; }
  const tok::Vocab& cond_vocab() const { return cond_; }

  std::vector<std::string> target_tokens(const data::PairRecord& r) const;
  std::vector<std::string> cond_tokens(const data::PairRecord& r) const;
  /// Condition ids truncated to max_cond; nullopt when the target does
  /// not fit in max_target positions including its [EOS].
  std::optional<diff::Example> example(const data::PairRecord& r, int max_target, int max_cond) const;
  std::vector<int> condition(const data::PairRecord& r, int max_cond) const;
  /// The reference the model output is scored against: canonical SMILES
  /// or the normalized caption.
  std::string reference(const data::PairRecord& r) const;
  /// Output ids to a SMILES string (empty when undecodable) or caption.
  std::string decode(std::span<const int> ids) const;

 private:
  Task(Direction dir, tok::SmilesTokenizer kind, tok::Vocab target, tok::Vocab cond)
      : dir_(dir), kind_(kind), target_(std::move(target)), cond_(std::move(cond)) {}

  Direction dir_;
  tok::SmilesTokenizer kind_;
  tok::Vocab target_;
  tok::Vocab cond_;
};

struct StepLog {
  long step = 0;
  double total = 0.0;
  double denoise = 0.0;
  double consistency = 0.0;
  double rounding = 0.0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, int target_vocab, int cond_vocab);
  /// Resumes from saved weights and schedule.
  Trainer(TrainConfig cfg, model::ModelParams params, sched::TokenSchedule schedule, long step);

  /// One optimizer step on the given examples (loss averaged over them).
  StepLog step(std::span<const diff::Example> batch);
  /// Steps until `steps` optimizer updates have been made in total,
  /// drawing batches from a seeded shuffle of the data.
  void train(std::span<const diff::Example> data, long steps, const std::function<void(const StepLog&)>& on_step = {});

  /// Rebuilds the token-aware schedule from the profile gathered since
  /// the previous rebuild; a no-op for the uniform schedule.
  void rebuild_schedule();
  /// Replaces the gathered profile, e.g. to inject a known one.
  void set_profile(const sched::DifficultyProfile& p) { profile_ = p; }

  std::vector<int> sample(std::span<const int> cond, Rng& rng, const diff::SampleTrace& trace = {}) const;

  const TrainConfig& config() const { return cfg_; }
  const model::ModelParams& params() const { return params_; }
  model::ModelParams& params() { return params_; }
  const sched::TokenSchedule& schedule() const { return schedule_; }
  const sched::DifficultyProfile& profile() const { return profile_; }
  const sched::BaselineSchedule& baseline() const { return baseline_; }
  long step_count() const { return step_; }

 private:
  std::span<const diff::Example> next_batch(std::span<const diff::Example> data);

  TrainConfig cfg_;
  sched::BaselineSchedule baseline_;
  model::ModelParams params_;
  model::Adam opt_;
  sched::TokenSchedule schedule_;
  sched::DifficultyProfile profile_;
  Rng rng_;
  long step_ = 0;
  std::vector<diff::Example> scratch_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace moldiff::train
