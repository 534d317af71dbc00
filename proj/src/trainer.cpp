#include "moldiff/trainer.hpp"

#include <numeric>

#include "moldiff/chem.hpp"
#include "moldiff/triplet.hpp"

namespace moldiff::train {

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t salt) { return seed * 0x9e3779b97f4a7c15ULL + salt; }

}  // namespace

Direction parse_direction(std::string_view name) {
  if (name == "s2g") return Direction::S2G;
  if (name == "g2s") return Direction::G2S;
  throw std::invalid_argument("unknown direction '" + std::string(name) + "' (expected s2g or g2s)");
}

const char* to_string(Direction d) { return d == Direction::S2G ? "s2g" : "g2s"; }

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "uniform_sqrt") return ScheduleKind::UniformSqrt;
  if (name == "token_aware") return ScheduleKind::TokenAware;
  throw std::invalid_argument("unknown schedule '" + std::string(name) + "' (expected uniform_sqrt or token_aware)");
}

const char* to_string(ScheduleKind k) { return k == ScheduleKind::UniformSqrt ? "uniform_sqrt" : "token_aware"; }

TrainConfig TrainConfig::preset(Direction d) {
  TrainConfig c;
  c.direction = d;
  c.batch = 64;
  c.lr = d == Direction::S2G ? 5e-5 : 1e-4;
  return c;
}

model::ModelConfig TrainConfig::model_config(int target_vocab, int cond_vocab) const {
  model::ModelConfig m;
  m.target_vocab = target_vocab;
  m.cond_vocab = cond_vocab;
  m.d = d;
  m.heads = heads;
  m.enc_layers = enc_layers;
  m.dec_layers = dec_layers;
  m.ff = ff;
  m.max_target = max_target;
  m.max_cond = max_cond;
  m.T = T;
  return m;
}

diff::DiffusionConfig TrainConfig::diffusion_config() const {
  diff::DiffusionConfig c;
  c.T = T;
  c.d = d;
  c.N = max_target;
  c.clamp_enabled = clamp;
  c.seed = seed;
  c.sigma0 = sigma0;
  c.stride = stride;
  return c;
}

Task Task::build(std::span<const data::PairRecord> records, Direction dir, tok::SmilesTokenizer kind) {
  Task probe(dir, kind, tok::Vocab::from_tokens({tok::kSpecialTokens.begin(), tok::kSpecialTokens.end()}),
             tok::Vocab::from_tokens({tok::kSpecialTokens.begin(), tok::kSpecialTokens.end()}));
  std::vector<std::vector<std::string>> targets, conds;
  for (const auto& r : records) {
    targets.push_back(probe.target_tokens(r));
    conds.push_back(probe.cond_tokens(r));
  }
  return Task(dir, kind, tok::Vocab::build(targets, 1), tok::Vocab::build(conds, 1));
}

Task Task::with_vocabs(Direction dir, tok::SmilesTokenizer kind, tok::Vocab target, tok::Vocab cond) {
  return Task(dir, kind, std::move(target), std::move(cond));
}

std::vector<std::string> Task::target_tokens(const data::PairRecord& r) const {
  if (dir_ == Direction::S2G) return triplet::encode_smiles(r.smiles, kind_);
  return tok::tokenize_text(r.caption);
}

std::vector<std::string> Task::cond_tokens(const data::PairRecord& r) const {
  if (dir_ == Direction::S2G) return tok::tokenize_text(r.caption);
  return triplet::encode_smiles(r.smiles, kind_);
}

std::vector<int> Task::condition(const data::PairRecord& r, int max_cond) const {
  std::vector<int> ids = cond_.encode(cond_tokens(r));
  if (static_cast<int>(ids.size()) > max_cond) ids.resize(static_cast<std::size_t>(max_cond));
  if (ids.empty()) ids.push_back(tok::kUnk);
  return ids;
}

std::optional<diff::Example> Task::example(const data::PairRecord& r, int max_target, int max_cond) const {
  const std::vector<int> target = target_.encode(target_tokens(r));
  if (static_cast<int>(target.size()) + 1 > max_target) return std::nullopt;
  return diff::Example{diff::pad_target(target, max_target, tok::kEos), condition(r, max_cond)};
}

std::string Task::reference(const data::PairRecord& r) const {
  if (dir_ == Direction::S2G) return chem::canonicalize(r.smiles).text;
  std::string out;
  for (const auto& t : tok::tokenize_text(r.caption)) out += (out.empty() ? "" : " ") + t;
  return out;
}

std::string Task::decode(std::span<const int> ids) const {
  const std::vector<std::string> tokens = target_.decode(diff::strip_target(ids));
  if (dir_ == Direction::S2G) return triplet::decode_smiles(tokens, triplet::DecodeMode::Robust).value_or("");
  std::string out;
  for (const auto& t : tokens) {
    if (t.front() == '[' && t.back() == ']' && t.size() > 2) continue;
    out += (out.empty() ? "" : " ") + t;
  }
  return out;
}

Trainer::Trainer(TrainConfig cfg, int target_vocab, int cond_vocab)
    : cfg_(cfg),
      baseline_(sched::sqrt_schedule(cfg.T)),
      opt_(model::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.clip}),
      schedule_(sched::TokenSchedule::uniform(baseline_, cfg.max_target)),
      profile_(cfg.max_target, cfg.T),
      rng_(stream_seed(cfg.seed, 1)) {
  Rng init(stream_seed(cfg.seed, 0));
  params_ = model::ModelParams::init(cfg.model_config(target_vocab, cond_vocab), init);
}

Trainer::Trainer(TrainConfig cfg, model::ModelParams params, sched::TokenSchedule schedule, long step)
    : cfg_(cfg),
      baseline_(sched::sqrt_schedule(cfg.T)),
      params_(std::move(params)),
      opt_(model::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.clip}),
      schedule_(std::move(schedule)),
      profile_(cfg.max_target, cfg.T),
      rng_(stream_seed(cfg.seed, 1 + static_cast<std::uint64_t>(step))),
      step_(step) {
  opt_.set_steps(step);
}

StepLog Trainer::step(std::span<const diff::Example> batch) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  ag::Tape tape;
  const model::Bound b(tape, params_);
  std::vector<ag::Var> totals;
  StepLog log;
  const double share = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const diff::LossDraws draws = diff::draw_loss(static_cast<int>(ex.target.size()), cfg_.d, cfg_.T, rng_);
    const diff::LossGraph g = diff::training_loss(b, ex, schedule_, draws, cfg_.sigma0);
    totals.push_back(g.total);
    log.total += share * g.terms.total;
    log.denoise += share * g.terms.denoise;
    log.consistency += share * g.terms.consistency;
    log.rounding += share * g.terms.rounding;
    if (cfg_.schedule == ScheduleKind::TokenAware) {
      sched::ErrorSample s = g.terms.errors;
      s.errors.resize(static_cast<std::size_t>(cfg_.max_target), 0.0);
      s.mask.resize(static_cast<std::size_t>(cfg_.max_target), 0);
      profile_.observe(s);
    }
  }
  tape.backward(ag::sum(totals), share);
  b.accumulate(params_);
  opt_.step(params_);
  log.step = ++step_;
  if (cfg_.schedule == ScheduleKind::TokenAware && cfg_.K > 0 && step_ % cfg_.K == 0) rebuild_schedule();
  return log;
}

std::span<const diff::Example> Trainer::next_batch(std::span<const diff::Example> data) {
  const std::size_t want = std::min(static_cast<std::size_t>(cfg_.batch), data.size());
  if (want == data.size()) return data;
  if (order_.size() != data.size()) {
    order_.resize(data.size());
    std::iota(order_.begin(), order_.end(), 0);
    cursor_ = order_.size();
  }
  scratch_.clear();
  while (scratch_.size() < want) {
    if (cursor_ == order_.size()) {
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    scratch_.push_back(data[order_[cursor_++]]);
  }
  return scratch_;
}

void Trainer::train(std::span<const diff::Example> data, long steps, const std::function<void(const StepLog&)>& on_step) {
  if (data.empty()) throw std::invalid_argument("no training examples");
  while (step_ < steps) {
    const StepLog log = step(next_batch(data));
    if (on_step) on_step(log);
  }
}

void Trainer::rebuild_schedule() {
  if (cfg_.schedule != ScheduleKind::TokenAware) return;
  bool any = false;
  for (int i = 0; i < profile_.positions() && !any; ++i) any = profile_.observed(i);
  if (!any) return;
  schedule_ = sched::build_token_schedule(profile_, baseline_, cfg_.mapping);
  profile_.reset();
}

std::vector<int> Trainer::sample(std::span<const int> cond, Rng& rng, const diff::SampleTrace& trace) const {
  return diff::reverse_sample(cond, params_, schedule_, cfg_.diffusion_config(), rng, trace);
}

}  // namespace moldiff::train
