#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "moldiff/checkpoint.hpp"
#include "moldiff/chem.hpp"
#include "moldiff/data.hpp"
#include "moldiff/metrics.hpp"
#include "moldiff/trainer.hpp"
#include "moldiff/triplet.hpp"

using namespace moldiff;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string direction = "s2g";
  std::string schedule = "token_aware";
  std::string mapping = "linear";
  std::string tokenizer = "ais";
  int T = 2000;
  long steps = 10000;
  int batch = 64;
  double lr = 5e-5;
  long K = 2000;
  std::uint64_t seed = 0;
  int d = 64;
  int heads = 4;
  int layers = 2;
  int ff = 256;
  int max_target = 128;
  int max_cond = 64;
  double sigma0 = 0.0;
  int stride = 1;
  bool no_clamp = false;
  long checkpoint_every = 1000;
  long log_every = 10;
  int max_smiles_len = 256;
  int positions = 64;
  std::string corpus;
  std::string checkpoint;
  std::string predictions;
  std::string out;
};

train::TrainConfig to_config(const Options& o, const CLI::App& app) {
  train::TrainConfig c = train::TrainConfig::preset(train::parse_direction(o.direction));
  c.schedule = train::parse_schedule_kind(o.schedule);
  c.mapping = sched::parse_mapping(o.mapping);
  c.tokenizer = tok::parse_tokenizer_kind(o.tokenizer);
  c.T = o.T;
  c.steps = o.steps;
  if (app.count("--batch") > 0) c.batch = o.batch;
  if (app.count("--lr") > 0) c.lr = o.lr;
  c.K = o.K;
  c.seed = o.seed;
  c.d = o.d;
  c.heads = o.heads;
  c.enc_layers = o.layers;
  c.dec_layers = o.layers;
  c.ff = o.ff;
  c.max_target = o.max_target;
  c.max_cond = o.max_cond;
  c.sigma0 = o.sigma0;
  c.stride = o.stride;
  c.clamp = !o.no_clamp;
  return c;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw std::invalid_argument(std::string(flag) + " is required for this command");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  return f;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<diff::Example> build_examples(const train::Task& task, std::span<const data::PairRecord> recs, const train::TrainConfig& c, int& skipped) {
  std::vector<diff::Example> out;
  skipped = 0;
  for (const auto& r : recs) {
    if (auto ex = task.example(r, c.max_target, c.max_cond)) {
      out.push_back(std::move(*ex));
    } else {
      ++skipped;
    }
  }
  return out;
}

int cmd_train(const Options& o, const train::TrainConfig& c) {
  require(o.corpus, "--corpus");
  require(o.checkpoint, "--checkpoint");
  const data::LoadReport loaded = data::load_corpus(o.corpus, o.max_smiles_len);
  std::cerr << "loaded " << loaded.records.size() << " records, dropped " << loaded.dropped() << " (" << loaded.invalid_smiles << " invalid, "
            << loaded.too_long << " too long, " << loaded.empty_caption << " empty caption, " << loaded.malformed << " malformed)\n";
  const data::Split parts = data::split(loaded.records, {0.8, 0.1, 0.1}, c.seed);
  fs::create_directories(o.checkpoint);
  const fs::path dir(o.checkpoint);
  data::write_manifest((dir / "train.ids").string(), parts.train);
  data::write_manifest((dir / "valid.ids").string(), parts.valid);
  data::write_manifest((dir / "test.ids").string(), parts.test);

  const train::Task task = train::Task::build(parts.train, c.direction, c.tokenizer);
  int skipped = 0;
  const auto examples = build_examples(task, parts.train, c, skipped);
  if (skipped > 0) std::cerr << "skipped " << skipped << " training records longer than " << c.max_target << " target positions\n";
  if (examples.empty()) throw std::runtime_error("no usable training examples");

  train::Trainer trainer(c, static_cast<int>(task.target_vocab().size()), static_cast<int>(task.cond_vocab().size()));
  const std::string log_path = o.out.empty() ? (dir / "loss.csv").string() : o.out;
  std::ofstream log = open_out(log_path);
  log << "step,total,denoise,consistency,rounding\n";
  auto save = [&] {
    ckpt::save(o.checkpoint, c, trainer.step_count(), trainer.params(), trainer.schedule(), task.target_vocab(), task.cond_vocab());
  };
  trainer.train(examples, c.steps, [&](const train::StepLog& l) {
    if (o.log_every > 0 && l.step % o.log_every == 0) {
      log << l.step << ',' << fmt(l.total) << ',' << fmt(l.denoise) << ',' << fmt(l.consistency) << ',' << fmt(l.rounding) << '\n';
      log.flush();
    }
    if (o.checkpoint_every > 0 && l.step % o.checkpoint_every == 0) save();
  });
  save();
  std::cerr << "trained " << trainer.step_count() << " steps; checkpoint in " << o.checkpoint << ", loss log " << log_path << "\n";
  return 0;
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\t' || ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

int cmd_sample(const Options& o, const CLI::App& app) {
  require(o.checkpoint, "--checkpoint");
  require(o.corpus, "--corpus");
  require(o.out, "--out");
  ckpt::Checkpoint ck = ckpt::load(o.checkpoint);
  train::TrainConfig c = ck.config;
  if (app.count("--stride") > 0) c.stride = o.stride;
  if (o.no_clamp) c.clamp = false;
  if (app.count("--seed") > 0) c.seed = o.seed;
  const train::Task task = train::Task::with_vocabs(c.direction, c.tokenizer, ck.target_vocab, ck.cond_vocab);
  const train::Trainer trainer(c, std::move(ck.params), std::move(ck.schedule), ck.step);

  const data::LoadReport loaded = data::load_corpus(o.corpus, o.max_smiles_len);
  std::ofstream out = open_out(o.out);
  out << "input\toutput\n";
  Rng rng(c.seed);
  for (const auto& r : loaded.records) {
    const std::vector<int> ids = trainer.sample(task.condition(r, c.max_cond), rng);
    const std::string& input = c.direction == train::Direction::S2G ? r.caption : r.smiles;
    out << one_line(input) << '\t' << one_line(task.decode(ids)) << '\n';
  }
  std::cerr << "wrote " << loaded.records.size() << " predictions to " << o.out << "\n";
  return 0;
}

std::vector<std::string> read_outputs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && line.rfind("input\toutput", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error(path + ": prediction line without a tab");
    out.push_back(line.substr(tab + 1));
  }
  return out;
}

int cmd_eval(const Options& o, const train::TrainConfig& c) {
  require(o.predictions, "--predictions");
  require(o.corpus, "--corpus");
  require(o.out, "--out");
  const auto preds = read_outputs(o.predictions);
  const data::LoadReport loaded = data::load_corpus(o.corpus, o.max_smiles_len);
  if (preds.size() != loaded.records.size()) {
    throw std::runtime_error("predictions (" + std::to_string(preds.size()) + ") and corpus records (" + std::to_string(loaded.records.size()) + ") differ in count");
  }
  const train::Task task = train::Task::with_vocabs(c.direction, c.tokenizer, tok::Vocab::from_tokens({tok::kSpecialTokens.begin(), tok::kSpecialTokens.end()}),
                                                    tok::Vocab::from_tokens({tok::kSpecialTokens.begin(), tok::kSpecialTokens.end()}));
  std::vector<std::string> refs;
  for (const auto& r : loaded.records) refs.push_back(task.reference(r));
  const metrics::Report report = metrics::evaluate(preds, refs, c.direction == train::Direction::S2G);
  const std::string json = metrics::to_json(report);
  open_out(o.out) << json;
  std::cout << json;
  return 0;
}

int cmd_schedule_export(const Options& o, const train::TrainConfig& c) {
  require(o.out, "--out");
  sched::TokenSchedule s;
  if (!o.checkpoint.empty()) {
    s = ckpt::load(o.checkpoint).schedule;
  } else {
    s = sched::TokenSchedule::uniform(sched::sqrt_schedule(c.T), o.positions);
  }
  std::ofstream out = open_out(o.out);
  s.write_csv(out);
  std::cerr << "wrote " << s.positions() << " x " << s.T() << " schedule to " << o.out << "\n";
  return 0;
}

int cmd_roundtrip(const Options& o, const train::TrainConfig& c) {
  require(o.corpus, "--corpus");
  std::ifstream in(o.corpus);
  if (!in) throw std::runtime_error("cannot open " + o.corpus);
  int pass = 0, fail = 0;
  std::string line;
  for (bool first = true; std::getline(in, line); first = false) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string smiles = line.substr(0, line.find('\t'));
    if (smiles.empty() || (first && smiles == "smiles")) continue;
    bool ok = false;
    try {
      const std::string canon = chem::canonicalize(smiles).text;
      const auto tokens = triplet::encode_smiles(canon, c.tokenizer);
      ok = triplet::decode_smiles(tokens, triplet::DecodeMode::Strict) == canon;
    } catch (const std::exception& e) {
      std::cerr << "error on " << smiles << ": " << e.what() << "\n";
    }
    if (ok) {
      ++pass;
    } else {
      ++fail;
      std::cout << "FAIL " << smiles << "\n";
    }
  }
  std::cout << "roundtrip: " << pass << "/" << pass + fail << " pass\n";
  return fail == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-aware diffusion for molecule generation and captioning"};
  app.set_config("--config", "", "File of key = value lines; command-line flags take precedence");
  app.fallthrough();
  app.require_subcommand(1);

  Options o;
  const std::vector<std::string> directions{"s2g", "g2s"}, schedules{"uniform_sqrt", "token_aware"}, mappings{"linear", "cosine"},
      tokenizers{"regex", "atom_level", "ais"};
  app.add_option("--direction", o.direction, "s2g (caption to molecule) or g2s (molecule to caption)")->check(CLI::IsMember(directions));
  app.add_option("--schedule", o.schedule, "Noise schedule")->check(CLI::IsMember(schedules));
  app.add_option("--mapping", o.mapping, "Difficulty to alpha_bar interpolation")->check(CLI::IsMember(mappings));
  app.add_option("--tokenizer", o.tokenizer, "Atom label style inside triplets")->check(CLI::IsMember(tokenizers));
  app.add_option("--T", o.T, "Diffusion steps")->check(CLI::Range(2, 1000000));
  app.add_option("--steps", o.steps, "Optimizer steps")->check(CLI::NonNegativeNumber);
  app.add_option("--batch", o.batch, "Batch size (preset 64)")->check(CLI::PositiveNumber);
  app.add_option("--lr", o.lr, "Learning rate (preset 5e-5 for s2g, 1e-4 for g2s)")->check(CLI::PositiveNumber);
  app.add_option("--K", o.K, "Schedule rebuild interval in steps, 0 to never rebuild")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", o.seed, "Seed for initialization, split, batches and sampling");
  app.add_option("--d", o.d, "Model width")->check(CLI::PositiveNumber);
  app.add_option("--heads", o.heads, "Attention heads")->check(CLI::PositiveNumber);
  app.add_option("--layers", o.layers, "Encoder and decoder layers")->check(CLI::PositiveNumber);
  app.add_option("--ff", o.ff, "Feed-forward width")->check(CLI::PositiveNumber);
  app.add_option("--max-target", o.max_target, "Target positions N")->check(CLI::PositiveNumber);
  app.add_option("--max-cond", o.max_cond, "Condition tokens kept")->check(CLI::PositiveNumber);
  app.add_option("--sigma0", o.sigma0, "Std of noise added to the clean latent")->check(CLI::NonNegativeNumber);
  app.add_option("--stride", o.stride, "Reverse sampling stride")->check(CLI::PositiveNumber);
  app.add_flag("--no-clamp", o.no_clamp, "Sample without clamping to the embedding table");
  app.add_option("--checkpoint-every", o.checkpoint_every, "Checkpoint interval in steps")->check(CLI::NonNegativeNumber);
  app.add_option("--log-every", o.log_every, "Loss log interval in steps")->check(CLI::NonNegativeNumber);
  app.add_option("--max-smiles-len", o.max_smiles_len, "Drop corpus records with longer SMILES")->check(CLI::PositiveNumber);
  app.add_option("--positions", o.positions, "Positions for schedule-export without a checkpoint")->check(CLI::PositiveNumber);
  app.add_option("--corpus", o.corpus, "TSV corpus of smiles<TAB>caption (or one SMILES per line for roundtrip-check)");
  app.add_option("--checkpoint", o.checkpoint, "Checkpoint directory");
  app.add_option("--predictions", o.predictions, "Predictions TSV written by sample");
  app.add_option("--out", o.out, "Output artifact path");

  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints and a loss log");
  auto* sample_cmd = app.add_subcommand("sample", "Generate outputs for every corpus record");
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against the corpus");
  auto* export_cmd = app.add_subcommand("schedule-export", "Write the per-position noise schedule as CSV");
  auto* roundtrip_cmd = app.add_subcommand("roundtrip-check", "Check SMILES to triplets to SMILES on a corpus");

  CLI11_PARSE(app, argc, argv);

  try {
    const train::TrainConfig cfg = to_config(o, app);
    if (*train_cmd) return cmd_train(o, cfg);
    if (*sample_cmd) return cmd_sample(o, app);
    if (*eval_cmd) return cmd_eval(o, cfg);
    if (*export_cmd) return cmd_schedule_export(o, cfg);
    if (*roundtrip_cmd) return cmd_roundtrip(o, cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
