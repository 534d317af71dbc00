// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when any
// criterion fails. Run a subset with criterion numbers as arguments.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "moldiff/chem.hpp"
#include "moldiff/data.hpp"
#include "moldiff/diffusion.hpp"
#include "moldiff/metrics.hpp"
#include "moldiff/schedule.hpp"
#include "moldiff/trainer.hpp"
#include "moldiff/triplet.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace moldiff;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

// 1. graph -> triplets -> tokens -> triplets -> graph -> canonical SMILES.
Outcome triplet_roundtrip() {
  const auto t0 = Clock::now();
  int total = 0, ok = 0;
  std::string first_failure;
  for (const auto& s : test::corpus_smiles()) {
    if (s.size() > 64) continue;
    ++total;
    const chem::MolGraph g = chem::parse_smiles(s);
    const std::string want = chem::canonicalize(g).text;
    bool same = true;
    for (auto style : {tok::SmilesTokenizer::Regex, tok::SmilesTokenizer::Ais}) {
      const auto tokens = triplet::triplets_to_tokens(triplet::graph_to_triplets(g, style));
      const auto decoded = triplet::tokens_to_triplets(tokens, triplet::DecodeMode::Strict);
      const auto back = chem::canonicalize(triplet::triplets_to_graph(decoded.triplets, triplet::DecodeMode::Strict)).text;
      same = same && back == want;
    }
    if (same) {
      ++ok;
    } else if (first_failure.empty()) {
      first_failure = s;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = total >= 200 && ok == total && secs < 5.0;
  o.detail = std::to_string(ok) + "/" + std::to_string(total) + " molecules of length <= 64 in " + num(secs, 3) + " s";
  if (!first_failure.empty()) o.detail += ", first failure " + first_failure;
  return o;
}

// 2. PAVA against exhaustive enumeration of block partitions.
Outcome isotonic_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(1, 12);
  std::normal_distribution<double> value(0.0, 1.0);
  double worst = 0.0;
  bool monotone = true;
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> seq(static_cast<std::size_t>(len(rng)));
    for (auto& v : seq) v = k % 3 == 0 ? std::round(value(rng) * 2.0) : value(rng);
    const std::vector<double> fit = sched::isotonic_project(seq);
    for (std::size_t j = 1; j < fit.size(); ++j) monotone = monotone && fit[j] <= fit[j - 1];
    worst = std::max(worst, std::abs(test::squared_error(fit, seq) - test::best_isotonic_error(seq)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && monotone && secs < 10.0,
          "1000 sequences, worst squared-error gap " + num(worst, 3) + ", non-increasing " + (monotone ? "yes" : "no") + ", " + num(secs, 3) + " s"};
}

// 3. Random difficulty profiles give bounded, monotone schedules; constant
// profiles give the baseline.
Outcome schedule_invariants() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> Tn(2, 200), Nn(1, 32);
  std::uniform_real_distribution<double> err(0.0, 3.0);
  int violations = 0;
  double worst_flat = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int T = Tn(rng), N = Nn(rng);
    const auto base = sched::sqrt_schedule(T);
    const auto mapping = k % 2 ? sched::Mapping::Cosine : sched::Mapping::Linear;
    sched::DifficultyProfile p(N, T);
    for (int s = 0; s < 30 * N; ++s) p.observe(static_cast<int>(rng() % static_cast<unsigned>(N)), 1 + static_cast<int>(rng() % static_cast<unsigned>(T)), err(rng));
    const auto s = sched::build_token_schedule(p, base, mapping);
    for (int i = 0; i < N; ++i) {
      for (int t = 1; t <= T; ++t) {
        const double a = s.at(i, t);
        if (!(a > 0.0 && a < 1.0)) ++violations;
        if (t > 1 && a > s.at(i, t - 1)) ++violations;
      }
    }

    sched::DifficultyProfile flat(N, T);
    const double c = err(rng);
    for (int s2 = 0; s2 < 10 * N; ++s2) flat.observe(static_cast<int>(rng() % static_cast<unsigned>(N)), 1 + static_cast<int>(rng() % static_cast<unsigned>(T)), c);
    const auto fs = sched::build_token_schedule(flat, base, mapping);
    for (int i = 0; i < N; ++i) {
      for (int t = 1; t <= T; ++t) worst_flat = std::max(worst_flat, std::abs(fs.at(i, t) - base.at(t)));
    }
  }
  return {violations == 0 && worst_flat <= 1e-12,
          "100 profiles, " + std::to_string(violations) + " bound or order violations, constant-profile deviation " + num(worst_flat, 3)};
}

// 4. Monte Carlo moments of q_sample at random cells.
Outcome forward_statistics() {
  Rng rng(404);
  const int N = 8, d = 4, T = 200, n = 100000;
  sched::DifficultyProfile p(N, T);
  for (int s = 0; s < 2000; ++s) p.observe(rng.uniform_int(0, N - 1), rng.uniform_int(1, T), rng.uniform() * (1 + rng.uniform_int(0, 3)));
  const auto s = sched::build_token_schedule(p, sched::sqrt_schedule(T));
  diff::Mat z0(N, d);
  for (Eigen::Index j = 0; j < z0.size(); ++j) z0.data()[j] = rng.normal();

  int mean_bad = 0, var_bad = 0;
  double worst_var = 0.0;
  for (int cell = 0; cell < 5; ++cell) {
    const int i = rng.uniform_int(0, N - 1), t = rng.uniform_int(1, T);
    const double a = s.at(i, t);
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(d), sq = Eigen::RowVectorXd::Zero(d);
    diff::Mat noise(N, d);
    for (int k = 0; k < n; ++k) {
      for (Eigen::Index j = 0; j < noise.size(); ++j) noise.data()[j] = rng.normal();
      const diff::Mat z = diff::q_sample({z0, 0}, t, s, noise).values;
      sum += z.row(i);
      sq += z.row(i).cwiseProduct(z.row(i));
    }
    for (int j = 0; j < d; ++j) {
      const double mean = sum(j) / n;
      const double var = sq(j) / n - mean * mean;
      if (std::abs(mean - std::sqrt(a) * z0(i, j)) > 3.0 * std::sqrt((1.0 - a) / n)) ++mean_bad;
      const double rel = std::abs(var - (1.0 - a)) / (1.0 - a);
      worst_var = std::max(worst_var, rel);
      if (rel > 0.02) ++var_bad;
    }
  }
  return {mean_bad == 0 && var_bad == 0, "5 cells x " + std::to_string(d) + " coordinates, 1e5 draws: " + std::to_string(mean_bad) +
                                             " means outside 3 sigma/sqrt(n), worst variance error " + num(100 * worst_var, 3) + "%"};
}

// 5. mu(sqrt(abar_t) z0, z0) = sqrt(abar_{t-1}) z0.
Outcome posterior_algebra() {
  Rng rng(55);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const int N = rng.uniform_int(1, 16), T = rng.uniform_int(2, 200), d = 4;
    sched::TokenSchedule s;
    if (k % 2 == 0) {
      sched::DifficultyProfile p(N, T);
      for (int m = 0; m < 20 * N; ++m) p.observe(rng.uniform_int(0, N - 1), rng.uniform_int(1, T), rng.uniform() * 2);
      s = sched::build_token_schedule(p, sched::sqrt_schedule(T), k % 4 ? sched::Mapping::Cosine : sched::Mapping::Linear);
    } else {
      Eigen::MatrixXd m(N, T);
      for (int i = 0; i < N; ++i) {
        std::vector<double> row(static_cast<std::size_t>(T));
        for (auto& v : row) v = sched::clamp_alpha(rng.uniform());
        std::sort(row.begin(), row.end(), std::greater<>());
        for (int t = 0; t < T; ++t) m(i, t) = row[static_cast<std::size_t>(t)];
      }
      s = sched::TokenSchedule(m);
    }
    const int t = rng.uniform_int(2, T);
    diff::Mat z0(N, d);
    for (Eigen::Index j = 0; j < z0.size(); ++j) z0.data()[j] = rng.normal();
    const diff::Mat zt = s.column(t).cwiseSqrt().asDiagonal() * z0;
    const diff::Mat mu = diff::posterior_mean({zt, t}, {z0, 0}, t, s).values;
    const diff::Mat want = s.column(t - 1).cwiseSqrt().asDiagonal() * z0;
    worst = std::max(worst, (mu - want).norm() / want.norm());
  }
  return {worst <= 1e-12, "1000 schedules, worst relative error " + num(worst, 3)};
}

// 6. Central differences on the composite loss.
Outcome gradient_check() {
  model::ModelConfig c;
  c.target_vocab = 20;
  c.cond_vocab = 20;
  c.d = 8;
  c.heads = 2;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.ff = 16;
  c.max_target = 8;
  c.max_cond = 8;
  c.T = 10;
  Rng rng(11);
  model::ModelParams params = model::ModelParams::init(c, rng);
  const auto s = sched::TokenSchedule::uniform(sched::sqrt_schedule(c.T), c.max_target);
  const diff::Example ex{{8, 9, 12, 17, 2, 2, 2, 0}, {5, 6, 7, 19, 0}};
  const diff::LossDraws draws = diff::draw_loss(8, c.d, c.T, rng);
  auto loss = [&](const model::ModelParams& p) {
    ag::Tape tape(false);
    const model::Bound b(tape, p);
    return diff::training_loss(b, ex, s, draws, 0.1).terms.total;
  };
  auto analytic = [&](model::ModelParams& p) {
    ag::Tape tape;
    const model::Bound b(tape, p);
    tape.backward(diff::training_loss(b, ex, s, draws, 0.1).total);
    b.accumulate(p);
  };
  const auto r = test::finite_difference_check(params, loss, analytic);
  return {r.worst <= 1e-3, std::to_string(r.checked) + " entries, worst relative error " + num(r.worst, 3) + " at " + r.worst_param};
}

std::vector<data::PairRecord> toy_pairs() {
  return data::load_corpus(test::data_path("toy_pairs.tsv"), 256, true).records;
}

train::TrainConfig overfit_config(train::ScheduleKind kind) {
  train::TrainConfig c;
  c.schedule = kind;
  c.T = 200;
  c.d = 32;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.ff = 64;
  c.max_target = 48;
  c.max_cond = 16;
  c.batch = 10;
  c.lr = 1e-3;
  c.K = 200;
  c.seed = 1;
  return c;
}

struct OverfitRun {
  std::vector<std::pair<long, double>> curve;
  long reached_at = -1;
  double final_em = 0.0;
  double secs = 0.0;
};

OverfitRun overfit(train::ScheduleKind kind, long min_steps, long max_steps) {
  const auto t0 = Clock::now();
  const auto recs = toy_pairs();
  const auto cfg = overfit_config(kind);
  const auto task = train::Task::build(recs, train::Direction::S2G, tok::SmilesTokenizer::Ais);
  std::vector<diff::Example> examples;
  for (const auto& r : recs) examples.push_back(task.example(r, cfg.max_target, cfg.max_cond).value());
  train::Trainer trainer(cfg, static_cast<int>(task.target_vocab().size()), static_cast<int>(task.cond_vocab().size()));
  auto exact = [&] {
    Rng rng(5);
    int hit = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) hit += metrics::exact_match(task.decode(trainer.sample(examples[i].cond, rng)), task.reference(recs[i]));
    return static_cast<double>(hit) / static_cast<double>(recs.size());
  };
  OverfitRun run;
  for (long next : {250L, 500L, 1000L, 2000L}) {
    trainer.train(examples, next);
    run.curve.emplace_back(next, exact());
  }
  for (long next = 3000; next <= max_steps && (run.curve.back().second < 0.9 || next <= min_steps); next += 1000) {
    trainer.train(examples, next);
    run.curve.emplace_back(next, exact());
  }
  for (const auto& [step, em] : run.curve) {
    if (em >= 0.9 && run.reached_at < 0) run.reached_at = step;
  }
  run.final_em = run.curve.back().second;
  run.secs = seconds_since(t0);
  return run;
}

// 7. Overfit 10 caption -> triplet pairs; token-aware gated, uniform reported.
Outcome overfit_oracle() {
  const OverfitRun aware = overfit(train::ScheduleKind::TokenAware, 0, 20000);
  const OverfitRun uniform = overfit(train::ScheduleKind::UniformSqrt, aware.curve.back().first, 20000);
  auto curve = [](const OverfitRun& r) {
    std::string s;
    for (const auto& [step, em] : r.curve) s += (s.empty() ? "" : " ") + std::to_string(step) + ":" + num(em, 2);
    return s;
  };
  const double secs = aware.secs + uniform.secs;
  Outcome o;
  o.pass = aware.final_em >= 0.9 && secs < 900.0;
  o.detail = "token_aware exact match " + num(aware.final_em, 2) + " (curve " + curve(aware) + "), uniform_sqrt " + num(uniform.final_em, 2) +
             " (curve " + curve(uniform) + "), " + num(secs, 3) + " s";
  return o;
}

// 8. Every clamped intermediate row is bitwise a table row.
Outcome clamping_contract() {
  const auto recs = toy_pairs();
  auto cfg = overfit_config(train::ScheduleKind::TokenAware);
  cfg.T = 100;
  cfg.K = 25;
  const auto task = train::Task::build(recs, train::Direction::S2G, tok::SmilesTokenizer::Ais);
  std::vector<diff::Example> examples;
  for (const auto& r : recs) examples.push_back(task.example(r, cfg.max_target, cfg.max_cond).value());
  train::Trainer trainer(cfg, static_cast<int>(task.target_vocab().size()), static_cast<int>(task.cond_vocab().size()));
  trainer.train(examples, 100);

  const diff::Mat& table = trainer.params().embedding();
  long rows = 0, misses = 0;
  int steps = 0;
  auto trace = [&](int, const diff::Mat& z) {
    ++steps;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      ++rows;
      bool found = false;
      for (Eigen::Index k = 0; k < table.rows() && !found; ++k) found = (table.row(k).array() == z.row(i).array()).all();
      misses += !found;
    }
  };
  Rng rng(8);
  for (const auto& ex : examples) trainer.sample(ex.cond, rng, trace);
  return {misses == 0 && steps == 10 * (cfg.T - 1), std::to_string(steps) + " clamped steps, " + std::to_string(rows) + " rows, " + std::to_string(misses) + " not in the table"};
}

// 9. Metric examples.
Outcome metric_self_tests() {
  std::vector<std::string> failed;
  int checked = 0;
  auto expect = [&](bool ok, const std::string& what) {
    ++checked;
    if (!ok) failed.push_back(what);
  };
  auto words = [](const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
  };
  expect(metrics::exact_match("OCC", "CCO"), "exact OCC/CCO");
  expect(metrics::exact_match("CCO", "CCO"), "exact CCO/CCO");
  expect(!metrics::exact_match("C1CC", "CCO"), "exact C1CC/CCO");

  metrics::FingerprintBits a, b, e;
  for (int k : {1, 2, 3}) a.bits.set(static_cast<std::size_t>(k));
  for (int k : {2, 3, 4}) b.bits.set(static_cast<std::size_t>(k));
  expect(metrics::tanimoto(a, a) == 1.0, "tanimoto(x, x)");
  expect(std::abs(metrics::tanimoto(a, b) - 0.5) < 1e-15, "tanimoto {1,2,3} {2,3,4}");
  e.bits.set(7);
  expect(metrics::tanimoto(a, e) == 0.0, "tanimoto disjoint");
  const auto fp_eth = metrics::circular_fingerprint(chem::parse_smiles("CCO"));
  expect(fp_eth == metrics::circular_fingerprint(chem::parse_smiles("CCO")), "fingerprint determinism");
  expect(metrics::tanimoto(metrics::circular_fingerprint(chem::parse_smiles("C")), fp_eth) < 1.0, "methane vs ethanol");
  expect(fp_eth == metrics::circular_fingerprint(chem::permute(chem::parse_smiles("CCO"), std::vector<int>{2, 0, 1})), "fingerprint relabeling");

  expect(metrics::validity_rate(std::vector<std::string>{"CCO", "c1ccccc1"}) == 1.0, "validity all valid");
  expect(metrics::validity_rate(std::vector<std::string>{}) == 0.0, "validity empty");
  expect(metrics::validity_rate(std::vector<std::string>{"CCO", "C1CC"}) == 0.5, "validity one failure");

  const auto ref = words("the cat sat down");
  expect(std::abs(metrics::bleu(ref, ref) - 1.0) < 1e-12, "bleu identical");
  expect(metrics::bleu(std::vector<std::string>{}, ref) == 0.0, "bleu empty");
  const double bl = metrics::bleu(words("the cat sat"), ref);
  expect(std::abs(bl - 0.7165) < 1e-4, "bleu 0.7165 (got " + num(bl, 6) + ")");

  expect(std::abs(metrics::chrf("molecule", "molecule") - 1.0) < 1e-12, "chrf identical");
  expect(metrics::chrf("abc", "xyz") == 0.0, "chrf disjoint");
  expect(std::abs(metrics::chrf("abc", "abd", 6, 0) - 7.0 / 18.0) < 1e-12, "chrf abc/abd characters");
  expect(std::abs(metrics::chrf("abc", "abd", 6, 2) - 7.0 / 24.0) < 1e-12, "chrf abc/abd with words");

  std::string detail = std::to_string(checked) + " examples, BLEU(the cat sat | the cat sat down) = " + num(bl, 6);
  for (const auto& f : failed) detail += "; failed " + f;
  return {failed.empty(), detail};
}

// 10. Identical config and seed, identical step-100 loss and samples.
Outcome determinism() {
  const auto recs = toy_pairs();
  auto cfg = overfit_config(train::ScheduleKind::TokenAware);
  cfg.T = 50;
  cfg.d = 16;
  cfg.ff = 32;
  cfg.batch = 4;
  cfg.K = 30;
  cfg.seed = 9;
  const auto task = train::Task::build(recs, train::Direction::S2G, tok::SmilesTokenizer::Ais);
  std::vector<diff::Example> examples;
  for (const auto& r : recs) examples.push_back(task.example(r, cfg.max_target, cfg.max_cond).value());
  auto run = [&] {
    train::Trainer trainer(cfg, static_cast<int>(task.target_vocab().size()), static_cast<int>(task.cond_vocab().size()));
    train::StepLog at100;
    trainer.train(examples, 100, [&](const train::StepLog& l) {
      if (l.step == 100) at100 = l;
    });
    Rng rng(cfg.seed);
    std::vector<std::vector<int>> samples;
    for (const auto& ex : examples) samples.push_back(trainer.sample(ex.cond, rng));
    return std::pair{at100, samples};
  };
  const auto [la, sa] = run();
  const auto [lb, sb] = run();
  const bool same_loss = la.total == lb.total && la.denoise == lb.denoise && la.consistency == lb.consistency && la.rounding == lb.rounding;
  return {la.step == 100 && same_loss && sa == sb,
          "step-100 loss " + num(la.total, 17) + " vs " + num(lb.total, 17) + ", samples " + (sa == sb ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"triplet round-trip", triplet_roundtrip},       {"isotonic projection oracle", isotonic_oracle},
      {"schedule invariants", schedule_invariants},    {"forward-process statistics", forward_statistics},
      {"posterior algebra", posterior_algebra},        {"gradient check", gradient_check},
      {"overfit oracle", overfit_oracle},              {"clamping contract", clamping_contract},
      {"metric self-tests", metric_self_tests},        {"determinism", determinism},
  };
  std::set<int> only;
  for (int k = 1; k < argc; ++k) only.insert(std::atoi(argv[k]));

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
