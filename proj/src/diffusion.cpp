#include "moldiff/diffusion.hpp"

#include <cmath>

#include "moldiff/tokenizer.hpp"

namespace moldiff::diff {

namespace {

void check_t(const sched::TokenSchedule& s, int t, int lowest) {
  if (t < lowest || t > s.T()) {
    throw DiffusionError(ErrorCode::TimestepOutOfRange, "timestep " + std::to_string(t) + " outside " + std::to_string(lowest) + ".." + std::to_string(s.T()));
  }
}

void check_rows(const sched::TokenSchedule& s, const Mat& m) {
  if (m.rows() > s.positions()) throw DiffusionError(ErrorCode::ShapeMismatch, "latent has more positions than the schedule");
}

Eigen::VectorXd head(const Eigen::VectorXd& v, Eigen::Index n) { return v.head(n); }

Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

void DiffusionConfig::validate() const {
  if (T < 2 || d < 2 || N < 1 || stride < 1 || sigma0 < 0.0) throw DiffusionError(ErrorCode::ShapeMismatch, "diffusion config out of range");
}

LatentSeq q_sample(const LatentSeq& z0, int t, const sched::TokenSchedule& s, const Mat& noise) {
  check_t(s, t, 1);
  check_rows(s, z0.values);
  if (noise.rows() != z0.values.rows() || noise.cols() != z0.values.cols()) throw DiffusionError(ErrorCode::ShapeMismatch, "noise shape differs from z0");
  const Eigen::VectorXd a = head(s.column(t), z0.values.rows());
  const Eigen::VectorXd sa = a.cwiseSqrt();
  const Eigen::VectorXd sn = (1.0 - a.array()).sqrt().matrix();
  return {sa.asDiagonal() * z0.values + sn.asDiagonal() * noise, t};
}

Posterior posterior_coefficients(const sched::TokenSchedule& s, int t) {
  check_t(s, t, 2);
  const Eigen::ArrayXd a = s.column(t).array();
  const Eigen::ArrayXd ap = s.column(t - 1).array();
  Posterior p;
  const Eigen::ArrayXd beta = (ap - a) / ap;
  const Eigen::ArrayXd alpha = a / ap;
  p.beta = beta.matrix();
  p.U = (alpha.sqrt() * (1.0 - ap) / (1.0 - a)).matrix();
  p.E = (ap.sqrt() * beta / (1.0 - a)).matrix();
  p.beta_tilde = ((1.0 - ap) / (1.0 - a) * beta).matrix();
  return p;
}

LatentSeq posterior_mean(const LatentSeq& z_t, const LatentSeq& z0, int t, const sched::TokenSchedule& s) {
  check_rows(s, z_t.values);
  if (z_t.values.rows() != z0.values.rows() || z_t.values.cols() != z0.values.cols()) throw DiffusionError(ErrorCode::ShapeMismatch, "z_t and z0 differ in shape");
  const Posterior p = posterior_coefficients(s, t);
  const Eigen::Index n = z_t.values.rows();
  return {head(p.U, n).asDiagonal() * z_t.values + head(p.E, n).asDiagonal() * z0.values, t - 1};
}

std::vector<int> pad_target(std::span<const int> tokens, int N, int fill) {
  if (static_cast<int>(tokens.size()) + 1 > N) {
    throw DiffusionError(ErrorCode::ShapeMismatch, "target of " + std::to_string(tokens.size()) + " tokens does not fit in " + std::to_string(N) + " positions");
  }
  std::vector<int> out(tokens.begin(), tokens.end());
  out.push_back(tok::kEos);
  out.resize(static_cast<std::size_t>(N), fill);
  return out;
}

std::vector<int> strip_target(std::span<const int> ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id == tok::kEos) break;
    if (id != tok::kPad) out.push_back(id);
  }
  return out;
}

LossDraws draw_loss(int N, int d, int T, Rng& rng) {
  LossDraws draws;
  draws.t = rng.uniform_int(2, T);
  draws.noise_t = gaussian(N, d, rng);
  draws.noise_1 = gaussian(N, d, rng);
  draws.noise_0 = gaussian(N, d, rng);
  return draws;
}

LossGraph training_loss(const model::Bound& b, const Example& ex, const sched::TokenSchedule& s, const LossDraws& draws, double sigma0) {
  const auto n = static_cast<Eigen::Index>(ex.target.size());
  const int d = b.params().config().d;
  if (n == 0) throw DiffusionError(ErrorCode::ShapeMismatch, "empty target");
  if (draws.noise_t.rows() != n || draws.noise_t.cols() != d || draws.noise_1.rows() != n || draws.noise_0.rows() != n) {
    throw DiffusionError(ErrorCode::ShapeMismatch, "loss draws do not match the target shape");
  }
  check_rows(s, draws.noise_t);
  check_t(s, draws.t, 2);
  ag::Tape& tape = b.tape();

  std::vector<char> mask(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) mask[static_cast<std::size_t>(i)] = ex.target[static_cast<std::size_t>(i)] != tok::kPad;

  const ag::Var g = model::embed(b, ex.target);
  ag::Var z0 = g;
  if (sigma0 > 0.0) z0 = ag::add(g, tape.constant(sigma0 * draws.noise_0));

  auto noised = [&](int t, const Mat& noise) {
    const Eigen::VectorXd a = head(s.column(t), n);
    const Eigen::VectorXd sn = (1.0 - a.array()).sqrt().matrix();
    return ag::add(ag::scale_rows(z0, a.cwiseSqrt()), tape.constant(sn.asDiagonal() * noise));
  };

  const ag::Var memory = model::encode(b, ex.cond);
  const ag::Var pred_t = model::denoise(b, noised(draws.t, draws.noise_t), draws.t, memory, ex.cond);
  const ag::Var pred_1 = model::denoise(b, noised(1, draws.noise_1), 1, memory, ex.cond);

  const ag::Var l_denoise = ag::masked_mse(pred_t, z0, mask);
  const ag::Var l_consistency = ag::masked_mse(g, pred_1, mask);
  const ag::Var l_rounding = ag::masked_cross_entropy(model::rounding_logits(b, z0), ex.target, mask);
  const ag::Var parts[] = {l_denoise, l_consistency, l_rounding};
  LossGraph out{ag::sum(parts), {}};

  out.terms.denoise = l_denoise.value()(0, 0);
  out.terms.consistency = l_consistency.value()(0, 0);
  out.terms.rounding = l_rounding.value()(0, 0);
  out.terms.total = out.total.value()(0, 0);
  out.terms.errors.t = draws.t;
  out.terms.errors.mask = mask;
  out.terms.errors.errors.resize(static_cast<std::size_t>(n));
  const Mat diff = pred_t.value() - z0.value();
  for (Eigen::Index i = 0; i < n; ++i) out.terms.errors.errors[static_cast<std::size_t>(i)] = diff.row(i).squaredNorm();
  return out;
}

std::vector<int> reverse_sample(std::span<const int> cond, const model::ModelParams& params, const sched::TokenSchedule& s,
                                const DiffusionConfig& cfg, Rng& rng, const SampleTrace& trace) {
  cfg.validate();
  if (s.T() != cfg.T || s.positions() < cfg.N) throw DiffusionError(ErrorCode::ShapeMismatch, "schedule does not cover the sampling shape");
  ag::Tape tape(false);
  const model::Bound b(tape, params);
  const ag::Var memory = model::encode(b, cond);
  const Mat& table = params.embedding();

  Mat z = gaussian(cfg.N, cfg.d, rng);
  for (int t = cfg.T; t >= 2;) {
    const Mat pred = model::denoise(b, tape.constant(z), t, memory, cond).value();
    Mat committed = cfg.clamp_enabled ? model::clamp_to_table(table, pred) : pred;
    if (trace) trace(t, committed);
    const int prev = std::max(1, t - cfg.stride);
    const Eigen::VectorXd a = head(s.column(prev), cfg.N);
    const Eigen::VectorXd sa = a.cwiseSqrt();
    const Eigen::VectorXd sn = (1.0 - a.array()).sqrt().matrix();
    const Mat noise = gaussian(cfg.N, cfg.d, rng);
    z = sa.asDiagonal() * committed + sn.asDiagonal() * noise;
    t = prev;
  }
  const ag::Var pred = model::denoise(b, tape.constant(z), 1, memory, cond);
  const Mat logits = model::rounding_logits(b, pred).value();
  std::vector<int> ids(static_cast<std::size_t>(cfg.N));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index k;
    logits.row(i).maxCoeff(&k);
    ids[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return ids;
}

}  // namespace moldiff::diff
