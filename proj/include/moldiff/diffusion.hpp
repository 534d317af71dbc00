#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "moldiff/denoiser.hpp"
#include "moldiff/rng.hpp"
#include "moldiff/schedule.hpp"

namespace moldiff::diff {

using ag::Mat;

struct DiffusionConfig {
  int T = 2000;
  int d = 64;
  int N = 64;
  bool clamp_enabled = true;
  std::uint64_t seed = 0;
  /// Std of the optional jitter on the clean latent z0 = g(S) + sigma0 eps.
  double sigma0 = 0.0;
  /// Reverse sampling visits T, T - stride, ..., always ending at 1.
  int stride = 1;

  void validate() const;
};

enum class ErrorCode { TimestepOutOfRange, ShapeMismatch };

class DiffusionError : public std::runtime_error {
 public:
  DiffusionError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct LatentSeq {
  Mat values;
  int timestep = 0;
};

/// z_t = sqrt(abar_t^i) z0 + sqrt(1 - abar_t^i) noise, row by row.
LatentSeq q_sample(const LatentSeq& z0, int t, const sched::TokenSchedule& s, const Mat& noise);

/// Per-position coefficients of q(z_{t-1} | z_t, z0).
struct Posterior {
  Eigen::VectorXd U;
  Eigen::VectorXd E;
  Eigen::VectorXd beta;
  Eigen::VectorXd beta_tilde;
};

Posterior posterior_coefficients(const sched::TokenSchedule& s, int t);
/// U * z_t + E * z0 per position.
LatentSeq posterior_mean(const LatentSeq& z_t, const LatentSeq& z0, int t, const sched::TokenSchedule& s);

struct Example {
  std::vector<int> target;
  std::vector<int> cond;
};

/// tokens, one [EOS], then fill up to N. Throws when tokens do not fit.
std::vector<int> pad_target(std::span<const int> tokens, int N, int fill);
/// Everything before the first [EOS]; [PAD] entries dropped.
std::vector<int> strip_target(std::span<const int> ids);

/// Random draws behind one loss evaluation, kept apart so the loss is a
/// deterministic function of the parameters.
struct LossDraws {
  int t = 2;
  Mat noise_t;
  Mat noise_1;
  Mat noise_0;
};

LossDraws draw_loss(int N, int d, int T, Rng& rng);

struct LossTerms {
  double denoise = 0.0;
  double consistency = 0.0;
  double rounding = 0.0;
  double total = 0.0;
  /// Squared error per position at the sampled step, for the difficulty
  /// profile; mask marks non-PAD positions.
  sched::ErrorSample errors;
};

struct LossGraph {
  ag::Var total;
  LossTerms terms;
};

/// Records the composite objective for one example on b's tape:
/// ||M(z_t, t, c) - z0||^2 + ||g(S) - M(z_1, 1, c)||^2 - log p(S | z0),
/// each masked to non-PAD positions and mean-reduced.
LossGraph training_loss(const model::Bound& b, const Example& ex, const sched::TokenSchedule& s, const LossDraws& draws, double sigma0 = 0.0);

/// Called with (t, clamped prediction) at every intermediate step.
using SampleTrace = std::function<void(int, const Mat&)>;

/// Clamped ancestral sampling from z_T ~ N(0, I); rounding-head argmax at
/// t = 1. Returns N target ids.
std::vector<int> reverse_sample(std::span<const int> cond, const model::ModelParams& params, const sched::TokenSchedule& s,
                                const DiffusionConfig& cfg, Rng& rng, const SampleTrace& trace = {});

}  // namespace moldiff::diff
