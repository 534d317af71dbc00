#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "moldiff/autograd.hpp"
#include "moldiff/rng.hpp"

namespace moldiff::model {

using ag::Mat;
using ag::Tape;
using ag::Var;

struct ModelConfig {
  int target_vocab = 0;
  int cond_vocab = 0;
  int d = 64;
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int ff = 256;
  int max_target = 64;
  int max_cond = 64;
  int T = 2000;
  double init_std = 0.02;
  double embed_std = 1.0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ErrorCode { ShapeMismatch, NonFiniteGradient, IdOutOfRange, UnknownParameter };

class ModelError : public std::runtime_error {
 public:
  ModelError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat m;
  Mat v;
  bool frozen_row0 = false;
};

/// Denoiser weights, the target embedding table (also the rounding head)
/// and the condition embeddings.
class ModelParams {
 public:
  ModelParams() = default;
  /// Normal(0, init_std) weights, Normal(0, embed_std) embeddings, zero
  /// biases, unit layer-norm gains; PAD rows zero.
  static ModelParams init(const ModelConfig& cfg, Rng& rng);
  /// Same shapes, every entry zero.
  static ModelParams zeros(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  const Mat& embedding() const { return params_[embed_index_].value; }
  void zero_grad();
  std::size_t count() const;

 private:
  void add(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool frozen_row0 = false);

  ModelConfig cfg_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
  std::size_t embed_index_ = 0;
};

/// Parameters placed on a tape as leaves.
class Bound {
 public:
  Bound(Tape& tape, const ModelParams& params);
  Var operator[](const std::string& name) const { return vars_[params_->index_of(name)]; }
  Var at(std::size_t index) const { return vars_[index]; }
  const ModelParams& params() const { return *params_; }
  Tape& tape() const { return *tape_; }
  /// Adds the tape's parameter gradients into params' grad buffers.
  void accumulate(ModelParams& params, double scale = 1.0) const;

 private:
  Tape* tape_;
  const ModelParams* params_;
  std::vector<Var> vars_;
};

/// Rows of the target embedding table; PAD maps to the zero row.
Var embed(const Bound& b, std::span<const int> ids);
/// Condition encoder output, one row per condition token.
Var encode(const Bound& b, std::span<const int> cond);
/// Predicted clean latent from z_t at step t given encoder output.
Var denoise(const Bound& b, Var z_t, int t, Var memory, std::span<const int> cond);
/// Tied rounding logits z0_hat * E^T, shape (positions x |V|).
Var rounding_logits(const Bound& b, Var z0_hat);

/// Nearest table row by squared distance, ties to the lowest id.
int nearest_row(const Mat& table, const Eigen::Ref<const Eigen::RowVectorXd>& x);
/// Replaces every row of z by its nearest table row; ids receives the rows.
Mat clamp_to_table(const Mat& table, const Mat& z, std::vector<int>* ids = nullptr);

/// Sinusoidal step features of width d.
Eigen::RowVectorXd time_features(int t, int d);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; zero disables it.
  double clip = 1.0;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  /// Applies one update from the accumulated grads and clears them.
  /// Throws NonFiniteGradient before touching any weight.
  void step(ModelParams& params);
  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace moldiff::model
