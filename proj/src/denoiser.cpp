#include "moldiff/denoiser.hpp"

#include <cmath>
#include <numeric>

#include "moldiff/tokenizer.hpp"

namespace moldiff::model {

namespace {

std::string layer_name(const char* stack, int layer, const char* part) {
  return std::string(stack) + std::to_string(layer) + "." + part;
}

Var linear(const Bound& b, Var x, const std::string& prefix) {
  return ag::add_row(ag::matmul(x, b[prefix + ".w"]), b[prefix + ".b"]);
}

Var norm(const Bound& b, Var x, const std::string& prefix) { return ag::layer_norm(x, b[prefix + ".g"], b[prefix + ".b"]); }

std::vector<char> pad_mask(std::span<const int> ids) {
  std::vector<char> mask(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] != tok::kPad;
  return mask;
}

Var attend(const Bound& b, Var x, Var memory, std::span<const char> key_mask, const std::string& prefix) {
  const Var q = linear(b, x, prefix + ".q");
  const Var k = linear(b, memory, prefix + ".k");
  const Var v = linear(b, memory, prefix + ".v");
  return linear(b, ag::attention(q, k, v, b.params().config().heads, key_mask), prefix + ".o");
}

Var feed_forward(const Bound& b, Var x, const std::string& prefix) {
  return linear(b, ag::gelu(linear(b, x, prefix + ".ff1")), prefix + ".ff2");
}

std::vector<int> iota(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

void ModelConfig::validate() const {
  if (target_vocab < 1 || cond_vocab < 1) throw ModelError(ErrorCode::ShapeMismatch, "vocabulary sizes must be positive");
  if (d < 2 || heads < 1 || d % heads != 0) throw ModelError(ErrorCode::ShapeMismatch, "width must be >= 2 and divisible by heads");
  if (enc_layers < 0 || dec_layers < 1 || ff < 1) throw ModelError(ErrorCode::ShapeMismatch, "layer counts out of range");
  if (max_target < 1 || max_cond < 1 || T < 2) throw ModelError(ErrorCode::ShapeMismatch, "sequence lengths and T out of range");
}

void ModelParams::add(const std::string& name, Eigen::Index rows, Eigen::Index cols, bool frozen_row0) {
  index_.emplace(name, params_.size());
  Param p;
  p.name = name;
  p.value = Mat::Zero(rows, cols);
  p.grad = Mat::Zero(rows, cols);
  p.m = Mat::Zero(rows, cols);
  p.v = Mat::Zero(rows, cols);
  p.frozen_row0 = frozen_row0;
  params_.push_back(std::move(p));
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams mp;
  mp.cfg_ = cfg;
  const int d = cfg.d;
  auto lin = [&](const std::string& name, int in, int out) {
    mp.add(name + ".w", in, out);
    mp.add(name + ".b", 1, out);
  };
  auto ln = [&](const std::string& name) {
    mp.add(name + ".g", 1, d);
    mp.add(name + ".b", 1, d);
  };
  auto attn = [&](const std::string& name) {
    for (const char* part : {".q", ".k", ".v", ".o"}) lin(name + part, d, d);
  };
  mp.add("tgt_embed", cfg.target_vocab, d, true);
  mp.add("cond_embed", cfg.cond_vocab, d, true);
  mp.add("enc_pos", cfg.max_cond, d);
  mp.add("dec_pos", cfg.max_target, d);
  lin("time", d, d);
  lin("in", d, d);
  for (int l = 0; l < cfg.enc_layers; ++l) {
    ln(layer_name("enc", l, "ln1"));
    attn(layer_name("enc", l, "self"));
    ln(layer_name("enc", l, "ln2"));
    lin(layer_name("enc", l, "ff1"), d, cfg.ff);
    lin(layer_name("enc", l, "ff2"), cfg.ff, d);
  }
  ln("enc_out");
  for (int l = 0; l < cfg.dec_layers; ++l) {
    ln(layer_name("dec", l, "ln1"));
    attn(layer_name("dec", l, "self"));
    ln(layer_name("dec", l, "ln2"));
    attn(layer_name("dec", l, "cross"));
    ln(layer_name("dec", l, "ln3"));
    lin(layer_name("dec", l, "ff1"), d, cfg.ff);
    lin(layer_name("dec", l, "ff2"), cfg.ff, d);
  }
  ln("dec_out");
  lin("out", d, d);
  mp.embed_index_ = mp.index_of("tgt_embed");
  return mp;
}

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  ModelParams mp = zeros(cfg);
  for (auto& p : mp.params_) {
    const std::string& n = p.name;
    const bool is_embed = n == "tgt_embed" || n == "cond_embed";
    const bool is_bias = n.size() > 2 && n.compare(n.size() - 2, 2, ".b") == 0;
    const bool is_gain = n.size() > 2 && n.compare(n.size() - 2, 2, ".g") == 0;
    if (is_gain) {
      p.value.setOnes();
    } else if (!is_bias) {
      const double std = is_embed ? cfg.embed_std : cfg.init_std;
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = std * rng.normal();
    }
    if (p.frozen_row0) p.value.row(0).setZero();
  }
  return mp;
}

Param& ModelParams::get(const std::string& name) { return params_[index_of(name)]; }
const Param& ModelParams::get(const std::string& name) const { return params_[index_of(name)]; }

std::size_t ModelParams::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ModelError(ErrorCode::UnknownParameter, "no parameter named " + name);
  return it->second;
}

void ModelParams::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Bound::Bound(Tape& tape, const ModelParams& params) : tape_(&tape), params_(&params) {
  vars_.reserve(params.params().size());
  for (const auto& p : params.params()) vars_.push_back(tape.variable(p.value));
}

void Bound::accumulate(ModelParams& params, double scale) const {
  auto& ps = params.params();
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const Mat& g = vars_[k].grad();
    if (g.size() != 0) ps[k].grad += scale * g;
  }
}

Var embed(const Bound& b, std::span<const int> ids) {
  const auto vocab = b.params().config().target_vocab;
  for (int id : ids) {
    if (id < 0 || id >= vocab) throw ModelError(ErrorCode::IdOutOfRange, "target id " + std::to_string(id) + " out of range");
  }
  return ag::gather_rows(b["tgt_embed"], ids);
}

Var encode(const Bound& b, std::span<const int> cond) {
  const ModelConfig& cfg = b.params().config();
  if (cond.empty() || static_cast<int>(cond.size()) > cfg.max_cond) {
    throw ModelError(ErrorCode::ShapeMismatch, "condition length must be in 1.." + std::to_string(cfg.max_cond));
  }
  for (int id : cond) {
    if (id < 0 || id >= cfg.cond_vocab) throw ModelError(ErrorCode::IdOutOfRange, "condition id " + std::to_string(id) + " out of range");
  }
  const auto mask = pad_mask(cond);
  Var x = ag::add(ag::gather_rows(b["cond_embed"], cond), ag::gather_rows(b["enc_pos"], iota(static_cast<int>(cond.size()))));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    const Var h = norm(b, x, p + ".ln1");
    x = ag::add(x, attend(b, h, h, mask, p + ".self"));
    x = ag::add(x, feed_forward(b, norm(b, x, p + ".ln2"), p));
  }
  return norm(b, x, "enc_out");
}

Var denoise(const Bound& b, Var z_t, int t, Var memory, std::span<const int> cond) {
  const ModelConfig& cfg = b.params().config();
  if (z_t.cols() != cfg.d || z_t.rows() < 1 || z_t.rows() > cfg.max_target) {
    throw ModelError(ErrorCode::ShapeMismatch, "latent must be (1.." + std::to_string(cfg.max_target) + ") x " + std::to_string(cfg.d));
  }
  if (t < 1 || t > cfg.T) throw ModelError(ErrorCode::ShapeMismatch, "timestep outside 1..T");
  if (memory.rows() != static_cast<Eigen::Index>(cond.size())) throw ModelError(ErrorCode::ShapeMismatch, "encoder output does not match condition");
  Tape& tape = b.tape();
  const auto mask = pad_mask(cond);
  const int n = static_cast<int>(z_t.rows());

  const Var time_in = tape.constant(Mat(time_features(t, cfg.d)));
  const Var time = linear(b, time_in, "time");
  Var x = linear(b, z_t, "in");
  x = ag::add(x, ag::gather_rows(b["dec_pos"], iota(n)));
  x = ag::add_row(x, time);
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    const Var h = norm(b, x, p + ".ln1");
    x = ag::add(x, attend(b, h, h, {}, p + ".self"));
    x = ag::add(x, attend(b, norm(b, x, p + ".ln2"), memory, mask, p + ".cross"));
    x = ag::add(x, feed_forward(b, norm(b, x, p + ".ln3"), p));
  }
  return linear(b, norm(b, x, "dec_out"), "out");
}

Var rounding_logits(const Bound& b, Var z0_hat) { return ag::matmul_nt(z0_hat, b["tgt_embed"]); }

int nearest_row(const Mat& table, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < table.rows(); ++k) {
    const double dist = (table.row(k) - x).squaredNorm();
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(k);
    }
  }
  return best;
}

Mat clamp_to_table(const Mat& table, const Mat& z, std::vector<int>* ids) {
  Mat out(z.rows(), z.cols());
  if (ids) ids->resize(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int k = nearest_row(table, z.row(i));
    out.row(i) = table.row(k);
    if (ids) (*ids)[static_cast<std::size_t>(i)] = k;
  }
  return out;
}

Eigen::RowVectorXd time_features(int t, int d) {
  Eigen::RowVectorXd f(d);
  const int half = d / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / std::max(1, half));
    f(k) = std::sin(t * freq);
    f(half + k) = std::cos(t * freq);
  }
  if (d % 2 == 1) f(d - 1) = 0.0;
  return f;
}

void Adam::step(ModelParams& params) {
  double norm2 = 0.0;
  for (auto& p : params.params()) {
    if (p.frozen_row0) p.grad.row(0).setZero();
    if (!p.grad.allFinite()) throw ModelError(ErrorCode::NonFiniteGradient, "non-finite gradient in " + p.name);
    norm2 += p.grad.squaredNorm();
  }
  const double norm = std::sqrt(norm2);
  const double clip_scale = cfg_.clip > 0.0 && norm > cfg_.clip ? cfg_.clip / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params.params()) {
    const Mat g = p.grad * clip_scale;
    p.m = cfg_.beta1 * p.m + (1.0 - cfg_.beta1) * g;
    p.v = cfg_.beta2 * p.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value.array() -= cfg_.lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + cfg_.eps);
    if (p.frozen_row0) p.value.row(0).setZero();
    p.grad.setZero();
  }
}

}  // namespace moldiff::model
