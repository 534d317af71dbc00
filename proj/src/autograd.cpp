#include "moldiff/autograd.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace moldiff::ag {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

std::size_t masked_count(std::span<const char> mask, Eigen::Index rows) {
  if (mask.empty()) return static_cast<std::size_t>(rows);
  std::size_t n = 0;
  for (char m : mask) n += m ? 1 : 0;
  return n;
}

bool keep(std::span<const char> mask, Eigen::Index i) { return mask.empty() || mask[static_cast<std::size_t>(i)]; }

}  // namespace

const Mat& Var::value() const { return tape->value(id); }
const Mat& Var::grad() const { return tape->grad(id); }

Var Tape::constant(Mat value) {
  nodes_.push_back({std::move(value), {}, false, {}});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Mat value) {
  nodes_.push_back({std::move(value), {}, recording_, {}});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Mat value, std::initializer_list<Var> parents, Backward backward) {
  bool needs = false;
  if (recording_) {
    for (const Var& p : parents) needs = needs || needs_grad(p.id);
  }
  nodes_.push_back({std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_slot(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root, double scale) {
  require(root.rows() == 1 && root.cols() == 1, "backward needs a scalar root");
  if (!recording_) throw std::logic_error("backward on a tape that does not record");
  grad_slot(root.id)(0, 0) += scale;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad && n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul shape mismatch");
  Tape& t = *a.tape;
  return t.push(a.value() * b.value(), {a, b}, [a, b](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(a.id)) tp.grad_slot(a.id).noalias() += g * b.value().transpose();
    if (tp.needs_grad(b.id)) tp.grad_slot(b.id).noalias() += a.value().transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt shape mismatch");
  Tape& t = *a.tape;
  return t.push(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(a.id)) tp.grad_slot(a.id).noalias() += g * b.value();
    if (tp.needs_grad(b.id)) tp.grad_slot(b.id).noalias() += g.transpose() * a.value();
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  return a.tape->push(a.value() + b.value(), {a, b}, [a, b](Tape& tp, int self) {
    if (tp.needs_grad(a.id)) tp.grad_slot(a.id) += tp.grad(self);
    if (tp.needs_grad(b.id)) tp.grad_slot(b.id) += tp.grad(self);
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
  return a.tape->push(a.value() - b.value(), {a, b}, [a, b](Tape& tp, int self) {
    if (tp.needs_grad(a.id)) tp.grad_slot(a.id) += tp.grad(self);
    if (tp.needs_grad(b.id)) tp.grad_slot(b.id) -= tp.grad(self);
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape mismatch");
  return a.tape->push(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tp, int self) {
    if (tp.needs_grad(a.id)) tp.grad_slot(a.id) += tp.grad(self).cwiseProduct(b.value());
    if (tp.needs_grad(b.id)) tp.grad_slot(b.id) += tp.grad(self).cwiseProduct(a.value());
  });
}

Var scale(Var a, double s) {
  return a.tape->push(a.value() * s, {a}, [a, s](Tape& tp, int self) { tp.grad_slot(a.id) += s * tp.grad(self); });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row needs a 1 x cols row");
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape->push(std::move(out), {a, row}, [a, row](Tape& tp, int self) {
    if (tp.needs_grad(a.id)) tp.grad_slot(a.id) += tp.grad(self);
    if (tp.needs_grad(row.id)) tp.grad_slot(row.id) += tp.grad(self).colwise().sum();
  });
}

Var scale_rows(Var a, const Eigen::VectorXd& s) {
  require(s.size() == a.rows(), "scale_rows length mismatch");
  Mat out = s.asDiagonal() * a.value();
  return a.tape->push(std::move(out), {a}, [a, s](Tape& tp, int self) { tp.grad_slot(a.id) += s.asDiagonal() * tp.grad(self); });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Var gelu(Var a) {
  Mat out = a.value().unaryExpr([](double x) { return gelu_value(x); });
  return a.tape->push(std::move(out), {a}, [a](Tape& tp, int self) {
    const Mat d = a.value().unaryExpr([](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    });
    tp.grad_slot(a.id) += tp.grad(self).cwiseProduct(d);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Eigen::Index n = x.rows(), c = x.cols();
  require(gain.rows() == 1 && gain.cols() == c && bias.rows() == 1 && bias.cols() == c, "layer_norm parameter shape");
  Mat xhat(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const auto centered = x.value().row(i).array() - mu;
    const double var = centered.square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std(i);
  }
  Mat out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return x.tape->push(std::move(out), {x, gain, bias}, [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    if (tp.needs_grad(gain.id)) tp.grad_slot(gain.id) += g.cwiseProduct(xhat).colwise().sum();
    if (tp.needs_grad(bias.id)) tp.grad_slot(bias.id) += g.colwise().sum();
    if (tp.needs_grad(x.id)) {
      const Mat gx = g.array().rowwise() * gain.value().row(0).array();
      const double c = static_cast<double>(gx.cols());
      Mat& dx = tp.grad_slot(x.id);
      for (Eigen::Index i = 0; i < gx.rows(); ++i) {
        const double m1 = gx.row(i).sum() / c;
        const double m2 = gx.row(i).dot(xhat.row(i)) / c;
        dx.row(i).array() += inv_std(i) * (gx.row(i).array() - m1 - xhat.row(i).array() * m2);
      }
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Mat out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= table.rows()) throw ShapeError("gather_rows id " + std::to_string(ids[k]) + " out of range");
    out.row(static_cast<Eigen::Index>(k)) = table.value().row(ids[k]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape->push(std::move(out), {table}, [table, idx = std::move(idx)](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat& dt = tp.grad_slot(table.id);
    for (std::size_t k = 0; k < idx.size(); ++k) dt.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
  });
}

Var attention(Var q, Var k, Var v, int heads, std::span<const char> key_mask) {
  const Eigen::Index nq = q.rows(), nk = k.rows(), d = q.cols();
  require(k.cols() == d && v.cols() == d && v.rows() == nk, "attention shape mismatch");
  require(heads > 0 && d % heads == 0, "attention heads must divide the width");
  require(key_mask.empty() || static_cast<Eigen::Index>(key_mask.size()) == nk, "attention key mask length");
  const Eigen::Index dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Mat> probs(static_cast<std::size_t>(heads));
  Mat out(nq, d);
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.value().middleCols(h * dh, dh);
    const auto kh = k.value().middleCols(h * dh, dh);
    Mat s = (qh * kh.transpose()) * inv;
    for (Eigen::Index j = 0; j < nk; ++j) {
      if (!keep(key_mask, j)) s.col(j).setConstant(-std::numeric_limits<double>::infinity());
    }
    for (Eigen::Index i = 0; i < nq; ++i) {
      const double mx = s.row(i).maxCoeff();
      if (!std::isfinite(mx)) {
        s.row(i).setZero();
        continue;
      }
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    out.middleCols(h * dh, dh).noalias() = s * v.value().middleCols(h * dh, dh);
    probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  return q.tape->push(std::move(out), {q, k, v}, [q, k, v, heads, dh, inv, probs = std::move(probs)](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    for (int h = 0; h < heads; ++h) {
      const Mat& p = probs[static_cast<std::size_t>(h)];
      const auto gh = g.middleCols(h * dh, dh);
      if (tp.needs_grad(v.id)) tp.grad_slot(v.id).middleCols(h * dh, dh).noalias() += p.transpose() * gh;
      if (!tp.needs_grad(q.id) && !tp.needs_grad(k.id)) continue;
      const Mat dp = gh * v.value().middleCols(h * dh, dh).transpose();
      Mat ds = p.cwiseProduct(dp);
      const Eigen::VectorXd rs = ds.rowwise().sum();
      ds -= p.cwiseProduct(rs.replicate(1, p.cols()));
      ds *= inv;
      if (tp.needs_grad(q.id)) tp.grad_slot(q.id).middleCols(h * dh, dh).noalias() += ds * k.value().middleCols(h * dh, dh);
      if (tp.needs_grad(k.id)) tp.grad_slot(k.id).middleCols(h * dh, dh).noalias() += ds.transpose() * q.value().middleCols(h * dh, dh);
    }
  });
}

Var masked_mse(Var pred, Var target, std::span<const char> row_mask) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "masked_mse shape mismatch");
  require(row_mask.empty() || static_cast<Eigen::Index>(row_mask.size()) == pred.rows(), "masked_mse mask length");
  const std::size_t n = masked_count(row_mask, pred.rows());
  const double denom = static_cast<double>(n) * static_cast<double>(pred.cols());
  Mat diff = pred.value() - target.value();
  for (Eigen::Index i = 0; i < diff.rows(); ++i) {
    if (!keep(row_mask, i)) diff.row(i).setZero();
  }
  Mat out(1, 1);
  out(0, 0) = n == 0 ? 0.0 : diff.squaredNorm() / denom;
  return pred.tape->push(std::move(out), {pred, target}, [pred, target, diff = std::move(diff), denom, n](Tape& tp, int self) {
    if (n == 0) return;
    const double g = tp.grad(self)(0, 0) * 2.0 / denom;
    if (tp.needs_grad(pred.id)) tp.grad_slot(pred.id) += g * diff;
    if (tp.needs_grad(target.id)) tp.grad_slot(target.id) -= g * diff;
  });
}

Var masked_cross_entropy(Var logits, std::span<const int> targets, std::span<const char> row_mask) {
  const Eigen::Index n = logits.rows();
  require(static_cast<Eigen::Index>(targets.size()) == n, "cross entropy target length");
  require(row_mask.empty() || static_cast<Eigen::Index>(row_mask.size()) == n, "cross entropy mask length");
  const std::size_t count = masked_count(row_mask, n);
  Mat probs(n, logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.value().row(i).maxCoeff();
    probs.row(i) = (logits.value().row(i).array() - mx).exp();
    const double z = probs.row(i).sum();
    probs.row(i) /= z;
    const int y = targets[static_cast<std::size_t>(i)];
    require(y >= 0 && y < logits.cols(), "cross entropy target out of range");
    if (keep(row_mask, i)) total += -(logits.value()(i, y) - mx - std::log(z));
  }
  Mat out(1, 1);
  out(0, 0) = count == 0 ? 0.0 : total / static_cast<double>(count);
  std::vector<int> y(targets.begin(), targets.end());
  std::vector<char> mask(row_mask.begin(), row_mask.end());
  return logits.tape->push(std::move(out), {logits}, [logits, probs = std::move(probs), y = std::move(y), mask = std::move(mask), count](Tape& tp, int self) {
    if (count == 0) return;
    const double g = tp.grad(self)(0, 0) / static_cast<double>(count);
    Mat& dl = tp.grad_slot(logits.id);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      if (!keep(mask, i)) continue;
      dl.row(i) += g * probs.row(i);
      dl(i, y[static_cast<std::size_t>(i)]) -= g;
    }
  });
}

Var sum(std::span<const Var> terms) {
  require(!terms.empty(), "sum of no terms");
  Var acc = terms[0];
  for (std::size_t k = 1; k < terms.size(); ++k) acc = add(acc, terms[k]);
  return acc;
}

}  // namespace moldiff::ag
