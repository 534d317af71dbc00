#pragma once

#include <Eigen/Core>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace moldiff::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep visits every node after all of its consumers. With recording off
/// the tape only evaluates and keeps no backward closures.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  Var constant(Mat value);
  Var variable(Mat value);
  Var push(Mat value, std::initializer_list<Var> parents, Backward backward);

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Mat& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  /// Accumulation target for a parent's gradient; allocated on first use.
  Mat& grad_slot(int id);
  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = scale and propagates. Root must be 1x1.
  void backward(Var root, double scale = 1.0);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
  bool recording_;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x c row to every row of a.
Var add_row(Var a, Var row);
/// Multiplies row i of a by s[i].
Var scale_rows(Var a, const Eigen::VectorXd& s);
Var gelu(Var a);
/// Row-wise layer norm with learned gain and bias (both 1 x c).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// out.row(k) = table.row(ids[k]).
Var gather_rows(Var table, std::span<const int> ids);
/// Multi-head scaled dot-product attention over already projected q, k, v.
/// Keys with key_mask[j] == 0 receive no attention; an empty mask keeps all.
Var attention(Var q, Var k, Var v, int heads, std::span<const char> key_mask);
/// Sum over masked rows of squared row error, divided by (rows * cols).
Var masked_mse(Var pred, Var target, std::span<const char> row_mask);
/// Mean over masked rows of -log softmax(logits)[row, target[row]].
Var masked_cross_entropy(Var logits, std::span<const int> targets, std::span<const char> row_mask);
Var sum(std::span<const Var> terms);

double gelu_value(double x);

}  // namespace moldiff::ag
