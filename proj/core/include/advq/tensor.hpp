#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advq/error.hpp"

namespace advq {

class Tape;

// Dense row-major n-d array of doubles. Copies share the underlying buffer;
// mutable_data() is the single mutation door (optimizers, loaders). A tensor
// becomes gradient-tracked when watched on a tape or produced by a recorded op.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data);
  static Tensor scalar(double value) { return from_data({1}, {value}); }

  const std::vector<int>& shape() const { return shape_; }
  int64_t size() const;
  bool empty() const { return !data_; }

  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  std::span<double> mutable_data() { return {data_->data(), data_->size()}; }
  double operator[](int64_t i) const { return (*data_)[i]; }

  // value of a single-element tensor
  double item() const;

  // same buffer, new shape (element count must match)
  Tensor reshaped(std::vector<int> shape) const;

  // deep copy (fresh buffer, untracked)
  Tensor clone() const;

  bool tracked() const { return tape_id_ != 0; }
  int node() const { return node_; }
  uint64_t tape_id() const { return tape_id_; }

  static std::string shape_str(const std::vector<int>& shape);

 private:
  friend class Tape;
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  uint64_t tape_id_ = 0;
  int node_ = -1;
};

// Gradients keyed by tape node. Tracked nodes the loss never touched report
// zero gradients of the right shape.
class GradMap {
 public:
  Tensor at(const Tensor& t) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
  std::vector<std::vector<int>> shapes_;
  uint64_t tape_id_ = 0;
};

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatmul,
  kAddRowVec,
  kAddChanVec,
  kConv2d,
  kRelu,
  kMaxPool,
  kFlatten,
  kSoftmaxCE,
  kMarginLoss,
  kQuantize,
  kSumSqRows,
  kSqrtElem,
  kSum,
};

// Recorded computation (define-by-run; one tape per forward pass). Records are
// appended in execution order, so inputs always precede their consumers and one
// reverse sweep computes every reachable gradient.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // marks t as a differentiation leaf on this tape (in place)
  void watch(Tensor& t);

  // reverse sweep from a scalar loss; gradients accumulate across fan-out
  GradMap backward(const Tensor& loss) const;

  size_t size() const { return nodes_.size(); }
  uint64_t id() const { return id_; }

  struct Node {
    Op op = Op::kLeaf;
    int a = -1, b = -1;             // input node ids (-1: untracked input)
    Tensor va, vb;                  // saved values needed for local derivatives
    Tensor aux;                     // op-specific (softmax probs, sqrt outputs)
    std::vector<int> out_shape;
    std::vector<int32_t> idx;       // labels / argmax indices
    std::vector<double> t0, t1;     // quantizer thresholds / levels
    double c0 = 0.0;                // scale factor / kappa / ste clip
    int i0 = 0, i1 = 0;             // stride / padding / pool geometry
  };

  int push(Node n);
  const Node& node(int i) const { return nodes_[i]; }

  // marks t as the output of node id on this tape
  void tag(Tensor& t, int id) {
    t.tape_id_ = id_;
    t.node_ = id;
  }

 private:
  std::vector<Node> nodes_;
  uint64_t id_;
};

// ---------------------------------------------------------------------------
// Primitives. Every op validates shapes, computes eagerly, and records itself
// on `tape` when any input is tracked there (tape == nullptr never records).
// ---------------------------------------------------------------------------

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double s);

// a[m,k] * b[k,n]
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);

// x[n,k] + v[k] broadcast over rows (dense-layer bias)
Tensor add_rowvec(Tape* tape, const Tensor& x, const Tensor& v);

// x[n,c,h,w] + v[c] broadcast per channel (conv bias)
Tensor add_chanvec(Tape* tape, const Tensor& x, const Tensor& v);

// input [n,c,h,w], kernel [o,c,kh,kw]; cross-correlation (no kernel flip)
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int padding);

// subgradient at 0 is 0
Tensor relu(Tape* tape, const Tensor& x);

Tensor maxpool2d(Tape* tape, const Tensor& x, int k, int stride);

// [n,c,h,w] -> [n, c*h*w]
Tensor flatten(Tape* tape, const Tensor& x);

// mean cross-entropy over the batch; stable log-sum-exp
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, std::span<const int> labels);

// sum over batch of max(logit_y - max_{j!=y} logit_j, -kappa)
Tensor margin_loss(Tape* tape, const Tensor& logits, std::span<const int> labels, double kappa);

// elementwise step quantizer: value in bin i (thresholds half-open, boundary
// goes to the upper bin) maps to levels[i]. ste_clip > 0 selects the
// straight-through training surrogate (pass gradient where |x| <= ste_clip);
// ste_clip <= 0 is deployed semantics: zero gradient everywhere.
Tensor quantize(Tape* tape, const Tensor& x, std::span<const double> thresholds,
                std::span<const double> levels, double ste_clip);

// [n, ...] -> [n], sum of squares per row
Tensor sumsq_rows(Tape* tape, const Tensor& x);

// elementwise sqrt; backward guards the origin with 1/(2*max(y, 1e-12))
Tensor sqrt_elem(Tape* tape, const Tensor& x);

Tensor sum(Tape* tape, const Tensor& x);

// ---------------------------------------------------------------------------
// Gradient checking: max over coordinates of
// |analytic - central difference| / max(1, |analytic|).
// The numeric side never touches backward(), so it stays an independent oracle.
// ---------------------------------------------------------------------------
using ScalarFn = std::function<Tensor(Tape*, const Tensor&)>;
double finite_diff_check(const ScalarFn& fn, const Tensor& point, double h);

}  // namespace advq
