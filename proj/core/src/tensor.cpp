#include "advq/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>

#include "advq/threads.hpp"

namespace advq {

namespace {

int64_t shape_product(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw Error("shape-invalid", "non-positive extent in " + Tensor::shape_str(shape));
    n *= d;
  }
  return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("shape-mismatch", std::string(op) + ": " + Tensor::shape_str(a.shape()) +
                                      " vs " + Tensor::shape_str(b.shape()));
  }
}

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw Error("non-finite", std::string(op) + " produced a non-finite value");
  }
}

// C[m,n] += A[m,k] * B[k,n]; row-major, inner loop unit stride for FMA
// vectorization. Rows split across workers (disjoint outputs, deterministic).
void gemm_acc(int m, int n, int k, const double* A, const double* B, double* C) {
  auto rows = [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      double* __restrict__ c = C + i * n;
      const double* __restrict__ a = A + i * k;
      for (int p = 0; p < k; ++p) {
        const double av = a[p];
        const double* __restrict__ b = B + static_cast<int64_t>(p) * n;
        for (int j = 0; j < n; ++j) c[j] += av * b[j];
      }
    }
  };
  if (static_cast<int64_t>(m) * n * k >= (1 << 18) && get_threads() > 1 && m >= 2 * get_threads()) {
    parallel_for(m, rows);
  } else {
    rows(0, m);
  }
}

struct ConvGeom {
  int n, c, h, w, o, kh, kw, oh, ow, stride, pad;
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (is.size() != 4 || ks.size() != 4) {
    throw Error("conv-geometry", "conv2d expects input [n,c,h,w] and kernel [o,c,kh,kw], got " +
                                     Tensor::shape_str(is) + " and " + Tensor::shape_str(ks));
  }
  if (is[1] != ks[1]) {
    throw Error("conv-geometry", "channel mismatch: input " + Tensor::shape_str(is) +
                                     " vs kernel " + Tensor::shape_str(ks));
  }
  if (stride < 1 || padding < 0) throw Error("conv-geometry", "stride must be >= 1 and padding >= 0");
  ConvGeom g{is[0], is[1], is[2], is[3], ks[0], ks[2], ks[3], 0, 0, stride, padding};
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw || g.oh <= 0 || g.ow <= 0) {
    throw Error("conv-geometry", "non-positive output extent for input " + Tensor::shape_str(is) +
                                     ", kernel " + Tensor::shape_str(ks));
  }
  return g;
}

// one sample: col[(c*kh*kw) x (oh*ow)]
void im2col(const double* in, const ConvGeom& g, double* col) {
  const int area = g.oh * g.ow;
  for (int ch = 0; ch < g.c; ++ch) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        double* row = col + (static_cast<int64_t>(ch) * g.kh * g.kw + ky * g.kw + kx) * area;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            row[oy * g.ow + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                      ? in[(static_cast<int64_t>(ch) * g.h + iy) * g.w + ix]
                                      : 0.0;
          }
        }
      }
    }
  }
}

void col2im_acc(const double* col, const ConvGeom& g, double* in) {
  const int area = g.oh * g.ow;
  for (int ch = 0; ch < g.c; ++ch) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const double* row = col + (static_cast<int64_t>(ch) * g.kh * g.kw + ky * g.kw + kx) * area;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.w) continue;
            in[(static_cast<int64_t>(ch) * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

int quantize_bin(double v, std::span<const double> thresholds) {
  // boundary value at a threshold goes to the upper bin
  int lo = 0, hi = static_cast<int>(thresholds.size());
  while (lo < hi) {
    const int mid = (lo + hi) / 2;
    if (v >= thresholds[mid]) lo = mid + 1; else hi = mid;
  }
  return lo;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  const int64_t n = shape_product(shape);
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(n, value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data) {
  const int64_t n = shape_product(shape);
  if (n != static_cast<int64_t>(data.size())) {
    throw Error("shape-invalid", "data length " + std::to_string(data.size()) +
                                     " does not fill shape " + shape_str(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(std::move(data));
  return t;
}

int64_t Tensor::size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

double Tensor::item() const {
  if (size() != 1) throw Error("not-scalar", "item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (shape_product(shape) != size()) {
    throw Error("shape-mismatch", "reshape " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = std::make_shared<std::vector<double>>(*data_);
  return t;
}

std::string Tensor::shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() {
  static std::atomic<uint64_t> counter{1};
  id_ = counter.fetch_add(1);
}

void Tape::watch(Tensor& t) {
  if (t.empty()) throw Error("empty-tensor", "cannot watch an empty tensor");
  Node n;
  n.op = Op::kLeaf;
  n.out_shape = t.shape();
  t.tape_id_ = id_;
  t.node_ = push(std::move(n));
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

namespace {

// helpers shared by ops to attach results / fetch input ids
int input_id(const Tape* tape, const Tensor& t) {
  return (tape && t.tracked() && t.tape_id() == tape->id()) ? t.node() : -1;
}

struct Recorder {
  Tape* tape;
  bool any_tracked;
  Recorder(Tape* t, std::initializer_list<const Tensor*> inputs) : tape(t), any_tracked(false) {
    for (const Tensor* in : inputs) {
      if (input_id(tape, *in) >= 0) any_tracked = true;
    }
  }
  bool active() const { return tape != nullptr && any_tracked; }
};

void attach(Tape* tape, Tensor& out, Tape::Node node) {
  node.out_shape = out.shape();
  tape->tag(out, tape->push(std::move(node)));
}

}  // namespace

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

namespace {

// elementwise binary helper
template <typename F>
Tensor elementwise2(const char* name, Tape* tape, Op op, const Tensor& a, const Tensor& b, F f,
                    bool save_values) {
  check_same_shape(name, a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto pa = a.data(), pb = b.data();
  for (int64_t i = 0; i < a.size(); ++i) o[i] = f(pa[i], pb[i]);
  Recorder rec(tape, {&a, &b});
  if (rec.active()) {
    Tape::Node n;
    n.op = op;
    n.a = input_id(tape, a);
    n.b = input_id(tape, b);
    if (save_values) {
      n.va = a;
      n.vb = b;
    }
    attach(tape, out, std::move(n));
  }
  return out;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  return elementwise2("add", tape, Op::kAdd, a, b, [](double x, double y) { return x + y; }, false);
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  return elementwise2("sub", tape, Op::kSub, a, b, [](double x, double y) { return x - y; }, false);
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  return elementwise2("mul", tape, Op::kMul, a, b, [](double x, double y) { return x * y; }, true);
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto pa = a.data();
  for (int64_t i = 0; i < a.size(); ++i) o[i] = pa[i] * s;
  Recorder rec(tape, {&a});
  if (rec.active()) {
    Tape::Node n;
    n.op = Op::kScale;
    n.a = input_id(tape, a);
    n.c0 = s;
    attach(tape, out, std::move(n));
  }
  return out;
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw Error("shape-mismatch",
                "matmul: " + Tensor::shape_str(as) + " vs " + Tensor::shape_str(bs));
  }
  const int m = as[0], k = as[1], n = bs[1];
  Tensor out = Tensor::zeros({m, n});
  gemm_acc(m, n, k, a.data().data(), b.data().data(), out.mutable_data().data());
  Recorder rec(tape, {&a, &b});
  if (rec.active()) {
    Tape::Node nd;
    nd.op = Op::kMatmul;
    nd.a = input_id(tape, a);
    nd.b = input_id(tape, b);
    nd.va = a;
    nd.vb = b;
    attach(tape, out, std::move(nd));
  }
  return out;
}

Tensor add_rowvec(Tape* tape, const Tensor& x, const Tensor& v) {
  const auto& xs = x.shape();
  if (xs.size() != 2 || v.shape().size() != 1 || v.shape()[0] != xs[1]) {
    throw Error("shape-mismatch",
                "add_rowvec: " + Tensor::shape_str(xs) + " vs " + Tensor::shape_str(v.shape()));
  }
  Tensor out = Tensor::zeros(xs);
  auto o = out.mutable_data();
  auto px = x.data(), pv = v.data();
  for (int i = 0; i < xs[0]; ++i)
    for (int j = 0; j < xs[1]; ++j) o[static_cast<int64_t>(i) * xs[1] + j] = px[static_cast<int64_t>(i) * xs[1] + j] + pv[j];
  Recorder rec(tape, {&x, &v});
  if (rec.active()) {
    Tape::Node n;
    n.op = Op::kAddRowVec;
    n.a = input_id(tape, x);
    n.b = input_id(tape, v);
    attach(tape, out, std::move(n));
  }
  return out;
}

Tensor add_chanvec(Tape* tape, const Tensor& x, const Tensor& v) {
  const auto& xs = x.shape();
  if (xs.size() != 4 || v.shape().size() != 1 || v.shape()[0] != xs[1]) {
    throw Error("shape-mismatch",
                "add_chanvec: " + Tensor::shape_str(xs) + " vs " + Tensor::shape_str(v.shape()));
  }
  Tensor out = Tensor::zeros(xs);
  auto o = out.mutable_data();
  auto px = x.data(), pv = v.data();
  const int64_t area = static_cast<int64_t>(xs[2]) * xs[3];
  int64_t p = 0;
  for (int i = 0; i < xs[0]; ++i)
    for (int c = 0; c < xs[1]; ++c) {
      const double b = pv[c];
      for (int64_t j = 0; j < area; ++j, ++p) o[p] = px[p] + b;
    }
  Recorder rec(tape, {&x, &v});
  if (rec.active()) {
    Tape::Node n;
    n.op = Op::kAddChanVec;
    n.a = input_id(tape, x);
    n.b = input_id(tape, v);
    attach(tape, out, std::move(n));
  }
  return out;
}

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int padding) {
  const ConvGeom g = conv_geometry(input, kernel, stride, padding);
  Tensor out = Tensor::zeros({g.n, g.o, g.oh, g.ow});
  const int ckk = g.c * g.kh * g.kw;
  const int area = g.oh * g.ow;
  const double* in = input.data().data();
  const double* kval = kernel.data().data();
  double* op = out.mutable_data().data();
  parallel_for(g.n, [&](int64_t n0, int64_t n1) {
    std::vector<double> col(static_cast<size_t>(ckk) * area);
    for (int64_t s = n0; s < n1; ++s) {
      im2col(in + s * g.c * g.h * g.w, g, col.data());
      gemm_acc(g.o, area, ckk, kval, col.data(), op + s * g.o * area);
    }
  });
  Recorder rec(tape, {&input, &kernel});
  if (rec.active()) {
    Tape::Node n;
    n.op = Op::kConv2d;
    n.a = input_id(tape, input);
    n.b = input_id(tape, kernel);
    n.va = input;
    n.vb = kernel;
    n.i0 = stride;
    n.i1 = padding;
    attach(tape, out, std::move(n));
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto px = x.data();
  for (int64_t i = 0; i < x.size(); ++i) o[i] = px[i] > 0.0 ? px[i] : 0.0;
  Recorder rec(tape, {&x});
  if (rec.active()) {
    Tape::Node n;
    n.op = Op::kRelu;
    n.a = input_id(tape, x);
    n.va = x;
    attach(tape, out, std::move(n));
  }
  return out;
}

Tensor maxpool2d(Tape* tape, const Tensor& x, int k, int stride) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw Error("shape-mismatch", "maxpool2d expects [n,c,h,w], got " + Tensor::shape_str(xs));
  if (k < 1 || stride < 1) throw Error("pool-geometry", "pool size and stride must be >= 1");
  const int oh = (xs[2] - k) / stride + 1, ow = (xs[3] - k) / stride + 1;
  if (xs[2] < k || xs[3] < k || oh <= 0 || ow <= 0) {
    throw Error("pool-geometry", "window " + std::to_string(k) + " too large for " + Tensor::shape_str(xs));
  }
  Tensor out = Tensor::zeros({xs[0], xs[1], oh, ow});
  std::vector<int32_t> arg(out.size());
  auto o = out.mutable_data();
  auto px = x.data();
  int64_t q = 0;
  for (int n = 0; n < xs[0]; ++n)
    for (int c = 0; c < xs[1]; ++c) {
      const int64_t base = (static_cast<int64_t>(n) * xs[1] + c) * xs[2] * xs[3];
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++q) {
          int64_t bi = base + static_cast<int64_t>(oy * stride) * xs[3] + ox * stride;
          double best = px[bi];
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const int64_t i = base + static_cast<int64_t>(oy * stride + dy) * xs[3] + ox * stride + dx;
              if (px[i] > best) {
                best = px[i];
                bi = i;
              }
            }
          o[q] = best;
          arg[q] = static_cast<int32_t>(bi - base);
        }
    }
  Recorder rec(tape, {&x});
  if (rec.active()) {
    Tape::Node n;
    n.op = Op::kMaxPool;
    n.a = input_id(tape, x);
    n.idx = std::move(arg);
    n.i0 = k;
    n.i1 = stride;
    n.va = x;  // shape only; values unused
    attach(tape, out, std::move(n));
  }
  return out;
}

Tensor flatten(Tape* tape, const Tensor& x) {
  const auto& xs = x.shape();
  if (xs.empty()) throw Error("shape-mismatch", "flatten on empty shape");
  int64_t rest = 1;
  for (size_t i = 1; i < xs.size(); ++i) rest *= xs[i];
  Tensor out = x.reshaped({xs[0], static_cast<int>(rest)});
  // reshape shares the buffer; recording needs a distinct output tensor so the
  // node id does not alias the input's
  Recorder rec(tape, {&x});
  if (rec.active()) {
    Tensor copy = out;
    Tape::Node n;
    n.op = Op::kFlatten;
    n.a = input_id(tape, x);
    n.va = x;  // original shape for backward
    attach(tape, copy, std::move(n));
    return copy;
  }
  return out;
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, std::span<const int> labels) {
  const auto& zs = logits.shape();
  if (zs.size() != 2) throw Error("shape-mismatch", "softmax_cross_entropy expects [n,c], got " + Tensor::shape_str(zs));
  const int n = zs[0], c = zs[1];
  if (static_cast<int>(labels.size()) != n) {
    throw Error("shape-mismatch", "labels length " + std::to_string(labels.size()) +
                                      " vs batch " + std::to_string(n));
  }
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c) {
      throw Error("label-out-of-range", "label " + std::to_string(labels[i]) + " for " +
                                            std::to_string(c) + " classes");
    }
  }
  Tensor probs = Tensor::zeros(zs);
  auto pp = probs.mutable_data();
  auto pz = logits.data();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* z = pz.data() + static_cast<int64_t>(i) * c;
    double m = z[0];
    for (int j = 1; j < c; ++j) m = std::max(m, z[j]);
    double se = 0.0;
    for (int j = 0; j < c; ++j) se += std::exp(z[j] - m);
    const double lse = std::log(se);
    for (int j = 0; j < c; ++j) pp[static_cast<int64_t>(i) * c + j] = std::exp(z[j] - m - lse);
    total += lse - (z[labels[i]] - m);
  }
  Tensor out = Tensor::scalar(total / n);
  check_finite("softmax_cross_entropy", out);
  Recorder rec(tape, {&logits});
  if (rec.active()) {
    Tape::Node nd;
    nd.op = Op::kSoftmaxCE;
    nd.a = input_id(tape, logits);
    nd.aux = probs;
    nd.idx.assign(labels.begin(), labels.end());
    attach(tape, out, std::move(nd));
  }
  return out;
}

Tensor margin_loss(Tape* tape, const Tensor& logits, std::span<const int> labels, double kappa) {
  const auto& zs = logits.shape();
  if (zs.size() != 2) throw Error("shape-mismatch", "margin_loss expects [n,c], got " + Tensor::shape_str(zs));
  const int n = zs[0], c = zs[1];
  if (static_cast<int>(labels.size()) != n) {
    throw Error("shape-mismatch", "labels length " + std::to_string(labels.size()) +
                                      " vs batch " + std::to_string(n));
  }
  auto pz = logits.data();
  // idx layout: [label_i, runnerup_i, active_i] per sample
  std::vector<int32_t> meta(static_cast<size_t>(n) * 3);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) {
      throw Error("label-out-of-range", "label " + std::to_string(y) + " for " + std::to_string(c) + " classes");
    }
    const double* z = pz.data() + static_cast<int64_t>(i) * c;
    int other = y == 0 ? 1 : 0;
    for (int j = 0; j < c; ++j)
      if (j != y && z[j] > z[other]) other = j;
    const double m = z[y] - z[other];
    const bool active = m > -kappa;
    total += active ? m : -kappa;
    meta[i * 3] = y;
    meta[i * 3 + 1] = other;
    meta[i * 3 + 2] = active ? 1 : 0;
  }
  Tensor out = Tensor::scalar(total);
  Recorder rec(tape, {&logits});
  if (rec.active()) {
    Tape::Node nd;
    nd.op = Op::kMarginLoss;
    nd.a = input_id(tape, logits);
    nd.idx = std::move(meta);
    nd.c0 = kappa;
    nd.va = logits;  // shape only
    attach(tape, out, std::move(nd));
  }
  return out;
}

Tensor quantize(Tape* tape, const Tensor& x, std::span<const double> thresholds,
                std::span<const double> levels, double ste_clip) {
  if (levels.size() != thresholds.size() + 1) {
    throw Error("quantizer-spec", "need " + std::to_string(thresholds.size() + 1) + " levels for " +
                                      std::to_string(thresholds.size()) + " thresholds, got " +
                                      std::to_string(levels.size()));
  }
  for (size_t i = 0; i + 1 < thresholds.size(); ++i) {
    if (!(thresholds[i] < thresholds[i + 1])) {
      throw Error("quantizer-spec", "thresholds must be strictly increasing");
    }
  }
  for (double v : levels) {
    if (!std::isfinite(v)) throw Error("quantizer-spec", "levels must be finite");
  }
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto px = x.data();
  for (int64_t i = 0; i < x.size(); ++i) o[i] = levels[quantize_bin(px[i], thresholds)];
  Recorder rec(tape, {&x});
  if (rec.active()) {
    Tape::Node n;
    n.op = Op::kQuantize;
    n.a = input_id(tape, x);
    n.va = x;
    n.c0 = ste_clip;
    attach(tape, out, std::move(n));
  }
  return out;
}

Tensor sumsq_rows(Tape* tape, const Tensor& x) {
  const auto& xs = x.shape();
  if (xs.empty()) throw Error("shape-mismatch", "sumsq_rows on empty shape");
  const int n = xs[0];
  const int64_t row = x.size() / n;
  Tensor out = Tensor::zeros({n});
  auto o = out.mutable_data();
  auto px = x.data();
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    const double* p = px.data() + static_cast<int64_t>(i) * row;
    for (int64_t j = 0; j < row; ++j) acc += p[j] * p[j];
    o[i] = acc;
  }
  Recorder rec(tape, {&x});
  if (rec.active()) {
    Tape::Node nd;
    nd.op = Op::kSumSqRows;
    nd.a = input_id(tape, x);
    nd.va = x;
    attach(tape, out, std::move(nd));
  }
  return out;
}

Tensor sqrt_elem(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto px = x.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    if (px[i] < 0.0) throw Error("domain", "sqrt_elem of negative value");
    o[i] = std::sqrt(px[i]);
  }
  Recorder rec(tape, {&x});
  if (rec.active()) {
    Tape::Node n;
    n.op = Op::kSqrtElem;
    n.a = input_id(tape, x);
    n.aux = out;  // y = sqrt(x) reused in backward
    attach(tape, out, std::move(n));
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  Recorder rec(tape, {&x});
  if (rec.active()) {
    Tape::Node n;
    n.op = Op::kSum;
    n.a = input_id(tape, x);
    n.va = x;  // shape only
    attach(tape, out, std::move(n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace {

void accumulate(std::vector<std::optional<Tensor>>& grads, int id, const Tensor& g) {
  if (id < 0) return;
  if (!grads[id]) {
    grads[id] = g.clone();
    return;
  }
  auto acc = grads[id]->mutable_data();
  auto src = g.data();
  for (int64_t i = 0; i < g.size(); ++i) acc[i] += src[i];
}

}  // namespace

GradMap Tape::backward(const Tensor& loss) const {
  if (loss.size() != 1 || !loss.tracked() || loss.tape_id() != id_) {
    throw Error("loss-not-scalar", "backward needs a scalar tensor recorded on this tape");
  }
  const int count = static_cast<int>(nodes_.size());
  GradMap gm;
  gm.tape_id_ = id_;
  gm.grads_.resize(count);
  gm.shapes_.resize(count);
  for (int i = 0; i < count; ++i) gm.shapes_[i] = nodes_[i].out_shape;

  // nodes that feed the loss
  std::vector<char> needed(count, 0);
  needed[loss.node()] = 1;
  for (int i = loss.node(); i >= 0; --i) {
    if (!needed[i]) continue;
    const Node& n = nodes_[i];
    if (n.a >= 0) needed[n.a] = 1;
    if (n.b >= 0) needed[n.b] = 1;
  }

  gm.grads_[loss.node()] = Tensor::scalar(1.0);

  for (int i = loss.node(); i >= 0; --i) {
    if (!needed[i] || !gm.grads_[i]) continue;
    const Node& n = nodes_[i];
    const Tensor& g = *gm.grads_[i];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
        accumulate(gm.grads_, n.a, g);
        accumulate(gm.grads_, n.b, g);
        break;
      case Op::kSub: {
        accumulate(gm.grads_, n.a, g);
        if (n.b >= 0) accumulate(gm.grads_, n.b, scale(nullptr, g, -1.0));
        break;
      }
      case Op::kMul: {
        if (n.a >= 0) accumulate(gm.grads_, n.a, mul(nullptr, g, n.vb));
        if (n.b >= 0) accumulate(gm.grads_, n.b, mul(nullptr, g, n.va));
        break;
      }
      case Op::kScale:
        if (n.a >= 0) accumulate(gm.grads_, n.a, scale(nullptr, g, n.c0));
        break;
      case Op::kMatmul: {
        const int m = n.va.shape()[0], k = n.va.shape()[1], nn = n.vb.shape()[1];
        if (n.a >= 0) {
          // dA = dC * B^T
          Tensor da = Tensor::zeros({m, k});
          const double* pb = n.vb.data().data();
          std::vector<double> bt(static_cast<size_t>(nn) * k);
          for (int p = 0; p < k; ++p)
            for (int j = 0; j < nn; ++j) bt[static_cast<int64_t>(j) * k + p] = pb[static_cast<int64_t>(p) * nn + j];
          gemm_acc(m, k, nn, g.data().data(), bt.data(), da.mutable_data().data());
          accumulate(gm.grads_, n.a, da);
        }
        if (n.b >= 0) {
          // dB = A^T * dC
          Tensor db = Tensor::zeros({k, nn});
          const double* pa = n.va.data().data();
          const double* pg = g.data().data();
          double* pd = db.mutable_data().data();
          for (int r = 0; r < m; ++r) {
            const double* arow = pa + static_cast<int64_t>(r) * k;
            const double* grow = pg + static_cast<int64_t>(r) * nn;
            for (int p = 0; p < k; ++p) {
              const double av = arow[p];
              double* drow = pd + static_cast<int64_t>(p) * nn;
              for (int j = 0; j < nn; ++j) drow[j] += av * grow[j];
            }
          }
          accumulate(gm.grads_, n.b, db);
        }
        break;
      }
      case Op::kAddRowVec: {
        accumulate(gm.grads_, n.a, g);
        if (n.b >= 0) {
          const int rows = n.out_shape[0], cols = n.out_shape[1];
          Tensor dv = Tensor::zeros({cols});
          auto pd = dv.mutable_data();
          auto pg = g.data();
          for (int r = 0; r < rows; ++r)
            for (int j = 0; j < cols; ++j) pd[j] += pg[static_cast<int64_t>(r) * cols + j];
          accumulate(gm.grads_, n.b, dv);
        }
        break;
      }
      case Op::kAddChanVec: {
        accumulate(gm.grads_, n.a, g);
        if (n.b >= 0) {
          const int nb = n.out_shape[0], c = n.out_shape[1];
          const int64_t area = static_cast<int64_t>(n.out_shape[2]) * n.out_shape[3];
          Tensor dv = Tensor::zeros({c});
          auto pd = dv.mutable_data();
          auto pg = g.data();
          int64_t p = 0;
          for (int s = 0; s < nb; ++s)
            for (int ch = 0; ch < c; ++ch) {
              double acc = 0.0;
              for (int64_t j = 0; j < area; ++j, ++p) acc += pg[p];
              pd[ch] += acc;
            }
          accumulate(gm.grads_, n.b, dv);
        }
        break;
      }
      case Op::kConv2d: {
        const ConvGeom geo = conv_geometry(n.va, n.vb, n.i0, n.i1);
        const int ckk = geo.c * geo.kh * geo.kw;
        const int area = geo.oh * geo.ow;
        const double* pg = g.data().data();
        if (n.a >= 0) {
          // dIn = col2im(K^T * dOut)
          Tensor din = Tensor::zeros(n.va.shape());
          double* pd = din.mutable_data().data();
          const double* kv = n.vb.data().data();
          // K^T once: [ckk x o]
          std::vector<double> kt(static_cast<size_t>(ckk) * geo.o);
          for (int o = 0; o < geo.o; ++o)
            for (int p = 0; p < ckk; ++p) kt[static_cast<int64_t>(p) * geo.o + o] = kv[static_cast<int64_t>(o) * ckk + p];
          parallel_for(geo.n, [&](int64_t s0, int64_t s1) {
            std::vector<double> colg(static_cast<size_t>(ckk) * area);
            for (int64_t s = s0; s < s1; ++s) {
              std::fill(colg.begin(), colg.end(), 0.0);
              gemm_acc(ckk, area, geo.o, kt.data(), pg + s * geo.o * area, colg.data());
              col2im_acc(colg.data(), geo, pd + s * geo.c * geo.h * geo.w);
            }
          });
          accumulate(gm.grads_, n.a, din);
        }
        if (n.b >= 0) {
          // dK = sum_s dOut_s * col_s^T, per-worker partials reduced in order
          const double* in = n.va.data().data();
          const int workers = static_cast<int>(std::min<int64_t>(get_threads(), geo.n));
          std::vector<std::vector<double>> partial(workers,
                                                   std::vector<double>(static_cast<size_t>(geo.o) * ckk, 0.0));
          const int64_t chunk = (geo.n + workers - 1) / workers;
          parallel_for(geo.n, [&](int64_t s0, int64_t s1) {
            const int w = static_cast<int>(s0 / chunk);
            std::vector<double> col(static_cast<size_t>(ckk) * area);
            std::vector<double> colt(static_cast<size_t>(area) * ckk);
            for (int64_t s = s0; s < s1; ++s) {
              im2col(in + s * geo.c * geo.h * geo.w, geo, col.data());
              for (int p = 0; p < ckk; ++p)
                for (int q = 0; q < area; ++q) colt[static_cast<int64_t>(q) * ckk + p] = col[static_cast<int64_t>(p) * area + q];
              gemm_acc(geo.o, ckk, area, pg + s * geo.o * area, colt.data(), partial[w].data());
            }
          });
          Tensor dk = Tensor::zeros(n.vb.shape());
          auto pd = dk.mutable_data();
          for (int w = 0; w < workers; ++w)
            for (size_t j = 0; j < partial[w].size(); ++j) pd[j] += partial[w][j];
          accumulate(gm.grads_, n.b, dk);
        }
        break;
      }
      case Op::kRelu: {
        Tensor dx = Tensor::zeros(n.va.shape());
        auto pd = dx.mutable_data();
        auto pg = g.data();
        auto px = n.va.data();
        for (int64_t j = 0; j < dx.size(); ++j) pd[j] = px[j] > 0.0 ? pg[j] : 0.0;
        accumulate(gm.grads_, n.a, dx);
        break;
      }
      case Op::kMaxPool: {
        Tensor dx = Tensor::zeros(n.va.shape());
        auto pd = dx.mutable_data();
        auto pg = g.data();
        const auto& xs = n.va.shape();
        const int64_t plane = static_cast<int64_t>(xs[2]) * xs[3];
        const int64_t oplane = static_cast<int64_t>(n.out_shape[2]) * n.out_shape[3];
        for (int64_t q = 0; q < g.size(); ++q) {
          const int64_t nc = q / oplane;
          pd[nc * plane + n.idx[q]] += pg[q];
        }
        accumulate(gm.grads_, n.a, dx);
        break;
      }
      case Op::kFlatten: {
        accumulate(gm.grads_, n.a, g.reshaped(n.va.shape()));
        break;
      }
      case Op::kSoftmaxCE: {
        const int nb = n.aux.shape()[0], c = n.aux.shape()[1];
        const double gs = g.item() / nb;
        Tensor dz = Tensor::zeros(n.aux.shape());
        auto pd = dz.mutable_data();
        auto pp = n.aux.data();
        for (int r = 0; r < nb; ++r) {
          for (int j = 0; j < c; ++j) pd[static_cast<int64_t>(r) * c + j] = pp[static_cast<int64_t>(r) * c + j] * gs;
          pd[static_cast<int64_t>(r) * c + n.idx[r]] -= gs;
        }
        accumulate(gm.grads_, n.a, dz);
        break;
      }
      case Op::kMarginLoss: {
        const double gs = g.item();
        Tensor dz = Tensor::zeros(n.va.shape());
        auto pd = dz.mutable_data();
        const int c = n.va.shape()[1];
        const int nb = n.va.shape()[0];
        for (int r = 0; r < nb; ++r) {
          if (!n.idx[r * 3 + 2]) continue;
          pd[static_cast<int64_t>(r) * c + n.idx[r * 3]] += gs;
          pd[static_cast<int64_t>(r) * c + n.idx[r * 3 + 1]] -= gs;
        }
        accumulate(gm.grads_, n.a, dz);
        break;
      }
      case Op::kQuantize: {
        if (n.c0 > 0.0) {
          // straight-through: pass gradient where |x| <= clip
          Tensor dx = Tensor::zeros(n.va.shape());
          auto pd = dx.mutable_data();
          auto pg = g.data();
          auto px = n.va.data();
          for (int64_t j = 0; j < dx.size(); ++j) pd[j] = std::abs(px[j]) <= n.c0 ? pg[j] : 0.0;
          accumulate(gm.grads_, n.a, dx);
        }
        // deployed semantics: true derivative, zero almost everywhere
        break;
      }
      case Op::kSumSqRows: {
        Tensor dx = Tensor::zeros(n.va.shape());
        auto pd = dx.mutable_data();
        auto pg = g.data();
        auto px = n.va.data();
        const int64_t row = n.va.size() / n.va.shape()[0];
        for (int r = 0; r < n.va.shape()[0]; ++r) {
          const double gv = 2.0 * pg[r];
          for (int64_t j = 0; j < row; ++j) {
            const int64_t p = static_cast<int64_t>(r) * row + j;
            pd[p] = gv * px[p];
          }
        }
        accumulate(gm.grads_, n.a, dx);
        break;
      }
      case Op::kSqrtElem: {
        Tensor dx = Tensor::zeros(n.aux.shape());
        auto pd = dx.mutable_data();
        auto pg = g.data();
        auto py = n.aux.data();
        for (int64_t j = 0; j < dx.size(); ++j) pd[j] = pg[j] * 0.5 / std::max(py[j], 1e-12);
        accumulate(gm.grads_, n.a, dx);
        break;
      }
      case Op::kSum: {
        accumulate(gm.grads_, n.a, Tensor::full(n.va.shape(), g.item()));
        break;
      }
    }
  }
  return gm;
}

Tensor GradMap::at(const Tensor& t) const {
  if (!t.tracked() || t.tape_id() != tape_id_) {
    throw Error("untracked-tensor", "gradient requested for a tensor not on this tape");
  }
  const int id = t.node();
  if (grads_[id]) return *grads_[id];
  return Tensor::zeros(shapes_[id]);
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

double finite_diff_check(const ScalarFn& fn, const Tensor& point, double h) {
  Tape tape;
  Tensor x = point.clone();
  tape.watch(x);
  Tensor loss = fn(&tape, x);
  GradMap grads = tape.backward(loss);
  Tensor analytic = grads.at(x);

  double worst = 0.0;
  Tensor probe = point.clone();
  auto pw = probe.mutable_data();
  auto pa = analytic.data();
  for (int64_t i = 0; i < probe.size(); ++i) {
    const double keep = pw[i];
    pw[i] = keep + h;
    const double fp = fn(nullptr, probe).item();
    pw[i] = keep - h;
    const double fm = fn(nullptr, probe).item();
    pw[i] = keep;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(pa[i] - numeric) / std::max(1.0, std::abs(pa[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace advq
