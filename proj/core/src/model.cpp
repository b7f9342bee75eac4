#include "advq/model.hpp"

#include <algorithm>
#include <cmath>

#include "advq/rng.hpp"

namespace advq {

namespace {

// fan-in-scaled uniform init, bound 1/sqrt(fan_in) for weights and biases
Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  auto p = t.mutable_data();
  for (int64_t i = 0; i < t.size(); ++i) p[i] = rng.uniform(-bound, bound);
  return t;
}

Layer make_conv(int in_ch, int out_ch, int kernel, int stride, int padding, Rng& rng) {
  Layer l;
  l.kind = LayerKind::kConv;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.weight = kaiming_uniform({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng);
  l.bias = kaiming_uniform({out_ch}, in_ch * kernel * kernel, rng);
  return l;
}

Layer make_dense(int fan_in, int fan_out, Rng& rng) {
  Layer l;
  l.kind = LayerKind::kDense;
  l.in_ch = fan_in;
  l.out_ch = fan_out;
  l.weight = kaiming_uniform({fan_in, fan_out}, fan_in, rng);
  l.bias = kaiming_uniform({fan_out}, fan_in, rng);
  return l;
}

Layer make_relu() {
  Layer l;
  l.kind = LayerKind::kRelu;
  return l;
}

Layer make_pool(int kernel, int stride) {
  Layer l;
  l.kind = LayerKind::kMaxPool;
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

Layer make_flatten() {
  Layer l;
  l.kind = LayerKind::kFlatten;
  return l;
}

Layer make_residual(int channels, Rng& rng) {
  Layer l;
  l.kind = LayerKind::kResidual;
  l.in_ch = channels;
  l.out_ch = channels;
  l.kernel = 3;
  l.stride = 1;
  l.padding = 1;
  l.weight = kaiming_uniform({channels, channels, 3, 3}, channels * 9, rng);
  l.bias = kaiming_uniform({channels}, channels * 9, rng);
  l.weight2 = kaiming_uniform({channels, channels, 3, 3}, channels * 9, rng);
  l.bias2 = kaiming_uniform({channels}, channels * 9, rng);
  return l;
}

Tensor layer_forward(const Layer& l, Tape* tape, const Tensor& x) {
  switch (l.kind) {
    case LayerKind::kConv:
      return add_chanvec(tape, conv2d(tape, x, l.weight, l.stride, l.padding), l.bias);
    case LayerKind::kRelu:
      return relu(tape, x);
    case LayerKind::kMaxPool:
      return maxpool2d(tape, x, l.kernel, l.stride);
    case LayerKind::kFlatten:
      return flatten(tape, x);
    case LayerKind::kDense:
      return add_rowvec(tape, matmul(tape, x, l.weight), l.bias);
    case LayerKind::kResidual: {
      Tensor h = relu(tape, add_chanvec(tape, conv2d(tape, x, l.weight, 1, l.padding), l.bias));
      Tensor h2 = add_chanvec(tape, conv2d(tape, h, l.weight2, 1, l.padding), l.bias2);
      return relu(tape, add(tape, x, h2));
    }
  }
  throw Error("model-invalid", "unknown layer kind");
}

}  // namespace

int64_t Layer::param_count() const {
  int64_t n = 0;
  for (const Tensor* t : {&weight, &bias, &weight2, &bias2})
    if (!t->empty()) n += t->size();
  return n;
}

std::string Layer::describe() const {
  switch (kind) {
    case LayerKind::kConv:
      return "conv(" + std::to_string(in_ch) + "->" + std::to_string(out_ch) + ",k" +
             std::to_string(kernel) + ",s" + std::to_string(stride) + ",p" + std::to_string(padding) + ")";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool(k" + std::to_string(kernel) + ",s" + std::to_string(stride) + ")";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense(" + std::to_string(in_ch) + "->" + std::to_string(out_ch) + ")";
    case LayerKind::kResidual: return "residual(" + std::to_string(in_ch) + "ch)";
  }
  return "?";
}

int64_t LayeredModel::param_count() const {
  int64_t n = 0;
  for (const Layer& l : layers) n += l.param_count();
  return n;
}

std::vector<Tensor*> LayeredModel::params() {
  std::vector<Tensor*> out;
  for (Layer& l : layers)
    for (Tensor* t : {&l.weight, &l.bias, &l.weight2, &l.bias2})
      if (!t->empty()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> LayeredModel::params() const {
  std::vector<const Tensor*> out;
  for (const Layer& l : layers)
    for (const Tensor* t : {&l.weight, &l.bias, &l.weight2, &l.bias2})
      if (!t->empty()) out.push_back(t);
  return out;
}

void LayeredModel::validate() const {
  const int count = static_cast<int>(layers.size());
  if (count == 0) throw Error("model-invalid", "model has no layers");
  if (!(0 < feature_tap && feature_tap <= defense_slot && defense_slot < count)) {
    throw Error("model-invalid", "need 0 < tap (" + std::to_string(feature_tap) + ") <= slot (" +
                                     std::to_string(defense_slot) + ") < layer count (" +
                                     std::to_string(count) + ")");
  }
  defense.validate();
}

LayeredModel build_lenet(uint64_t seed) {
  Rng rng(derive_seed(seed, "init"));
  LayeredModel m;
  m.arch = "lenet";
  m.layers.push_back(make_conv(1, 6, 5, 1, 2, rng));
  m.layers.push_back(make_relu());
  m.layers.push_back(make_pool(2, 2));
  m.layers.push_back(make_conv(6, 16, 5, 1, 0, rng));
  m.layers.push_back(make_relu());
  m.layers.push_back(make_pool(2, 2));
  m.layers.push_back(make_flatten());
  m.layers.push_back(make_dense(400, 120, rng));
  m.layers.push_back(make_relu());
  m.layers.push_back(make_dense(120, 84, rng));
  m.layers.push_back(make_relu());
  m.layers.push_back(make_dense(84, 10, rng));
  m.feature_tap = 1;
  m.defense_slot = 1;
  return m;
}

LayeredModel build_mini_resnet(uint64_t seed) {
  Rng rng(derive_seed(seed, "init"));
  LayeredModel m;
  m.arch = "mini_resnet";
  m.layers.push_back(make_conv(1, 8, 3, 1, 1, rng));  // 0: stem
  m.layers.push_back(make_relu());                    // 1
  m.layers.push_back(make_pool(2, 2));                // 2: 14x14
  m.layers.push_back(make_residual(8, rng));          // 3
  m.layers.push_back(make_residual(8, rng));          // 4
  m.layers.push_back(make_pool(2, 2));                // 5: 7x7
  m.layers.push_back(make_flatten());                 // 6: 392
  m.layers.push_back(make_dense(392, 10, rng));       // 7
  m.feature_tap = 1;
  m.defense_slot = 1;
  return m;
}

namespace {

// channel check applies only to layers with channel semantics; flatten- or
// dense-first toy pipelines accept any [n,c,h,w]
void check_input_shape(const LayeredModel& m, const Tensor& batch) {
  const auto& bs = batch.shape();
  if (bs.size() != 4) {
    throw Error("shape-mismatch", "model expects [n,c,h,w], got " + Tensor::shape_str(bs));
  }
  const Layer& front = m.layers.front();
  if ((front.kind == LayerKind::kConv || front.kind == LayerKind::kResidual) &&
      bs[1] != front.in_ch) {
    throw Error("shape-mismatch", "model expects [n," + std::to_string(front.in_ch) +
                                      ",h,w], got " + Tensor::shape_str(bs));
  }
}

// shared pipeline runner: applies layers [from, to) to `value`, inserting the
// defense where its slot falls inside the range
Tensor run_pipeline(const LayeredModel& m, Tape* tape, Tensor value, int from, int to,
                    bool training, bool defense_at_from) {
  if (defense_at_from && m.defense_slot == from) {
    value = apply_defense(tape, value, m.defense, training);
  }
  for (int i = from; i < to; ++i) {
    value = layer_forward(m.layers[i], tape, value);
    if (m.defense_slot == i + 1 && i + 1 < to) {
      value = apply_defense(tape, value, m.defense, training);
    }
  }
  return value;
}

}  // namespace

Tensor forward_full(const LayeredModel& m, Tape* tape, const Tensor& batch, bool training) {
  m.validate();
  check_input_shape(m, batch);
  return run_pipeline(m, tape, batch, 0, static_cast<int>(m.layers.size()), training, false);
}

Tensor features_at(const LayeredModel& m, Tape* tape, const Tensor& batch, int tap, bool training) {
  m.validate();
  if (tap <= 0 || tap >= static_cast<int>(m.layers.size()) + 1) {
    throw Error("model-invalid", "feature tap " + std::to_string(tap) + " out of range");
  }
  check_input_shape(m, batch);
  // the defense applies strictly inside [0, tap); a defense at slot == tap
  // belongs to the head so that features() returns pre-defense values
  Tensor value = batch;
  for (int i = 0; i < tap; ++i) {
    if (m.defense_slot == i && i > 0) value = apply_defense(tape, value, m.defense, training);
    value = layer_forward(m.layers[i], tape, value);
  }
  return value;
}

Tensor features(const LayeredModel& m, Tape* tape, const Tensor& batch) {
  return features_at(m, tape, batch, m.feature_tap, false);
}

Tensor head_from(const LayeredModel& m, Tape* tape, const Tensor& value, int from, bool training) {
  m.validate();
  return run_pipeline(m, tape, value, from, static_cast<int>(m.layers.size()), training, true);
}

std::vector<double> softmax(std::span<const double> logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double se = 0.0;
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    se += out[i];
  }
  for (double& v : out) v /= se;
  return out;
}

std::vector<Prediction> predict(const LayeredModel& m, const Tensor& batch) {
  Tensor logits = forward_full(m, nullptr, batch, false);
  const int n = logits.shape()[0], c = logits.shape()[1];
  std::vector<Prediction> out(n);
  auto pz = logits.data();
  for (int i = 0; i < n; ++i) {
    Prediction& p = out[i];
    p.logits.assign(pz.begin() + static_cast<int64_t>(i) * c, pz.begin() + static_cast<int64_t>(i + 1) * c);
    // ties break toward the lowest class index
    p.label = 0;
    for (int j = 1; j < c; ++j)
      if (p.logits[j] > p.logits[p.label]) p.label = j;
    p.confidence = softmax(p.logits)[p.label];
  }
  return out;
}

Prediction predict_one(const LayeredModel& m, const Tensor& image) {
  Tensor batch = image;
  if (image.shape().size() == 3) {
    auto s = image.shape();
    batch = image.reshaped({1, s[0], s[1], s[2]});
  }
  return predict(m, batch).front();
}

LayeredModel insert_defense(const LayeredModel& m, int position, DefenseFn fn) {
  if (position <= 0 || position >= static_cast<int>(m.layers.size())) {
    throw Error("model-invalid", "defense position " + std::to_string(position) +
                                     " outside (0, " + std::to_string(m.layers.size()) + ")");
  }
  fn.validate();
  LayeredModel out = m;  // layers share parameter tensors
  out.defense_slot = position;
  out.feature_tap = position;  // tap defaults to the slot; attacks may tap elsewhere
  out.defense = std::move(fn);
  return out;
}

std::vector<int> defense_positions(const LayeredModel& m) {
  std::vector<int> out;
  for (size_t i = 0; i < m.layers.size(); ++i) {
    const LayerKind k = m.layers[i].kind;
    if (k == LayerKind::kConv || k == LayerKind::kDense || k == LayerKind::kResidual) {
      if (i + 1 < m.layers.size()) out.push_back(static_cast<int>(i) + 1);
    }
  }
  return out;
}

}  // namespace advq
