#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advq/defense.hpp"
#include "advq/tensor.hpp"

namespace advq {

enum class LayerKind : uint8_t {
  kConv = 0,
  kRelu = 1,
  kMaxPool = 2,
  kFlatten = 3,
  kDense = 4,
  kResidual = 5,
};

// One layer of a LayeredModel. Geometry fields are meaningful per kind:
//   conv:     in_ch, out_ch, kernel, stride, padding  (weight [o,c,k,k], bias [o])
//   maxpool:  kernel, stride
//   dense:    in_ch = fan-in, out_ch = fan-out        (weight [in,out], bias [out])
//   residual: two 3x3 same-channel convs with a skip; out = relu(x + c2(relu(c1(x))))
struct Layer {
  LayerKind kind;
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, padding = 0;
  Tensor weight, bias;    // conv / dense
  Tensor weight2, bias2;  // residual second conv

  int64_t param_count() const;
  std::string describe() const;
};

struct Prediction {
  int label = 0;
  double confidence = 0.0;
  std::vector<double> logits;
};

// Classifier with an explicit feature-extractor / defense / head split:
// T = pipeline up to feature_tap, D applied to the value entering layer
// defense_slot, f = the rest. Constraint: 0 < feature_tap <= defense_slot
// < layer count. Copies share parameter tensors.
struct LayeredModel {
  std::vector<Layer> layers;
  int feature_tap = 1;
  int defense_slot = 1;
  DefenseFn defense;
  std::string arch = "custom";

  int64_t param_count() const;
  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  void validate() const;

  // expected input [n, c, h, w] for MNIST-scale nets
  std::vector<int> input_shape() const { return {1, layers.front().in_ch, 28, 28}; }
};

// conv(1->6,k5,p2) relu pool2 conv(6->16,k5) relu pool2 flatten
// dense(400->120) relu dense(120->84) relu dense(84->10);
// feature tap and defense slot default to 1 (right after the first conv).
LayeredModel build_lenet(uint64_t seed);

// small residual-style net for the placement sweep: conv stem, two residual
// blocks, pool, dense head; desk-scale stand-in, geometry not normative
LayeredModel build_mini_resnet(uint64_t seed);

// full pipeline, defense applied at its slot
Tensor forward_full(const LayeredModel& m, Tape* tape, const Tensor& batch, bool training = false);

// activations at m.feature_tap (the defense is included only when its slot
// lies strictly before the tap; at slot == tap the tap reads pre-defense
// values so that forward_full == head(defense(features)))
Tensor features(const LayeredModel& m, Tape* tape, const Tensor& batch);
Tensor features_at(const LayeredModel& m, Tape* tape, const Tensor& batch, int tap,
                   bool training = false);

// pipeline suffix: consumes the value at position `from` (post-defense there
// if the slot equals `from`) and runs the remaining layers
Tensor head_from(const LayeredModel& m, Tape* tape, const Tensor& value, int from,
                 bool training = false);

std::vector<Prediction> predict(const LayeredModel& m, const Tensor& batch);
Prediction predict_one(const LayeredModel& m, const Tensor& image);

// softmax probabilities of a logit row (stable); used by predict
std::vector<double> softmax(std::span<const double> logits);

// new model with the defense at `position`; parameters shared by reference
LayeredModel insert_defense(const LayeredModel& m, int position, DefenseFn fn);

// layer indices right after each parameterized layer (valid defense slots for
// placement sweeps; excludes a slot after the output head)
std::vector<int> defense_positions(const LayeredModel& m);

}  // namespace advq
