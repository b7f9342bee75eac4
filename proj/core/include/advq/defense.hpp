#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advq/tensor.hpp"

namespace advq {

// Feature-space defense applied at a model's defense slot. Outputs are always
// drawn from a finite level set; the straight-through clip bound only affects
// training-time gradients.
struct DefenseFn {
  enum class Variant : uint8_t { kIdentity = 0, kSign = 1, kStep = 2 };

  Variant variant = Variant::kIdentity;
  std::vector<double> thresholds;  // strictly increasing, size = levels - 1
  std::vector<double> levels;      // finite
  double ste_clip = 1.0;

  static DefenseFn identity() { return {}; }
  static DefenseFn sign() {
    DefenseFn d;
    d.variant = Variant::kSign;
    d.thresholds = {0.0};
    d.levels = {-1.0, 1.0};
    return d;
  }
  static DefenseFn step(std::vector<double> thresholds, std::vector<double> levels);

  // uniform quantizer over [-a, a] with the given level count
  static DefenseFn uniform_step(double a, int num_levels);

  bool is_identity() const { return variant == Variant::kIdentity; }
  void validate() const;
  std::string variant_name() const;
};

// elementwise sign per the defense convention: zero maps to +1
Tensor apply_sign(const Tensor& features);

// elementwise bin lookup; boundary values go to the upper bin
Tensor apply_step(const Tensor& features, const DefenseFn& spec);

// training-time surrogate: upstream gradient passed where |pre_activation| <= clip
Tensor straight_through_backward(const Tensor& upstream_grad, const Tensor& pre_activation,
                                 double clip);

// defense forward on a tape. training=true records the straight-through
// surrogate; training=false records deployed semantics (zero gradient).
Tensor apply_defense(Tape* tape, const Tensor& features, const DefenseFn& d, bool training);

// largest singular value by power iteration (relative error < 1e-6)
double spectral_norm(const Tensor& w, int max_iters = 1000);

// Empirical probe of the bound ||f(D(F+d)) - f(D(F))||_2 <= K ||d||_2 for a
// linear head f(x) = W x. Samples (F, d) pairs with ||d||_2 = delta_scale and
// reports the worst observed ratios. With k_reference > 0 the bound flag is
// evaluated against that constant; otherwise against c_empirical * ||W||_2.
// Violations are reported, never asserted: a bounded-but-discontinuous D (sign)
// has no finite Lipschitz constant, and the straddle sampler exhibits that.
struct LipschitzProbe {
  double spectral = 0.0;     // ||W||_2
  double c_empirical = 0.0;  // max ||D(F+d)-D(F)||_2 / ||d||_2
  double max_ratio = 0.0;    // max ||W(D(F+d)-D(F))||_2 / ||d||_2
  double bound_k = 0.0;      // constant the bound was checked against
  bool bound_held = true;
  int trials = 0;
  double delta_scale = 0.0;
};

enum class ProbeSampler {
  kRandom,    // F ~ N(0,1), d a random direction of norm delta_scale
  kStraddle,  // coordinates placed at +delta/2 with d = -delta: sign flips under vanishing d
};

LipschitzProbe lipschitz_probe(const DefenseFn& d, const Tensor& head_w, int trials,
                               double delta_scale, uint64_t seed,
                               ProbeSampler sampler = ProbeSampler::kRandom,
                               double k_reference = 0.0);

}  // namespace advq
