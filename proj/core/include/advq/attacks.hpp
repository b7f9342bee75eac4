#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advq/data.hpp"
#include "advq/model.hpp"

namespace advq {

// Budget for the bounded attacks. epsilon and step sizes are expressed in
// normalized-pixel units (the unit system the model consumes); delta norms in
// outcomes use the same units.
struct AttackBudget {
  double epsilon = 0.3;
  int steps = 100;         // total gradient steps, shared across restarts
  double step_size = 0.0;  // 0 selects the 2.5 * epsilon / steps schedule
  double alpha = 1.0;      // feature-gap weight of the tiny attack
  int p = 2;               // feature-gap norm; only p = 2 is supported
  int tap = 1;             // feature layer index the attack controls
  int restarts = 1;        // tiny attack: independent starts (objective is nonconvex)
  bool random_start = true;
  double confidence_threshold = 0.9;  // confidence attack success bar
  uint64_t seed = 1;

  void validate() const;
  double effective_step() const { return step_size > 0.0 ? step_size : 2.5 * epsilon / steps; }
};

// Square patch of freely chosen pixels. q = floor(sqrt(L^2 * c)) unless given
// explicitly; negative coordinates select random placement (per-sample seed).
struct PatchSpec {
  double area_fraction = 0.05;
  int q = -1;
  int x = -1, y = -1;

  static int side_from_area(int image_side, double area_fraction);
  int side(int image_side) const {
    return q >= 0 ? q : side_from_area(image_side, area_fraction);
  }
};

struct AttackOutcome {
  Tensor adversarial;          // [1,c,h,w], normalized units
  bool success = false;
  double feature_gap = 0.0;    // ||T(I) - T(I_adv)||_2 at the attack tap
  double delta_linf = 0.0;     // normalized units
  double delta_l2 = 0.0;
  Prediction prediction;
  std::vector<double> best_gap_trace;  // confidence attack: best objective per step
};

// single-sample attack surface; image is [1,c,h,w] or [c,h,w] in normalized units
AttackOutcome fgsm(const LayeredModel& m, const Tensor& image, int label, double epsilon,
                   const Normalization& norm);
AttackOutcome pgd(const LayeredModel& m, const Tensor& image, int label,
                  const AttackBudget& budget, const Normalization& norm);

// Signed-gradient descent on J = ||delta||_2 - alpha * ||T(I) - T(I+delta)||_2
// inside the eps-ball. The misclassification constraint is never folded into
// the steps; it is checked on visited iterates, and the returned image is the
// feasible iterate with the best objective (the constrained problem's
// incumbent), or the final iterate when none misclassified. budget.restarts
// splits the step budget into independent starts.
AttackOutcome tiny_attack(const LayeredModel& m, const Tensor& image, int label,
                          const AttackBudget& budget, const Normalization& norm);
AttackOutcome margin_pgd(const LayeredModel& m, const Tensor& image, int label,
                         const AttackBudget& budget, const Normalization& norm);
AttackOutcome patch_attack(const LayeredModel& m, const Tensor& image, int label,
                           const PatchSpec& spec, int steps, const Normalization& norm,
                           uint64_t seed, int tap = 0 /* 0: model tap */);
AttackOutcome confidence_attack(const LayeredModel& m, const Tensor& source, const Tensor& guide,
                                const AttackBudget& budget, const Normalization& norm);

enum class AttackKind { kIdentity, kFgsm, kPgd, kTiny, kMargin, kPatch };
AttackKind attack_kind_from(const std::string& name);
std::string attack_kind_name(AttackKind k);

struct AttackConfig {
  AttackKind kind = AttackKind::kFgsm;
  std::string label;  // row label; defaults to the kind name
  AttackBudget budget;
  PatchSpec patch;

  std::string row_label() const { return label.empty() ? attack_kind_name(kind) : label; }
};

// One evaluated condition: post-attack accuracy plus feasibility audit.
// Violations count breaches of the l-inf bound, the valid pixel range, or
// patch locality across every emitted adversarial image.
struct EvalRow {
  std::string method;
  int steps = 0;
  double epsilon = 0.0;
  double alpha = 0.0;
  double accuracy = 0.0;
  double mean_linf = 0.0;
  double mean_featgap = 0.0;
  uint64_t seed = 0;
  double wall_ms = 0.0;
  int count = 0;
  int violations = 0;
};

// Runs the attack per sample (batched internally; per-sample semantics) and
// reports post-attack accuracy. An empty dataset yields an explicit empty row.
EvalRow evaluate_attack(const LayeredModel& m, const Dataset& ds, const AttackConfig& cfg);

// Confidence-attack evaluation: one guide per class (first correctly
// classified test sample), uniform-noise sources.
struct ConfidenceEval {
  std::vector<AttackOutcome> outcomes;  // indexed by class
  std::vector<int> guide_labels;
  int successes = 0;
};
ConfidenceEval evaluate_confidence(const LayeredModel& m, const Dataset& ds,
                                   const AttackBudget& budget, uint64_t seed);

}  // namespace advq
