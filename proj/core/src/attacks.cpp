#include "advq/attacks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "advq/rng.hpp"

namespace advq {

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor as_batch(const Tensor& image) {
  if (image.shape().size() == 4) return image;
  if (image.shape().size() == 3) {
    auto s = image.shape();
    return image.reshaped({1, s[0], s[1], s[2]});
  }
  throw Error("shape-mismatch", "attack image must be [c,h,w] or [n,c,h,w], got " +
                                    Tensor::shape_str(image.shape()));
}

// project onto the l-inf ball around x0 intersected with the valid range
void project_box(Tensor& x, const Tensor& x0, double eps, const Normalization& norm) {
  const auto& s = x.shape();
  auto p = x.mutable_data();
  auto p0 = x0.data();
  const int64_t area = static_cast<int64_t>(s[2]) * s[3];
  int64_t q = 0;
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c) {
      const double lo = norm.lo(c), hi = norm.hi(c);
      for (int64_t j = 0; j < area; ++j, ++q) {
        p[q] = std::clamp(p[q], std::max(p0[q] - eps, lo), std::min(p0[q] + eps, hi));
      }
    }
}

void clamp_box(Tensor& x, const Normalization& norm) {
  const auto& s = x.shape();
  auto p = x.mutable_data();
  const int64_t area = static_cast<int64_t>(s[2]) * s[3];
  int64_t q = 0;
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c) {
      const double lo = norm.lo(c), hi = norm.hi(c);
      for (int64_t j = 0; j < area; ++j, ++q) p[q] = std::clamp(p[q], lo, hi);
    }
}

std::vector<double> row_l2(const Tensor& a, const Tensor& b) {
  const int n = a.shape()[0];
  const int64_t row = a.size() / n;
  std::vector<double> out(n, 0.0);
  auto pa = a.data();
  auto pb = b.data();
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < row; ++j) {
      const double d = pa[i * row + j] - pb[i * row + j];
      acc += d * d;
    }
    out[i] = std::sqrt(acc);
  }
  return out;
}

std::vector<double> row_linf(const Tensor& a, const Tensor& b) {
  const int n = a.shape()[0];
  const int64_t row = a.size() / n;
  std::vector<double> out(n, 0.0);
  auto pa = a.data();
  auto pb = b.data();
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < row; ++j) acc = std::max(acc, std::abs(pa[i * row + j] - pb[i * row + j]));
    out[i] = acc;
  }
  return out;
}

std::vector<double> feature_gaps(const LayeredModel& m, const Tensor& x0, const Tensor& xadv,
                                 int tap) {
  Tensor f0 = features_at(m, nullptr, x0, tap);
  Tensor f1 = features_at(m, nullptr, xadv, tap);
  return row_l2(f0, f1);
}

// uniform start in the eps-ball, one substream per sample
void random_start(Tensor& x, const Tensor& x0, double eps, const Normalization& norm,
                  std::span<const uint64_t> seeds) {
  const auto& s = x.shape();
  const int64_t row = x.size() / s[0];
  auto p = x.mutable_data();
  auto p0 = x0.data();
  for (int i = 0; i < s[0]; ++i) {
    Rng rng(seeds[i]);
    for (int64_t j = 0; j < row; ++j) p[i * row + j] = p0[i * row + j] + rng.uniform(-eps, eps);
  }
  project_box(x, x0, eps, norm);
}

// shared loop for fgsm / pgd / margin; per-sample semantics (objectives
// decompose per row and steps use elementwise gradient signs)
Tensor run_bounded(const LayeredModel& m, const Tensor& x0, std::span<const int> labels,
                   AttackKind kind, const AttackBudget& b, const Normalization& norm,
                   std::span<const uint64_t> seeds) {
  b.validate();
  if (b.p != 2) throw Error("unsupported-norm", "feature-gap norm p=" + std::to_string(b.p));
  const double eps = b.epsilon;
  const double step = b.effective_step();

  if (kind == AttackKind::kFgsm) {
    Tape tape;
    Tensor x = x0.clone();
    tape.watch(x);
    Tensor loss = softmax_cross_entropy(&tape, forward_full(m, &tape, x), labels);
    Tensor g = tape.backward(loss).at(x);
    Tensor adv = x0.clone();
    auto pa = adv.mutable_data();
    auto pg = g.data();
    for (int64_t i = 0; i < adv.size(); ++i) pa[i] += eps * sign0(pg[i]);
    clamp_box(adv, norm);
    // the eps-ball projection is a no-op here but keeps the invariant exact
    project_box(adv, x0, eps, norm);
    return adv;
  }

  const double direction = kind == AttackKind::kPgd ? 1.0 : -1.0;
  Tensor x = x0.clone();
  if (b.random_start && eps > 0.0) random_start(x, x0, eps, norm, seeds);

  for (int it = 0; it < b.steps; ++it) {
    Tape tape;
    tape.watch(x);
    Tensor logits = forward_full(m, &tape, x);
    Tensor loss = kind == AttackKind::kPgd ? softmax_cross_entropy(&tape, logits, labels)
                                           : margin_loss(&tape, logits, labels, 0.0);
    Tensor g = tape.backward(loss).at(x);
    Tensor next = x.clone();
    auto pn = next.mutable_data();
    auto pg = g.data();
    for (int64_t i = 0; i < next.size(); ++i) pn[i] += direction * step * sign0(pg[i]);
    project_box(next, x0, eps, norm);
    x = std::move(next);
  }
  return x;
}

// tiny attack: multi-start signed descent on J with incumbent tracking over
// the misclassification constraint
Tensor run_tiny(const LayeredModel& m, const Tensor& x0, std::span<const int> labels,
                const AttackBudget& b, const Normalization& norm,
                std::span<const uint64_t> seeds) {
  b.validate();
  if (b.p != 2) throw Error("unsupported-norm", "feature-gap norm p=" + std::to_string(b.p));
  const double eps = b.epsilon;
  const double step = b.effective_step();
  const int n = x0.shape()[0];
  const int64_t row = x0.size() / n;
  const int restarts = std::max(1, std::min(b.restarts, b.steps));
  const int steps_per_run = b.steps / restarts;

  Tensor f0 = features_at(m, nullptr, x0, b.tap);

  std::vector<double> best_obj(n, 0.0);
  std::vector<char> feasible(n, 0);
  Tensor best = x0.clone();
  Tensor last = x0.clone();

  auto objective_values = [&](const Tensor& x) {
    // J_i = ||x_i - x0_i||_2 - alpha * gap_i, computed off-tape
    std::vector<double> dn = row_l2(x, x0);
    std::vector<double> gap = row_l2(features_at(m, nullptr, x, b.tap), f0);
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = dn[i] - b.alpha * gap[i];
    return out;
  };

  for (int run = 0; run < restarts; ++run) {
    Tensor x = x0.clone();
    if (b.random_start && eps > 0.0) {
      std::vector<uint64_t> run_seeds(seeds.begin(), seeds.end());
      for (auto& s : run_seeds) s = derive_seed(s, "restart", static_cast<uint64_t>(run));
      random_start(x, x0, eps, norm, run_seeds);
    }
    for (int it = 0; it < steps_per_run; ++it) {
      Tape tape;
      tape.watch(x);
      Tensor delta = sub(&tape, x, x0);
      Tensor dn = sqrt_elem(&tape, sumsq_rows(&tape, delta));
      Tensor gap =
          sqrt_elem(&tape, sumsq_rows(&tape, sub(&tape, features_at(m, &tape, x, b.tap), f0)));
      Tensor loss = sum(&tape, sub(&tape, dn, scale(&tape, gap, b.alpha)));
      Tensor g = tape.backward(loss).at(x);
      Tensor next = x.clone();
      auto pn = next.mutable_data();
      auto pg = g.data();
      for (int64_t i = 0; i < next.size(); ++i) pn[i] -= step * sign0(pg[i]);
      project_box(next, x0, eps, norm);
      x = std::move(next);

      // incumbent update: best objective among iterates that already satisfy
      // the misclassification constraint
      const auto preds = predict(m, x);
      const auto objs = objective_values(x);
      auto pb = best.mutable_data();
      auto px = x.data();
      for (int i = 0; i < n; ++i) {
        if (preds[i].label == labels[i]) continue;
        if (feasible[i] && objs[i] >= best_obj[i]) continue;
        feasible[i] = 1;
        best_obj[i] = objs[i];
        std::copy(px.begin() + i * row, px.begin() + (i + 1) * row, pb.begin() + i * row);
      }
    }
    last = x;
  }

  // feasible incumbent where found, final iterate otherwise
  Tensor out = last.clone();
  auto po = out.mutable_data();
  auto pb = best.data();
  for (int i = 0; i < n; ++i) {
    if (feasible[i]) std::copy(pb.begin() + i * row, pb.begin() + (i + 1) * row, po.begin() + i * row);
  }
  return out;
}

AttackOutcome outcome_for(const LayeredModel& m, const Tensor& x0, const Tensor& adv, int label,
                          int tap) {
  AttackOutcome out;
  out.adversarial = adv;
  out.prediction = predict(m, adv).front();
  out.success = out.prediction.label != label;
  out.feature_gap = feature_gaps(m, x0, adv, tap)[0];
  out.delta_linf = row_linf(x0, adv)[0];
  out.delta_l2 = row_l2(x0, adv)[0];
  return out;
}

std::vector<uint64_t> one_seed(const AttackBudget& b) {
  return {derive_seed(b.seed, "attack-start", 0)};
}

}  // namespace

void AttackBudget::validate() const {
  if (epsilon < 0.0) throw Error("budget-invalid", "epsilon must be >= 0");
  if (steps < 1) throw Error("budget-invalid", "steps must be >= 1");
  if (alpha < 0.0) throw Error("budget-invalid", "alpha must be >= 0");
  if (tap < 1) throw Error("budget-invalid", "tap must be >= 1");
  if (restarts < 1) throw Error("budget-invalid", "restarts must be >= 1");
}

int PatchSpec::side_from_area(int image_side, double area_fraction) {
  if (image_side < 1 || area_fraction < 0.0) {
    throw Error("patch-invalid", "need image side >= 1 and area fraction >= 0");
  }
  return static_cast<int>(std::floor(std::sqrt(static_cast<double>(image_side) * image_side * area_fraction)));
}

AttackOutcome fgsm(const LayeredModel& m, const Tensor& image, int label, double epsilon,
                   const Normalization& norm) {
  AttackBudget b;
  b.epsilon = epsilon;
  b.steps = 1;
  b.random_start = false;
  Tensor x0 = as_batch(image);
  std::vector<int> labels{label};
  Tensor adv = run_bounded(m, x0, labels, AttackKind::kFgsm, b, norm, one_seed(b));
  return outcome_for(m, x0, adv, label, m.feature_tap);
}

AttackOutcome pgd(const LayeredModel& m, const Tensor& image, int label, const AttackBudget& budget,
                  const Normalization& norm) {
  Tensor x0 = as_batch(image);
  std::vector<int> labels{label};
  Tensor adv = run_bounded(m, x0, labels, AttackKind::kPgd, budget, norm, one_seed(budget));
  return outcome_for(m, x0, adv, label, budget.tap);
}

AttackOutcome tiny_attack(const LayeredModel& m, const Tensor& image, int label,
                          const AttackBudget& budget, const Normalization& norm) {
  Tensor x0 = as_batch(image);
  std::vector<int> labels{label};
  Tensor adv = run_tiny(m, x0, labels, budget, norm, one_seed(budget));
  return outcome_for(m, x0, adv, label, budget.tap);
}

AttackOutcome margin_pgd(const LayeredModel& m, const Tensor& image, int label,
                         const AttackBudget& budget, const Normalization& norm) {
  Tensor x0 = as_batch(image);
  std::vector<int> labels{label};
  Tensor adv = run_bounded(m, x0, labels, AttackKind::kMargin, budget, norm, one_seed(budget));
  return outcome_for(m, x0, adv, label, budget.tap);
}

namespace {

struct PatchMask {
  int x = 0, y = 0, side = 0;
};

PatchMask place_patch(const PatchSpec& spec, int h, int w, uint64_t seed) {
  PatchMask pm;
  pm.side = spec.side(std::min(h, w));
  if (pm.side > std::min(h, w)) {
    throw Error("patch-invalid", "patch side " + std::to_string(pm.side) + " exceeds image");
  }
  if (spec.x >= 0 && spec.y >= 0) {
    pm.x = spec.x;
    pm.y = spec.y;
    if (pm.x + pm.side > w || pm.y + pm.side > h) {
      throw Error("patch-invalid", "patch at (" + std::to_string(pm.x) + "," + std::to_string(pm.y) +
                                       ") side " + std::to_string(pm.side) + " exceeds image bounds");
    }
  } else {
    Rng rng(seed);
    pm.x = pm.side < w ? static_cast<int>(rng.uniform_int(w - pm.side + 1)) : 0;
    pm.y = pm.side < h ? static_cast<int>(rng.uniform_int(h - pm.side + 1)) : 0;
  }
  return pm;
}

// batched feature-gap ascent restricted to per-sample patch windows
Tensor run_patch(const LayeredModel& m, const Tensor& x0, const PatchSpec& spec, int steps,
                 const Normalization& norm, std::span<const uint64_t> seeds, int tap,
                 std::vector<PatchMask>* masks_out) {
  const auto& s = x0.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  std::vector<PatchMask> masks(n);
  for (int i = 0; i < n; ++i) masks[i] = place_patch(spec, h, w, seeds[i]);
  if (masks_out) *masks_out = masks;

  Tensor mask = Tensor::zeros(s);
  {
    auto pm = mask.mutable_data();
    for (int i = 0; i < n; ++i) {
      const PatchMask& p = masks[i];
      for (int ch = 0; ch < c; ++ch)
        for (int yy = p.y; yy < p.y + p.side; ++yy)
          for (int xx = p.x; xx < p.x + p.side; ++xx)
            pm[((static_cast<int64_t>(i) * c + ch) * h + yy) * w + xx] = 1.0;
    }
  }

  double span = 0.0;
  for (int ch = 0; ch < c; ++ch) span = std::max(span, norm.hi(ch) - norm.lo(ch));
  const double step = 2.5 * span / steps;

  Tensor f0 = features_at(m, nullptr, x0, tap);
  Tensor x = x0.clone();
  // patch content starts from uniform noise in the valid range; the clean
  // image is a stationary point of the feature-gap objective
  {
    auto px = x.mutable_data();
    for (int i = 0; i < n; ++i) {
      Rng rng(derive_seed(seeds[i], "patch-init"));
      const PatchMask& p = masks[i];
      for (int ch = 0; ch < c; ++ch)
        for (int yy = p.y; yy < p.y + p.side; ++yy)
          for (int xx = p.x; xx < p.x + p.side; ++xx) {
            const int64_t at = ((static_cast<int64_t>(i) * c + ch) * h + yy) * w + xx;
            px[at] = rng.uniform(norm.lo(ch), norm.hi(ch));
          }
    }
  }
  auto pmask = mask.data();
  for (int it = 0; it < steps; ++it) {
    Tape tape;
    tape.watch(x);
    Tensor gap = sqrt_elem(&tape, sumsq_rows(&tape, sub(&tape, features_at(m, &tape, x, tap), f0)));
    Tensor loss = sum(&tape, gap);
    Tensor g = tape.backward(loss).at(x);
    Tensor next = x.clone();
    auto pn = next.mutable_data();
    auto pg = g.data();
    for (int64_t i = 0; i < next.size(); ++i) pn[i] += step * sign0(pg[i]) * pmask[i];
    clamp_box(next, norm);
    // pixels outside the patch stay bit-identical to the original
    auto p0 = x0.data();
    for (int64_t i = 0; i < next.size(); ++i)
      if (pmask[i] == 0.0) pn[i] = p0[i];
    x = std::move(next);
  }
  return x;
}

}  // namespace

AttackOutcome patch_attack(const LayeredModel& m, const Tensor& image, int label,
                           const PatchSpec& spec, int steps, const Normalization& norm,
                           uint64_t seed, int tap) {
  if (steps < 1) throw Error("budget-invalid", "steps must be >= 1");
  Tensor x0 = as_batch(image);
  const int use_tap = tap > 0 ? tap : m.feature_tap;
  std::vector<uint64_t> seeds{derive_seed(seed, "patch-pos", 0)};
  Tensor adv = run_patch(m, x0, spec, steps, norm, seeds, use_tap, nullptr);
  return outcome_for(m, x0, adv, label, use_tap);
}

AttackOutcome confidence_attack(const LayeredModel& m, const Tensor& source, const Tensor& guide,
                                const AttackBudget& budget, const Normalization& norm) {
  Tensor xs = as_batch(source);
  Tensor xg = as_batch(guide);
  if (xs.shape() != xg.shape()) {
    throw Error("shape-mismatch", "source " + Tensor::shape_str(xs.shape()) + " vs guide " +
                                      Tensor::shape_str(xg.shape()));
  }
  budget.validate();
  const int tap = budget.tap;
  Tensor fg = features_at(m, nullptr, xg, tap);

  double span = 0.0;
  for (size_t ch = 0; ch < norm.mu.size(); ++ch) span = std::max(span, norm.hi(ch) - norm.lo(ch));
  const double step = budget.step_size > 0.0 ? budget.step_size : 3.0 * span / budget.steps;

  Tensor x = xs.clone();
  Tensor best = x.clone();
  double best_obj = row_l2(features_at(m, nullptr, x, tap), fg)[0];
  AttackOutcome out;
  out.best_gap_trace.reserve(budget.steps + 1);
  out.best_gap_trace.push_back(best_obj);

  for (int it = 0; it < budget.steps; ++it) {
    Tape tape;
    tape.watch(x);
    Tensor gap = sqrt_elem(&tape, sumsq_rows(&tape, sub(&tape, features_at(m, &tape, x, tap), fg)));
    Tensor loss = sum(&tape, gap);
    Tensor g = tape.backward(loss).at(x);
    auto pn = x.mutable_data();
    auto pg = g.data();
    for (int64_t i = 0; i < x.size(); ++i) pn[i] -= step * sign0(pg[i]);
    clamp_box(x, norm);
    const double obj = row_l2(features_at(m, nullptr, x, tap), fg)[0];
    if (obj < best_obj) {
      best_obj = obj;
      best = x.clone();
    }
    out.best_gap_trace.push_back(best_obj);
  }

  const Prediction guide_pred = predict(m, xg).front();
  out.adversarial = best;
  out.prediction = predict(m, best).front();
  out.success = out.prediction.label == guide_pred.label &&
                out.prediction.confidence > budget.confidence_threshold;
  out.feature_gap = best_obj;
  out.delta_linf = row_linf(xs, best)[0];
  out.delta_l2 = row_l2(xs, best)[0];
  return out;
}

AttackKind attack_kind_from(const std::string& name) {
  if (name == "identity") return AttackKind::kIdentity;
  if (name == "fgsm") return AttackKind::kFgsm;
  if (name == "pgd") return AttackKind::kPgd;
  if (name == "tiny") return AttackKind::kTiny;
  if (name == "margin" || name == "margin_pgd") return AttackKind::kMargin;
  if (name == "patch") return AttackKind::kPatch;
  throw Error("config-value", "unknown attack '" + name + "'");
}

std::string attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::kIdentity: return "identity";
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kTiny: return "tiny";
    case AttackKind::kMargin: return "margin_pgd";
    case AttackKind::kPatch: return "patch";
  }
  return "?";
}

EvalRow evaluate_attack(const LayeredModel& m, const Dataset& ds, const AttackConfig& cfg) {
  if (!ds.normalized) throw Error("dataset-not-normalized", "evaluate_attack needs a normalized dataset");
  const auto t0 = std::chrono::steady_clock::now();
  EvalRow row;
  row.method = cfg.row_label();
  row.steps = cfg.kind == AttackKind::kFgsm || cfg.kind == AttackKind::kIdentity ? 1 : cfg.budget.steps;
  row.epsilon = cfg.kind == AttackKind::kPatch ? cfg.patch.area_fraction : cfg.budget.epsilon;
  row.alpha = cfg.kind == AttackKind::kTiny ? cfg.budget.alpha : 0.0;
  row.seed = cfg.budget.seed;
  row.count = ds.count();
  if (ds.count() == 0) return row;  // explicit empty report

  const int chunk_size = 256;
  int correct = 0, violations = 0;
  double sum_linf = 0.0, sum_gap = 0.0;
  const int tap = cfg.budget.tap;

  for (int base = 0; base < ds.count(); base += chunk_size) {
    const int take = std::min(chunk_size, ds.count() - base);
    std::vector<int> idx(take);
    for (int i = 0; i < take; ++i) idx[i] = base + i;
    Tensor x0 = ds.gather(idx);
    std::vector<int> labels(take);
    for (int i = 0; i < take; ++i) labels[i] = ds.labels[base + i];

    std::vector<uint64_t> seeds(take);
    for (int i = 0; i < take; ++i) {
      seeds[i] = derive_seed(cfg.budget.seed,
                             cfg.kind == AttackKind::kPatch ? "patch-pos" : "attack-start",
                             static_cast<uint64_t>(base + i));
    }

    Tensor adv;
    std::vector<PatchMask> masks;
    switch (cfg.kind) {
      case AttackKind::kIdentity:
        adv = x0;
        break;
      case AttackKind::kPatch:
        adv = run_patch(m, x0, cfg.patch, cfg.budget.steps, ds.norm, seeds, tap, &masks);
        break;
      case AttackKind::kTiny:
        adv = run_tiny(m, x0, labels, cfg.budget, ds.norm, seeds);
        break;
      default:
        adv = run_bounded(m, x0, labels, cfg.kind, cfg.budget, ds.norm, seeds);
        break;
    }

    const auto preds = predict(m, adv);
    const auto linf = row_linf(x0, adv);
    const auto gaps = feature_gaps(m, x0, adv, tap);
    for (int i = 0; i < take; ++i) {
      if (preds[i].label == labels[i]) ++correct;
      sum_linf += linf[i];
      sum_gap += gaps[i];
    }

    // feasibility audit on every emitted image
    const bool bounded = cfg.kind == AttackKind::kFgsm || cfg.kind == AttackKind::kPgd ||
                         cfg.kind == AttackKind::kTiny || cfg.kind == AttackKind::kMargin;
    if (bounded) {
      for (int i = 0; i < take; ++i)
        if (linf[i] > cfg.budget.epsilon + 1e-6) ++violations;
    }
    Tensor raw = denormalize(adv, ds.norm);
    for (double v : raw.data())
      if (v < -1e-9 || v > 1.0 + 1e-9) {
        ++violations;
        break;
      }
    if (cfg.kind == AttackKind::kPatch) {
      const auto& s = x0.shape();
      auto p0 = x0.data();
      auto pa = adv.data();
      const int64_t plane = static_cast<int64_t>(s[2]) * s[3];
      for (int i = 0; i < take; ++i) {
        const PatchMask& pm = masks[i];
        bool ok = true;
        for (int c = 0; c < s[1] && ok; ++c)
          for (int yy = 0; yy < s[2] && ok; ++yy)
            for (int xx = 0; xx < s[3] && ok; ++xx) {
              const bool inside = yy >= pm.y && yy < pm.y + pm.side && xx >= pm.x && xx < pm.x + pm.side;
              if (inside) continue;
              const int64_t at = ((static_cast<int64_t>(i) * s[1] + c) * s[2] + yy) * s[3] + xx;
              (void)plane;
              if (p0[at] != pa[at]) ok = false;
            }
        if (!ok) ++violations;
      }
    }
  }

  row.accuracy = static_cast<double>(correct) / ds.count();
  row.mean_linf = sum_linf / ds.count();
  row.mean_featgap = sum_gap / ds.count();
  row.violations = violations;
  row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

ConfidenceEval evaluate_confidence(const LayeredModel& m, const Dataset& ds,
                                   const AttackBudget& budget, uint64_t seed) {
  if (!ds.normalized) throw Error("dataset-not-normalized", "evaluate_confidence needs a normalized dataset");
  ConfidenceEval ev;
  // one guide per class: the first correctly classified sample
  std::vector<int> guide_idx(10, -1);
  const auto preds = predict(m, ds.images);
  for (int i = 0; i < ds.count(); ++i) {
    const int y = ds.labels[i];
    if (y >= 0 && y < 10 && guide_idx[y] < 0 && preds[i].label == y) guide_idx[y] = i;
  }
  for (int cls = 0; cls < 10; ++cls) {
    if (guide_idx[cls] < 0) continue;
    std::vector<int> one{guide_idx[cls]};
    Tensor guide = ds.gather(one);
    Tensor source_raw = gen_noise(guide.shape(), derive_seed(seed, "confidence-source", cls));
    // bring the raw noise into normalized units
    Dataset tmp;
    tmp.images = source_raw;
    tmp.labels = {0};
    Tensor source = normalize(tmp, ds.norm).images;
    AttackOutcome out = confidence_attack(m, source, guide, budget, ds.norm);
    ev.guide_labels.push_back(cls);
    if (out.success) ++ev.successes;
    ev.outcomes.push_back(std::move(out));
  }
  return ev;
}

}  // namespace advq
