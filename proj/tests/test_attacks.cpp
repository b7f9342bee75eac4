#include <doctest.h>

#include <cmath>

#include "advq/attacks.hpp"
#include "advq/rng.hpp"

using namespace advq;

namespace {

// small conv classifier over [n,1,8,8] images for attack mechanics
LayeredModel tiny_conv_net(uint64_t seed) {
  Rng rng(seed);
  auto rnd = [&](std::vector<int> shape, double s) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = rng.uniform(-s, s);
    return t;
  };
  LayeredModel m;
  m.arch = "toy8";
  Layer conv;
  conv.kind = LayerKind::kConv;
  conv.in_ch = 1;
  conv.out_ch = 2;
  conv.kernel = 3;
  conv.stride = 1;
  conv.padding = 1;
  conv.weight = rnd({2, 1, 3, 3}, 0.8);
  conv.bias = rnd({2}, 0.1);
  m.layers.push_back(conv);
  Layer r;
  r.kind = LayerKind::kRelu;
  m.layers.push_back(r);
  Layer p;
  p.kind = LayerKind::kMaxPool;
  p.kernel = 2;
  p.stride = 2;
  m.layers.push_back(p);
  Layer f;
  f.kind = LayerKind::kFlatten;
  m.layers.push_back(f);
  Layer d;
  d.kind = LayerKind::kDense;
  d.in_ch = 32;
  d.out_ch = 3;
  d.weight = rnd({32, 3}, 0.5);
  d.bias = rnd({3}, 0.1);
  m.layers.push_back(d);
  m.feature_tap = 1;
  m.defense_slot = 1;
  return m;
}

// model whose prediction is pinned to class 0 by a huge bias margin
LayeredModel bias_dominated_net() {
  LayeredModel m = tiny_conv_net(5);
  auto b = m.layers[4].bias.mutable_data();
  b[0] = 100.0;
  b[1] = 0.0;
  b[2] = 0.0;
  return m;
}

Tensor random_image(uint64_t seed, int h = 8, int w = 8) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({1, 1, h, w});
  for (auto& v : t.mutable_data()) v = rng.uniform();
  return t;
}

Dataset toy_dataset(const LayeredModel& m, int n, int wrong_every, uint64_t seed) {
  Dataset ds;
  ds.images = Tensor::zeros({n, 1, 8, 8});
  auto p = ds.images.mutable_data();
  Rng rng(seed);
  for (auto& v : p) v = rng.uniform();
  ds.labels.resize(n);
  ds.norm = Normalization::none();
  ds.normalized = true;
  const auto preds = predict(m, ds.images);
  for (int i = 0; i < n; ++i) {
    ds.labels[i] = preds[i].label;
    if (wrong_every > 0 && i % wrong_every == 0) ds.labels[i] = (preds[i].label + 1) % 3;
  }
  return ds;
}

}  // namespace

TEST_SUITE_BEGIN("attacks");

TEST_CASE("patch side from the floor-sqrt area formula") {
  CHECK(PatchSpec::side_from_area(224, 0.05) == 50);
  CHECK(PatchSpec::side_from_area(28, 0.05) == 6);
  CHECK(PatchSpec::side_from_area(28, 0.02) == 3);
  CHECK(PatchSpec::side_from_area(28, 0.1) == 8);
  CHECK(PatchSpec::side_from_area(10, 0.0) == 0);
  CHECK_THROWS_AS(PatchSpec::side_from_area(0, 0.05), Error);
}

TEST_CASE("fgsm with epsilon zero leaves the image and flags existing errors") {
  LayeredModel m = tiny_conv_net(1);
  Tensor img = random_image(11);
  const Prediction clean = predict(m, img).front();
  AttackOutcome keep = fgsm(m, img, clean.label, 0.0, Normalization::none());
  for (int64_t i = 0; i < img.size(); ++i) CHECK(keep.adversarial.data()[i] == img.data()[i]);
  CHECK_FALSE(keep.success);

  const int wrong = (clean.label + 1) % 3;
  AttackOutcome err = fgsm(m, img, wrong, 0.0, Normalization::none());
  CHECK(err.success);  // model already errs w.r.t. this label
}

TEST_CASE("fgsm analytic sign on a one-pixel logistic model") {
  // logits [x, 0]; cross-entropy toward label 1 increases with x, so the
  // ascent step moves the pixel by exactly +epsilon
  LayeredModel m;
  m.arch = "pixel";
  Layer f;
  f.kind = LayerKind::kFlatten;
  m.layers.push_back(f);
  Layer d;
  d.kind = LayerKind::kDense;
  d.in_ch = 1;
  d.out_ch = 2;
  d.weight = Tensor::from_data({1, 2}, {1.0, 0.0});
  d.bias = Tensor::zeros({2});
  m.layers.push_back(d);
  m.feature_tap = 1;
  m.defense_slot = 1;

  Tensor img = Tensor::from_data({1, 1, 1, 1}, {0.5});
  Normalization wide;  // [0,1] raw range covers the move
  AttackOutcome out = fgsm(m, img, 1, 0.25, wide);
  CHECK(out.adversarial.item() == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(out.delta_linf == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("pgd with one step and no random start equals fgsm") {
  LayeredModel m = tiny_conv_net(2);
  Tensor img = random_image(21);
  const int label = predict(m, img).front().label;
  AttackBudget b;
  b.epsilon = 0.1;
  b.steps = 1;
  b.step_size = 0.1;
  b.random_start = false;
  AttackOutcome via_pgd = pgd(m, img, label, b, Normalization::none());
  AttackOutcome via_fgsm = fgsm(m, img, label, 0.1, Normalization::none());
  for (int64_t i = 0; i < img.size(); ++i) {
    CHECK(via_pgd.adversarial.data()[i] == via_fgsm.adversarial.data()[i]);
  }
}

TEST_CASE("pgd with epsilon zero keeps clean accuracy") {
  LayeredModel m = tiny_conv_net(3);
  Dataset ds = toy_dataset(m, 24, 6, 31);
  AttackConfig cfg;
  cfg.kind = AttackKind::kPgd;
  cfg.budget.epsilon = 0.0;
  cfg.budget.steps = 5;
  EvalRow row = evaluate_attack(m, ds, cfg);
  AttackConfig id;
  id.kind = AttackKind::kIdentity;
  EvalRow clean = evaluate_attack(m, ds, id);
  CHECK(row.accuracy == clean.accuracy);
  CHECK(row.violations == 0);
}

TEST_CASE("tiny attack with alpha zero matches the clean error rate") {
  LayeredModel m = bias_dominated_net();  // predictions immovable
  Dataset ds = toy_dataset(m, 30, 5, 41);
  AttackConfig cfg;
  cfg.kind = AttackKind::kTiny;
  cfg.budget.epsilon = 0.2;
  cfg.budget.steps = 20;
  cfg.budget.alpha = 0.0;
  cfg.budget.tap = 1;
  cfg.budget.restarts = 2;
  EvalRow row = evaluate_attack(m, ds, cfg);
  AttackConfig id;
  id.kind = AttackKind::kIdentity;
  CHECK(row.accuracy == evaluate_attack(m, ds, id).accuracy);
}

TEST_CASE("tiny attack final objective matches an exhaustive grid search") {
  // two-pixel image through a fixed linear head; J(d) = ||d|| - a ||W d||
  LayeredModel m;
  m.arch = "twopixel";
  Layer f;
  f.kind = LayerKind::kFlatten;
  m.layers.push_back(f);
  Layer d;
  d.kind = LayerKind::kDense;
  d.in_ch = 2;
  d.out_ch = 2;
  d.weight = Tensor::from_data({2, 2}, {1.0, 0.2, -0.3, 0.8});
  d.bias = Tensor::from_data({2}, {100.0, 0.0});  // constraint never fires
  m.layers.push_back(d);
  m.feature_tap = 1;
  m.defense_slot = 1;
  // wide valid range so only the eps-ball binds
  Normalization wide;
  wide.mu = {0.0};
  wide.sigma = {0.01};

  const double eps = 0.5, alpha = 1.0;
  Tensor img = Tensor::from_data({1, 1, 1, 2}, {0.0, 0.0});
  AttackBudget b;
  b.epsilon = eps;
  b.steps = 400;
  b.alpha = alpha;
  b.tap = 2;
  AttackOutcome out = tiny_attack(m, img, 0, b, wide);

  auto objective = [&](double d0, double d1) {
    const double w00 = 1.0, w01 = 0.2, w10 = -0.3, w11 = 0.8;
    const double g0 = d0 * w00 + d1 * w10;
    const double g1 = d0 * w01 + d1 * w11;
    return std::sqrt(d0 * d0 + d1 * d1) - alpha * std::sqrt(g0 * g0 + g1 * g1);
  };
  const int cells = 50;
  const double cell = eps / cells;
  double grid_min = 1e30;
  for (int i = -cells; i <= cells; ++i)
    for (int j = -cells; j <= cells; ++j) grid_min = std::min(grid_min, objective(i * cell, j * cell));

  const double d0 = out.adversarial.data()[0] - img.data()[0];
  const double d1 = out.adversarial.data()[1] - img.data()[1];
  const double final_obj = objective(d0, d1);
  // within two grid cells of the optimum: J is Lipschitz with constant
  // 1 + alpha ||W||_2 <= 1 + alpha * 1.4
  const double slack = (1.0 + alpha * 1.4) * 2.0 * cell * std::sqrt(2.0);
  CHECK(final_obj <= grid_min + slack);
  CHECK(final_obj >= grid_min - 1e-12);  // grid covers the ball
}

TEST_CASE("margin attack: already-misclassified input succeeds immediately") {
  LayeredModel m = bias_dominated_net();
  Tensor img = random_image(51);
  AttackBudget b;
  b.epsilon = 0.1;
  b.steps = 3;
  b.random_start = false;
  AttackOutcome out = margin_pgd(m, img, 1, b, Normalization::none());  // model says 0
  CHECK(out.success);
  // loss clamps at zero so gradients vanish and the image never moves
  for (int64_t i = 0; i < img.size(); ++i) CHECK(out.adversarial.data()[i] == img.data()[i]);

  AttackBudget z;
  z.epsilon = 0.0;
  z.steps = 2;
  AttackOutcome keep = margin_pgd(m, img, 0, z, Normalization::none());
  CHECK_FALSE(keep.success);
  for (int64_t i = 0; i < img.size(); ++i) CHECK(keep.adversarial.data()[i] == img.data()[i]);
}

TEST_CASE("confidence attack basics") {
  LayeredModel m = tiny_conv_net(7);
  Tensor guide = random_image(61);
  AttackBudget b;
  b.steps = 30;
  b.tap = 1;

  // source == guide: zero objective at delta = 0, success immediate (the
  // bias-pinned model classifies everything with full confidence)
  LayeredModel confident = bias_dominated_net();
  AttackOutcome same = confidence_attack(confident, guide, guide, b, Normalization::none());
  CHECK(same.success);
  CHECK(same.feature_gap == doctest::Approx(0.0).epsilon(1e-12));

  // best-so-far objective never increases
  Tensor source = gen_texture({1, 1, 8, 8}, 3, TextureKind::kStripes);
  AttackOutcome tex = confidence_attack(m, source, guide, b, Normalization::none());
  REQUIRE(tex.best_gap_trace.size() == static_cast<size_t>(b.steps) + 1);
  for (size_t i = 1; i < tex.best_gap_trace.size(); ++i) {
    CHECK(tex.best_gap_trace[i] <= tex.best_gap_trace[i - 1]);
  }

  Tensor wrong_shape = random_image(1, 4, 4);
  CHECK_THROWS_WITH_AS(confidence_attack(m, wrong_shape, guide, b, Normalization::none()),
                       doctest::Contains("shape"), Error);
}

TEST_CASE("patch attack geometry and locality") {
  LayeredModel m = tiny_conv_net(9);
  Tensor img = random_image(71);
  const Prediction clean = predict(m, img).front();

  // q = 0: image unchanged, success iff the model already errs
  PatchSpec zero;
  zero.area_fraction = 0.0;
  AttackOutcome unchanged = patch_attack(m, img, clean.label, zero, 5, Normalization::none(), 3);
  for (int64_t i = 0; i < img.size(); ++i) CHECK(unchanged.adversarial.data()[i] == img.data()[i]);
  CHECK_FALSE(unchanged.success);

  // fixed position: everything outside the window is bit identical
  PatchSpec fixed;
  fixed.q = 3;
  fixed.x = 2;
  fixed.y = 1;
  AttackOutcome out = patch_attack(m, img, clean.label, fixed, 25, Normalization::none(), 3);
  auto p0 = img.data();
  auto pa = out.adversarial.data();
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const bool inside = y >= 1 && y < 4 && x >= 2 && x < 5;
      if (!inside) CHECK(pa[y * 8 + x] == p0[y * 8 + x]);
    }

  PatchSpec oversized;
  oversized.q = 9;
  CHECK_THROWS_WITH_AS(patch_attack(m, img, 0, oversized, 5, Normalization::none(), 3),
                       doctest::Contains("exceeds"), Error);
  PatchSpec outside;
  outside.q = 3;
  outside.x = 7;
  outside.y = 7;
  CHECK_THROWS_AS(patch_attack(m, img, 0, outside, 5, Normalization::none(), 3), Error);
}

TEST_CASE("feasibility invariants hold on every emitted adversarial image") {
  LayeredModel m = tiny_conv_net(13);
  Dataset ds = toy_dataset(m, 20, 4, 91);
  for (auto kind : {AttackKind::kFgsm, AttackKind::kPgd, AttackKind::kTiny, AttackKind::kMargin,
                    AttackKind::kPatch}) {
    AttackConfig cfg;
    cfg.kind = kind;
    cfg.budget.epsilon = 0.15;
    cfg.budget.steps = 12;
    cfg.budget.tap = 1;
    cfg.budget.restarts = kind == AttackKind::kTiny ? 2 : 1;
    cfg.patch.area_fraction = 0.1;
    EvalRow row = evaluate_attack(m, ds, cfg);
    CHECK(row.violations == 0);
    CHECK(row.count == 20);
    if (kind != AttackKind::kPatch) CHECK(row.mean_linf <= cfg.budget.epsilon + 1e-6);
  }
}

TEST_CASE("reported feature gap recomputes from the emitted image") {
  LayeredModel m = tiny_conv_net(17);
  Tensor img = random_image(81);
  AttackBudget b;
  b.epsilon = 0.2;
  b.steps = 10;
  b.tap = 1;
  AttackOutcome out = pgd(m, img, predict(m, img).front().label, b, Normalization::none());
  Tensor f0 = features_at(m, nullptr, img, 1);
  Tensor f1 = features_at(m, nullptr, out.adversarial, 1);
  double gap = 0;
  for (int64_t i = 0; i < f0.size(); ++i) {
    const double d = f0.data()[i] - f1.data()[i];
    gap += d * d;
  }
  gap = std::sqrt(gap);
  CHECK(out.feature_gap == doctest::Approx(gap).epsilon(1e-6));
}

TEST_CASE("evaluate_attack: identity row, empty dataset, determinism") {
  LayeredModel m = tiny_conv_net(19);
  Dataset ds = toy_dataset(m, 16, 4, 101);

  AttackConfig id;
  id.kind = AttackKind::kIdentity;
  EvalRow clean = evaluate_attack(m, ds, id);
  CHECK(clean.accuracy == 0.75);
  CHECK(clean.mean_linf == 0.0);

  Dataset empty;
  empty.normalized = true;
  empty.norm = Normalization::none();
  EvalRow er = evaluate_attack(m, empty, id);
  CHECK(er.count == 0);
  CHECK(er.accuracy == 0.0);

  AttackConfig cfg;
  cfg.kind = AttackKind::kPgd;
  cfg.budget.epsilon = 0.1;
  cfg.budget.steps = 8;
  cfg.budget.seed = 5;
  EvalRow a = evaluate_attack(m, ds, cfg);
  EvalRow b = evaluate_attack(m, ds, cfg);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.mean_linf == b.mean_linf);
  CHECK(a.mean_featgap == b.mean_featgap);
}

TEST_CASE("budget validation") {
  AttackBudget b;
  b.epsilon = -0.1;
  CHECK_THROWS_AS(b.validate(), Error);
  b.epsilon = 0.1;
  b.steps = 0;
  CHECK_THROWS_AS(b.validate(), Error);
  b.steps = 10;
  b.p = 1;
  LayeredModel m = tiny_conv_net(23);
  CHECK_THROWS_WITH_AS(tiny_attack(m, random_image(3), 0, b, Normalization::none()),
                       doctest::Contains("norm"), Error);
}

TEST_SUITE_END();
