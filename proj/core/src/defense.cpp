#include "advq/defense.hpp"

#include <cmath>

#include "advq/rng.hpp"

namespace advq {

DefenseFn DefenseFn::step(std::vector<double> thresholds, std::vector<double> levels) {
  DefenseFn d;
  d.variant = Variant::kStep;
  d.thresholds = std::move(thresholds);
  d.levels = std::move(levels);
  d.validate();
  return d;
}

DefenseFn DefenseFn::uniform_step(double a, int num_levels) {
  if (!(a > 0.0) || num_levels < 2) {
    throw Error("quantizer-spec", "uniform_step needs a > 0 and at least 2 levels");
  }
  DefenseFn d;
  d.variant = Variant::kStep;
  const double bin = 2.0 * a / num_levels;
  for (int i = 1; i < num_levels; ++i) d.thresholds.push_back(-a + i * bin);
  for (int i = 0; i < num_levels; ++i) d.levels.push_back(-a + (i + 0.5) * bin);
  return d;
}

void DefenseFn::validate() const {
  if (variant == Variant::kIdentity) return;
  if (levels.size() != thresholds.size() + 1) {
    throw Error("quantizer-spec", "need " + std::to_string(thresholds.size() + 1) +
                                      " levels, got " + std::to_string(levels.size()));
  }
  for (size_t i = 0; i + 1 < thresholds.size(); ++i) {
    if (!(thresholds[i] < thresholds[i + 1])) {
      throw Error("quantizer-spec", "thresholds must be strictly increasing");
    }
  }
  for (double v : levels) {
    if (!std::isfinite(v)) throw Error("quantizer-spec", "levels must be finite");
  }
}

std::string DefenseFn::variant_name() const {
  switch (variant) {
    case Variant::kIdentity: return "identity";
    case Variant::kSign: return "sign";
    case Variant::kStep: return "step";
  }
  return "?";
}

Tensor apply_sign(const Tensor& features) {
  Tensor out = Tensor::zeros(features.shape());
  auto o = out.mutable_data();
  auto p = features.data();
  for (int64_t i = 0; i < features.size(); ++i) o[i] = p[i] >= 0.0 ? 1.0 : -1.0;
  return out;
}

Tensor apply_step(const Tensor& features, const DefenseFn& spec) {
  if (spec.variant != DefenseFn::Variant::kStep && spec.variant != DefenseFn::Variant::kSign) {
    throw Error("quantizer-spec", "apply_step needs a sign or step defense, got " + spec.variant_name());
  }
  spec.validate();
  return quantize(nullptr, features, spec.thresholds, spec.levels, 0.0);
}

Tensor straight_through_backward(const Tensor& upstream_grad, const Tensor& pre_activation,
                                 double clip) {
  if (!(clip > 0.0)) throw Error("quantizer-spec", "straight-through clip bound must be positive");
  if (upstream_grad.shape() != pre_activation.shape()) {
    throw Error("shape-mismatch", "straight_through_backward: " +
                                      Tensor::shape_str(upstream_grad.shape()) + " vs " +
                                      Tensor::shape_str(pre_activation.shape()));
  }
  Tensor out = Tensor::zeros(upstream_grad.shape());
  auto o = out.mutable_data();
  auto g = upstream_grad.data();
  auto x = pre_activation.data();
  for (int64_t i = 0; i < out.size(); ++i) o[i] = std::abs(x[i]) <= clip ? g[i] : 0.0;
  return out;
}

Tensor apply_defense(Tape* tape, const Tensor& features, const DefenseFn& d, bool training) {
  if (d.is_identity()) return features;
  d.validate();
  return quantize(tape, features, d.thresholds, d.levels, training ? d.ste_clip : 0.0);
}

namespace {

double power_iteration(const Tensor& w, int max_iters, std::vector<double>* right_vector) {
  const auto& ws = w.shape();
  if (ws.size() != 2) throw Error("shape-mismatch", "spectral_norm expects a matrix, got " + Tensor::shape_str(ws));
  const int m = ws[0], n = ws[1];
  auto pw = w.data();
  Rng rng(0x5eedu);
  std::vector<double> v(n), wv(m);
  for (double& x : v) x = rng.normal();
  double sigma = 0.0, prev = -1.0;
  for (int it = 0; it < max_iters; ++it) {
    // wv = W v
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += pw[static_cast<int64_t>(i) * n + j] * v[j];
      wv[i] = acc;
    }
    // v = W^T wv
    for (int j = 0; j < n; ++j) v[j] = 0.0;
    for (int i = 0; i < m; ++i) {
      const double a = wv[i];
      for (int j = 0; j < n; ++j) v[j] += a * pw[static_cast<int64_t>(i) * n + j];
    }
    double nv = 0.0;
    for (double x : v) nv += x * x;
    nv = std::sqrt(nv);
    if (nv == 0.0) return 0.0;
    for (double& x : v) x /= nv;
    double nwv = 0.0;
    for (double x : wv) nwv += x * x;
    sigma = std::sqrt(nwv);
    if (prev >= 0.0 && std::abs(sigma - prev) <= 1e-13 * std::max(1.0, sigma)) break;
    prev = sigma;
  }
  if (right_vector) *right_vector = v;
  return sigma;
}

}  // namespace

double spectral_norm(const Tensor& w, int max_iters) {
  return power_iteration(w, max_iters, nullptr);
}

LipschitzProbe lipschitz_probe(const DefenseFn& d, const Tensor& head_w, int trials,
                               double delta_scale, uint64_t seed, ProbeSampler sampler,
                               double k_reference) {
  if (trials < 1) throw Error("probe-config", "lipschitz_probe needs at least one trial");
  if (!(delta_scale > 0.0)) throw Error("probe-config", "delta_scale must be positive");
  const auto& ws = head_w.shape();
  if (ws.size() != 2) throw Error("shape-mismatch", "head must be a matrix, got " + Tensor::shape_str(ws));
  const int n = ws[1];

  LipschitzProbe report;
  std::vector<double> top_direction;
  report.spectral = power_iteration(head_w, 1000, &top_direction);
  report.trials = trials;
  report.delta_scale = delta_scale;

  auto defended = [&](const Tensor& f) {
    if (d.is_identity()) return f;
    return apply_step(f, d);
  };

  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    Tensor f = Tensor::zeros({1, n});
    Tensor delta = Tensor::zeros({1, n});
    {
      auto pf = f.mutable_data();
      auto pd = delta.mutable_data();
      if (sampler == ProbeSampler::kRandom) {
        for (int j = 0; j < n; ++j) pf[j] = rng.normal();
        if (t == 0) {
          // trial 0 probes the head's own worst direction so the identity
          // defense realizes ||W||_2 exactly rather than a random shadow of it
          for (int j = 0; j < n; ++j) pd[j] = top_direction[j] * delta_scale;
        } else {
          double norm = 0.0;
          for (int j = 0; j < n; ++j) {
            pd[j] = rng.normal();
            norm += pd[j] * pd[j];
          }
          norm = std::sqrt(norm);
          for (int j = 0; j < n; ++j) pd[j] *= delta_scale / norm;
        }
      } else {
        // straddle: features sit just above zero, the perturbation pushes them
        // just below, so D(sign) flips while ||d|| stays small
        const double per = delta_scale / std::sqrt(static_cast<double>(n));
        for (int j = 0; j < n; ++j) {
          pf[j] = per / 2.0;
          pd[j] = -per;
        }
      }
    }
    Tensor fd = add(nullptr, f, delta);
    Tensor d0 = defended(f), d1 = defended(fd);
    double dnorm = 0.0, diff = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = d1[j] - d0[j];
      diff += e * e;
      dnorm += delta[j] * delta[j];
    }
    dnorm = std::sqrt(dnorm);
    diff = std::sqrt(diff);
    const double c_ratio = diff / dnorm;
    // head difference via W (d1 - d0)
    Tensor gap = sub(nullptr, d1, d0).reshaped({n, 1});
    Tensor out = matmul(nullptr, head_w, gap);
    double hnorm = 0.0;
    for (double v : out.data()) hnorm += v * v;
    const double ratio = std::sqrt(hnorm) / dnorm;
    report.c_empirical = std::max(report.c_empirical, c_ratio);
    report.max_ratio = std::max(report.max_ratio, ratio);
  }
  report.bound_k = k_reference > 0.0 ? k_reference : report.c_empirical * report.spectral;
  // slack matches the spectral norm's convergence accuracy
  report.bound_held = report.max_ratio <= report.bound_k * (1.0 + 1e-6);
  return report;
}

}  // namespace advq
