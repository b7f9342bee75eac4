#include "advq/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "advq/image_io.hpp"
#include "advq/rng.hpp"

namespace advq {

void TrainConfig::validate() const {
  if (epochs < 1) throw Error("config-value", "epochs must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("config-value", "momentum must be in [0,1)");
  if (batch_size < 1) throw Error("config-value", "batch size must be >= 1");
  if (inner_steps < 1) throw Error("config-value", "inner steps must be >= 1");
  if (!(lr > 0.0)) throw Error("config-value", "learning rate must be positive");
  if (lr_halve_every < 1) throw Error("config-value", "lr halving interval must be >= 1");
  if (val_split < 0) throw Error("config-value", "validation split must be >= 0");
}

std::vector<double> TrainLog::best_val_so_far() const {
  std::vector<double> out(val_accuracy.size());
  double best = 0.0;
  for (size_t i = 0; i < val_accuracy.size(); ++i) {
    best = std::max(best, val_accuracy[i]);
    out[i] = best;
  }
  return out;
}

TrainLog train(LayeredModel& m, const Dataset& train_set, const TrainConfig& cfg) {
  cfg.validate();
  m.validate();
  if (!train_set.normalized) throw Error("dataset-not-normalized", "train expects a normalized dataset");
  const int total = train_set.count();
  const int val_n = std::min(cfg.val_split, total / 4);
  const int train_n = total - val_n;
  if (train_n < cfg.batch_size) throw Error("config-value", "training split smaller than one batch");

  std::vector<int> val_idx(val_n);
  for (int i = 0; i < val_n; ++i) val_idx[i] = train_n + i;
  Dataset val = val_n > 0 ? train_set.subset(val_idx) : Dataset{};

  auto params = m.params();
  std::vector<Tensor> velocity;
  velocity.reserve(params.size());
  for (Tensor* p : params) velocity.push_back(Tensor::zeros(p->shape()));

  TrainLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(0.5, epoch / cfg.lr_halve_every);
    std::vector<int> order(train_n);
    for (int i = 0; i < train_n; ++i) order[i] = i;
    {
      Rng rng(derive_seed(cfg.seed, "shuffle", epoch));
      for (int i = train_n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(i + 1));
        std::swap(order[i], order[j]);
      }
    }
    double loss_sum = 0.0;
    int64_t loss_count = 0;
    for (int base = 0; base < train_n; base += cfg.batch_size) {
      const int take = std::min(cfg.batch_size, train_n - base);
      std::vector<int> idx(order.begin() + base, order.begin() + base + take);
      Tensor x = train_set.gather(idx);
      std::vector<int> labels(take);
      for (int i = 0; i < take; ++i) labels[i] = train_set.labels[idx[i]];

      for (int inner = 0; inner < cfg.inner_steps; ++inner) {
        Tape tape;
        for (Tensor* p : params) tape.watch(*p);
        Tensor logits = forward_full(m, &tape, x, /*training=*/true);
        Tensor loss = softmax_cross_entropy(&tape, logits, labels);
        const double lv = loss.item();
        if (!std::isfinite(lv) || lv > 1e8) {
          throw Error("diverged", "loss blew up (" + std::to_string(lv) + ") at epoch " +
                                      std::to_string(epoch) + ", batch " +
                                      std::to_string(base / cfg.batch_size));
        }
        if (inner == 0) {
          loss_sum += lv * take;
          loss_count += take;
        }
        GradMap grads = tape.backward(loss);
        for (size_t pi = 0; pi < params.size(); ++pi) {
          Tensor g = grads.at(*params[pi]);
          auto v = velocity[pi].mutable_data();
          auto w = params[pi]->mutable_data();
          auto pg = g.data();
          for (int64_t j = 0; j < g.size(); ++j) {
            v[j] = cfg.momentum * v[j] + pg[j];
            w[j] -= lr * v[j];
          }
        }
      }
    }
    log.train_loss.push_back(loss_sum / loss_count);
    log.lr.push_back(lr);
    log.val_accuracy.push_back(val_n > 0 ? eval_clean(m, val).accuracy : 0.0);
  }
  return log;
}

CleanEval eval_clean(const LayeredModel& m, const Dataset& ds) {
  CleanEval ev;
  ev.count = ds.count();
  if (ev.count == 0) return ev;  // explicit empty report
  const int chunk = 512;
  for (int base = 0; base < ds.count(); base += chunk) {
    const int take = std::min(chunk, ds.count() - base);
    std::vector<int> idx(take);
    for (int i = 0; i < take; ++i) idx[i] = base + i;
    const auto preds = predict(m, ds.gather(idx));
    for (int i = 0; i < take; ++i)
      if (preds[i].label == ds.labels[base + i]) ++ev.correct;
  }
  ev.accuracy = static_cast<double>(ev.correct) / ev.count;
  return ev;
}

DefenseFn calibrate_step_defense(const LayeredModel& m, const Dataset& ds, int num_levels,
                                 int max_samples) {
  if (!ds.normalized) throw Error("dataset-not-normalized", "calibration needs a normalized dataset");
  const int n = std::min(ds.count(), max_samples);
  if (n == 0) throw Error("config-value", "cannot calibrate on an empty dataset");
  double sum = 0.0, sumsq = 0.0;
  int64_t count = 0;
  const int chunk = 512;
  for (int base = 0; base < n; base += chunk) {
    const int take = std::min(chunk, n - base);
    std::vector<int> idx(take);
    for (int i = 0; i < take; ++i) idx[i] = base + i;
    // statistics of the values entering the defense slot
    Tensor f = features_at(m, nullptr, ds.gather(idx), m.defense_slot);
    for (double v : f.data()) {
      sum += v;
      sumsq += v * v;
    }
    count += f.size();
  }
  const double mean = sum / count;
  const double var = std::max(0.0, sumsq / count - mean * mean);
  const double a = mean + 2.0 * std::sqrt(var);
  if (!(a > 0.0)) throw Error("quantizer-spec", "calibrated range collapsed (a <= 0)");
  return DefenseFn::uniform_step(a, num_levels);
}

const char* ExperimentReport::csv_header() {
  return "method,steps,epsilon,alpha,accuracy,mean_linf,mean_featgap,seed,wall_ms";
}

std::string ExperimentReport::to_csv() const {
  std::string out = csv_header();
  out += "\n";
  char buf[256];
  for (const EvalRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.6g,%.6g,%.6f,%.6g,%.6g,%llu,%.1f\n", r.method.c_str(),
                  r.steps, r.epsilon, r.alpha, r.accuracy, r.mean_linf, r.mean_featgap,
                  static_cast<unsigned long long>(r.seed), r.wall_ms);
    out += buf;
  }
  return out;
}

void ExperimentReport::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("io", "cannot open " + path + " for writing");
  os << to_csv();
  if (!os) throw Error("io", "csv write failed: " + path);
}

ExperimentReport run_attack_table(const LayeredModel& m, const Dataset& ds,
                                  const std::vector<AttackConfig>& attacks) {
  ExperimentReport report;
  report.rows.reserve(attacks.size());
  for (const AttackConfig& cfg : attacks) report.rows.push_back(evaluate_attack(m, ds, cfg));
  return report;
}

ExperimentReport sweep_alpha(const LayeredModel& m, const Dataset& ds,
                             const std::vector<double>& alphas, AttackBudget budget) {
  ExperimentReport report;
  for (double a : alphas) {
    AttackConfig cfg;
    cfg.kind = AttackKind::kTiny;
    cfg.budget = budget;
    cfg.budget.alpha = a;
    cfg.label = "tiny";
    report.rows.push_back(evaluate_attack(m, ds, cfg));
  }
  return report;
}

PlacementReport sweep_placement(const std::string& arch, const Dataset& train_set,
                                const Dataset& clean_eval, const Dataset& attack_eval,
                                const std::vector<int>& positions, const DefenseFn& fn,
                                const TrainConfig& cfg, AttackBudget pgd_budget) {
  PlacementReport report;
  for (int pos : positions) {
    LayeredModel base = build_arch(arch, derive_seed(cfg.seed, "placement", pos));
    LayeredModel defended = insert_defense(base, pos, fn);
    TrainConfig tc = cfg;
    tc.seed = derive_seed(cfg.seed, "placement-train", pos);
    train(defended, train_set, tc);
    PlacementRow row;
    row.position = pos;
    row.clean_accuracy = eval_clean(defended, clean_eval).accuracy;
    AttackConfig ac;
    ac.kind = AttackKind::kPgd;
    ac.budget = pgd_budget;
    row.pgd_accuracy = evaluate_attack(defended, attack_eval, ac).accuracy;
    report.rows.push_back(row);
  }
  return report;
}

ExperimentReport PlacementReport::as_experiment(uint64_t seed) const {
  ExperimentReport out;
  for (const PlacementRow& r : rows) {
    EvalRow clean;
    clean.method = "clean@slot" + std::to_string(r.position);
    clean.steps = 0;
    clean.accuracy = r.clean_accuracy;
    clean.seed = seed;
    out.rows.push_back(clean);
    EvalRow pgd;
    pgd.method = "pgd@slot" + std::to_string(r.position);
    pgd.steps = 100;
    pgd.accuracy = r.pgd_accuracy;
    pgd.seed = seed;
    out.rows.push_back(pgd);
  }
  return out;
}

ExperimentReport sweep_patch(const LayeredModel& m, const Dataset& ds,
                             const std::vector<double>& area_fractions, int steps,
                             AttackBudget budget) {
  ExperimentReport report;
  for (double c : area_fractions) {
    AttackConfig cfg;
    cfg.kind = AttackKind::kPatch;
    cfg.budget = budget;
    cfg.budget.steps = steps;
    cfg.patch.area_fraction = c;
    cfg.label = "patch";
    report.rows.push_back(evaluate_attack(m, ds, cfg));
  }
  return report;
}

void dump_features(const LayeredModel& m, const Tensor& image, const std::vector<int>& stages,
                   const Normalization& norm, const std::string& out_prefix) {
  m.validate();
  Tensor batch = image;
  if (image.shape().size() == 3) {
    auto s = image.shape();
    batch = image.reshaped({1, s[0], s[1], s[2]});
  }
  // pipeline position k = value after layers[k-1]; position 0 = input
  std::vector<Tensor> at_position(m.layers.size() + 1);
  at_position[0] = batch;
  for (size_t i = 1; i <= m.layers.size(); ++i) {
    at_position[i] = features_at(m, nullptr, batch, static_cast<int>(i));
  }
  const Tensor post_defense = apply_defense(nullptr, at_position[m.defense_slot], m.defense, false);
  auto write_stage = [&](const Tensor& t, const std::string& name) {
    std::ofstream os(out_prefix + name + ".csv");
    if (!os) throw Error("io", "cannot open " + out_prefix + name + ".csv");
    os << "shape," << Tensor::shape_str(t.shape()) << "\n";
    auto p = t.data();
    for (int64_t i = 0; i < t.size(); ++i) os << p[i] << (i + 1 < t.size() ? "," : "\n");
    write_activation_grid(out_prefix + name + ".png", t);
  };
  for (int s : stages) {
    if (s == -1) {
      write_stage(post_defense, "stage_defense");
    } else if (s >= 0 && s <= static_cast<int>(m.layers.size())) {
      write_stage(at_position[s], "stage_" + std::to_string(s));
    } else {
      throw Error("config-value", "stage " + std::to_string(s) + " out of range");
    }
  }
}

LayeredModel build_arch(const std::string& arch, uint64_t seed) {
  if (arch == "lenet") return build_lenet(seed);
  if (arch == "mini_resnet") return build_mini_resnet(seed);
  throw Error("config-value", "unknown architecture '" + arch + "'");
}

}  // namespace advq
