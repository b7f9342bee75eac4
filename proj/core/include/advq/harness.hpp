#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advq/attacks.hpp"
#include "advq/data.hpp"
#include "advq/model.hpp"

namespace advq {

struct TrainConfig {
  int epochs = 30;
  double lr = 0.01;
  int lr_halve_every = 10;  // epochs between halvings
  double momentum = 0.95;
  int batch_size = 64;
  int inner_steps = 1;  // gradient updates per sampled minibatch
  int val_split = 5000;  // tail of the training set held out for validation
  uint64_t seed = 1;

  void validate() const;
};

struct TrainLog {
  std::vector<double> train_loss;    // per epoch
  std::vector<double> val_accuracy;  // per epoch
  std::vector<double> lr;            // per epoch

  // running maximum of validation accuracy; non-decreasing by construction
  std::vector<double> best_val_so_far() const;
};

// SGD with momentum on mean cross-entropy. The defense slot stays active
// during training with straight-through gradients. Throws on divergence
// (non-finite loss) with a diagnostic.
TrainLog train(LayeredModel& m, const Dataset& train_set, const TrainConfig& cfg);

struct CleanEval {
  int count = 0;
  int correct = 0;
  double accuracy = 0.0;  // 0 for an explicit empty report
};
CleanEval eval_clean(const LayeredModel& m, const Dataset& ds);

// calibrates a uniform step quantizer from tap-activation statistics
// (range a = mean + 2 * std over one clean pass)
DefenseFn calibrate_step_defense(const LayeredModel& m, const Dataset& ds, int num_levels,
                                 int max_samples = 10000);

struct ExperimentReport {
  std::vector<EvalRow> rows;

  static const char* csv_header();  // method,steps,epsilon,alpha,accuracy,...
  std::string to_csv() const;
  void write_csv(const std::string& path) const;
};

ExperimentReport run_attack_table(const LayeredModel& m, const Dataset& ds,
                                  const std::vector<AttackConfig>& attacks);

ExperimentReport sweep_alpha(const LayeredModel& m, const Dataset& ds,
                             const std::vector<double>& alphas, AttackBudget budget);

// trains one defended model per position (fresh seed-derived init each time)
// and reports clean plus PGD accuracy per position
struct PlacementRow {
  int position = 0;
  double clean_accuracy = 0.0;
  double pgd_accuracy = 0.0;
};
struct PlacementReport {
  std::vector<PlacementRow> rows;
  ExperimentReport as_experiment(uint64_t seed) const;
};
PlacementReport sweep_placement(const std::string& arch, const Dataset& train_set,
                                const Dataset& clean_eval, const Dataset& attack_eval,
                                const std::vector<int>& positions, const DefenseFn& fn,
                                const TrainConfig& cfg, AttackBudget pgd_budget);

ExperimentReport sweep_patch(const LayeredModel& m, const Dataset& ds,
                             const std::vector<double>& area_fractions, int steps,
                             AttackBudget budget);

// per-stage activation dump (CSV values + PNG grids) for qualitative checks;
// stage -1 denotes the post-defense value at the defense slot
void dump_features(const LayeredModel& m, const Tensor& image, const std::vector<int>& stages,
                   const Normalization& norm, const std::string& out_prefix);

LayeredModel build_arch(const std::string& arch, uint64_t seed);

}  // namespace advq
