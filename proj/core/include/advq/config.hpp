#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advq/attacks.hpp"
#include "advq/harness.hpp"

namespace advq {

// Declarative run configuration, parsed from a sectioned key = value file:
//
//   [data]     source (idx | synth), paths, normalization preset, counts
//   [model]    architecture, defense variant / position / levels
//   [train]    epochs, lr, lr_halve_every, momentum, batch_size, inner_steps
//   [attack X] one block per attack (X in fgsm pgd tiny margin patch confidence)
//   [sweep]    alphas / patch areas / placement positions lists
//   [output]   dir, formats, seed
//
// Unknown keys and sections are rejected with their line number. The effective
// config (defaults applied) can be echoed back out; re-parsing the echo is a
// fixpoint.
struct RunConfig {
  // [data]
  std::string data_source = "idx";  // idx | synth
  std::string train_images, train_labels, test_images, test_labels;
  std::string normalization = "mnist";
  int synth_train_count = 60000;
  int synth_test_count = 10000;

  // [model]
  std::string arch = "lenet";
  std::string defense = "identity";  // identity | sign | step
  int defense_position = 1;
  int step_levels = 4;

  // [train]
  TrainConfig train;

  // [attack <name>]
  struct AttackBlock {
    std::string name;  // fgsm | pgd | tiny | margin | patch | confidence | identity
    AttackBudget budget;
    PatchSpec patch;
  };
  std::vector<AttackBlock> attacks;

  // [sweep]
  std::vector<double> sweep_alphas{0.0, 0.25, 0.5, 0.75, 1.0, 1.5};
  std::vector<double> sweep_patch_areas{0.02, 0.05, 0.1};
  std::vector<int> sweep_positions;  // empty: defense_positions(model)
  int sweep_epochs = 4;

  // [output]
  std::string out_dir = "runs/out";
  std::string formats = "csv,png,svg";
  uint64_t seed = 7;
  int eval_count = 1000;  // attack-evaluation subset size (0: whole test set)

  std::string echo() const;  // effective config, parseable
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<memory>");

}  // namespace advq
