#include <doctest.h>

#include "advq/config.hpp"

using namespace advq;

namespace {

const char* kSample = R"(# sample experiment
[data]
source = synth
normalization = mnist
synth_train_count = 500
synth_test_count = 100

[model]
arch = lenet
defense = sign
defense_position = 1

[train]
epochs = 2
lr = 0.01
momentum = 0.95
batch_size = 64

[attack fgsm]
epsilon = 0.3

[attack pgd]
epsilon = 0.3
steps = 100

[attack tiny]
epsilon = 0.3
steps = 100
alpha = 1.0
tap = 12
restarts = 2

[sweep]
alphas = 0, 0.5, 1.0

[output]
dir = runs/demo
seed = 7
eval_count = 50
)";

}  // namespace

TEST_SUITE_BEGIN("config");

TEST_CASE("full sample parses with defaults applied") {
  RunConfig cfg = parse_config_text(kSample);
  CHECK(cfg.data_source == "synth");
  CHECK(cfg.synth_train_count == 500);
  CHECK(cfg.arch == "lenet");
  CHECK(cfg.defense == "sign");
  CHECK(cfg.train.epochs == 2);
  CHECK(cfg.train.lr_halve_every == 10);  // default
  REQUIRE(cfg.attacks.size() == 3);
  CHECK(cfg.attacks[0].name == "fgsm");
  CHECK(cfg.attacks[2].budget.tap == 12);
  CHECK(cfg.attacks[2].budget.restarts == 2);
  CHECK(cfg.sweep_alphas == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(cfg.out_dir == "runs/demo");
  CHECK(cfg.seed == 7);
  // root seed flows into subsystems
  CHECK(cfg.train.seed == 7);
  CHECK(cfg.attacks[1].budget.seed == 7);
}

TEST_CASE("unknown keys and sections are rejected with the line number") {
  const char* bad_key = "[data]\nsource = synth\nbogus = 1\n";
  CHECK_THROWS_WITH_AS(parse_config_text(bad_key), doctest::Contains(":3:"), Error);
  CHECK_THROWS_WITH_AS(parse_config_text(bad_key), doctest::Contains("bogus"), Error);

  const char* bad_section = "[data]\nsource = synth\n\n[simulation]\nx = 1\n";
  CHECK_THROWS_WITH_AS(parse_config_text(bad_section), doctest::Contains(":4:"), Error);

  const char* bad_attack = "[attack warp]\nepsilon = 1\n";
  CHECK_THROWS_WITH_AS(parse_config_text(bad_attack), doctest::Contains("warp"), Error);

  const char* bad_value = "[train]\nepochs = banana\n";
  CHECK_THROWS_WITH_AS(parse_config_text(bad_value), doctest::Contains("banana"), Error);

  const char* orphan = "epochs = 3\n";
  CHECK_THROWS_WITH_AS(parse_config_text(orphan), doctest::Contains("section"), Error);

  const char* no_eq = "[train]\nepochs\n";
  CHECK_THROWS_AS(parse_config_text(no_eq), Error);
}

TEST_CASE("echoed config reparses to a fixpoint") {
  RunConfig cfg = parse_config_text(kSample);
  const std::string echo1 = cfg.echo();
  RunConfig cfg2 = parse_config_text(echo1, "<echo>");
  const std::string echo2 = cfg2.echo();
  CHECK(echo1 == echo2);
  CHECK(cfg2.attacks.size() == cfg.attacks.size());
  CHECK(cfg2.train.epochs == cfg.train.epochs);
  CHECK(cfg2.seed == cfg.seed);
  CHECK(cfg2.attacks[2].budget.alpha == cfg.attacks[2].budget.alpha);
}

TEST_CASE("train seed may pin itself independently of the root seed") {
  const char* text = "[train]\nseed = 99\n\n[output]\nseed = 7\n";
  RunConfig cfg = parse_config_text(text);
  CHECK(cfg.seed == 7);
  CHECK(cfg.train.seed == 99);
}

TEST_CASE("comments and blank lines are ignored") {
  const char* text = "# top\n\n[output]\n# inner\nseed = 12   # trailing\n";
  RunConfig cfg = parse_config_text(text);
  CHECK(cfg.seed == 12);
}

TEST_SUITE_END();
