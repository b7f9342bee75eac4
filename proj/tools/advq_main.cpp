// advq command-line driver: train / attack / sweep / probe / report / gen-data
// workflows over a declarative config file.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "advq/checkpoint.hpp"
#include "advq/config.hpp"
#include "advq/harness.hpp"
#include "advq/image_io.hpp"
#include "advq/rng.hpp"
#include "advq/threads.hpp"

namespace fs = std::filesystem;
using namespace advq;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string checkpoint;
  std::string out_dir_override;
  int64_t seed_override = -1;
  int threads = 1;
  bool force = false;
};

RunConfig load_config(const CommonOpts& o) {
  RunConfig cfg = parse_config_file(o.config_path);
  if (!o.out_dir_override.empty()) cfg.out_dir = o.out_dir_override;
  if (o.seed_override >= 0) {
    cfg.seed = static_cast<uint64_t>(o.seed_override);
    cfg.train.seed = cfg.seed;
    for (auto& a : cfg.attacks) a.budget.seed = cfg.seed;
  }
  return cfg;
}

void ensure_writable(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) {
    throw Error("would-overwrite", p.string() + " exists (pass --force to replace)");
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("io", "cannot create " + dir.string());
}

struct LoadedData {
  Dataset train;
  Dataset test;
};

// resolves the configured dataset; synth source generates IDX files under the
// output dir once and reloads them through the regular loader
LoadedData load_data(const RunConfig& cfg, bool need_train) {
  const Normalization norm = Normalization::preset(cfg.normalization);
  std::string tri = cfg.train_images, trl = cfg.train_labels;
  std::string tei = cfg.test_images, tel = cfg.test_labels;
  if (cfg.data_source == "synth") {
    const fs::path dir = fs::path(cfg.out_dir) / "synth-data";
    ensure_dir(dir);
    tri = (dir / "train-images-idx3-ubyte").string();
    trl = (dir / "train-labels-idx1-ubyte").string();
    tei = (dir / "t10k-images-idx3-ubyte").string();
    tel = (dir / "t10k-labels-idx1-ubyte").string();
    if (!fs::exists(tri) || !fs::exists(trl)) {
      save_idx(gen_synth_digits(cfg.synth_train_count, derive_seed(cfg.seed, "synth-train")), tri, trl);
    }
    if (!fs::exists(tei) || !fs::exists(tel)) {
      save_idx(gen_synth_digits(cfg.synth_test_count, derive_seed(cfg.seed, "synth-test")), tei, tel);
    }
  } else {
    for (const auto& [label, path] :
         {std::pair{"test_images", tei}, {"test_labels", tel}}) {
      if (path.empty()) throw Error("config-value", std::string(label) + " not set");
      if (!fs::exists(path)) throw Error("missing-dataset", path + " not found");
    }
    if (need_train) {
      for (const auto& [label, path] :
           {std::pair{"train_images", tri}, {"train_labels", trl}}) {
        if (path.empty()) throw Error("config-value", std::string(label) + " not set");
        if (!fs::exists(path)) throw Error("missing-dataset", path + " not found");
      }
    }
  }
  LoadedData out;
  if (need_train) out.train = normalize(load_idx(tri, trl), norm);
  out.test = normalize(load_idx(tei, tel), norm);
  return out;
}

LayeredModel configured_model(const RunConfig& cfg, const Dataset& train_set) {
  LayeredModel m = build_arch(cfg.arch, cfg.seed);
  if (cfg.defense == "identity") return m;
  if (cfg.defense == "sign") return insert_defense(m, cfg.defense_position, DefenseFn::sign());
  if (cfg.defense == "step") {
    LayeredModel placed = insert_defense(m, cfg.defense_position, DefenseFn::sign());
    DefenseFn step = calibrate_step_defense(placed, train_set, cfg.step_levels);
    return insert_defense(m, cfg.defense_position, step);
  }
  throw Error("config-value", "unknown defense '" + cfg.defense + "'");
}

void echo_config(const RunConfig& cfg, bool force) {
  const fs::path p = fs::path(cfg.out_dir) / "run.ini";
  ensure_writable(p, force);
  std::ofstream os(p);
  os << cfg.echo();
}

Dataset eval_subset(const Dataset& test, const RunConfig& cfg) {
  if (cfg.eval_count <= 0 || cfg.eval_count >= test.count()) return test;
  auto order = shuffled_indices(test.count(), derive_seed(cfg.seed, "eval-subset"));
  order.resize(cfg.eval_count);
  return test.subset(order);
}

std::vector<AttackConfig> attack_configs(const RunConfig& cfg) {
  std::vector<AttackConfig> out;
  for (const auto& blk : cfg.attacks) {
    if (blk.name == "confidence") continue;  // separate protocol
    AttackConfig ac;
    ac.kind = attack_kind_from(blk.name);
    ac.budget = blk.budget;
    ac.patch = blk.patch;
    out.push_back(ac);
  }
  return out;
}

int cmd_train(const CommonOpts& o) {
  RunConfig cfg = load_config(o);
  ensure_dir(cfg.out_dir);
  echo_config(cfg, o.force);
  LoadedData data = load_data(cfg, true);
  LayeredModel m = configured_model(cfg, data.train);
  std::fprintf(stderr, "training %s (%lld params, defense=%s@%d) on %d samples\n",
               cfg.arch.c_str(), static_cast<long long>(m.param_count()), cfg.defense.c_str(),
               cfg.defense_position, data.train.count());
  TrainLog log = train(m, data.train, cfg.train);

  const fs::path ckpt = fs::path(cfg.out_dir) / "model.ckpt";
  const fs::path loss_csv = fs::path(cfg.out_dir) / "loss.csv";
  ensure_writable(ckpt, o.force);
  ensure_writable(loss_csv, o.force);
  save_checkpoint(m, ckpt.string());
  {
    std::ofstream os(loss_csv);
    os << "epoch,train_loss,val_accuracy,lr\n";
    for (size_t e = 0; e < log.train_loss.size(); ++e) {
      os << e << "," << log.train_loss[e] << "," << log.val_accuracy[e] << "," << log.lr[e] << "\n";
    }
  }
  const CleanEval test_eval = eval_clean(m, data.test);
  std::printf("checkpoint %s\n", ckpt.string().c_str());
  std::printf("test accuracy %.4f (%d/%d)\n", test_eval.accuracy, test_eval.correct, test_eval.count);
  return 0;
}

int cmd_attack(const CommonOpts& o, bool dump_feature_stages, bool dump_raw) {
  RunConfig cfg = load_config(o);
  ensure_dir(cfg.out_dir);
  if (cfg.attacks.empty()) throw Error("config-value", "no [attack x] blocks in config");
  LayeredModel m = load_checkpoint(o.checkpoint);
  LoadedData data = load_data(cfg, cfg.data_source == "synth");
  Dataset subset = eval_subset(data.test, cfg);

  ExperimentReport report = run_attack_table(m, subset, attack_configs(cfg));
  // clean reference row
  {
    AttackConfig id;
    id.kind = AttackKind::kIdentity;
    id.label = "natural";
    id.budget.epsilon = 0.0;
    id.budget.seed = cfg.seed;
    report.rows.insert(report.rows.begin(), evaluate_attack(m, subset, id));
  }
  for (const auto& blk : cfg.attacks) {
    if (blk.name != "confidence") continue;
    ConfidenceEval ce = evaluate_confidence(m, subset, blk.budget, cfg.seed);
    EvalRow row;
    row.method = "confidence";
    row.steps = blk.budget.steps;
    row.accuracy = ce.guide_labels.empty()
                       ? 0.0
                       : static_cast<double>(ce.successes) / ce.guide_labels.size();
    row.seed = cfg.seed;
    row.count = static_cast<int>(ce.guide_labels.size());
    report.rows.push_back(row);
    if (cfg.formats.find("png") != std::string::npos && !ce.outcomes.empty()) {
      Tensor grid = Tensor::zeros({static_cast<int>(ce.outcomes.size()), 1,
                                   subset.images.shape()[2], subset.images.shape()[3]});
      auto dst = grid.mutable_data();
      int64_t off = 0;
      for (const auto& oc : ce.outcomes) {
        auto src = oc.adversarial.data();
        std::copy(src.begin(), src.end(), dst.begin() + off);
        off += oc.adversarial.size();
      }
      write_image_grid((fs::path(cfg.out_dir) / "confidence_grid.png").string(), grid, subset.norm);
    }
  }
  const fs::path csv = fs::path(cfg.out_dir) / "attacks.csv";
  ensure_writable(csv, o.force);
  report.write_csv(csv.string());
  std::printf("%s\n", ExperimentReport::csv_header());
  for (const auto& r : report.rows) {
    std::printf("%s,%d,%g,%g,%.4f,%g,%g,%llu,%.0f\n", r.method.c_str(), r.steps, r.epsilon, r.alpha,
                r.accuracy, r.mean_linf, r.mean_featgap, static_cast<unsigned long long>(r.seed),
                r.wall_ms);
    if (r.violations > 0) {
      std::fprintf(stderr, "warning: %d feasibility violations in %s\n", r.violations,
                   r.method.c_str());
    }
  }

  // adversarial grids for visual inspection (first few samples per attack)
  if (cfg.formats.find("png") != std::string::npos) {
    std::vector<int> first;
    for (int i = 0; i < std::min(20, subset.count()); ++i) first.push_back(i);
    Dataset few = subset.subset(first);
    write_image_grid((fs::path(cfg.out_dir) / "clean_grid.png").string(), few.images, few.norm);
    for (const auto& ac : attack_configs(cfg)) {
      Tensor grid = Tensor::zeros(few.images.shape());
      auto dst = grid.mutable_data();
      int64_t off = 0;
      for (int i = 0; i < few.count(); ++i) {
        std::vector<int> one{i};
        Tensor img = few.gather(one);
        AttackOutcome oc;
        switch (ac.kind) {
          case AttackKind::kFgsm:
            oc = fgsm(m, img, few.labels[i], ac.budget.epsilon, few.norm);
            break;
          case AttackKind::kPgd:
            oc = pgd(m, img, few.labels[i], ac.budget, few.norm);
            break;
          case AttackKind::kTiny:
            oc = tiny_attack(m, img, few.labels[i], ac.budget, few.norm);
            break;
          case AttackKind::kMargin:
            oc = margin_pgd(m, img, few.labels[i], ac.budget, few.norm);
            break;
          case AttackKind::kPatch:
            oc = patch_attack(m, img, few.labels[i], ac.patch, ac.budget.steps, few.norm,
                              derive_seed(ac.budget.seed, "patch-pos", i), ac.budget.tap);
            break;
          default:
            oc.adversarial = img;
            break;
        }
        auto src = oc.adversarial.data();
        std::copy(src.begin(), src.end(), dst.begin() + off);
        off += oc.adversarial.size();
      }
      write_image_grid((fs::path(cfg.out_dir) / (ac.row_label() + "_grid.png")).string(), grid,
                       few.norm);
      if (dump_raw) {
        // one row per sample, flattened normalized-unit pixels
        std::ofstream os(fs::path(cfg.out_dir) / (ac.row_label() + "_adv.csv"));
        auto p = grid.data();
        const int64_t row_len = grid.size() / few.count();
        for (int i = 0; i < few.count(); ++i) {
          for (int64_t j = 0; j < row_len; ++j)
            os << p[i * row_len + j] << (j + 1 < row_len ? "," : "\n");
        }
      }
    }
  }
  if (dump_feature_stages) {
    std::vector<int> one{0};
    dump_features(m, subset.gather(one), {0, 1, -1}, subset.norm,
                  (fs::path(cfg.out_dir) / "features_").string());
  }
  return 0;
}

int cmd_sweep(const CommonOpts& o, const std::string& kind) {
  RunConfig cfg = load_config(o);
  ensure_dir(cfg.out_dir);
  LoadedData data = load_data(cfg, true);
  Dataset subset = eval_subset(data.test, cfg);
  const fs::path csv = fs::path(cfg.out_dir) / ("sweep_" + kind + ".csv");
  const fs::path svg = fs::path(cfg.out_dir) / ("sweep_" + kind + ".svg");
  ensure_writable(csv, o.force);

  AttackBudget base;
  base.seed = cfg.seed;
  for (const auto& blk : cfg.attacks) {
    if (blk.name == "tiny" || blk.name == "pgd" || blk.name == "patch") {
      base = blk.budget;
      break;
    }
  }

  ExperimentReport report;
  SvgChart chart("sweep: " + kind, kind == "alpha" ? "alpha" : (kind == "patch" ? "area fraction" : "defense slot"),
                 "accuracy");
  if (kind == "alpha") {
    LayeredModel m = load_checkpoint(o.checkpoint);
    report = sweep_alpha(m, subset, cfg.sweep_alphas, base);
    std::vector<double> ys;
    for (const auto& r : report.rows) ys.push_back(r.accuracy);
    chart.add_series("tiny attack", cfg.sweep_alphas, ys);
  } else if (kind == "patch") {
    LayeredModel m = load_checkpoint(o.checkpoint);
    report = sweep_patch(m, subset, cfg.sweep_patch_areas, base.steps, base);
    std::vector<double> ys;
    for (const auto& r : report.rows) ys.push_back(r.accuracy);
    chart.add_series("patch attack", cfg.sweep_patch_areas, ys);
  } else if (kind == "placement") {
    LayeredModel proto = build_arch(cfg.arch, cfg.seed);
    std::vector<int> positions = cfg.sweep_positions;
    if (positions.empty()) positions = defense_positions(proto);
    TrainConfig tc = cfg.train;
    tc.epochs = cfg.sweep_epochs;
    tc.seed = cfg.seed;
    DefenseFn fn = cfg.defense == "step"
                       ? DefenseFn::uniform_step(1.0, cfg.step_levels)
                       : DefenseFn::sign();
    PlacementReport pr =
        sweep_placement(cfg.arch, data.train, data.test, subset, positions, fn, tc, base);
    report = pr.as_experiment(cfg.seed);
    std::vector<double> xs, clean_ys, pgd_ys;
    for (const auto& r : pr.rows) {
      xs.push_back(r.position);
      clean_ys.push_back(r.clean_accuracy);
      pgd_ys.push_back(r.pgd_accuracy);
    }
    chart.add_series("clean", xs, clean_ys);
    chart.add_series("pgd", xs, pgd_ys);
  } else {
    throw Error("config-value", "sweep kind must be alpha, placement, or patch");
  }
  report.write_csv(csv.string());
  if (cfg.formats.find("svg") != std::string::npos) {
    ensure_writable(svg, o.force);
    chart.write(svg.string());
  }
  std::printf("%s\n", report.to_csv().c_str());
  return 0;
}

int cmd_probe(const CommonOpts& o, int trials, double delta_scale) {
  LayeredModel m = load_checkpoint(o.checkpoint);
  // last dense layer is the linear head of the theorem's f(x) = W x reading
  const Layer* head = nullptr;
  for (const Layer& l : m.layers)
    if (l.kind == LayerKind::kDense) head = &l;
  if (!head) throw Error("model-invalid", "no dense head to probe");
  // probe expects W as [rows=classes, cols=features]
  Tensor w = Tensor::zeros({head->out_ch, head->in_ch});
  {
    auto src = head->weight.data();  // stored [in, out]
    auto dst = w.mutable_data();
    for (int i = 0; i < head->in_ch; ++i)
      for (int j = 0; j < head->out_ch; ++j) dst[static_cast<int64_t>(j) * head->in_ch + i] = src[static_cast<int64_t>(i) * head->out_ch + j];
  }
  const DefenseFn& d = m.defense;
  const uint64_t seed = 0x9e1ec7u;
  LipschitzProbe random_probe = lipschitz_probe(d, w, trials, delta_scale, seed);
  std::printf("defense: %s\n", d.variant_name().c_str());
  std::printf("||W||_2 (power iteration): %.6f\n", random_probe.spectral);
  std::printf("random sampling: max ratio %.6f, empirical c %.6f, K = %.6f, bound %s\n",
              random_probe.max_ratio, random_probe.c_empirical, random_probe.bound_k,
              random_probe.bound_held ? "held" : "VIOLATED");
  if (!d.is_identity()) {
    // shrink the perturbation on straddle points: a quantizer is not
    // Lipschitz, so the bound from the random sample must eventually break
    LipschitzProbe worst = random_probe;
    bool violated = false;
    for (double scale = delta_scale; scale >= delta_scale * 1e-4; scale *= 0.1) {
      LipschitzProbe p = lipschitz_probe(d, w, std::max(1, trials / 10), scale, seed,
                                         ProbeSampler::kStraddle, random_probe.bound_k);
      std::printf("straddle delta=%.2e: max ratio %.6f vs K %.6f -> %s\n", scale, p.max_ratio,
                  p.bound_k, p.bound_held ? "held" : "VIOLATED");
      if (!p.bound_held) {
        violated = true;
        worst = p;
      }
    }
    if (violated) {
      std::printf("bound VIOLATED under vanishing perturbations (max ratio %.3e): "
                  "a bounded discontinuous defense has no finite Lipschitz constant\n",
                  worst.max_ratio);
    }
  }
  return 0;
}

int cmd_report(const std::string& run_dir) {
  if (!fs::is_directory(run_dir)) throw Error("io", run_dir + " is not a directory");
  std::vector<fs::path> csvs;
  for (const auto& e : fs::directory_iterator(run_dir)) {
    if (e.path().extension() == ".csv") csvs.push_back(e.path());
  }
  std::sort(csvs.begin(), csvs.end());
  if (csvs.empty()) throw Error("io", "no CSV reports under " + run_dir);
  for (const auto& p : csvs) {
    std::ifstream is(p);
    std::string line;
    std::printf("== %s ==\n", p.filename().string().c_str());
    std::vector<std::vector<std::string>> cells;
    while (std::getline(is, line)) {
      std::vector<std::string> row;
      std::stringstream ss(line);
      std::string item;
      while (std::getline(ss, item, ',')) row.push_back(item);
      if (!row.empty()) cells.push_back(std::move(row));
    }
    std::vector<size_t> width;
    for (const auto& row : cells) {
      if (width.size() < row.size()) width.resize(row.size(), 0);
      for (size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    }
    for (const auto& row : cells) {
      std::string out;
      for (size_t i = 0; i < row.size(); ++i) {
        out += row[i];
        out.append(width[i] + 2 - row[i].size(), ' ');
      }
      std::printf("%s\n", out.c_str());
    }
    std::printf("\n");
  }
  return 0;
}

int cmd_gen_data(const std::string& out_dir, const std::string& kind, int count, uint64_t seed,
                 bool force) {
  ensure_dir(out_dir);
  if (kind == "synth") {
    const fs::path imgs = fs::path(out_dir) / "train-images-idx3-ubyte";
    const fs::path lbls = fs::path(out_dir) / "train-labels-idx1-ubyte";
    ensure_writable(imgs, force);
    ensure_writable(lbls, force);
    save_idx(gen_synth_digits(count, seed), imgs.string(), lbls.string());
    std::printf("wrote %s and %s (%d samples)\n", imgs.string().c_str(), lbls.string().c_str(), count);
    return 0;
  }
  Tensor imgs;
  if (kind == "noise") {
    imgs = gen_noise({count, 1, 28, 28}, seed);
  } else {
    imgs = gen_texture({count, 1, 28, 28}, seed, texture_kind_from(kind));
  }
  const fs::path png = fs::path(out_dir) / (kind + "_grid.png");
  ensure_writable(png, force);
  write_image_grid(png.string(), imgs, Normalization::none());
  std::printf("wrote %s\n", png.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-space adversarial attack and quantizer-defense toolkit"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string sweep_kind = "alpha", report_dir, gen_kind = "synth", gen_out = "data/synth";
  int probe_trials = 10000, gen_count = 60000;
  double probe_delta = 1.0;
  int64_t gen_seed = 7;
  bool dump_stages = false, dump_raw = false;

  auto add_common = [&](CLI::App* c, bool needs_config, bool needs_ckpt) {
    if (needs_config) c->add_option("-c,--config", o.config_path, "run config file")->required();
    if (needs_ckpt) c->add_option("-k,--checkpoint", o.checkpoint, "model checkpoint")->required();
    c->add_option("-o,--out", o.out_dir_override, "output directory override");
    c->add_option("--seed", o.seed_override, "root seed override");
    c->add_option("--threads", o.threads, "worker cap (1 = deterministic reference)");
    c->add_flag("--force", o.force, "allow overwriting outputs");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config");
  add_common(train_cmd, true, false);

  CLI::App* attack_cmd = app.add_subcommand("attack", "run configured attacks on a checkpoint");
  add_common(attack_cmd, true, true);
  attack_cmd->add_flag("--dump-features", dump_stages, "emit per-stage activation dumps");
  attack_cmd->add_flag("--dump-raw", dump_raw, "emit adversarial tensors as CSV");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "alpha / placement / patch sweeps");
  add_common(sweep_cmd, true, true);
  sweep_cmd->add_option("--kind", sweep_kind, "alpha | placement | patch")->required();

  CLI::App* probe_cmd = app.add_subcommand("probe", "Lipschitz probe of the defended head");
  add_common(probe_cmd, false, true);
  probe_cmd->add_option("--trials", probe_trials, "random trials");
  probe_cmd->add_option("--delta", probe_delta, "perturbation scale");

  CLI::App* report_cmd = app.add_subcommand("report", "merge CSV reports in a run directory");
  report_cmd->add_option("-d,--dir", report_dir, "run directory")->required();

  CLI::App* gen_cmd = app.add_subcommand("gen-data", "emit synthetic digits / noise / textures");
  gen_cmd->add_option("-o,--out", gen_out, "output directory");
  gen_cmd->add_option("--kind", gen_kind, "synth | noise | stripes | checker | value-noise");
  gen_cmd->add_option("--count", gen_count, "sample count");
  gen_cmd->add_option("--seed", gen_seed, "generator seed");
  gen_cmd->add_flag("--force", o.force, "allow overwriting outputs");

  CLI11_PARSE(app, argc, argv);

  try {
    set_threads(o.threads);
    if (app.got_subcommand(train_cmd)) return cmd_train(o);
    if (app.got_subcommand(attack_cmd)) return cmd_attack(o, dump_stages, dump_raw);
    if (app.got_subcommand(sweep_cmd)) return cmd_sweep(o, sweep_kind);
    if (app.got_subcommand(probe_cmd)) return cmd_probe(o, probe_trials, probe_delta);
    if (app.got_subcommand(report_cmd)) return cmd_report(report_dir);
    if (app.got_subcommand(gen_cmd)) {
      return cmd_gen_data(gen_out, gen_kind, gen_count, static_cast<uint64_t>(gen_seed), o.force);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 3;
  }
  return 1;
}
