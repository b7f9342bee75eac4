#include "advq/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace advq {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& what) {
  throw Error("config-parse", origin + ":" + std::to_string(line) + ": " + what);
}

double to_double(const std::string& origin, int line, const std::string& v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) fail(origin, line, "bad number '" + v + "'");
    return d;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail(origin, line, "bad number '" + v + "'");
  }
}

int64_t to_int(const std::string& origin, int line, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) fail(origin, line, "bad integer '" + v + "'");
  return out;
}

bool to_bool(const std::string& origin, int line, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(origin, line, "bad boolean '" + v + "' (want true/false)");
}

std::vector<double> to_double_list(const std::string& origin, int line, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double(origin, line, item));
  }
  if (out.empty()) fail(origin, line, "empty list");
  return out;
}

std::vector<int> to_int_list(const std::string& origin, int line, const std::string& v) {
  std::vector<int> out;
  for (double d : to_double_list(origin, line, v)) out.push_back(static_cast<int>(d));
  return out;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  cfg.attacks.clear();
  std::istringstream is(text);
  std::string raw;
  std::string section;
  RunConfig::AttackBlock* attack = nullptr;
  int line = 0;
  bool train_seed_set = false;

  while (std::getline(is, raw)) {
    ++line;
    std::string s = raw;
    const size_t hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;

    if (s.front() == '[') {
      if (s.back() != ']') fail(origin, line, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      attack = nullptr;
      if (section.rfind("attack", 0) == 0) {
        const std::string name = trim(section.substr(6));
        if (name.empty()) fail(origin, line, "attack section needs a name, e.g. [attack pgd]");
        if (name != "fgsm" && name != "pgd" && name != "tiny" && name != "margin" &&
            name != "patch" && name != "confidence" && name != "identity") {
          fail(origin, line, "unknown attack '" + name + "'");
        }
        cfg.attacks.push_back({});
        attack = &cfg.attacks.back();
        attack->name = name;
        if (name == "confidence") attack->budget.steps = 500;
        section = "attack";
      } else if (section != "data" && section != "model" && section != "train" &&
                 section != "sweep" && section != "output") {
        fail(origin, line, "unknown section [" + section + "]");
      }
      continue;
    }

    const size_t eq = s.find('=');
    if (eq == std::string::npos) fail(origin, line, "expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (key.empty() || val.empty()) fail(origin, line, "expected key = value");

    if (section == "data") {
      if (key == "source") {
        if (val != "idx" && val != "synth") fail(origin, line, "source must be idx or synth");
        cfg.data_source = val;
      } else if (key == "train_images") cfg.train_images = val;
      else if (key == "train_labels") cfg.train_labels = val;
      else if (key == "test_images") cfg.test_images = val;
      else if (key == "test_labels") cfg.test_labels = val;
      else if (key == "normalization") cfg.normalization = val;
      else if (key == "synth_train_count") cfg.synth_train_count = static_cast<int>(to_int(origin, line, val));
      else if (key == "synth_test_count") cfg.synth_test_count = static_cast<int>(to_int(origin, line, val));
      else fail(origin, line, "unknown key '" + key + "' in [data]");
    } else if (section == "model") {
      if (key == "arch") cfg.arch = val;
      else if (key == "defense") cfg.defense = val;
      else if (key == "defense_position") cfg.defense_position = static_cast<int>(to_int(origin, line, val));
      else if (key == "step_levels") cfg.step_levels = static_cast<int>(to_int(origin, line, val));
      else fail(origin, line, "unknown key '" + key + "' in [model]");
    } else if (section == "train") {
      if (key == "epochs") cfg.train.epochs = static_cast<int>(to_int(origin, line, val));
      else if (key == "lr") cfg.train.lr = to_double(origin, line, val);
      else if (key == "lr_halve_every") cfg.train.lr_halve_every = static_cast<int>(to_int(origin, line, val));
      else if (key == "momentum") cfg.train.momentum = to_double(origin, line, val);
      else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(to_int(origin, line, val));
      else if (key == "inner_steps") cfg.train.inner_steps = static_cast<int>(to_int(origin, line, val));
      else if (key == "val_split") cfg.train.val_split = static_cast<int>(to_int(origin, line, val));
      else if (key == "seed") {
        cfg.train.seed = static_cast<uint64_t>(to_int(origin, line, val));
        train_seed_set = true;
      } else fail(origin, line, "unknown key '" + key + "' in [train]");
    } else if (section == "attack") {
      if (!attack) fail(origin, line, "key outside an [attack x] block");
      AttackBudget& b = attack->budget;
      if (key == "epsilon") b.epsilon = to_double(origin, line, val);
      else if (key == "steps") b.steps = static_cast<int>(to_int(origin, line, val));
      else if (key == "step_size") b.step_size = to_double(origin, line, val);
      else if (key == "alpha") b.alpha = to_double(origin, line, val);
      else if (key == "p") b.p = static_cast<int>(to_int(origin, line, val));
      else if (key == "tap") b.tap = static_cast<int>(to_int(origin, line, val));
      else if (key == "restarts") b.restarts = static_cast<int>(to_int(origin, line, val));
      else if (key == "random_start") b.random_start = to_bool(origin, line, val);
      else if (key == "confidence_threshold") b.confidence_threshold = to_double(origin, line, val);
      else if (key == "area_fraction") attack->patch.area_fraction = to_double(origin, line, val);
      else if (key == "patch_q") attack->patch.q = static_cast<int>(to_int(origin, line, val));
      else if (key == "patch_x") attack->patch.x = static_cast<int>(to_int(origin, line, val));
      else if (key == "patch_y") attack->patch.y = static_cast<int>(to_int(origin, line, val));
      else fail(origin, line, "unknown key '" + key + "' in [attack " + attack->name + "]");
    } else if (section == "sweep") {
      if (key == "alphas") cfg.sweep_alphas = to_double_list(origin, line, val);
      else if (key == "patch_areas") cfg.sweep_patch_areas = to_double_list(origin, line, val);
      else if (key == "positions") cfg.sweep_positions = to_int_list(origin, line, val);
      else if (key == "epochs") cfg.sweep_epochs = static_cast<int>(to_int(origin, line, val));
      else fail(origin, line, "unknown key '" + key + "' in [sweep]");
    } else if (section == "output") {
      if (key == "dir") cfg.out_dir = val;
      else if (key == "formats") cfg.formats = val;
      else if (key == "seed") cfg.seed = static_cast<uint64_t>(to_int(origin, line, val));
      else if (key == "eval_count") cfg.eval_count = static_cast<int>(to_int(origin, line, val));
      else fail(origin, line, "unknown key '" + key + "' in [output]");
    } else {
      fail(origin, line, "key '" + key + "' before any section");
    }
  }

  // one root seed: subsystems derive from [output] seed unless [train] pinned
  // its own explicitly
  if (!train_seed_set) cfg.train.seed = cfg.seed;
  for (auto& a : cfg.attacks) a.budget.seed = cfg.seed;
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("io", "cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os.precision(17);
  os << "# effective configuration (defaults applied)\n";
  os << "[data]\n";
  os << "source = " << data_source << "\n";
  if (!train_images.empty()) os << "train_images = " << train_images << "\n";
  if (!train_labels.empty()) os << "train_labels = " << train_labels << "\n";
  if (!test_images.empty()) os << "test_images = " << test_images << "\n";
  if (!test_labels.empty()) os << "test_labels = " << test_labels << "\n";
  os << "normalization = " << normalization << "\n";
  os << "synth_train_count = " << synth_train_count << "\n";
  os << "synth_test_count = " << synth_test_count << "\n";
  os << "\n[model]\n";
  os << "arch = " << arch << "\n";
  os << "defense = " << defense << "\n";
  os << "defense_position = " << defense_position << "\n";
  os << "step_levels = " << step_levels << "\n";
  os << "\n[train]\n";
  os << "epochs = " << train.epochs << "\n";
  os << "lr = " << train.lr << "\n";
  os << "lr_halve_every = " << train.lr_halve_every << "\n";
  os << "momentum = " << train.momentum << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "inner_steps = " << train.inner_steps << "\n";
  os << "val_split = " << train.val_split << "\n";
  os << "seed = " << train.seed << "\n";
  for (const auto& a : attacks) {
    os << "\n[attack " << a.name << "]\n";
    os << "epsilon = " << a.budget.epsilon << "\n";
    os << "steps = " << a.budget.steps << "\n";
    os << "step_size = " << a.budget.step_size << "\n";
    os << "alpha = " << a.budget.alpha << "\n";
    os << "p = " << a.budget.p << "\n";
    os << "tap = " << a.budget.tap << "\n";
    os << "restarts = " << a.budget.restarts << "\n";
    os << "random_start = " << (a.budget.random_start ? "true" : "false") << "\n";
    os << "confidence_threshold = " << a.budget.confidence_threshold << "\n";
    if (a.name == "patch") {
      os << "area_fraction = " << a.patch.area_fraction << "\n";
      os << "patch_q = " << a.patch.q << "\n";
      os << "patch_x = " << a.patch.x << "\n";
      os << "patch_y = " << a.patch.y << "\n";
    }
  }
  os << "\n[sweep]\n";
  auto put_dlist = [&](const char* key, const std::vector<double>& v) {
    os << key << " = ";
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    os << "\n";
  };
  put_dlist("alphas", sweep_alphas);
  put_dlist("patch_areas", sweep_patch_areas);
  if (!sweep_positions.empty()) {
    os << "positions = ";
    for (size_t i = 0; i < sweep_positions.size(); ++i) os << (i ? "," : "") << sweep_positions[i];
    os << "\n";
  }
  os << "epochs = " << sweep_epochs << "\n";
  os << "\n[output]\n";
  os << "dir = " << out_dir << "\n";
  os << "formats = " << formats << "\n";
  os << "seed = " << seed << "\n";
  os << "eval_count = " << eval_count << "\n";
  return os.str();
}

}  // namespace advq
