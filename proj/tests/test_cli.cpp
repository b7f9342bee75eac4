#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

using namespace std;
namespace fs = std::filesystem;

namespace {

// the driver binary path is injected by ctest; these tests exercise the real
// executable end to end on a small synthetic run
const char* cli_path() { return std::getenv("ADVQ_CLI"); }

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult run_cli(const std::string& args) {
  const fs::path dir = fs::temp_directory_path();
  const std::string out = (dir / "advq_cli_out.txt").string();
  const std::string err = (dir / "advq_cli_err.txt").string();
  const std::string cmd = std::string(cli_path()) + " " + args + " >" + out + " 2>" + err;
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WEXITSTATUS(raw);
  auto slurp = [](const std::string& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "advq_cli_work";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string smoke_config() {
  static std::string path = [] {
    const fs::path p = work_dir() / "smoke.ini";
    std::ofstream os(p);
    os << "[data]\nsource = synth\nnormalization = mnist\n"
       << "synth_train_count = 400\nsynth_test_count = 80\n\n"
       << "[model]\narch = lenet\ndefense = identity\n\n"
       << "[train]\nepochs = 1\nlr = 0.02\nbatch_size = 16\nval_split = 40\n\n"
       << "[attack fgsm]\nepsilon = 0\n\n"
       << "[attack tiny]\nepsilon = 0.3\nsteps = 4\ntap = 12\nrestarts = 2\n\n"
       << "[sweep]\nalphas = 0, 0.5, 1.0\nepochs = 1\npositions = 1, 4\n\n"
       << "[output]\ndir = " << (work_dir() / "run").string() << "\nseed = 5\neval_count = 24\n";
    return p.string();
  }();
  return path;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("train smoke run emits checkpoint, loss curve, and config echo") {
  REQUIRE(cli_path() != nullptr);
  RunResult r = run_cli("train -c " + smoke_config());
  CAPTURE(r.err);
  CHECK(r.code == 0);
  CHECK(fs::exists(work_dir() / "run" / "model.ckpt"));
  CHECK(fs::exists(work_dir() / "run" / "loss.csv"));
  CHECK(fs::exists(work_dir() / "run" / "run.ini"));
  CHECK(r.out.find("test accuracy") != std::string::npos);

  std::ifstream loss(work_dir() / "run" / "loss.csv");
  std::string header;
  std::getline(loss, header);
  CHECK(header == "epoch,train_loss,val_accuracy,lr");
}

TEST_CASE("outputs are never overwritten without --force") {
  RunResult r = run_cli("train -c " + smoke_config());
  CHECK(r.code == 2);
  CHECK(r.err.find("error: would-overwrite") != std::string::npos);

  RunResult forced = run_cli("train -c " + smoke_config() + " --force");
  CAPTURE(forced.err);
  CHECK(forced.code == 0);
}

TEST_CASE("attack command: zero-epsilon row equals the natural row") {
  const std::string ckpt = (work_dir() / "run" / "model.ckpt").string();
  RunResult r = run_cli("attack -c " + smoke_config() + " -k " + ckpt + " --force");
  CAPTURE(r.err);
  CHECK(r.code == 0);
  std::ifstream csv(work_dir() / "run" / "attacks.csv");
  REQUIRE(csv.good());
  std::string line;
  std::getline(csv, line);  // header
  double natural = -1, fgsm0 = -2;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells[0] == "natural") natural = std::stod(cells[4]);
    if (cells[0] == "fgsm") fgsm0 = std::stod(cells[4]);
  }
  CHECK(natural >= 0.0);
  CHECK(natural == fgsm0);
}

TEST_CASE("sweep alpha emits a three-row CSV and an SVG chart") {
  const std::string ckpt = (work_dir() / "run" / "model.ckpt").string();
  RunResult r = run_cli("sweep --kind alpha -c " + smoke_config() + " -k " + ckpt + " --force");
  CAPTURE(r.err);
  CHECK(r.code == 0);
  std::ifstream csv(work_dir() / "run" / "sweep_alpha.csv");
  REQUIRE(csv.good());
  std::string line;
  int rows = -1;  // header
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);
  CHECK(fs::exists(work_dir() / "run" / "sweep_alpha.svg"));
}

TEST_CASE("probe prints the spectral norm and the quantizer violation caveat") {
  const std::string ckpt = (work_dir() / "run" / "model.ckpt").string();
  RunResult identity = run_cli("probe -k " + ckpt + " --trials 500");
  CAPTURE(identity.err);
  CHECK(identity.code == 0);
  CHECK(identity.out.find("||W||_2") != std::string::npos);
  CHECK(identity.out.find("held") != std::string::npos);
}

TEST_CASE("report merges run CSVs into aligned tables") {
  RunResult r = run_cli("report -d " + (work_dir() / "run").string());
  CHECK(r.code == 0);
  CHECK(r.out.find("attacks.csv") != std::string::npos);
  CHECK(r.out.find("method") != std::string::npos);
}

TEST_CASE("gen-data writes an IDX pair") {
  const std::string out = (work_dir() / "gen").string();
  RunResult r = run_cli("gen-data -o " + out + " --kind synth --count 50 --seed 3");
  CHECK(r.code == 0);
  CHECK(fs::exists(fs::path(out) / "train-images-idx3-ubyte"));
  CHECK(fs::exists(fs::path(out) / "train-labels-idx1-ubyte"));
}

TEST_CASE("config errors surface as machine-parseable one-liners") {
  const fs::path bad = work_dir() / "bad.ini";
  {
    std::ofstream os(bad);
    os << "[data]\nsource = synth\nwhoops = 1\n";
  }
  RunResult r = run_cli("train -c " + bad.string());
  CHECK(r.code == 2);
  CHECK(r.err.find("error: config-parse") != std::string::npos);
  CHECK(r.err.find(":3:") != std::string::npos);

  RunResult missing = run_cli("attack -c " + smoke_config() + " -k /nonexistent.ckpt --force");
  CHECK(missing.code == 2);
  CHECK(missing.err.rfind("error: io", 0) == 0);
}

TEST_SUITE_END();
