#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "advq/data.hpp"
#include "advq/rng.hpp"

using namespace advq;
namespace fs = std::filesystem;

namespace {

std::string tmp_file(const char* name) { return (fs::temp_directory_path() / name).string(); }

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(x >> 24);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back(x & 0xff);
}

// hand-built two-image 2x2 IDX pair
struct Fixture {
  std::string images = tmp_file("advq_idx_images");
  std::string labels = tmp_file("advq_idx_labels");
  Fixture() {
    std::vector<uint8_t> im;
    push_be32(im, 0x00000803);
    push_be32(im, 2);
    push_be32(im, 2);
    push_be32(im, 2);
    for (uint8_t b : {0, 51, 102, 153, 204, 255, 0, 255}) im.push_back(b);
    write_bytes(images, im);
    std::vector<uint8_t> lb;
    push_be32(lb, 0x00000801);
    push_be32(lb, 2);
    lb.push_back(7);
    lb.push_back(1);
    write_bytes(labels, lb);
  }
  ~Fixture() {
    fs::remove(images);
    fs::remove(labels);
  }
};

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("idx loader parses a crafted pair and scales to [0,1]") {
  Fixture fx;
  Dataset ds = load_idx(fx.images, fx.labels);
  CHECK(ds.count() == 2);
  CHECK(ds.images.shape() == std::vector<int>{2, 1, 2, 2});
  CHECK(ds.labels[0] == 7);
  CHECK(ds.labels[1] == 1);
  CHECK(ds.images.data()[0] == 0.0);
  CHECK(ds.images.data()[1] == doctest::Approx(51.0 / 255.0).epsilon(1e-15));
  CHECK(ds.images.data()[5] == 1.0);
}

TEST_CASE("idx loader error paths") {
  Fixture fx;
  // wrong magic names the offset
  {
    std::vector<uint8_t> bad;
    push_be32(bad, 0x00000807);
    push_be32(bad, 1);
    push_be32(bad, 2);
    push_be32(bad, 2);
    for (int i = 0; i < 4; ++i) bad.push_back(0);
    const std::string p = tmp_file("advq_idx_badmagic");
    write_bytes(p, bad);
    CHECK_THROWS_WITH_AS(load_idx(p, fx.labels), doctest::Contains("offset 0"), Error);
    fs::remove(p);
  }
  // truncated payload: error, no partial dataset
  {
    std::vector<uint8_t> trunc;
    push_be32(trunc, 0x00000803);
    push_be32(trunc, 2);
    push_be32(trunc, 2);
    push_be32(trunc, 2);
    trunc.push_back(1);  // 1 of 8 payload bytes
    const std::string p = tmp_file("advq_idx_trunc");
    write_bytes(p, trunc);
    CHECK_THROWS_AS(load_idx(p, fx.labels), Error);
    fs::remove(p);
  }
  // image/label count mismatch
  {
    std::vector<uint8_t> lb;
    push_be32(lb, 0x00000801);
    push_be32(lb, 3);
    lb.push_back(0);
    lb.push_back(1);
    lb.push_back(2);
    const std::string p = tmp_file("advq_idx_badcount");
    write_bytes(p, lb);
    CHECK_THROWS_WITH_AS(load_idx(fx.images, p), doctest::Contains("mismatch"), Error);
    fs::remove(p);
  }
}

TEST_CASE("save_idx then load_idx reproduces bytes exactly") {
  Dataset ds = gen_synth_digits(40, 5);
  const std::string pi = tmp_file("advq_idx_rt_images");
  const std::string pl = tmp_file("advq_idx_rt_labels");
  save_idx(ds, pi, pl);
  Dataset back = load_idx(pi, pl);
  CHECK(back.count() == ds.count());
  for (int i = 0; i < ds.count(); ++i) CHECK(back.labels[i] == ds.labels[i]);
  for (int64_t i = 0; i < ds.images.size(); ++i) {
    CHECK(back.images.data()[i] == ds.images.data()[i]);  // generator is byte-quantized
  }
  fs::remove(pi);
  fs::remove(pl);
}

TEST_CASE("normalization constants and round trip") {
  Normalization mnist = Normalization::preset("mnist");
  CHECK(mnist.mu[0] == 0.1307);
  CHECK(mnist.sigma[0] == 0.3081);

  Dataset ds;
  ds.images = Tensor::from_data({1, 1, 1, 3}, {0.1307, 1.0, 0.0});
  ds.labels = {0};
  Dataset norm = normalize(ds, mnist);
  CHECK(norm.images.data()[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(norm.images.data()[1] == doctest::Approx((1.0 - 0.1307) / 0.3081).epsilon(1e-12));

  Rng rng(3);
  Dataset rnd;
  rnd.images = Tensor::zeros({2, 1, 4, 4});
  for (auto& v : rnd.images.mutable_data()) v = rng.uniform();
  rnd.labels = {0, 1};
  Dataset n2 = normalize(rnd, mnist);
  Tensor back = denormalize(n2.images, mnist);
  for (int64_t i = 0; i < back.size(); ++i) {
    CHECK(back.data()[i] == doctest::Approx(rnd.images.data()[i]).epsilon(1e-12));
  }

  Normalization rgb = Normalization::preset("cifar10");
  CHECK_THROWS_WITH_AS(normalize(rnd, rgb), doctest::Contains("channel"), Error);
  CHECK_THROWS_AS(Normalization::preset("emnist"), Error);
}

TEST_CASE("clamp_valid pins the denormalized range and is idempotent") {
  Normalization mnist = Normalization::preset("mnist");
  const double hi = (1.0 - 0.1307) / 0.3081;
  const double lo = (0.0 - 0.1307) / 0.3081;
  Tensor imgs = Tensor::from_data({1, 1, 1, 4}, {0.0, hi + 3.0, lo - 2.0, 1.0});
  Tensor c = clamp_valid(imgs, mnist);
  CHECK(c.data()[0] == 0.0);    // in range, unchanged
  CHECK(c.data()[1] == hi);     // clamped exactly to the bound
  CHECK(c.data()[2] == lo);
  CHECK(c.data()[3] == 1.0);
  Tensor cc = clamp_valid(c, mnist);
  for (int64_t i = 0; i < c.size(); ++i) CHECK(cc.data()[i] == c.data()[i]);

  Tensor zeros = Tensor::zeros({1, 1, 2, 2});
  Tensor cz = clamp_valid(zeros, Normalization::none());
  for (double v : cz.data()) CHECK(v == 0.0);
}

TEST_CASE("gen_noise determinism and uniformity (chi-squared at 1%)") {
  Tensor a = gen_noise({2, 1, 16, 16}, 9);
  Tensor b = gen_noise({2, 1, 16, 16}, 9);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
  Tensor c = gen_noise({2, 1, 16, 16}, 10);
  bool differs = false;
  for (int64_t i = 0; i < a.size(); ++i) differs |= a.data()[i] != c.data()[i];
  CHECK(differs);

  // 1e6 samples into 100 bins; critical value chi2(99, 0.99) = 134.642
  const int bins = 100;
  const int64_t n = 1000000;
  Tensor big = gen_noise({1, 1, 1000, 1000}, 1234);
  std::vector<int64_t> hist(bins, 0);
  for (double v : big.data()) {
    int b2 = static_cast<int>(v * bins);
    if (b2 == bins) b2 = bins - 1;
    ++hist[b2];
  }
  const double expect = static_cast<double>(n) / bins;
  double chi2 = 0.0;
  for (int64_t h : hist) chi2 += (h - expect) * (h - expect) / expect;
  CHECK(chi2 < 134.642);
}

TEST_CASE("textures: checker has exactly two values, all kinds deterministic") {
  Tensor checker = gen_texture({1, 1, 28, 28}, 5, TextureKind::kChecker);
  std::set<double> values(checker.data().begin(), checker.data().end());
  CHECK(values.size() == 2);

  for (auto kind : {TextureKind::kStripes, TextureKind::kChecker, TextureKind::kValueNoise}) {
    Tensor t1 = gen_texture({2, 1, 12, 12}, 77, kind);
    Tensor t2 = gen_texture({2, 1, 12, 12}, 77, kind);
    for (int64_t i = 0; i < t1.size(); ++i) CHECK(t1.data()[i] == t2.data()[i]);
    for (double v : t1.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK_THROWS_AS(texture_kind_from("perlin"), Error);
}

TEST_CASE("synthetic digits: deterministic, balanced, byte-quantized, MNIST geometry") {
  Dataset a = gen_synth_digits(200, 42);
  Dataset b = gen_synth_digits(200, 42);
  CHECK(a.images.shape() == std::vector<int>{200, 1, 28, 28});
  for (int64_t i = 0; i < a.images.size(); ++i) CHECK(a.images.data()[i] == b.images.data()[i]);
  for (int i = 0; i < 200; ++i) CHECK(a.labels[i] == b.labels[i]);

  std::vector<int> counts(10, 0);
  for (int l : a.labels) ++counts[l];
  for (int c : counts) CHECK(c == 20);  // index mod 10 before the shuffle

  for (double v : a.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v * 255.0 == doctest::Approx(std::round(v * 255.0)).epsilon(1e-9));
  }
}

TEST_CASE("full pipeline round trip: load -> normalize -> denormalize == bytes/255") {
  Dataset raw = gen_synth_digits(30, 8);
  const std::string pi = tmp_file("advq_rt2_images");
  const std::string pl = tmp_file("advq_rt2_labels");
  save_idx(raw, pi, pl);
  Dataset loaded = load_idx(pi, pl);
  Normalization mnist = Normalization::preset("mnist");
  Dataset norm = normalize(loaded, mnist);
  Tensor back = denormalize(norm.images, mnist);
  for (int64_t i = 0; i < back.size(); ++i) {
    CHECK(back.data()[i] == doctest::Approx(loaded.images.data()[i]).epsilon(1e-12));
  }
  fs::remove(pi);
  fs::remove(pl);
}

TEST_CASE("shuffled_indices is a deterministic permutation") {
  auto a = shuffled_indices(1000, 3);
  auto b = shuffled_indices(1000, 3);
  CHECK(a == b);
  std::set<int> seen(a.begin(), a.end());
  CHECK(seen.size() == 1000);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 999);
  CHECK(a != shuffled_indices(1000, 4));
}

TEST_SUITE_END();
