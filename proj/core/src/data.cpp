#include "advq/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "advq/rng.hpp"

namespace advq {

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

uint32_t read_be32(std::istream& is, const std::string& path, int64_t offset) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw Error("idx-truncated", path + ": truncated at offset " + std::to_string(offset));
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<char*>(b), 4);
}

std::vector<uint8_t> read_payload(std::istream& is, const std::string& path, int64_t expected) {
  std::vector<uint8_t> buf(expected);
  is.read(reinterpret_cast<char*>(buf.data()), expected);
  if (is.gcount() != expected) {
    throw Error("idx-truncated", path + ": payload has " + std::to_string(is.gcount()) +
                                     " bytes, expected " + std::to_string(expected));
  }
  return buf;
}

}  // namespace

Normalization Normalization::preset(const std::string& name) {
  Normalization n;
  if (name == "mnist") {
    n.mu = {0.1307};
    n.sigma = {0.3081};
  } else if (name == "cifar10") {
    n.mu = {0.4914, 0.4822, 0.4465};
    n.sigma = {0.2023, 0.1994, 0.2010};
  } else if (name == "imagenet") {
    n.mu = {0.485, 0.456, 0.406};
    n.sigma = {0.229, 0.224, 0.225};
  } else if (name == "none") {
    n.mu = {0.0};
    n.sigma = {1.0};
  } else {
    throw Error("config-value", "unknown normalization preset '" + name + "'");
  }
  return n;
}

void Normalization::validate() const {
  if (mu.size() != sigma.size() || mu.empty()) {
    throw Error("normalization-invalid", "mu/sigma channel counts differ");
  }
  for (double s : sigma) {
    if (!(s > 0.0)) throw Error("normalization-invalid", "sigma must be positive");
  }
}

Tensor Dataset::gather(std::span<const int> indices) const {
  const auto& s = images.shape();
  const int64_t row = static_cast<int64_t>(s[1]) * s[2] * s[3];
  Tensor out = Tensor::zeros({static_cast<int>(indices.size()), s[1], s[2], s[3]});
  auto src = images.data();
  auto dst = out.mutable_data();
  for (size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= count()) throw Error("index-out-of-range", std::to_string(idx));
    std::memcpy(dst.data() + i * row, src.data() + idx * row, row * sizeof(double));
  }
  return out;
}

Dataset Dataset::subset(std::span<const int> indices) const {
  Dataset out;
  out.images = gather(indices);
  out.labels.reserve(indices.size());
  for (int idx : indices) out.labels.push_back(labels[idx]);
  out.norm = norm;
  out.normalized = normalized;
  return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imf(images_path, std::ios::binary);
  if (!imf) throw Error("io", "cannot open " + images_path);
  const uint32_t im_magic = read_be32(imf, images_path, 0);
  if (im_magic != kImagesMagic) {
    throw Error("idx-magic", images_path + ": bad magic at offset 0 (got 0x" +
                                 [&] {
                                   char b[16];
                                   std::snprintf(b, sizeof b, "%08x", im_magic);
                                   return std::string(b);
                                 }() +
                                 ", want 0x00000803)");
  }
  const uint32_t n = read_be32(imf, images_path, 4);
  const uint32_t h = read_be32(imf, images_path, 8);
  const uint32_t w = read_be32(imf, images_path, 12);
  if (n == 0 || h == 0 || w == 0 || h > 4096 || w > 4096) {
    throw Error("idx-header", images_path + ": implausible dimensions");
  }
  const auto pixels = read_payload(imf, images_path, static_cast<int64_t>(n) * h * w);

  std::ifstream lbf(labels_path, std::ios::binary);
  if (!lbf) throw Error("io", "cannot open " + labels_path);
  const uint32_t lb_magic = read_be32(lbf, labels_path, 0);
  if (lb_magic != kLabelsMagic) {
    throw Error("idx-magic", labels_path + ": bad magic at offset 0 (want 0x00000801)");
  }
  const uint32_t ln = read_be32(lbf, labels_path, 4);
  if (ln != n) {
    throw Error("idx-count-mismatch", std::to_string(n) + " images vs " + std::to_string(ln) + " labels");
  }
  const auto labels = read_payload(lbf, labels_path, ln);

  Dataset ds;
  ds.images = Tensor::zeros({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
  auto p = ds.images.mutable_data();
  for (int64_t i = 0; i < ds.images.size(); ++i) p[i] = pixels[i] / 255.0;
  ds.labels.assign(labels.begin(), labels.end());
  ds.normalized = false;
  return ds;
}

void save_idx(const Dataset& raw, const std::string& images_path, const std::string& labels_path) {
  if (raw.normalized) throw Error("idx-write", "save_idx expects raw [0,1] images");
  const auto& s = raw.images.shape();
  std::ofstream imf(images_path, std::ios::binary);
  if (!imf) throw Error("io", "cannot open " + images_path + " for writing");
  write_be32(imf, kImagesMagic);
  write_be32(imf, static_cast<uint32_t>(s[0]));
  write_be32(imf, static_cast<uint32_t>(s[2]));
  write_be32(imf, static_cast<uint32_t>(s[3]));
  for (double v : raw.images.data()) {
    const double c = std::clamp(v, 0.0, 1.0);
    const uint8_t b = static_cast<uint8_t>(std::lround(c * 255.0));
    imf.write(reinterpret_cast<const char*>(&b), 1);
  }
  std::ofstream lbf(labels_path, std::ios::binary);
  if (!lbf) throw Error("io", "cannot open " + labels_path + " for writing");
  write_be32(lbf, kLabelsMagic);
  write_be32(lbf, static_cast<uint32_t>(raw.labels.size()));
  for (int l : raw.labels) {
    const uint8_t b = static_cast<uint8_t>(l);
    lbf.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!imf || !lbf) throw Error("io", "idx write failed");
}

Dataset normalize(const Dataset& ds, const Normalization& norm) {
  norm.validate();
  if (ds.channels() != static_cast<int>(norm.mu.size())) {
    throw Error("channel-mismatch", std::to_string(ds.channels()) + " channels vs " +
                                        std::to_string(norm.mu.size()) + " normalization channels");
  }
  if (ds.normalized) throw Error("normalization-invalid", "dataset already normalized");
  Dataset out = ds;
  out.images = ds.images.clone();
  out.norm = norm;
  out.normalized = true;
  const auto& s = out.images.shape();
  const int64_t area = static_cast<int64_t>(s[2]) * s[3];
  auto p = out.images.mutable_data();
  int64_t q = 0;
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c) {
      const double mu = norm.mu[c], sg = norm.sigma[c];
      for (int64_t j = 0; j < area; ++j, ++q) p[q] = (p[q] - mu) / sg;
    }
  return out;
}

Tensor denormalize(const Tensor& images, const Normalization& norm) {
  norm.validate();
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != static_cast<int>(norm.mu.size())) {
    throw Error("channel-mismatch", "denormalize: " + Tensor::shape_str(s) + " vs " +
                                        std::to_string(norm.mu.size()) + " channels");
  }
  Tensor out = images.clone();
  const int64_t area = static_cast<int64_t>(s[2]) * s[3];
  auto p = out.mutable_data();
  int64_t q = 0;
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c) {
      const double mu = norm.mu[c], sg = norm.sigma[c];
      for (int64_t j = 0; j < area; ++j, ++q) p[q] = p[q] * sg + mu;
    }
  return out;
}

Tensor clamp_valid(const Tensor& images, const Normalization& norm) {
  norm.validate();
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != static_cast<int>(norm.mu.size())) {
    throw Error("channel-mismatch", "clamp_valid: " + Tensor::shape_str(s) + " vs " +
                                        std::to_string(norm.mu.size()) + " channels");
  }
  Tensor out = images.clone();
  const int64_t area = static_cast<int64_t>(s[2]) * s[3];
  auto p = out.mutable_data();
  int64_t q = 0;
  for (int n = 0; n < s[0]; ++n)
    for (int c = 0; c < s[1]; ++c) {
      const double lo = norm.lo(c), hi = norm.hi(c);
      for (int64_t j = 0; j < area; ++j, ++q) p[q] = std::clamp(p[q], lo, hi);
    }
  return out;
}

TextureKind texture_kind_from(const std::string& name) {
  if (name == "stripes") return TextureKind::kStripes;
  if (name == "checker") return TextureKind::kChecker;
  if (name == "value-noise") return TextureKind::kValueNoise;
  throw Error("config-value", "unknown texture kind '" + name + "'");
}

Tensor gen_noise(const std::vector<int>& shape, uint64_t seed) {
  Tensor t = Tensor::zeros(shape);
  Rng rng(derive_seed(seed, "noise"));
  auto p = t.mutable_data();
  for (int64_t i = 0; i < t.size(); ++i) p[i] = rng.uniform();
  return t;
}

Tensor gen_texture(const std::vector<int>& shape, uint64_t seed, TextureKind kind) {
  if (shape.size() != 4) throw Error("shape-invalid", "gen_texture expects [n,c,h,w]");
  Tensor t = Tensor::zeros(shape);
  auto p = t.mutable_data();
  const int n = shape[0], c = shape[1], h = shape[2], w = shape[3];
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "texture", i));
    switch (kind) {
      case TextureKind::kStripes: {
        const double angle = rng.uniform(0.0, 3.14159265358979);
        const double freq = rng.uniform(0.3, 1.4);
        const double phase = rng.uniform(0.0, 6.2831853);
        const double dx = std::cos(angle), dy = std::sin(angle);
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              const double v = 0.5 + 0.5 * std::sin(freq * (dx * x + dy * y) + phase);
              p[((static_cast<int64_t>(i) * c + ch) * h + y) * w + x] = v;
            }
        break;
      }
      case TextureKind::kChecker: {
        const int cell = 2 + static_cast<int>(rng.uniform_int(5));
        const double a = rng.uniform(0.0, 0.4), b = rng.uniform(0.6, 1.0);
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              const bool on = ((x / cell) + (y / cell)) % 2 == 0;
              p[((static_cast<int64_t>(i) * c + ch) * h + y) * w + x] = on ? a : b;
            }
        break;
      }
      case TextureKind::kValueNoise: {
        // bilinear interpolation of a coarse random lattice, two octaves
        const int g0 = 4, g1 = 9;
        std::vector<double> lat0((g0 + 1) * (g0 + 1)), lat1((g1 + 1) * (g1 + 1));
        for (double& v : lat0) v = rng.uniform();
        for (double& v : lat1) v = rng.uniform();
        auto sample = [](const std::vector<double>& lat, int g, double u, double v) {
          const double x = u * g, y = v * g;
          const int x0 = std::min(static_cast<int>(x), g - 1), y0 = std::min(static_cast<int>(y), g - 1);
          const double fx = x - x0, fy = y - y0;
          const double a = lat[y0 * (g + 1) + x0], b = lat[y0 * (g + 1) + x0 + 1];
          const double cc = lat[(y0 + 1) * (g + 1) + x0], d = lat[(y0 + 1) * (g + 1) + x0 + 1];
          return (a * (1 - fx) + b * fx) * (1 - fy) + (cc * (1 - fx) + d * fx) * fy;
        };
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              const double u = (x + 0.5) / w, v = (y + 0.5) / h;
              const double val = 0.65 * sample(lat0, g0, u, v) + 0.35 * sample(lat1, g1, u, v);
              p[((static_cast<int64_t>(i) * c + ch) * h + y) * w + x] = std::clamp(val, 0.0, 1.0);
            }
        break;
      }
    }
  }
  return t;
}

std::vector<int> shuffled_indices(int count, uint64_t seed) {
  std::vector<int> idx(count);
  for (int i = 0; i < count; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, "shuffle"));
  for (int i = count - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(i + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

}  // namespace advq
