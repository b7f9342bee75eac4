#include "advq/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace advq {

namespace {

constexpr char kMagic[4] = {'A', 'Q', 'C', 'K'};
constexpr uint32_t kVersion = 1;

// this codebase only targets little-endian hosts; serialization is plain copies
void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_i32(std::ostream& os, int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
int32_t get_i32(std::istream& is) {
  int32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
double get_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void put_blob(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<uint32_t>(t.shape().size()));
  for (int d : t.shape()) put_i32(os, d);
  for (double v : t.data()) {
    const float f = static_cast<float>(v);
    os.write(reinterpret_cast<const char*>(&f), 4);
  }
}

Tensor get_blob(std::istream& is) {
  const uint32_t ndim = get_u32(is);
  if (ndim == 0 || ndim > 8) throw Error("checkpoint-corrupt", "bad blob rank");
  std::vector<int> shape(ndim);
  for (auto& d : shape) d = get_i32(is);
  Tensor t = Tensor::zeros(shape);
  auto p = t.mutable_data();
  for (int64_t i = 0; i < t.size(); ++i) {
    float f = 0;
    is.read(reinterpret_cast<char*>(&f), 4);
    p[i] = f;
  }
  if (!is) throw Error("checkpoint-corrupt", "truncated parameter blob");
  return t;
}

}  // namespace

void save_checkpoint(const LayeredModel& m, const std::string& path) {
  m.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("io", "cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(m.layers.size()));
  for (const Layer& l : m.layers) {
    put_u32(os, static_cast<uint32_t>(l.kind));
    put_i32(os, l.in_ch);
    put_i32(os, l.out_ch);
    put_i32(os, l.kernel);
    put_i32(os, l.stride);
    put_i32(os, l.padding);
  }
  put_i32(os, m.feature_tap);
  put_i32(os, m.defense_slot);
  put_u32(os, static_cast<uint32_t>(m.defense.variant));
  put_f64(os, m.defense.ste_clip);
  put_u32(os, static_cast<uint32_t>(m.defense.thresholds.size()));
  for (double v : m.defense.thresholds) put_f64(os, v);
  put_u32(os, static_cast<uint32_t>(m.defense.levels.size()));
  for (double v : m.defense.levels) put_f64(os, v);
  const auto params = m.params();
  put_u32(os, static_cast<uint32_t>(params.size()));
  for (const Tensor* t : params) put_blob(os, *t);
  if (!os) throw Error("io", "write failed: " + path);
}

LayeredModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("io", "cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error("checkpoint-mismatch", path + ": bad magic at offset 0");
  }
  const uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw Error("checkpoint-mismatch",
                path + ": unsupported version " + std::to_string(version));
  }
  const uint32_t count = get_u32(is);
  if (!is || count == 0 || count > 4096) throw Error("checkpoint-corrupt", "bad layer count");
  LayeredModel m;
  m.arch = "checkpoint";
  m.layers.resize(count);
  for (Layer& l : m.layers) {
    const uint32_t kind = get_u32(is);
    if (kind > static_cast<uint32_t>(LayerKind::kResidual)) {
      throw Error("checkpoint-corrupt", "bad layer kind");
    }
    l.kind = static_cast<LayerKind>(kind);
    l.in_ch = get_i32(is);
    l.out_ch = get_i32(is);
    l.kernel = get_i32(is);
    l.stride = get_i32(is);
    l.padding = get_i32(is);
  }
  m.feature_tap = get_i32(is);
  m.defense_slot = get_i32(is);
  const uint32_t variant = get_u32(is);
  if (variant > static_cast<uint32_t>(DefenseFn::Variant::kStep)) {
    throw Error("checkpoint-corrupt", "bad defense variant");
  }
  m.defense.variant = static_cast<DefenseFn::Variant>(variant);
  m.defense.ste_clip = get_f64(is);
  m.defense.thresholds.resize(get_u32(is));
  for (double& v : m.defense.thresholds) v = get_f64(is);
  m.defense.levels.resize(get_u32(is));
  for (double& v : m.defense.levels) v = get_f64(is);
  if (!is) throw Error("checkpoint-corrupt", "truncated header");

  const uint32_t blobs = get_u32(is);
  std::vector<Tensor> loaded(blobs);
  for (auto& t : loaded) t = get_blob(is);
  size_t bi = 0;
  for (Layer& l : m.layers) {
    auto take = [&](Tensor& dst) {
      if (bi >= loaded.size()) throw Error("checkpoint-corrupt", "missing parameter blob");
      dst = loaded[bi++];
    };
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kDense) {
      take(l.weight);
      take(l.bias);
    } else if (l.kind == LayerKind::kResidual) {
      take(l.weight);
      take(l.bias);
      take(l.weight2);
      take(l.bias2);
    }
  }
  if (bi != loaded.size()) throw Error("checkpoint-corrupt", "extra parameter blobs");
  m.validate();
  return m;
}

}  // namespace advq
