#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advq/tensor.hpp"

namespace advq {

// Per-channel normalization x -> (x - mu) / sigma applied after byte/255
// scaling. Presets carry the standard constants for each dataset.
struct Normalization {
  std::vector<double> mu{0.0};
  std::vector<double> sigma{1.0};

  static Normalization none() { return {}; }
  static Normalization preset(const std::string& name);  // mnist | cifar10 | imagenet | none

  void validate() const;
  // normalized-space bounds of the valid raw range [0, 1]
  double lo(int channel) const { return (0.0 - mu[channel]) / sigma[channel]; }
  double hi(int channel) const { return (1.0 - mu[channel]) / sigma[channel]; }
};

// Labeled image set. `images` is [n, c, h, w]; `normalized` says which unit
// system the values are in (raw [0,1] or normalized).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  Normalization norm;
  bool normalized = false;

  int count() const { return labels.empty() ? 0 : static_cast<int>(labels.size()); }
  int channels() const { return images.shape().size() == 4 ? images.shape()[1] : 0; }

  // gathers rows into a fresh [k, c, h, w] batch
  Tensor gather(std::span<const int> indices) const;
  Dataset subset(std::span<const int> indices) const;
};

// IDX ingestion: big-endian magic 0x00000803 (images) / 0x00000801 (labels),
// dimension header, unsigned byte payload scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// exact inverse of the loader for u8 image/label pairs
void save_idx(const Dataset& raw, const std::string& images_path, const std::string& labels_path);

Dataset normalize(const Dataset& ds, const Normalization& norm);
Tensor denormalize(const Tensor& images, const Normalization& norm);

// clamps normalized images so denormalized values lie in [0, 1]
Tensor clamp_valid(const Tensor& images, const Normalization& norm);

enum class TextureKind { kStripes, kChecker, kValueNoise };
TextureKind texture_kind_from(const std::string& name);

// uniform [0,1) noise image
Tensor gen_noise(const std::vector<int>& shape, uint64_t seed);

// deterministic procedural textures (out-of-domain sources for the
// confidence attack)
Tensor gen_texture(const std::vector<int>& shape, uint64_t seed, TextureKind kind);

// Deterministic procedural handwritten-digit dataset in MNIST geometry
// (28x28 grayscale, classes 0-9, byte-quantized). Serves as a drop-in
// stand-in where the MNIST files cannot be redistributed or fetched; write
// it with save_idx and load it through the regular IDX path.
Dataset gen_synth_digits(int count, uint64_t seed);

// shuffled index order for an experiment seed
std::vector<int> shuffled_indices(int count, uint64_t seed);

}  // namespace advq
