#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advq/data.hpp"
#include "advq/tensor.hpp"

namespace advq {

// Minimal 8-bit grayscale PNG writer (stored deflate blocks; no external
// compression dependency).
void write_png_gray(const std::string& path, const std::vector<uint8_t>& pixels, int width,
                    int height);

// Tiles [n,1,h,w] images into a grid PNG. Values are denormalized through
// `norm` and clamped to bytes.
void write_image_grid(const std::string& path, const Tensor& images, const Normalization& norm,
                      int columns = 10, int separator = 2);

// Tiles the channels of one activation map [c,h,w], min-max scaled per call.
void write_activation_grid(const std::string& path, const Tensor& activation, int columns = 8);

// Simple SVG line chart; one polyline per series over shared x values.
class SvgChart {
 public:
  SvgChart(std::string title, std::string x_label, std::string y_label)
      : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

  void add_series(const std::string& name, const std::vector<double>& xs,
                  const std::vector<double>& ys);
  void write(const std::string& path) const;

 private:
  struct Series {
    std::string name;
    std::vector<double> xs, ys;
  };
  std::string title_, x_label_, y_label_;
  std::vector<Series> series_;
};

}  // namespace advq
