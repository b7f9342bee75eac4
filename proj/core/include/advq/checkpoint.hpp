#pragma once

#include <string>

#include "advq/model.hpp"

namespace advq {

// Versioned binary model container, stable across releases. Layout (all
// little-endian):
//
//   magic   "AQCK"                      4 bytes
//   u32     version (currently 1)
//   u32     layer count
//   per layer:
//     u32   kind                        (LayerKind)
//     i32   in_ch, out_ch, kernel, stride, padding
//   i32     feature_tap
//   i32     defense_slot
//   u32     defense variant             (identity | sign | step)
//   f64     ste_clip
//   u32     threshold count, f64[...]
//   u32     level count,     f64[...]
//   u32     parameter blob count
//   per blob:
//     u32   ndim, i32 dims[ndim]
//     f32   data[product(dims)]         (parameters are stored 32-bit)
//
// Blobs appear in layer order: weight, bias (and weight2, bias2 for residual
// layers). Loading restores parameters as doubles.
void save_checkpoint(const LayeredModel& m, const std::string& path);
LayeredModel load_checkpoint(const std::string& path);

}  // namespace advq
