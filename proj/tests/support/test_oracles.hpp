#pragma once

// Test-side oracles, independent of the library's compute paths.

#include <vector>

#include "advq/rng.hpp"
#include "advq/tensor.hpp"

namespace advq::testing {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  auto p = t.mutable_data();
  for (int64_t i = 0; i < t.size(); ++i) p[i] = rng.uniform(lo, hi);
  return t;
}

// direct loop over output and kernel positions; no im2col, no gemm
inline Tensor conv2d_bruteforce(const Tensor& in, const Tensor& k, int stride, int pad) {
  const auto& is = in.shape();
  const auto& ks = k.shape();
  const int n = is[0], c = is[1], h = is[2], w = is[3];
  const int o = ks[0], kh = ks[2], kw = ks[3];
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out = Tensor::zeros({n, o, oh, ow});
  auto po = out.mutable_data();
  auto pi = in.data();
  auto pk = k.data();
  for (int s = 0; s < n; ++s)
    for (int oc = 0; oc < o; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0;
          for (int ic = 0; ic < c; ++ic)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride + ky - pad;
                const int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += pi[((static_cast<int64_t>(s) * c + ic) * h + iy) * w + ix] *
                       pk[((static_cast<int64_t>(oc) * c + ic) * kh + ky) * kw + kx];
              }
          po[((static_cast<int64_t>(s) * o + oc) * oh + oy) * ow + ox] = acc;
        }
  return out;
}

}  // namespace advq::testing
