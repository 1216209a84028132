// Copyright 2026 The oarsi-mt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Direct nested-loop convolution used as an oracle for the im2col path.

#pragma once

#include <vector>

#include "oarsi/tensor.hpp"

namespace oarsi::testing {

/// Ungrouped direct convolution of `x` [N,C,H,W] with `w` [O,C,k,k].
inline Tensor<double> direct_conv(const Tensor<double>& x, const Tensor<double>& w, int stride,
                                  int pad) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> out(Shape{N, O, Ho, Wo});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t y = 0; y < Ho; ++y)
        for (std::int64_t xo = 0; xo < Wo; ++xo) {
          double acc = 0;
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const auto iy = y * stride - pad + ky, ix = xo * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[static_cast<std::size_t>(((n * C + c) * H + iy) * W + ix)] *
                       w[static_cast<std::size_t>(((o * C + c) * kh + ky) * kw + kx)];
              }
          out[static_cast<std::size_t>(((n * O + o) * Ho + y) * Wo + xo)] = acc;
        }
  return out;
}

/// Channels [begin, begin+count) of a [N,C,H,W] tensor.
inline Tensor<double> slice_channels(const Tensor<double>& x, std::int64_t begin,
                                     std::int64_t count) {
  const auto N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<double> out(Shape{N, count, x.dim(2), x.dim(3)});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < count; ++c)
      for (std::int64_t i = 0; i < HW; ++i)
        out[static_cast<std::size_t>((n * count + c) * HW + i)] =
            x[static_cast<std::size_t>((n * C + begin + c) * HW + i)];
  return out;
}

/// Output-channel slice [begin, begin+count) of a weight tensor [O,...].
inline Tensor<double> slice_out(const Tensor<double>& w, std::int64_t begin, std::int64_t count) {
  Shape s = w.shape();
  const auto inner = static_cast<std::int64_t>(w.numel()) / s[0];
  s[0] = count;
  Tensor<double> out(s);
  for (std::int64_t i = 0; i < count * inner; ++i)
    out[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(begin * inner + i)];
  return out;
}

/// Concatenates [N,Ci,H,W] tensors along channels.
inline Tensor<double> concat_channels(const std::vector<Tensor<double>>& parts) {
  const auto N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
  std::int64_t C = 0;
  for (const auto& p : parts) C += p.dim(1);
  Tensor<double> out(Shape{N, C, H, W});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const auto pc = p.dim(1);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < pc; ++c)
        for (std::int64_t i = 0; i < H * W; ++i)
          out[static_cast<std::size_t>((n * C + off + c) * H * W + i)] =
              p[static_cast<std::size_t>((n * pc + c) * H * W + i)];
    off += pc;
  }
  return out;
}

/// Grouped convolution as the concatenation of per-group direct convolutions.
inline Tensor<double> grouped_direct_conv(const Tensor<double>& x, const Tensor<double>& w,
                                          int groups, int stride, int pad) {
  const auto cg = x.dim(1) / groups, og = w.dim(0) / groups;
  std::vector<Tensor<double>> parts;
  for (int g = 0; g < groups; ++g) {
    parts.push_back(direct_conv(slice_channels(x, g * cg, cg), slice_out(w, g * og, og), stride, pad));
  }
  return concat_channels(parts);
}

}  // namespace oarsi::testing
