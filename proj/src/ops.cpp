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

#include "oarsi/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace oarsi::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in output " +
                         shape_str(t.shape()));
    }
  }
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined() || t.rank() != rank) {
    throw ConfigError(std::string(op) + ": " + what + " must have rank " +
                      std::to_string(rank) + ", got " +
                      (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

struct ConvGeometry {
  std::int64_t n, cin, h, w;
  std::int64_t cout, cg, kh, kw;
  std::int64_t groups, cog, stride, pad;
  std::int64_t ho, wo;
  std::int64_t K() const { return cg * kh * kw; }
  std::int64_t P() const { return ho * wo; }
};

// Rows of `col` are (channel, ky, kx) of one group; columns are (sample, position).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::int64_t group, T* col) {
  const std::int64_t np = g.n * g.P();
  for (std::int64_t c = 0; c < g.cg; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * np;
        for (std::int64_t n = 0; n < g.n; ++n) {
          const T* plane = x + ((n * g.cin + group * g.cg + c) * g.h) * g.w;
          T* dst = row + n * g.P();
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy * g.stride - g.pad + ky;
            T* drow = dst + oy * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(drow, drow + g.wo, T{0});
              continue;
            }
            const T* srow = plane + iy * g.w;
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              const std::int64_t ix = ox * g.stride - g.pad + kx;
              drow[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : T{0};
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, std::int64_t group, T* dx) {
  const std::int64_t np = g.n * g.P();
  for (std::int64_t c = 0; c < g.cg; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * np;
        for (std::int64_t n = 0; n < g.n; ++n) {
          T* plane = dx + ((n * g.cin + group * g.cg + c) * g.h) * g.w;
          const T* src = row + n * g.P();
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            T* drow = plane + iy * g.w;
            const T* srow = src + oy * g.wo;
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              const std::int64_t ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, Conv2dOptions opt) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  if (opt.groups < 1 || opt.stride < 1 || opt.padding < 0) {
    throw ConfigError("conv2d: invalid stride/padding/groups " + std::to_string(opt.stride) +
                      "/" + std::to_string(opt.padding) + "/" + std::to_string(opt.groups));
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.cg = weight.dim(1);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.groups = opt.groups;
  g.stride = opt.stride;
  g.pad = opt.padding;
  if (g.cin % g.groups != 0 || g.cout % g.groups != 0) {
    throw ConfigError("conv2d: groups=" + std::to_string(g.groups) +
                      " must divide in_channels=" + std::to_string(g.cin) +
                      " and out_channels=" + std::to_string(g.cout));
  }
  if (g.cg != g.cin / g.groups) {
    throw ConfigError("conv2d: weight " + shape_str(weight.shape()) + " expects " +
                      std::to_string(g.cg * g.groups) + " input channels, input is " +
                      shape_str(input.shape()));
  }
  if (g.kh > g.h + 2 * g.pad || g.kw > g.w + 2 * g.pad) {
    throw ConfigError("conv2d: kernel " + shape_str(weight.shape()) +
                      " larger than padded input " + shape_str(input.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw ConfigError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                      std::to_string(g.cout) + " output channels");
  }
  g.cog = g.cout / g.groups;
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  Tensor<T> out(Shape{g.n, g.cout, g.ho, g.wo});
  const std::int64_t K = g.K(), P = g.P(), NP = g.n * P;
  std::vector<T> col(static_cast<std::size_t>(K * NP));
  RowMat<T> y(g.cog, NP);
  const T* x = input.data().data();
  T* o = out.data().data();
  for (std::int64_t grp = 0; grp < g.groups; ++grp) {
    im2col(x, g, grp, col.data());
    ConstMatMap<T> wmat(weight.data().data() + grp * g.cog * K, g.cog, K);
    ConstMatMap<T> cmat(col.data(), K, NP);
    y.noalias() = wmat * cmat;
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t oc = 0; oc < g.cog; ++oc) {
        const std::int64_t ch = grp * g.cog + oc;
        const T b = bias.defined() ? bias[static_cast<std::size_t>(ch)] : T{0};
        T* dst = o + (n * g.cout + ch) * P;
        const T* src = y.data() + oc * NP + n * P;
        for (std::int64_t p = 0; p < P; ++p) dst[p] = src[p] + b;
      }
    }
  }
  ensure_finite(out, "conv2d");

  if (tape.needs_grad(input, weight, bias)) {
    auto xs = input.storage();
    auto ws = weight.storage();
    auto bs = bias.defined() ? bias.storage() : nullptr;
    std::vector<typename Tape<T>::StoragePtr> inputs{xs, ws};
    if (bs) inputs.push_back(bs);
    tape.record("conv2d", std::move(inputs), out.storage(),
                [xs, ws, bs, g](std::span<const T> gout) {
                  const std::int64_t K = g.K(), P = g.P(), NP = g.n * P;
                  const bool need_x = xs->requires_grad;
                  const bool need_w = ws->requires_grad;
                  if (bs && bs->requires_grad) {
                    auto db = grad_buffer(bs);
                    for (std::int64_t n = 0; n < g.n; ++n)
                      for (std::int64_t ch = 0; ch < g.cout; ++ch) {
                        const T* src = gout.data() + (n * g.cout + ch) * P;
                        T acc{0};
                        for (std::int64_t p = 0; p < P; ++p) acc += src[p];
                        db[static_cast<std::size_t>(ch)] += acc;
                      }
                  }
                  if (!need_x && !need_w) return;
                  std::vector<T> col(static_cast<std::size_t>(K * NP));
                  RowMat<T> dy(g.cog, NP);
                  for (std::int64_t grp = 0; grp < g.groups; ++grp) {
                    for (std::int64_t n = 0; n < g.n; ++n)
                      for (std::int64_t oc = 0; oc < g.cog; ++oc) {
                        const T* src = gout.data() + (n * g.cout + grp * g.cog + oc) * P;
                        std::copy(src, src + P, dy.data() + oc * NP + n * P);
                      }
                    if (need_w) {
                      im2col(xs->data.data(), g, grp, col.data());
                      ConstMatMap<T> cmat(col.data(), K, NP);
                      MatMap<T> dw(grad_buffer(ws).data() + grp * g.cog * K, g.cog, K);
                      dw.noalias() += dy * cmat.transpose();
                    }
                    if (need_x) {
                      ConstMatMap<T> wmat(ws->data.data() + grp * g.cog * K, g.cog, K);
                      MatMap<T> cmat(col.data(), K, NP);
                      cmat.noalias() = wmat.transpose() * dy;
                      col2im_add(col.data(), g, grp, grad_buffer(xs).data());
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                       const Tensor<T>& beta, BatchNormState<T>& state, Mode mode) {
  require_rank(input, 4, "batch_norm2d", "input");
  const std::int64_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &state.running_mean, &state.running_var}) {
    if (!t->defined() || t->rank() != 1 || t->dim(0) != C) {
      throw ConfigError("batch_norm2d: per-channel tensors must be [" + std::to_string(C) +
                        "] for input " + shape_str(input.shape()));
    }
  }
  const std::int64_t M = N * HW;
  if (mode == Mode::kTrain && M < 2) {
    throw NumericError("batch_norm2d: degenerate variance, train mode needs N*H*W >= 2, got " +
                       shape_str(input.shape()));
  }

  Tensor<T> out(input.shape());
  auto xhat = std::make_shared<std::vector<T>>(input.numel());
  auto invstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
  const T* x = input.data().data();
  T* y = out.data().data();
  for (std::int64_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double s = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = x + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) s += p[i];
      }
      mean = s / static_cast<double>(M);
      double ss = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* p = x + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          const double d = p[i] - mean;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(M);
      const double m = state.momentum;
      auto& rm = state.running_mean[static_cast<std::size_t>(c)];
      auto& rv = state.running_var[static_cast<std::size_t>(c)];
      rm = static_cast<T>((1.0 - m) * rm + m * mean);
      rv = static_cast<T>((1.0 - m) * rv + m * var * static_cast<double>(M) / (M - 1));
    } else {
      mean = state.running_mean[static_cast<std::size_t>(c)];
      var = state.running_var[static_cast<std::size_t>(c)];
    }
    const double is = 1.0 / std::sqrt(var + static_cast<double>(state.eps));
    (*invstd)[static_cast<std::size_t>(c)] = static_cast<T>(is);
    const T gm = gamma[static_cast<std::size_t>(c)], bt = beta[static_cast<std::size_t>(c)];
    for (std::int64_t n = 0; n < N; ++n) {
      const std::int64_t off = (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        const T xh = static_cast<T>((x[off + i] - mean) * is);
        (*xhat)[static_cast<std::size_t>(off + i)] = xh;
        y[off + i] = gm * xh + bt;
      }
    }
  }
  ensure_finite(out, "batch_norm2d");

  if (tape.needs_grad(input, gamma, beta)) {
    auto xs = input.storage(), gs = gamma.storage(), bs = beta.storage();
    const bool train = mode == Mode::kTrain;
    tape.record("batch_norm2d", {xs, gs, bs}, out.storage(),
                [xs, gs, bs, xhat, invstd, N, C, HW, train](std::span<const T> gout) {
                  const double M = static_cast<double>(N * HW);
                  for (std::int64_t c = 0; c < C; ++c) {
                    double sum_dy = 0, sum_dy_xh = 0;
                    for (std::int64_t n = 0; n < N; ++n) {
                      const std::int64_t off = (n * C + c) * HW;
                      for (std::int64_t i = 0; i < HW; ++i) {
                        sum_dy += gout[static_cast<std::size_t>(off + i)];
                        sum_dy_xh += static_cast<double>(gout[static_cast<std::size_t>(off + i)]) *
                                     (*xhat)[static_cast<std::size_t>(off + i)];
                      }
                    }
                    const auto cc = static_cast<std::size_t>(c);
                    if (gs->requires_grad) grad_buffer(gs)[cc] += static_cast<T>(sum_dy_xh);
                    if (bs->requires_grad) grad_buffer(bs)[cc] += static_cast<T>(sum_dy);
                    if (!xs->requires_grad) continue;
                    auto dx = grad_buffer(xs);
                    const double gm = gs->data[cc];
                    const double is = (*invstd)[cc];
                    for (std::int64_t n = 0; n < N; ++n) {
                      const std::int64_t off = (n * C + c) * HW;
                      for (std::int64_t i = 0; i < HW; ++i) {
                        const auto k = static_cast<std::size_t>(off + i);
                        double d;
                        if (train) {
                          // dxhat = gout*gamma; sums factor out gamma.
                          d = gm * is / M *
                              (M * gout[k] - sum_dy - (*xhat)[k] * sum_dy_xh);
                        } else {
                          d = gm * is * gout[k];
                        }
                        dx[k] += static_cast<T>(d);
                      }
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto xi = x.data();
  auto yo = out.data();
  for (std::size_t i = 0; i < yo.size(); ++i) yo[i] = xi[i] > T{0} ? xi[i] : T{0};
  ensure_finite(out, "relu");
  if (tape.needs_grad(x)) {
    auto xs = x.storage();
    tape.record("relu", {xs}, out.storage(), [xs](std::span<const T> gout) {
      if (!xs->requires_grad) return;
      auto dx = grad_buffer(xs);
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (xs->data[i] > T{0}) dx[i] += gout[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto xi = x.data();
  auto yo = out.data();
  for (std::size_t i = 0; i < yo.size(); ++i) {
    const T v = xi[i];
    yo[i] = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  }
  ensure_finite(out, "sigmoid");
  if (tape.needs_grad(x)) {
    auto xs = x.storage();
    auto ys = out.storage();
    std::weak_ptr<TensorStorage<T>> yw = ys;
    tape.record("sigmoid", {xs}, ys, [xs, yw](std::span<const T> gout) {
      if (!xs->requires_grad) return;
      auto ys = yw.lock();
      auto dx = grad_buffer(xs);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const T s = ys->data[i];
        dx[i] += gout[i] * s * (T{1} - s);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto ad = a.data(), bd = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] + bd[i];
  ensure_finite(out, "add");
  if (tape.needs_grad(a, b)) {
    auto as = a.storage(), bs = b.storage();
    tape.record("add", {as, bs}, out.storage(), [as, bs](std::span<const T> gout) {
      for (const auto& s : {as, bs}) {
        if (!s->requires_grad) continue;
        auto d = grad_buffer(s);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gout[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto ad = a.data(), bd = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] * bd[i];
  ensure_finite(out, "mul");
  if (tape.needs_grad(a, b)) {
    auto as = a.storage(), bs = b.storage();
    tape.record("mul", {as, bs}, out.storage(), [as, bs](std::span<const T> gout) {
      if (as->requires_grad) {
        auto d = grad_buffer(as);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gout[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        auto d = grad_buffer(bs);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gout[i] * as->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto xi = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xi[i] * factor;
  ensure_finite(out, "scale");
  if (tape.needs_grad(x)) {
    auto xs = x.storage();
    tape.record("scale", {xs}, out.storage(), [xs, factor](std::span<const T> gout) {
      if (!xs->requires_grad) return;
      auto d = grad_buffer(xs);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gout[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_channels(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gate) {
  require_rank(x, 4, "mul_channels", "input");
  require_rank(gate, 2, "mul_channels", "gate");
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gate.dim(0) != N || gate.dim(1) != C) {
    throw ConfigError("mul_channels: gate " + shape_str(gate.shape()) + " does not match " +
                      shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  const T* xi = x.data().data();
  T* o = out.data().data();
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T gv = gate[static_cast<std::size_t>(nc)];
    for (std::int64_t i = 0; i < HW; ++i) o[nc * HW + i] = xi[nc * HW + i] * gv;
  }
  ensure_finite(out, "mul_channels");
  if (tape.needs_grad(x, gate)) {
    auto xs = x.storage(), gs = gate.storage();
    tape.record("mul_channels", {xs, gs}, out.storage(),
                [xs, gs, N, C, HW](std::span<const T> gout) {
                  for (std::int64_t nc = 0; nc < N * C; ++nc) {
                    const auto off = static_cast<std::size_t>(nc * HW);
                    if (xs->requires_grad) {
                      auto dx = grad_buffer(xs);
                      const T gv = gs->data[static_cast<std::size_t>(nc)];
                      for (std::int64_t i = 0; i < HW; ++i) dx[off + i] += gout[off + i] * gv;
                    }
                    if (gs->requires_grad) {
                      T acc{0};
                      for (std::int64_t i = 0; i < HW; ++i)
                        acc += gout[off + i] * xs->data[off + i];
                      grad_buffer(gs)[static_cast<std::size_t>(nc)] += acc;
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& x, int kernel, int stride) {
  require_rank(x, 4, "avg_pool2d", "input");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (kernel < 1 || stride < 1 || kernel > H || kernel > W) {
    throw ConfigError("avg_pool2d: kernel " + std::to_string(kernel) + " does not fit input " +
                      shape_str(x.shape()));
  }
  const std::int64_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  Tensor<T> out(Shape{N, C, Ho, Wo});
  const T inv = T{1} / static_cast<T>(kernel * kernel);
  const T* xi = x.data().data();
  T* o = out.data().data();
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xi + nc * H * W;
    for (std::int64_t oy = 0; oy < Ho; ++oy)
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        T acc{0};
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx)
            acc += plane[(oy * stride + ky) * W + ox * stride + kx];
        o[(nc * Ho + oy) * Wo + ox] = acc * inv;
      }
  }
  ensure_finite(out, "avg_pool2d");
  if (tape.needs_grad(x)) {
    auto xs = x.storage();
    tape.record("avg_pool2d", {xs}, out.storage(),
                [xs, N, C, H, W, Ho, Wo, kernel, stride, inv](std::span<const T> gout) {
                  if (!xs->requires_grad) return;
                  auto dx = grad_buffer(xs);
                  for (std::int64_t nc = 0; nc < N * C; ++nc)
                    for (std::int64_t oy = 0; oy < Ho; ++oy)
                      for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        const T gv = gout[static_cast<std::size_t>((nc * Ho + oy) * Wo + ox)] * inv;
                        for (int ky = 0; ky < kernel; ++ky)
                          for (int kx = 0; kx < kernel; ++kx)
                            dx[static_cast<std::size_t>(nc * H * W + (oy * stride + ky) * W +
                                                        ox * stride + kx)] += gv;
                      }
                });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{N, C});
  const T* xi = x.data().data();
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    T acc{0};
    for (std::int64_t i = 0; i < HW; ++i) acc += xi[nc * HW + i];
    out[static_cast<std::size_t>(nc)] = acc / static_cast<T>(HW);
  }
  ensure_finite(out, "global_avg_pool");
  if (tape.needs_grad(x)) {
    auto xs = x.storage();
    tape.record("global_avg_pool", {xs}, out.storage(), [xs, N, C, HW](std::span<const T> gout) {
      if (!xs->requires_grad) return;
      auto dx = grad_buffer(xs);
      for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const T gv = gout[static_cast<std::size_t>(nc)] / static_cast<T>(HW);
        for (std::int64_t i = 0; i < HW; ++i) dx[static_cast<std::size_t>(nc * HW + i)] += gv;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> spatial_softmax(Tape<T>& tape, const Tensor<T>& logits) {
  require_rank(logits, 4, "spatial_softmax", "input");
  if (logits.dim(1) != 1) {
    throw ConfigError("spatial_softmax: expects a single-channel map, got " +
                      shape_str(logits.shape()));
  }
  const std::int64_t N = logits.dim(0), HW = logits.dim(2) * logits.dim(3);
  Tensor<T> out(logits.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    const T* l = logits.data().data() + n * HW;
    T* o = out.data().data() + n * HW;
    const T mx = *std::max_element(l, l + HW);
    T z{0};
    for (std::int64_t i = 0; i < HW; ++i) z += (o[i] = std::exp(l[i] - mx));
    for (std::int64_t i = 0; i < HW; ++i) o[i] /= z;
  }
  ensure_finite(out, "spatial_softmax");
  if (tape.needs_grad(logits)) {
    auto ls = logits.storage();
    std::weak_ptr<TensorStorage<T>> yw = out.storage();
    tape.record("spatial_softmax", {ls}, out.storage(), [ls, yw, N, HW](std::span<const T> gout) {
      if (!ls->requires_grad) return;
      auto ys = yw.lock();
      auto dl = grad_buffer(ls);
      for (std::int64_t n = 0; n < N; ++n) {
        const auto off = static_cast<std::size_t>(n * HW);
        T dot{0};
        for (std::int64_t i = 0; i < HW; ++i) dot += gout[off + i] * ys->data[off + i];
        for (std::int64_t i = 0; i < HW; ++i)
          dl[off + i] += ys->data[off + i] * (gout[off + i] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_spatial_sum(Tape<T>& tape, const Tensor<T>& features,
                               const Tensor<T>& weights) {
  require_rank(features, 4, "weighted_spatial_sum", "features");
  require_rank(weights, 4, "weighted_spatial_sum", "weights");
  const std::int64_t N = features.dim(0), C = features.dim(1),
                     HW = features.dim(2) * features.dim(3);
  if (weights.dim(0) != N || weights.dim(1) != 1 || weights.dim(2) != features.dim(2) ||
      weights.dim(3) != features.dim(3)) {
    throw ConfigError("weighted_spatial_sum: weights " + shape_str(weights.shape()) +
                      " do not match features " + shape_str(features.shape()));
  }
  Tensor<T> out(Shape{N, C});
  for (std::int64_t n = 0; n < N; ++n) {
    const T* w = weights.data().data() + n * HW;
    for (std::int64_t c = 0; c < C; ++c) {
      const T* f = features.data().data() + (n * C + c) * HW;
      T acc{0};
      for (std::int64_t i = 0; i < HW; ++i) acc += w[i] * f[i];
      out[static_cast<std::size_t>(n * C + c)] = acc;
    }
  }
  ensure_finite(out, "weighted_spatial_sum");
  if (tape.needs_grad(features, weights)) {
    auto fs = features.storage(), ws = weights.storage();
    tape.record("weighted_spatial_sum", {fs, ws}, out.storage(),
                [fs, ws, N, C, HW](std::span<const T> gout) {
                  for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t c = 0; c < C; ++c) {
                      const T gv = gout[static_cast<std::size_t>(n * C + c)];
                      const auto foff = static_cast<std::size_t>((n * C + c) * HW);
                      const auto woff = static_cast<std::size_t>(n * HW);
                      if (fs->requires_grad) {
                        auto df = grad_buffer(fs);
                        for (std::int64_t i = 0; i < HW; ++i) df[foff + i] += gv * ws->data[woff + i];
                      }
                      if (ws->requires_grad) {
                        auto dw = grad_buffer(ws);
                        for (std::int64_t i = 0; i < HW; ++i) dw[woff + i] += gv * fs->data[foff + i];
                      }
                    }
                });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const std::int64_t N = input.dim(0), F = input.dim(1), O = weight.dim(0);
  if (weight.dim(1) != F) {
    throw ConfigError("linear: weight " + shape_str(weight.shape()) + " does not match input " +
                      shape_str(input.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O)) {
    throw ConfigError("linear: bias " + shape_str(bias.shape()) + " does not match " +
                      std::to_string(O) + " outputs");
  }
  Tensor<T> out(Shape{N, O});
  {
    ConstMatMap<T> x(input.data().data(), N, F);
    ConstMatMap<T> w(weight.data().data(), O, F);
    MatMap<T> y(out.data().data(), N, O);
    y.noalias() = x * w.transpose();
    if (bias.defined()) {
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < O; ++o) y(n, o) += bias[static_cast<std::size_t>(o)];
    }
  }
  ensure_finite(out, "linear");
  if (tape.needs_grad(input, weight, bias)) {
    auto xs = input.storage(), ws = weight.storage();
    auto bs = bias.defined() ? bias.storage() : nullptr;
    std::vector<typename Tape<T>::StoragePtr> inputs{xs, ws};
    if (bs) inputs.push_back(bs);
    tape.record("linear", std::move(inputs), out.storage(),
                [xs, ws, bs, N, F, O](std::span<const T> gout) {
                  ConstMatMap<T> dy(gout.data(), N, O);
                  if (xs->requires_grad) {
                    MatMap<T> dx(grad_buffer(xs).data(), N, F);
                    ConstMatMap<T> w(ws->data.data(), O, F);
                    dx.noalias() += dy * w;
                  }
                  if (ws->requires_grad) {
                    MatMap<T> dw(grad_buffer(ws).data(), O, F);
                    ConstMatMap<T> x(xs->data.data(), N, F);
                    dw.noalias() += dy.transpose() * x;
                  }
                  if (bs && bs->requires_grad) {
                    auto db = grad_buffer(bs);
                    for (std::int64_t n = 0; n < N; ++n)
                      for (std::int64_t o = 0; o < O; ++o) db[static_cast<std::size_t>(o)] += dy(n, o);
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double p, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: p must lie in [0,1), got " + std::to_string(p));
  }
  if (mode == Mode::kEval || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : *mask) m = u(tape.rng()) < p ? T{0} : keep_scale;
  Tensor<T> out(x.shape());
  auto xi = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xi[i] * (*mask)[i];
  if (tape.needs_grad(x)) {
    auto xs = x.storage();
    tape.record("dropout", {xs}, out.storage(), [xs, mask](std::span<const T> gout) {
      if (!xs->requires_grad) return;
      auto dx = grad_buffer(xs);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gout[i] * (*mask)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& logits) {
  require_rank(logits, 2, "softmax", "logits");
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    const T* l = logits.data().data() + n * K;
    T* o = out.data().data() + n * K;
    const T mx = *std::max_element(l, l + K);
    T z{0};
    for (std::int64_t k = 0; k < K; ++k) z += (o[k] = std::exp(l[k] - mx));
    for (std::int64_t k = 0; k < K; ++k) o[k] /= z;
  }
  ensure_finite(out, "softmax");
  if (tape.needs_grad(logits)) {
    auto ls = logits.storage();
    std::weak_ptr<TensorStorage<T>> yw = out.storage();
    tape.record("softmax", {ls}, out.storage(), [ls, yw, N, K](std::span<const T> gout) {
      if (!ls->requires_grad) return;
      auto ys = yw.lock();
      auto dl = grad_buffer(ls);
      for (std::int64_t n = 0; n < N; ++n) {
        const auto off = static_cast<std::size_t>(n * K);
        T dot{0};
        for (std::int64_t k = 0; k < K; ++k) dot += gout[off + k] * ys->data[off + k];
        for (std::int64_t k = 0; k < K; ++k) dl[off + k] += ys->data[off + k] * (gout[off + k] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> targets) {
  require_rank(logits, 2, "cross_entropy", "logits");
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != N) {
    throw DataError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                    std::to_string(N) + " rows");
  }
  for (std::int64_t n = 0; n < N; ++n) {
    const int t = targets[static_cast<std::size_t>(n)];
    if (t < 0 || t >= K) {
      throw DataError("cross_entropy: target " + std::to_string(t) + " at row " +
                      std::to_string(n) + " outside [0," + std::to_string(K) + ")");
    }
  }
  // Row-wise log-sum-exp keeps the loss finite for large logits.
  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  double total = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    const T* l = logits.data().data() + n * K;
    const T mx = *std::max_element(l, l + K);
    double z = 0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(l[k] - mx));
    const double lse = static_cast<double>(mx) + std::log(z);
    total += lse - static_cast<double>(l[targets[static_cast<std::size_t>(n)]]);
    for (std::int64_t k = 0; k < K; ++k)
      (*probs)[static_cast<std::size_t>(n * K + k)] =
          static_cast<T>(std::exp(static_cast<double>(l[k]) - lse));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(N)));
  ensure_finite(out, "cross_entropy");
  if (tape.needs_grad(logits)) {
    auto ls = logits.storage();
    std::vector<int> tg(targets.begin(), targets.end());
    tape.record("cross_entropy", {ls}, out.storage(),
                [ls, probs, tg = std::move(tg), N, K](std::span<const T> gout) {
                  if (!ls->requires_grad) return;
                  auto dl = grad_buffer(ls);
                  const T s = gout[0] / static_cast<T>(N);
                  for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t k = 0; k < K; ++k) {
                      const auto i = static_cast<std::size_t>(n * K + k);
                      const T onehot = (k == tg[static_cast<std::size_t>(n)]) ? T{1} : T{0};
                      dl[i] += s * ((*probs)[i] - onehot);
                    }
                });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  T acc{0};
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  ensure_finite(out, "sum");
  if (tape.needs_grad(x)) {
    auto xs = x.storage();
    tape.record("sum", {xs}, out.storage(), [xs](std::span<const T> gout) {
      if (!xs->requires_grad) return;
      auto dx = grad_buffer(xs);
      for (auto& d : dx) d += gout[0];
    });
  }
  return out;
}

template <typename T>
std::vector<double> softmax_rows(const Tensor<T>& logits) {
  require_rank(logits, 2, "softmax_rows", "logits");
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  std::vector<double> out(logits.numel());
  for (std::int64_t n = 0; n < N; ++n) {
    const T* l = logits.data().data() + n * K;
    const double mx = *std::max_element(l, l + K);
    double z = 0;
    for (std::int64_t k = 0; k < K; ++k) z += out[static_cast<std::size_t>(n * K + k)] = std::exp(l[k] - mx);
    for (std::int64_t k = 0; k < K; ++k) out[static_cast<std::size_t>(n * K + k)] /= z;
  }
  return out;
}

#define OARSI_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                            Conv2dOptions);                                                    \
  template Tensor<T> batch_norm2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                  const Tensor<T>&, BatchNormState<T>&, Mode);                 \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sigmoid(Tape<T>&, const Tensor<T>&);                                      \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                     \
  template Tensor<T> mul_channels(Tape<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> avg_pool2d(Tape<T>&, const Tensor<T>&, int, int);                         \
  template Tensor<T> global_avg_pool(Tape<T>&, const Tensor<T>&);                              \
  template Tensor<T> spatial_softmax(Tape<T>&, const Tensor<T>&);                              \
  template Tensor<T> weighted_spatial_sum(Tape<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> linear(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> dropout(Tape<T>&, const Tensor<T>&, double, Mode);                        \
  template Tensor<T> softmax(Tape<T>&, const Tensor<T>&);                                      \
  template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const int>);          \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                          \
  template std::vector<double> softmax_rows(const Tensor<T>&);

OARSI_INSTANTIATE_OPS(float)
OARSI_INSTANTIATE_OPS(double)

#undef OARSI_INSTANTIATE_OPS

}  // namespace oarsi::ops
