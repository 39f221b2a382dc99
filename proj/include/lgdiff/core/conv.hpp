#pragma once

#include <algorithm>
#include <vector>

#include "lgdiff/core/autodiff.hpp"
#include "lgdiff/core/ops.hpp"

namespace lgdiff {

inline Index conv_out_len(Index in, Index k, Index stride, Index pad) {
  const Index n = in + 2 * pad - k;
  if (n < 0) throw ContractViolation("conv: kernel larger than padded input");
  return n / stride + 1;
}

// --------------------------- 1-D convolution -------------------------------
// x: [T, Cin] (time-major), w: [Cout, k*Cin] with taps ordered (tap, channel),
// b: [Cout] or null. Output [T_out, Cout].

template <typename S>
void im2col_1d(const Tensor<S>& x, Index k, Index stride, Index pad, Tensor<S>& patches) {
  const Index t_in = x.dim(0), c = x.dim(1);
  const Index t_out = conv_out_len(t_in, k, stride, pad);
  patches = Tensor<S>({t_out, k * c});
  for (Index t = 0; t < t_out; ++t) {
    S* row = patches.raw() + t * k * c;
    for (Index j = 0; j < k; ++j) {
      const Index src = t * stride - pad + j;
      if (src >= 0 && src < t_in)
        std::copy(x.raw() + src * c, x.raw() + (src + 1) * c, row + j * c);
      else
        std::fill(row + j * c, row + (j + 1) * c, S(0));
    }
  }
}

template <typename S>
Var<S> conv1d(const Var<S>& x, const Var<S>& w, const Var<S>& b, Index k, Index stride,
              Index pad) {
  x->value.require_rank(2, "conv1d input");
  const Index t_in = x->value.dim(0), c_in = x->value.dim(1);
  const Index c_out = w->value.dim(0);
  if (w->value.dim(1) != k * c_in)
    throw ContractViolation("conv1d: weight shape " + shape_str(w->value.shape()) +
                            " vs k*Cin=" + std::to_string(k * c_in));
  const Index t_out = conv_out_len(t_in, k, stride, pad);

  Tensor<S> patches;
  im2col_1d(x->value, k, stride, pad, patches);
  Tensor<S> out({t_out, c_out});
  out.mat(t_out, c_out).noalias() =
      patches.mat(t_out, k * c_in) * w->value.mat(c_out, k * c_in).transpose();
  if (b) {
    if (b->value.numel() != c_out) throw ContractViolation("conv1d: bias size");
    out.mat(t_out, c_out).rowwise() +=
        Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b->value.raw(), c_out);
  }
  std::vector<Var<S>> parents = b ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
  return make_node<S>(
      std::move(out), std::move(parents),
      [patches, t_in, c_in, c_out, t_out, k, stride, pad](Node<S>& n) {
        auto g = n.grad.mat(t_out, c_out);
        const auto& px = n.parents[0];
        const auto& pw = n.parents[1];
        if (pw->requires_grad)
          pw->ensure_grad().mat(c_out, k * c_in).noalias() +=
              g.transpose() * patches.mat(t_out, k * c_in);
        if (n.parents.size() == 3 && n.parents[2]->requires_grad)
          n.parents[2]->ensure_grad().mat(1, c_out).noalias() +=
              Eigen::Matrix<S, 1, Eigen::Dynamic>::Ones(t_out) * g;
        if (px->requires_grad) {
          MatRM<S> dpatches = g * pw->value.mat(c_out, k * c_in);  // [t_out, k*Cin]
          auto gx = px->ensure_grad().mat(t_in, c_in);
          for (Index t = 0; t < t_out; ++t)
            for (Index j = 0; j < k; ++j) {
              const Index src = t * stride - pad + j;
              if (src >= 0 && src < t_in)
                gx.row(src) += dpatches.row(t).segment(j * c_in, c_in);
            }
        }
      });
}

// --------------------------- 2-D convolution -------------------------------
// x: [Cin, H, W], w: [Cout, Cin*kh*kw] ordered (channel, dh, dw), b: [Cout].
// Output [Cout, H_out, W_out].

template <typename S>
void im2col_2d(const Tensor<S>& x, Index kh, Index kw, Index stride, Index pad,
               Tensor<S>& patches) {
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index ho = conv_out_len(h, kh, stride, pad), wo = conv_out_len(w, kw, stride, pad);
  patches = Tensor<S>({ho * wo, c * kh * kw});
  for (Index oi = 0; oi < ho; ++oi)
    for (Index oj = 0; oj < wo; ++oj) {
      S* row = patches.raw() + (oi * wo + oj) * c * kh * kw;
      for (Index ch = 0; ch < c; ++ch)
        for (Index di = 0; di < kh; ++di) {
          const Index si = oi * stride - pad + di;
          for (Index dj = 0; dj < kw; ++dj) {
            const Index sj = oj * stride - pad + dj;
            row[(ch * kh + di) * kw + dj] =
                (si >= 0 && si < h && sj >= 0 && sj < w) ? x(ch, si, sj) : S(0);
          }
        }
    }
}

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, Index kh, Index kw,
              Index stride, Index pad) {
  x->value.require_rank(3, "conv2d input");
  const Index c_in = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
  const Index c_out = w->value.dim(0);
  if (w->value.dim(1) != c_in * kh * kw) throw ContractViolation("conv2d: weight shape");
  const Index ho = conv_out_len(h, kh, stride, pad), wo = conv_out_len(wd, kw, stride, pad);

  Tensor<S> patches;
  im2col_2d(x->value, kh, kw, stride, pad, patches);
  Tensor<S> out({c_out, ho, wo});
  out.mat(c_out, ho * wo).noalias() =
      w->value.mat(c_out, c_in * kh * kw) * patches.mat(ho * wo, c_in * kh * kw).transpose();
  if (b) {
    if (b->value.numel() != c_out) throw ContractViolation("conv2d: bias size");
    out.mat(c_out, ho * wo).colwise() += Eigen::Map<const VecX<S>>(b->value.raw(), c_out);
  }
  std::vector<Var<S>> parents = b ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
  return make_node<S>(
      std::move(out), std::move(parents),
      [patches, c_in, h, wd, c_out, ho, wo, kh, kw, stride, pad](Node<S>& n) {
        const Index kcols = c_in * kh * kw;
        auto g = n.grad.mat(c_out, ho * wo);
        const auto& px = n.parents[0];
        const auto& pw = n.parents[1];
        if (pw->requires_grad)
          pw->ensure_grad().mat(c_out, kcols).noalias() += g * patches.mat(ho * wo, kcols);
        if (n.parents.size() == 3 && n.parents[2]->requires_grad)
          n.parents[2]->ensure_grad().mat(c_out, 1).noalias() += g * VecX<S>::Ones(ho * wo);
        if (px->requires_grad) {
          MatRM<S> dpatches = g.transpose() * pw->value.mat(c_out, kcols);  // [ho*wo, kcols]
          auto& gx = px->ensure_grad();
          for (Index oi = 0; oi < ho; ++oi)
            for (Index oj = 0; oj < wo; ++oj) {
              const S* row = dpatches.data() + (oi * wo + oj) * kcols;
              for (Index ch = 0; ch < c_in; ++ch)
                for (Index di = 0; di < kh; ++di) {
                  const Index si = oi * stride - pad + di;
                  if (si < 0 || si >= h) continue;
                  for (Index dj = 0; dj < kw; ++dj) {
                    const Index sj = oj * stride - pad + dj;
                    if (sj >= 0 && sj < wd) gx(ch, si, sj) += row[(ch * kh + di) * kw + dj];
                  }
                }
            }
        }
      });
}

// --------------------------- 3-D convolution -------------------------------
// x: [Cin, F, H, W], w: [Cout, Cin*kf*kh*kw] ordered (channel, df, dh, dw).
// Temporal stride is always 1; spatial stride `stride`. Output
// [Cout, F_out, H_out, W_out]. im2col is done one output frame at a time to
// bound memory; the backward pass rebuilds each slab.

struct Conv3dDims {
  Index c_in, f, h, w, c_out, kf, kh, kw, stride, pad_f, pad_s, fo, ho, wo;
};

template <typename S>
void im2col_3d_frame(const Tensor<S>& x, const Conv3dDims& d, Index of, Tensor<S>& patches) {
  patches = Tensor<S>({d.ho * d.wo, d.c_in * d.kf * d.kh * d.kw});
  for (Index oi = 0; oi < d.ho; ++oi)
    for (Index oj = 0; oj < d.wo; ++oj) {
      S* row = patches.raw() + (oi * d.wo + oj) * d.c_in * d.kf * d.kh * d.kw;
      Index col = 0;
      for (Index ch = 0; ch < d.c_in; ++ch)
        for (Index df = 0; df < d.kf; ++df) {
          const Index sf = of - d.pad_f + df;
          for (Index di = 0; di < d.kh; ++di) {
            const Index si = oi * d.stride - d.pad_s + di;
            for (Index dj = 0; dj < d.kw; ++dj, ++col) {
              const Index sj = oj * d.stride - d.pad_s + dj;
              row[col] = (sf >= 0 && sf < d.f && si >= 0 && si < d.h && sj >= 0 && sj < d.w)
                             ? x(ch, sf, si, sj)
                             : S(0);
            }
          }
        }
    }
}

template <typename S>
Var<S> conv3d(const Var<S>& x, const Var<S>& w, const Var<S>& b, Index kf, Index kh, Index kw,
              Index stride, Index pad_f, Index pad_s) {
  x->value.require_rank(4, "conv3d input");
  Conv3dDims d;
  d.c_in = x->value.dim(0);
  d.f = x->value.dim(1);
  d.h = x->value.dim(2);
  d.w = x->value.dim(3);
  d.c_out = w->value.dim(0);
  d.kf = kf;
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad_f = pad_f;
  d.pad_s = pad_s;
  if (w->value.dim(1) != d.c_in * kf * kh * kw) throw ContractViolation("conv3d: weight shape");
  d.fo = conv_out_len(d.f, kf, 1, pad_f);
  d.ho = conv_out_len(d.h, kh, stride, pad_s);
  d.wo = conv_out_len(d.w, kw, stride, pad_s);

  const Index kcols = d.c_in * kf * kh * kw;
  Tensor<S> out({d.c_out, d.fo, d.ho, d.wo});
  Tensor<S> patches;
  for (Index of = 0; of < d.fo; ++of) {
    im2col_3d_frame(x->value, d, of, patches);
    // slab view: out[:, of, :, :] has row stride fo*ho*wo
    MatRM<S> slab = w->value.mat(d.c_out, kcols) * patches.mat(d.ho * d.wo, kcols).transpose();
    for (Index ch = 0; ch < d.c_out; ++ch) {
      S* dst = out.raw() + ((ch * d.fo) + of) * d.ho * d.wo;
      Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(dst, d.ho * d.wo) = slab.row(ch);
    }
  }
  if (b) {
    if (b->value.numel() != d.c_out) throw ContractViolation("conv3d: bias size");
    const Index m = d.fo * d.ho * d.wo;
    out.mat(d.c_out, m).colwise() += Eigen::Map<const VecX<S>>(b->value.raw(), d.c_out);
  }
  std::vector<Var<S>> parents = b ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
  return make_node<S>(std::move(out), std::move(parents), [d, kcols](Node<S>& n) {
    const auto& px = n.parents[0];
    const auto& pw = n.parents[1];
    const Index m = d.fo * d.ho * d.wo;
    if (n.parents.size() == 3 && n.parents[2]->requires_grad)
      n.parents[2]->ensure_grad().mat(d.c_out, 1).noalias() +=
          n.grad.mat(d.c_out, m) * VecX<S>::Ones(m);
    if (!px->requires_grad && !pw->requires_grad) return;
    Tensor<S> patches;
    MatRM<S> gslab(d.c_out, d.ho * d.wo);
    for (Index of = 0; of < d.fo; ++of) {
      for (Index ch = 0; ch < d.c_out; ++ch) {
        const S* src = n.grad.raw() + ((ch * d.fo) + of) * d.ho * d.wo;
        gslab.row(ch) = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(src, d.ho * d.wo);
      }
      if (pw->requires_grad) {
        im2col_3d_frame(px->value, d, of, patches);
        pw->ensure_grad().mat(d.c_out, kcols).noalias() +=
            gslab * patches.mat(d.ho * d.wo, kcols);
      }
      if (px->requires_grad) {
        MatRM<S> dpatches = gslab.transpose() * pw->value.mat(d.c_out, kcols);
        auto& gx = px->ensure_grad();
        for (Index oi = 0; oi < d.ho; ++oi)
          for (Index oj = 0; oj < d.wo; ++oj) {
            const S* row = dpatches.data() + (oi * d.wo + oj) * kcols;
            Index col = 0;
            for (Index ch = 0; ch < d.c_in; ++ch)
              for (Index df = 0; df < d.kf; ++df) {
                const Index sf = of - d.pad_f + df;
                if (sf < 0 || sf >= d.f) {
                  col += d.kh * d.kw;
                  continue;
                }
                for (Index di = 0; di < d.kh; ++di) {
                  const Index si = oi * d.stride - d.pad_s + di;
                  if (si < 0 || si >= d.h) {
                    col += d.kw;
                    continue;
                  }
                  for (Index dj = 0; dj < d.kw; ++dj, ++col) {
                    const Index sj = oj * d.stride - d.pad_s + dj;
                    if (sj >= 0 && sj < d.w) gx(ch, sf, si, sj) += row[col];
                  }
                }
              }
          }
      }
    }
  });
}

// ----------------------- Upsample / pooling --------------------------------

// Nearest-neighbor 2x upsampling on the two trailing spatial dims of
// x: [C, F, H, W] -> [C, F, 2H, 2W].
template <typename S>
Var<S> upsample2x_hw(const Var<S>& x) {
  x->value.require_rank(4, "upsample2x_hw");
  const Index c = x->value.dim(0), f = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  Tensor<S> out({c, f, 2 * h, 2 * w});
  for (Index a = 0; a < c * f; ++a) {
    const S* src = x->value.raw() + a * h * w;
    S* dst = out.raw() + a * 4 * h * w;
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        const S v = src[i * w + j];
        S* p = dst + (2 * i) * 2 * w + 2 * j;
        p[0] = v;
        p[1] = v;
        p[2 * w] = v;
        p[2 * w + 1] = v;
      }
  }
  return make_node<S>(std::move(out), {x}, [c, f, h, w](Node<S>& n) {
    if (!n.parents[0]->requires_grad) return;
    auto& gx = n.parents[0]->ensure_grad();
    for (Index a = 0; a < c * f; ++a) {
      S* dst = gx.raw() + a * h * w;
      const S* src = n.grad.raw() + a * 4 * h * w;
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) {
          const S* p = src + (2 * i) * 2 * w + 2 * j;
          dst[i * w + j] += p[0] + p[1] + p[2 * w] + p[2 * w + 1];
        }
    }
  });
}

// Adaptive average pooling of a rank-2 map [H,W] -> [ho,wo]. Regions follow
// floor/ceil split so cells tile the input exactly.
template <typename S>
Var<S> adaptive_avgpool2d(const Var<S>& x, Index ho, Index wo) {
  x->value.require_rank(2, "adaptive_avgpool2d");
  const Index h = x->value.dim(0), w = x->value.dim(1);
  if (ho <= 0 || wo <= 0 || ho > h || wo > w)
    throw ContractViolation("adaptive_avgpool2d: bad output size");
  auto lo = [](Index i, Index in, Index out) { return (i * in) / out; };
  auto hi = [](Index i, Index in, Index out) { return ((i + 1) * in + out - 1) / out; };
  Tensor<S> out({ho, wo});
  for (Index i = 0; i < ho; ++i)
    for (Index j = 0; j < wo; ++j) {
      const Index r0 = lo(i, h, ho), r1 = hi(i, h, ho);
      const Index c0 = lo(j, w, wo), c1 = hi(j, w, wo);
      out(i, j) = x->value.mat(h, w).block(r0, c0, r1 - r0, c1 - c0).mean();
    }
  return make_node<S>(std::move(out), {x}, [h, w, ho, wo, lo, hi](Node<S>& n) {
    if (!n.parents[0]->requires_grad) return;
    auto gx = n.parents[0]->ensure_grad().mat(h, w);
    for (Index i = 0; i < ho; ++i)
      for (Index j = 0; j < wo; ++j) {
        const Index r0 = lo(i, h, ho), r1 = hi(i, h, ho);
        const Index c0 = lo(j, w, wo), c1 = hi(j, w, wo);
        const S cnt = static_cast<S>((r1 - r0) * (c1 - c0));
        gx.block(r0, c0, r1 - r0, c1 - c0).array() += n.grad(i, j) / cnt;
      }
  });
}

}  // namespace lgdiff
