#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "lgdiff/core/autodiff.hpp"
#include "lgdiff/core/tensor.hpp"

namespace lgdiff {

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  check_same_shape("add", a->value, b->value);
  Tensor<S> out(a->value.shape());
  out.data() = a->value.data() + b->value.data();
  return make_node<S>(std::move(out), {a, b}, [](Node<S>& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], n.grad);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  check_same_shape("sub", a->value, b->value);
  Tensor<S> out(a->value.shape());
  out.data() = a->value.data() - b->value.data();
  return make_node<S>(std::move(out), {a, b}, [](Node<S>& n) {
    accumulate(n.parents[0], n.grad);
    accumulate_expr(n.parents[1], (-n.grad.data()).eval());
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  check_same_shape("mul", a->value, b->value);
  Tensor<S> out(a->value.shape());
  out.data() = a->value.data() * b->value.data();
  return make_node<S>(std::move(out), {a, b}, [](Node<S>& n) {
    accumulate_expr(n.parents[0], (n.grad.data() * n.parents[1]->value.data()).eval());
    accumulate_expr(n.parents[1], (n.grad.data() * n.parents[0]->value.data()).eval());
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S s) {
  Tensor<S> out(a->value.shape());
  out.data() = a->value.data() * s;
  return make_node<S>(std::move(out), {a}, [s](Node<S>& n) {
    accumulate_expr(n.parents[0], (n.grad.data() * s).eval());
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S s) {
  Tensor<S> out(a->value.shape());
  out.data() = a->value.data() + s;
  return make_node<S>(std::move(out), {a},
                      [](Node<S>& n) { accumulate(n.parents[0], n.grad); });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  return mul(a, a);
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Tensor<S> out(a->value.shape());
  out.data() = S(1) / (S(1) + (-a->value.data()).exp());
  Tensor<S> y = out;
  return make_node<S>(std::move(out), {a}, [y](Node<S>& n) {
    accumulate_expr(n.parents[0], (n.grad.data() * y.data() * (S(1) - y.data())).eval());
  });
}

template <typename S>
Var<S> tanh_op(const Var<S>& a) {
  Tensor<S> out(a->value.shape());
  out.data() = a->value.data().tanh();
  Tensor<S> y = out;
  return make_node<S>(std::move(out), {a}, [y](Node<S>& n) {
    accumulate_expr(n.parents[0], (n.grad.data() * (S(1) - y.data() * y.data())).eval());
  });
}

template <typename S>
Var<S> silu(const Var<S>& a) {
  Tensor<S> sig(a->value.shape());
  sig.data() = S(1) / (S(1) + (-a->value.data()).exp());
  Tensor<S> out(a->value.shape());
  out.data() = a->value.data() * sig.data();
  return make_node<S>(std::move(out), {a}, [sig](Node<S>& n) {
    const auto& x = n.parents[0]->value.data();
    accumulate_expr(n.parents[0],
                    (n.grad.data() * (sig.data() + x * sig.data() * (S(1) - sig.data()))).eval());
  });
}

template <typename S>
Var<S> relu(const Var<S>& a) {
  Tensor<S> out(a->value.shape());
  out.data() = a->value.data().max(S(0));
  return make_node<S>(std::move(out), {a}, [](Node<S>& n) {
    accumulate_expr(n.parents[0],
                    (n.grad.data() * (n.parents[0]->value.data() > S(0)).template cast<S>()).eval());
  });
}

// ---------------------------------------------------------------------------
// Matrix products and reductions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  a->value.require_rank(2, "matmul lhs");
  b->value.require_rank(2, "matmul rhs");
  const Index n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
  if (b->value.dim(0) != k)
    throw ContractViolation("matmul: inner dims " + shape_str(a->value.shape()) + " x " +
                            shape_str(b->value.shape()));
  Tensor<S> out({n, m});
  out.mat(n, m).noalias() = a->value.mat(n, k) * b->value.mat(k, m);
  return make_node<S>(std::move(out), {a, b}, [n, k, m](Node<S>& n_) {
    auto g = n_.grad.mat(n, m);
    const auto& pa = n_.parents[0];
    const auto& pb = n_.parents[1];
    if (pa->requires_grad) pa->ensure_grad().mat(n, k).noalias() += g * pb->value.mat(k, m).transpose();
    if (pb->requires_grad) pb->ensure_grad().mat(k, m).noalias() += pa->value.mat(n, k).transpose() * g;
  });
}

// y = x * W^T (+ b), x: [N,in], W: [out,in], b: [out]
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b = nullptr) {
  x->value.require_rank(2, "linear input");
  w->value.require_rank(2, "linear weight");
  const Index n = x->value.dim(0), in = x->value.dim(1), out_dim = w->value.dim(0);
  if (w->value.dim(1) != in)
    throw ContractViolation("linear: weight " + shape_str(w->value.shape()) + " vs input " +
                            shape_str(x->value.shape()));
  Tensor<S> out({n, out_dim});
  out.mat(n, out_dim).noalias() = x->value.mat(n, in) * w->value.mat(out_dim, in).transpose();
  if (b) {
    if (b->value.numel() != out_dim) throw ContractViolation("linear: bias size");
    out.mat(n, out_dim).rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(
        b->value.raw(), out_dim);
  }
  std::vector<Var<S>> parents = b ? std::vector<Var<S>>{x, w, b} : std::vector<Var<S>>{x, w};
  return make_node<S>(std::move(out), std::move(parents), [n, in, out_dim](Node<S>& nd) {
    auto g = nd.grad.mat(n, out_dim);
    const auto& px = nd.parents[0];
    const auto& pw = nd.parents[1];
    if (px->requires_grad)
      px->ensure_grad().mat(n, in).noalias() += g * pw->value.mat(out_dim, in);
    if (pw->requires_grad)
      pw->ensure_grad().mat(out_dim, in).noalias() += g.transpose() * px->value.mat(n, in);
    if (nd.parents.size() == 3 && nd.parents[2]->requires_grad) {
      auto gb = nd.parents[2]->ensure_grad().mat(1, out_dim);
      gb.noalias() += Eigen::Matrix<S, 1, Eigen::Dynamic>::Ones(n) * g;
    }
  });
}

template <typename S>
Var<S> transpose2d(const Var<S>& a) {
  a->value.require_rank(2, "transpose");
  const Index r = a->value.dim(0), c = a->value.dim(1);
  Tensor<S> out({c, r});
  out.mat(c, r) = a->value.mat(r, c).transpose();
  return make_node<S>(std::move(out), {a}, [r, c](Node<S>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad().mat(r, c) += n.grad.mat(c, r).transpose();
  });
}

template <typename S>
Var<S> sum_all(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::scalar(a->value.data().sum());
  return make_node<S>(std::move(out), {a}, [](Node<S>& n) {
    accumulate_expr(n.parents[0],
                    Tensor<S>::Storage::Constant(n.parents[0]->value.numel(), n.grad[0]));
  });
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
  const S inv = S(1) / static_cast<S>(a->value.numel());
  Tensor<S> out = Tensor<S>::scalar(a->value.data().sum() * inv);
  return make_node<S>(std::move(out), {a}, [inv](Node<S>& n) {
    accumulate_expr(n.parents[0],
                    Tensor<S>::Storage::Constant(n.parents[0]->value.numel(), n.grad[0] * inv));
  });
}

// Column-wise mean of [T,D] -> [D].
template <typename S>
Var<S> mean_rows(const Var<S>& x) {
  x->value.require_rank(2, "mean_rows");
  const Index t = x->value.dim(0), d = x->value.dim(1);
  Tensor<S> out({d});
  out.mat(1, d) = x->value.mat(t, d).colwise().mean();
  return make_node<S>(std::move(out), {x}, [t, d](Node<S>& n) {
    if (!n.parents[0]->requires_grad) return;
    const S inv = S(1) / static_cast<S>(t);
    n.parents[0]->ensure_grad().mat(t, d).rowwise() += n.grad.mat(1, d).row(0) * inv;
  });
}

// Row-wise mean of [N,M] -> [N].
template <typename S>
Var<S> mean_cols(const Var<S>& x) {
  x->value.require_rank(2, "mean_cols");
  const Index n = x->value.dim(0), m = x->value.dim(1);
  Tensor<S> out({n});
  out.mat(n, 1) = x->value.mat(n, m).rowwise().mean();
  return make_node<S>(std::move(out), {x}, [n, m](Node<S>& nd) {
    if (!nd.parents[0]->requires_grad) return;
    const S inv = S(1) / static_cast<S>(m);
    nd.parents[0]->ensure_grad().mat(n, m).colwise() += nd.grad.mat(n, 1).col(0) * inv;
  });
}

template <typename S>
Var<S> mse_loss(const Var<S>& a, const Var<S>& b) {
  return mean_all(square(sub(a, b)));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  Tensor<S> out = a->value.reshaped(std::move(shape));
  return make_node<S>(std::move(out), {a}, [](Node<S>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad().data() += n.grad.data();
  });
}

template <typename S>
Var<S> concat_axis(const std::vector<Var<S>>& xs, Index axis) {
  if (xs.empty()) throw ContractViolation("concat: empty input list");
  const Shape& s0 = xs[0]->value.shape();
  Shape out_shape = s0;
  Index axis_total = 0;
  for (const auto& x : xs) {
    const Shape& s = x->value.shape();
    if (static_cast<Index>(s.size()) != static_cast<Index>(s0.size()))
      throw ContractViolation("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<Index>(i) != axis && s[i] != s0[i])
        throw ContractViolation("concat: dim mismatch at axis " + std::to_string(i) + ": " +
                                shape_str(s) + " vs " + shape_str(s0));
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;

  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

  Tensor<S> out(out_shape);
  std::vector<Index> blocks;
  for (const auto& x : xs) blocks.push_back(x->value.dim(axis) * inner);
  const Index out_block = axis_total * inner;
  for (Index o = 0; o < outer; ++o) {
    Index off = o * out_block;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const S* src = xs[i]->value.raw() + o * blocks[i];
      std::copy(src, src + blocks[i], out.raw() + off);
      off += blocks[i];
    }
  }
  std::vector<Var<S>> parents(xs.begin(), xs.end());
  return make_node<S>(std::move(out), std::move(parents),
                      [outer, blocks, out_block](Node<S>& n) {
                        for (Index o = 0; o < outer; ++o) {
                          Index off = o * out_block;
                          for (std::size_t i = 0; i < n.parents.size(); ++i) {
                            const auto& p = n.parents[i];
                            if (p->requires_grad) {
                              S* dst = p->ensure_grad().raw() + o * blocks[i];
                              const S* src = n.grad.raw() + off;
                              for (Index j = 0; j < blocks[i]; ++j) dst[j] += src[j];
                            }
                            off += blocks[i];
                          }
                        }
                      });
}

template <typename S>
Var<S> slice_axis(const Var<S>& x, Index axis, Index start, Index len) {
  const Shape& s = x->value.shape();
  if (axis < 0 || axis >= static_cast<Index>(s.size()) || start < 0 || len <= 0 ||
      start + len > s[axis])
    throw ContractViolation("slice: bad range axis=" + std::to_string(axis) + " start=" +
                            std::to_string(start) + " len=" + std::to_string(len) + " of " +
                            shape_str(s));
  Shape out_shape = s;
  out_shape[axis] = len;
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const Index in_block = s[axis] * inner, out_block = len * inner, off0 = start * inner;

  Tensor<S> out(out_shape);
  for (Index o = 0; o < outer; ++o) {
    const S* src = x->value.raw() + o * in_block + off0;
    std::copy(src, src + out_block, out.raw() + o * out_block);
  }
  return make_node<S>(std::move(out), {x}, [outer, in_block, out_block, off0](Node<S>& n) {
    const auto& p = n.parents[0];
    if (!p->requires_grad) return;
    S* dst0 = p->ensure_grad().raw();
    for (Index o = 0; o < outer; ++o) {
      S* dst = dst0 + o * in_block + off0;
      const S* src = n.grad.raw() + o * out_block;
      for (Index j = 0; j < out_block; ++j) dst[j] += src[j];
    }
  });
}

// ---------------------------------------------------------------------------
// Broadcast helpers
// ---------------------------------------------------------------------------

// x: [N,D] plus row vector b: [D].
template <typename S>
Var<S> add_rows(const Var<S>& x, const Var<S>& b) {
  x->value.require_rank(2, "add_rows");
  const Index n = x->value.dim(0), d = x->value.dim(1);
  if (b->value.numel() != d) throw ContractViolation("add_rows: size mismatch");
  Tensor<S> out({n, d});
  out.mat(n, d) = x->value.mat(n, d);
  out.mat(n, d).rowwise() +=
      Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b->value.raw(), d);
  return make_node<S>(std::move(out), {x, b}, [n, d](Node<S>& nd) {
    accumulate(nd.parents[0], nd.grad);
    if (nd.parents[1]->requires_grad)
      nd.parents[1]->ensure_grad().mat(1, d).noalias() +=
          Eigen::Matrix<S, 1, Eigen::Dynamic>::Ones(n) * nd.grad.mat(n, d);
  });
}

// x: [C, rest...] plus per-channel bias v: [C], broadcast over trailing dims.
template <typename S>
Var<S> add_channel_bias(const Var<S>& x, const Var<S>& v) {
  const Index c = x->value.dim(0);
  if (v->value.numel() != c) throw ContractViolation("add_channel_bias: channel mismatch");
  const Index m = x->value.numel() / c;
  Tensor<S> out(x->value.shape());
  out.mat(c, m) = x->value.mat(c, m).colwise() +
                  Eigen::Map<const VecX<S>>(v->value.raw(), c);
  return make_node<S>(std::move(out), {x, v}, [c, m](Node<S>& n) {
    accumulate(n.parents[0], n.grad);
    if (n.parents[1]->requires_grad)
      n.parents[1]->ensure_grad().mat(c, 1).noalias() +=
          n.grad.mat(c, m) * VecX<S>::Ones(m);
  });
}

// x: [C,F,H,W] times spatial map m: [H,W], broadcast over C and F.
template <typename S>
Var<S> mul_spatial_map(const Var<S>& x, const Var<S>& m) {
  x->value.require_rank(4, "mul_spatial_map x");
  m->value.require_rank(2, "mul_spatial_map m");
  const Index c = x->value.dim(0), f = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  if (m->value.dim(0) != h || m->value.dim(1) != w)
    throw ContractViolation("mul_spatial_map: map " + shape_str(m->value.shape()) +
                            " vs input " + shape_str(x->value.shape()));
  const Index cf = c * f, hw = h * w;
  Tensor<S> out(x->value.shape());
  out.mat(cf, hw) = x->value.mat(cf, hw).array().rowwise() *
                    Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>>(m->value.raw(), hw);
  return make_node<S>(std::move(out), {x, m}, [cf, hw](Node<S>& n) {
    const auto& px = n.parents[0];
    const auto& pm = n.parents[1];
    auto g = n.grad.mat(cf, hw).array();
    if (px->requires_grad)
      px->ensure_grad().mat(cf, hw).array() +=
          g.rowwise() * Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>>(pm->value.raw(), hw);
    if (pm->requires_grad)
      pm->ensure_grad().mat(1, hw).noalias() +=
          Eigen::Matrix<S, 1, Eigen::Dynamic>::Ones(cf) *
          (g * px->value.mat(cf, hw).array()).matrix();
  });
}

// ---------------------------------------------------------------------------
// Softmax / normalization
// ---------------------------------------------------------------------------

template <typename S>
Var<S> softmax_rows(const Var<S>& x) {
  x->value.require_rank(2, "softmax_rows");
  const Index n = x->value.dim(0), d = x->value.dim(1);
  Tensor<S> out({n, d});
  for (Index i = 0; i < n; ++i) {
    auto row = x->value.mat(n, d).row(i).array();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (row - row.maxCoeff()).exp();
    out.mat(n, d).row(i) = (e / e.sum()).matrix();
  }
  Tensor<S> y = out;
  return make_node<S>(std::move(out), {x}, [n, d, y](Node<S>& nd) {
    if (!nd.parents[0]->requires_grad) return;
    auto gx = nd.parents[0]->ensure_grad().mat(n, d);
    for (Index i = 0; i < n; ++i) {
      auto yi = y.mat(n, d).row(i).array();
      auto gi = nd.grad.mat(n, d).row(i).array();
      const S dot = (gi * yi).sum();
      gx.row(i).array() += yi * (gi - dot);
    }
  });
}

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5)) {
  x->value.require_rank(2, "layer_norm");
  const Index n = x->value.dim(0), d = x->value.dim(1);
  if (gamma->value.numel() != d || beta->value.numel() != d)
    throw ContractViolation("layer_norm: affine size mismatch");
  Tensor<S> xhat({n, d});
  Tensor<S> inv_sigma({n});
  for (Index i = 0; i < n; ++i) {
    auto row = x->value.mat(n, d).row(i).array();
    const S mu = row.mean();
    const S var = (row - mu).square().mean();
    const S inv = S(1) / std::sqrt(var + eps);
    inv_sigma[i] = inv;
    xhat.mat(n, d).row(i) = ((row - mu) * inv).matrix();
  }
  Tensor<S> out({n, d});
  out.mat(n, d) = (xhat.mat(n, d).array().rowwise() *
                   Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>>(gamma->value.raw(), d))
                      .matrix();
  out.mat(n, d).rowwise() +=
      Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(beta->value.raw(), d);
  return make_node<S>(std::move(out), {x, gamma, beta}, [n, d, xhat, inv_sigma](Node<S>& nd) {
    auto g = nd.grad.mat(n, d).array();
    const auto& px = nd.parents[0];
    const auto& pg = nd.parents[1];
    const auto& pb = nd.parents[2];
    if (pg->requires_grad)
      pg->ensure_grad().mat(1, d).array() += (g * xhat.mat(n, d).array()).colwise().sum();
    if (pb->requires_grad) pb->ensure_grad().mat(1, d).array() += g.colwise().sum();
    if (px->requires_grad) {
      auto gx = px->ensure_grad().mat(n, d);
      auto gamma_row =
          Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>>(pg->value.raw(), d);
      for (Index i = 0; i < n; ++i) {
        Eigen::Array<S, 1, Eigen::Dynamic> h = g.row(i) * gamma_row;
        auto xh = xhat.mat(n, d).row(i).array();
        const S mh = h.mean();
        const S mhx = (h * xh).mean();
        gx.row(i).array() += inv_sigma[i] * (h - mh - xh * mhx);
      }
    }
  });
}

// x: [C, rest...]; groups must divide C. Normalizes each group of
// (C/groups * rest) elements per call (single sample).
template <typename S>
Var<S> group_norm(const Var<S>& x, Index groups, const Var<S>& gamma, const Var<S>& beta,
                  S eps = S(1e-5)) {
  const Index c = x->value.dim(0);
  if (c % groups != 0) throw ContractViolation("group_norm: groups must divide channels");
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw ContractViolation("group_norm: affine size mismatch");
  const Index m = x->value.numel() / c;
  const Index cg = c / groups;
  const Index gsize = cg * m;

  Tensor<S> xhat(x->value.shape());
  Tensor<S> inv_sigma({groups});
  for (Index g = 0; g < groups; ++g) {
    auto seg = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(
        x->value.raw() + g * gsize, gsize);
    const S mu = seg.mean();
    const S var = (seg - mu).square().mean();
    const S inv = S(1) / std::sqrt(var + eps);
    inv_sigma[g] = inv;
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>(xhat.raw() + g * gsize, gsize) =
        (seg - mu) * inv;
  }
  Tensor<S> out(x->value.shape());
  for (Index ch = 0; ch < c; ++ch) {
    auto xh = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(xhat.raw() + ch * m, m);
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>(out.raw() + ch * m, m) =
        xh * gamma->value[ch] + beta->value[ch];
  }
  return make_node<S>(
      std::move(out), {x, gamma, beta}, [c, m, cg, gsize, groups, xhat, inv_sigma](Node<S>& nd) {
        const auto& px = nd.parents[0];
        const auto& pg = nd.parents[1];
        const auto& pb = nd.parents[2];
        for (Index ch = 0; ch < c; ++ch) {
          auto gch = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(
              nd.grad.raw() + ch * m, m);
          auto xh = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(
              xhat.raw() + ch * m, m);
          if (pg->requires_grad) pg->ensure_grad()[ch] += (gch * xh).sum();
          if (pb->requires_grad) pb->ensure_grad()[ch] += gch.sum();
        }
        if (!px->requires_grad) return;
        for (Index g = 0; g < groups; ++g) {
          // h = grad * gamma (per channel within the group)
          Eigen::Array<S, Eigen::Dynamic, 1> h(gsize);
          for (Index j = 0; j < cg; ++j) {
            const Index ch = g * cg + j;
            h.segment(j * m, m) =
                Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(nd.grad.raw() + ch * m, m) *
                pg->value[ch];
          }
          auto xh = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(
              xhat.raw() + g * gsize, gsize);
          const S mh = h.mean();
          const S mhx = (h * xh).mean();
          Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>(
              px->ensure_grad().raw() + g * gsize, gsize) +=
              inv_sigma[g] * (h - mh - xh * mhx);
        }
      });
}

// ---------------------------------------------------------------------------
// Time-axis linear interpolation, align-corners. x: [T,C] -> [T_out,C]
// ---------------------------------------------------------------------------

template <typename S>
Var<S> interp_time(const Var<S>& x, Index t_out) {
  x->value.require_rank(2, "interp_time");
  const Index t_in = x->value.dim(0), c = x->value.dim(1);
  if (t_out <= 0) throw ContractViolation("interp_time: t_out must be positive");
  struct Tap {
    Index lo, hi;
    S w;  // weight on hi
  };
  std::vector<Tap> taps(static_cast<std::size_t>(t_out));
  for (Index i = 0; i < t_out; ++i) {
    if (t_in == 1 || t_out == 1) {
      const double pos = (t_out == 1) ? 0.0
                                      : static_cast<double>(i) * static_cast<double>(t_in - 1) /
                                            static_cast<double>(t_out - 1);
      const Index lo = static_cast<Index>(pos);
      taps[i] = {std::min(lo, t_in - 1), std::min(lo, t_in - 1), S(0)};
    } else {
      const double pos = static_cast<double>(i) * static_cast<double>(t_in - 1) /
                         static_cast<double>(t_out - 1);
      Index lo = static_cast<Index>(std::floor(pos));
      lo = std::min(lo, t_in - 2);
      taps[i] = {lo, lo + 1, static_cast<S>(pos - static_cast<double>(lo))};
    }
  }
  Tensor<S> out({t_out, c});
  for (Index i = 0; i < t_out; ++i) {
    const Tap& tp = taps[i];
    out.mat(t_out, c).row(i) = x->value.mat(t_in, c).row(tp.lo) * (S(1) - tp.w) +
                               x->value.mat(t_in, c).row(tp.hi) * tp.w;
  }
  return make_node<S>(std::move(out), {x}, [t_in, t_out, c, taps](Node<S>& n) {
    if (!n.parents[0]->requires_grad) return;
    auto gx = n.parents[0]->ensure_grad().mat(t_in, c);
    for (Index i = 0; i < t_out; ++i) {
      const Tap& tp = taps[i];
      gx.row(tp.lo) += n.grad.mat(t_out, c).row(i) * (S(1) - tp.w);
      if (tp.hi != tp.lo) gx.row(tp.hi) += n.grad.mat(t_out, c).row(i) * tp.w;
    }
  });
}

// ---------------------------------------------------------------------------
// Channel write: copies `face` and overwrites the listed channel columns with
// the columns of `patch`. face: [T,Cf], patch: [T,Cp], idx.size() == Cp.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> channel_write(const Var<S>& face, const Var<S>& patch, std::vector<Index> idx) {
  face->value.require_rank(2, "channel_write face");
  patch->value.require_rank(2, "channel_write patch");
  const Index t = face->value.dim(0), cf = face->value.dim(1), cp = patch->value.dim(1);
  if (patch->value.dim(0) != t) throw ContractViolation("channel_write: time mismatch");
  if (static_cast<Index>(idx.size()) != cp)
    throw ContractViolation("channel_write: index count vs patch width");
  for (Index j : idx)
    if (j < 0 || j >= cf) throw ContractViolation("channel_write: index out of range");
  Tensor<S> out = face->value;
  for (Index r = 0; r < t; ++r)
    for (Index j = 0; j < cp; ++j) out(r, idx[static_cast<std::size_t>(j)]) = patch->value(r, j);
  return make_node<S>(std::move(out), {face, patch}, [t, cf, cp, idx](Node<S>& n) {
    const auto& pf = n.parents[0];
    const auto& pp = n.parents[1];
    if (pf->requires_grad) {
      Tensor<S> g = n.grad;
      for (Index r = 0; r < t; ++r)
        for (Index j = 0; j < cp; ++j) g(r, idx[static_cast<std::size_t>(j)]) = S(0);
      accumulate(pf, g);
    }
    if (pp->requires_grad) {
      auto gp = pp->ensure_grad().mat(t, cp);
      for (Index r = 0; r < t; ++r)
        for (Index j = 0; j < cp; ++j) gp(r, j) += n.grad(r, idx[static_cast<std::size_t>(j)]);
    }
  });
}

}  // namespace lgdiff
