#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lgdiff/core/conv.hpp"
#include "lgdiff/core/ops.hpp"
#include "lgdiff/core/rng.hpp"

namespace lgdiff {

// Named trainable leaves. Models register parameters here; the optimizer and
// checkpoint code iterate the registry.
template <typename S>
class ParamStore {
 public:
  Var<S> add(const std::string& name, Tensor<S> init) {
    for (const auto& [n, v] : items_)
      if (n == name) throw ContractViolation("duplicate parameter name: " + name);
    Var<S> p = leaf_param(std::move(init), name);
    items_.emplace_back(name, p);
    return p;
  }

  const std::vector<std::pair<std::string, Var<S>>>& items() const { return items_; }

  void zero_grad() {
    for (auto& [n, v] : items_) v->zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t c = 0;
    for (const auto& [n, v] : items_) c += static_cast<std::size_t>(v->value.numel());
    return c;
  }

  double grad_norm(const std::string& prefix = "") const {
    double s = 0;
    for (const auto& [n, v] : items_) {
      if (!prefix.empty() && n.rfind(prefix, 0) != 0) continue;
      if (v->has_grad()) s += static_cast<double>(v->grad.data().square().sum());
    }
    return std::sqrt(s);
  }

  std::map<std::string, Tensor<S>> state_dict() const {
    std::map<std::string, Tensor<S>> out;
    for (const auto& [n, v] : items_) out.emplace(n, v->value);
    return out;
  }

  void load_state_dict(const std::map<std::string, Tensor<S>>& sd) {
    for (auto& [n, v] : items_) {
      auto it = sd.find(n);
      if (it == sd.end()) throw ValidationError("checkpoint missing tensor: " + n);
      if (!same_shape(it->second.shape(), v->value.shape()))
        throw ValidationError("checkpoint tensor " + n + " has shape " +
                              shape_str(it->second.shape()) + ", expected " +
                              shape_str(v->value.shape()));
      v->value = it->second;
    }
  }

 private:
  std::vector<std::pair<std::string, Var<S>>> items_;
};

// ------------------------------- init --------------------------------------

template <typename S>
Tensor<S> xavier_uniform(Rng& rng, Shape shape, Index fan_in, Index fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng.uniform_tensor<S>(std::move(shape), -limit, limit);
}

// ------------------------------- layers ------------------------------------

template <typename S>
struct Linear {
  Var<S> w, b;

  Linear() = default;
  Linear(ParamStore<S>& ps, const std::string& prefix, Index in, Index out, Rng& rng,
         bool bias = true) {
    w = ps.add(prefix + ".w", xavier_uniform<S>(rng, {out, in}, in, out));
    if (bias) b = ps.add(prefix + ".b", Tensor<S>::zeros({out}));
  }

  Var<S> operator()(const Var<S>& x) const { return linear(x, w, b); }
};

template <typename S>
struct LayerNormLayer {
  Var<S> gamma, beta;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore<S>& ps, const std::string& prefix, Index dim) {
    gamma = ps.add(prefix + ".gamma", Tensor<S>::ones({dim}));
    beta = ps.add(prefix + ".beta", Tensor<S>::zeros({dim}));
  }

  Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename S>
struct Conv1dLayer {
  Var<S> w, b;
  Index k = 1, stride = 1, pad = 0;

  Conv1dLayer() = default;
  Conv1dLayer(ParamStore<S>& ps, const std::string& prefix, Index c_in, Index c_out, Index k_,
              Index stride_, Index pad_, Rng& rng)
      : k(k_), stride(stride_), pad(pad_) {
    w = ps.add(prefix + ".w", xavier_uniform<S>(rng, {c_out, k * c_in}, k * c_in, c_out));
    b = ps.add(prefix + ".b", Tensor<S>::zeros({c_out}));
  }

  Var<S> operator()(const Var<S>& x) const { return conv1d(x, w, b, k, stride, pad); }
};

template <typename S>
struct Conv2dLayer {
  Var<S> w, b;
  Index kh = 1, kw = 1, stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<S>& ps, const std::string& prefix, Index c_in, Index c_out, Index k,
              Index stride_, Index pad_, Rng& rng)
      : kh(k), kw(k), stride(stride_), pad(pad_) {
    const Index fan = c_in * k * k;
    w = ps.add(prefix + ".w", xavier_uniform<S>(rng, {c_out, fan}, fan, c_out));
    b = ps.add(prefix + ".b", Tensor<S>::zeros({c_out}));
  }

  Var<S> operator()(const Var<S>& x) const { return conv2d(x, w, b, kh, kw, stride, pad); }
};

template <typename S>
struct Conv3dLayer {
  Var<S> w, b;
  Index kf = 1, kh = 1, kw = 1, stride = 1, pad_f = 0, pad_s = 0;

  Conv3dLayer() = default;
  Conv3dLayer(ParamStore<S>& ps, const std::string& prefix, Index c_in, Index c_out, Index k,
              Index stride_, Rng& rng, Index k_temporal = -1)
      : kf(k_temporal < 0 ? k : k_temporal), kh(k), kw(k), stride(stride_) {
    pad_f = (kf - 1) / 2;
    pad_s = (kh - 1) / 2;
    const Index fan = c_in * kf * kh * kw;
    w = ps.add(prefix + ".w", xavier_uniform<S>(rng, {c_out, fan}, fan, c_out));
    b = ps.add(prefix + ".b", Tensor<S>::zeros({c_out}));
  }

  Var<S> operator()(const Var<S>& x) const {
    return conv3d(x, w, b, kf, kh, kw, stride, pad_f, pad_s);
  }
};

template <typename S>
struct GroupNormLayer {
  Var<S> gamma, beta;
  Index groups = 1;

  GroupNormLayer() = default;
  GroupNormLayer(ParamStore<S>& ps, const std::string& prefix, Index groups_, Index channels) {
    groups = (channels % groups_ == 0) ? groups_ : 1;
    gamma = ps.add(prefix + ".gamma", Tensor<S>::ones({channels}));
    beta = ps.add(prefix + ".beta", Tensor<S>::zeros({channels}));
  }

  Var<S> operator()(const Var<S>& x) const { return group_norm(x, groups, gamma, beta); }
};

// LSTM over a [T, in] sequence, returning the hidden sequence [T, hidden].
// Gate layout in the stacked weights: input, forget, cell, output.
template <typename S>
struct Lstm {
  Linear<S> ih;  // carries the (single) bias
  Var<S> hh;     // [4H, H] recurrent weight, no bias
  Index hidden = 0;

  Lstm() = default;
  Lstm(ParamStore<S>& ps, const std::string& prefix, Index in, Index hidden_, Rng& rng)
      : hidden(hidden_) {
    ih = Linear<S>(ps, prefix + ".ih", in, 4 * hidden, rng);
    hh = ps.add(prefix + ".hh", xavier_uniform<S>(rng, {4 * hidden, hidden}, hidden, hidden));
    // forget-gate bias starts at 1
    for (Index i = hidden; i < 2 * hidden; ++i) ih.b->value[i] = S(1);
  }

  Var<S> operator()(const Var<S>& x) const {
    const Index t_len = x->value.dim(0);
    Var<S> h = constant(Tensor<S>::zeros({1, hidden}));
    Var<S> c = constant(Tensor<S>::zeros({1, hidden}));
    std::vector<Var<S>> hs;
    hs.reserve(static_cast<std::size_t>(t_len));
    for (Index t = 0; t < t_len; ++t) {
      Var<S> xt = slice_axis(x, 0, t, 1);
      Var<S> gates = add(ih(xt), linear(h, hh));
      Var<S> i_g = sigmoid(slice_axis(gates, 1, 0, hidden));
      Var<S> f_g = sigmoid(slice_axis(gates, 1, hidden, hidden));
      Var<S> g_g = tanh_op(slice_axis(gates, 1, 2 * hidden, hidden));
      Var<S> o_g = sigmoid(slice_axis(gates, 1, 3 * hidden, hidden));
      c = add(mul(f_g, c), mul(i_g, g_g));
      h = mul(o_g, tanh_op(c));
      hs.push_back(h);
    }
    return concat_axis(hs, 0);
  }
};

// Scaled dot-product multi-head attention. q_in: [Tq, d], kv_in: [Tk, d].
template <typename S>
struct MultiheadAttention {
  Linear<S> wq, wk, wv, wo;
  Index heads = 1, d_model = 0;

  MultiheadAttention() = default;
  MultiheadAttention(ParamStore<S>& ps, const std::string& prefix, Index d, Index heads_,
                     Rng& rng)
      : heads(heads_), d_model(d) {
    if (d % heads_ != 0) throw ContractViolation("attention: heads must divide d_model");
    wq = Linear<S>(ps, prefix + ".wq", d, d, rng);
    wk = Linear<S>(ps, prefix + ".wk", d, d, rng);
    wv = Linear<S>(ps, prefix + ".wv", d, d, rng);
    wo = Linear<S>(ps, prefix + ".wo", d, d, rng);
  }

  Var<S> operator()(const Var<S>& q_in, const Var<S>& kv_in) const {
    const Index dh = d_model / heads;
    Var<S> q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
    const S inv_sqrt = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
    std::vector<Var<S>> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    for (Index h = 0; h < heads; ++h) {
      Var<S> qh = slice_axis(q, 1, h * dh, dh);
      Var<S> kh = slice_axis(k, 1, h * dh, dh);
      Var<S> vh = slice_axis(v, 1, h * dh, dh);
      Var<S> scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt);
      head_outs.push_back(matmul(softmax_rows(scores), vh));
    }
    return wo(concat_axis(head_outs, 1));
  }
};

// Pre-norm transformer encoder layer.
template <typename S>
struct TransformerEncoderLayer {
  MultiheadAttention<S> mha;
  LayerNormLayer<S> ln1, ln2;
  Linear<S> ff1, ff2;

  TransformerEncoderLayer() = default;
  TransformerEncoderLayer(ParamStore<S>& ps, const std::string& prefix, Index d, Index heads,
                          Rng& rng) {
    mha = MultiheadAttention<S>(ps, prefix + ".mha", d, heads, rng);
    ln1 = LayerNormLayer<S>(ps, prefix + ".ln1", d);
    ln2 = LayerNormLayer<S>(ps, prefix + ".ln2", d);
    ff1 = Linear<S>(ps, prefix + ".ff1", d, 4 * d, rng);
    ff2 = Linear<S>(ps, prefix + ".ff2", 4 * d, d, rng);
  }

  Var<S> operator()(const Var<S>& x) const {
    Var<S> h = ln1(x);
    Var<S> y = add(x, mha(h, h));
    return add(y, ff2(silu(ff1(ln2(y)))));
  }
};

template <typename S>
struct TransformerEncoder {
  std::vector<TransformerEncoderLayer<S>> layers;
  LayerNormLayer<S> ln_out;

  TransformerEncoder() = default;
  TransformerEncoder(ParamStore<S>& ps, const std::string& prefix, Index d, Index heads,
                     Index n_layers, Rng& rng) {
    for (Index i = 0; i < n_layers; ++i)
      layers.emplace_back(ps, prefix + ".layer" + std::to_string(i), d, heads, rng);
    ln_out = LayerNormLayer<S>(ps, prefix + ".ln_out", d);
  }

  Var<S> operator()(Var<S> x) const {
    for (const auto& l : layers) x = l(x);
    return ln_out(x);
  }
};

// Decoder stack over a target sequence with a learned memory bank feeding the
// cross-attention (no encoder supplies the memory).
template <typename S>
struct QueryMemoryDecoderLayer {
  MultiheadAttention<S> self_mha, cross_mha;
  LayerNormLayer<S> ln1, ln2, ln3;
  Linear<S> ff1, ff2;

  QueryMemoryDecoderLayer() = default;
  QueryMemoryDecoderLayer(ParamStore<S>& ps, const std::string& prefix, Index d, Index heads,
                          Rng& rng) {
    self_mha = MultiheadAttention<S>(ps, prefix + ".self", d, heads, rng);
    cross_mha = MultiheadAttention<S>(ps, prefix + ".cross", d, heads, rng);
    ln1 = LayerNormLayer<S>(ps, prefix + ".ln1", d);
    ln2 = LayerNormLayer<S>(ps, prefix + ".ln2", d);
    ln3 = LayerNormLayer<S>(ps, prefix + ".ln3", d);
    ff1 = Linear<S>(ps, prefix + ".ff1", d, 4 * d, rng);
    ff2 = Linear<S>(ps, prefix + ".ff2", 4 * d, d, rng);
  }

  Var<S> operator()(const Var<S>& x, const Var<S>& memory) const {
    Var<S> h = ln1(x);
    Var<S> y = add(x, self_mha(h, h));
    y = add(y, cross_mha(ln2(y), memory));
    return add(y, ff2(silu(ff1(ln3(y)))));
  }
};

template <typename S>
struct QueryMemoryDecoder {
  Var<S> memory;  // [slots, d] learned queries
  std::vector<QueryMemoryDecoderLayer<S>> layers;
  LayerNormLayer<S> ln_out;

  QueryMemoryDecoder() = default;
  QueryMemoryDecoder(ParamStore<S>& ps, const std::string& prefix, Index d, Index heads,
                     Index n_layers, Index slots, Rng& rng) {
    memory = ps.add(prefix + ".memory", rng.normal_tensor<S>({slots, d}, 0.02));
    for (Index i = 0; i < n_layers; ++i)
      layers.emplace_back(ps, prefix + ".layer" + std::to_string(i), d, heads, rng);
    ln_out = LayerNormLayer<S>(ps, prefix + ".ln_out", d);
  }

  Var<S> operator()(Var<S> x) const {
    for (const auto& l : layers) x = l(x, memory);
    return ln_out(x);
  }
};

// ---------------------------------------------------------------------------

// Fixed sinusoidal embedding of a nonnegative scalar position.
template <typename S>
Tensor<S> sinusoidal_embedding(double pos, Index dim) {
  Tensor<S> out({1, dim});
  const Index half = dim / 2;
  for (Index i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = static_cast<S>(std::sin(pos * freq));
    out[half + i] = static_cast<S>(std::cos(pos * freq));
  }
  if (dim % 2 == 1) out[dim - 1] = S(0);
  return out;
}

// Sinusoidal position table added to sequence features, [T, d].
template <typename S>
Tensor<S> positional_table(Index t_len, Index dim) {
  Tensor<S> out({t_len, dim});
  for (Index t = 0; t < t_len; ++t) {
    Tensor<S> row = sinusoidal_embedding<S>(static_cast<double>(t), dim);
    std::copy(row.raw(), row.raw() + dim, out.raw() + t * dim);
  }
  return out;
}

}  // namespace lgdiff
