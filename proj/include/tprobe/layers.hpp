#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "tprobe/rng.hpp"
#include "tprobe/tensor.hpp"

namespace tprobe {

// ---------------------------------------------------------------------------
// Dense

/// y = xW + b for x [N×din], W [din×dout], b [dout].
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Parameter<T>& w, const Parameter<T>& b) {
  require(w.value.rank() == 2 && x.cols() == w.value.rows(),
          "dense: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  require(b.size() == w.value.cols(), "dense: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
  Tensor<T> y = matmul(x, w.value);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b.value[j];
  return y;
}

/// Accumulates dW = xᵀdy and db = colsum(dy); returns dx = dy Wᵀ.
template <typename T>
Tensor<T> dense_backward(const Tensor<T>& x, Parameter<T>& w, Parameter<T>& b, const Tensor<T>& dy) {
  require(dy.rows() == x.rows() && dy.cols() == w.value.cols(), "dense backward: gradient shape");
  add_inplace(w.grad, matmul_tn(x, dy));
  for (std::size_t j = 0; j < dy.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < dy.rows(); ++i) s += dy(i, j);
    b.grad[j] += static_cast<T>(s);
  }
  return matmul_nt(dy, w.value);
}

/// Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)).
template <typename T>
Tensor<T> glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> w(fan_in, fan_out);
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
  return w;
}

template <typename T>
struct Dense {
  Parameter<T> weight;
  Parameter<T> bias;

  Dense() = default;
  Dense(const std::string& name, std::size_t din, std::size_t dout, Rng& rng)
      : weight(name + ".weight", glorot_uniform<T>(din, dout, rng)),
        bias(name + ".bias", Tensor<T>(Shape{dout})) {}

  Tensor<T> forward(const Tensor<T>& x) const { return dense_forward(x, weight, bias); }
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) { return dense_backward(x, weight, bias, dy); }
  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> relu_forward(Tensor<T> x) {
  for (auto& v : x.values()) v = v > T{0} ? v : T{0};
  return x;
}

/// dx given the relu *output* y.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y[i] > T{0})) dy[i] = T{0};
  return dy;
}

template <typename T>
Tensor<T> sigmoid_forward(Tensor<T> x) {
  for (auto& v : x.values()) {
    const double z = v;
    v = static_cast<T>(z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)));
  }
  return x;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, Tensor<T> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= y[i] * (T{1} - y[i]);
  return dy;
}

/// Inverted dropout. The mask holds the per-element multiplier (0 or
/// 1/(1-rate)); an empty mask means identity (eval mode or rate 0).
template <typename T>
struct DropoutMask {
  Tensor<T> scale;
  bool identity() const { return scale.empty(); }
};

template <typename T>
Tensor<T> dropout_forward(Tensor<T> x, double rate, bool train, Rng* rng, DropoutMask<T>& mask) {
  mask.scale = Tensor<T>();
  if (!train || rate <= 0.0) return x;
  require(rng != nullptr, "dropout in train mode needs a generator");
  mask.scale = Tensor<T>(x.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask.scale[i] = keep(*rng) ? keep_scale : T{0};
    x[i] *= mask.scale[i];
  }
  return x;
}

template <typename T>
Tensor<T> dropout_backward(const DropoutMask<T>& mask, Tensor<T> dy) {
  if (mask.identity()) return dy;
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= mask.scale[i];
  return dy;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension

template <typename T>
struct LayerNorm {
  Parameter<T> gain;
  Parameter<T> shift;
  double eps = 1e-6;

  struct Cache {
    Tensor<T> normalized;
    std::vector<double> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim)
      : gain(name + ".gain", Tensor<T>(Shape{dim}, T{1})), shift(name + ".shift", Tensor<T>(Shape{dim})) {}

  Tensor<T> forward(const Tensor<T>& x, Cache& cache) const {
    require(x.cols() == gain.size(), "layer norm: width " + std::to_string(x.cols()));
    const std::size_t n = x.rows(), d = x.cols();
    Tensor<T> y(x.shape());
    cache.normalized = Tensor<T>(x.shape());
    cache.inv_std.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + eps);
      cache.inv_std[i] = inv;
      for (std::size_t j = 0; j < d; ++j) {
        const double xh = (x(i, j) - mean) * inv;
        cache.normalized(i, j) = static_cast<T>(xh);
        y(i, j) = static_cast<T>(xh * gain.value[j] + shift.value[j]);
      }
    }
    return y;
  }

  Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
    const std::size_t n = dy.rows(), d = dy.cols();
    Tensor<T> dx(dy.shape());
    std::vector<double> dxh(d);
    for (std::size_t i = 0; i < n; ++i) {
      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double g = dy(i, j);
        const double xh = cache.normalized(i, j);
        gain.grad[j] += static_cast<T>(g * xh);
        shift.grad[j] += static_cast<T>(g);
        dxh[j] = g * gain.value[j];
        mean_dxh += dxh[j];
        mean_dxh_xh += dxh[j] * xh;
      }
      mean_dxh /= static_cast<double>(d);
      mean_dxh_xh /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j)
        dx(i, j) = static_cast<T>(cache.inv_std[i] * (dxh[j] - mean_dxh - cache.normalized(i, j) * mean_dxh_xh));
    }
    return dx;
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&gain);
    out.push_back(&shift);
  }
};

// ---------------------------------------------------------------------------
// Softmax

/// Row-wise softmax with max subtraction, in place.
template <typename T>
void softmax_rows(Tensor<T>& s) {
  for (std::size_t i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (auto v : row) mx = std::max<double>(mx, v);
    double sum = 0.0;
    for (auto& v : row) {
      const double e = std::exp(static_cast<double>(v) - mx);
      v = static_cast<T>(e);
      sum += e;
    }
    for (auto& v : row) v = static_cast<T>(v / sum);
  }
}

// ---------------------------------------------------------------------------
// Multi-head self-attention

/// Q = xWq, K = xWk, V = xWv split into `heads` column groups; per head
/// A = softmax(QKᵀ/sqrt(d_head)); out = concat(A·V)·Wo. No biases.
template <typename T>
struct SelfAttention {
  Parameter<T> wq, wk, wv, wo;
  std::size_t heads = 1;

  struct Cache {
    Tensor<T> input;
    Tensor<T> q, k, v;
    std::vector<Tensor<T>> attention;  // one N×N matrix per head
    Tensor<T> context;                 // concat of A·V, N×d_att
  };

  SelfAttention() = default;
  SelfAttention(const std::string& name, std::size_t dim, std::size_t attention_dim, std::size_t n_heads, Rng& rng)
      : heads(n_heads) {
    if (n_heads == 0 || attention_dim % n_heads != 0)
      throw ShapeError("attention dim " + std::to_string(attention_dim) + " not divisible by heads " +
                       std::to_string(n_heads));
    wq = Parameter<T>(name + ".wq", glorot_uniform<T>(dim, attention_dim, rng));
    wk = Parameter<T>(name + ".wk", glorot_uniform<T>(dim, attention_dim, rng));
    wv = Parameter<T>(name + ".wv", glorot_uniform<T>(dim, attention_dim, rng));
    wo = Parameter<T>(name + ".wo", glorot_uniform<T>(attention_dim, dim, rng));
  }

  std::size_t attention_dim() const { return wq.value.cols(); }
  std::size_t head_dim() const { return attention_dim() / heads; }

  Tensor<T> forward(const Tensor<T>& x, Cache& cache) const {
    require(x.cols() == wq.value.rows(), "attention: input width " + std::to_string(x.cols()) + " expected " +
                                             std::to_string(wq.value.rows()));
    const std::size_t n = x.rows(), dh = head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    cache.input = x;
    cache.q = matmul(x, wq.value);
    cache.k = matmul(x, wk.value);
    cache.v = matmul(x, wv.value);
    cache.attention.assign(heads, Tensor<T>());
    cache.context = Tensor<T>(n, attention_dim());
    for (std::size_t h = 0; h < heads; ++h) {
      const auto qh = slice_cols(cache.q, h * dh, dh);
      const auto kh = slice_cols(cache.k, h * dh, dh);
      const auto vh = slice_cols(cache.v, h * dh, dh);
      Tensor<T> s = matmul_nt(qh, kh);
      for (auto& e : s.values()) e = static_cast<T>(e * scale);
      softmax_rows(s);
      add_into_cols(cache.context, matmul(s, vh), h * dh);
      cache.attention[h] = std::move(s);
    }
    return matmul(cache.context, wo.value);
  }

  Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
    const std::size_t n = cache.input.rows(), dh = head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    add_inplace(wo.grad, matmul_tn(cache.context, dy));
    const Tensor<T> dcontext = matmul_nt(dy, wo.value);
    Tensor<T> dq(n, attention_dim()), dk(n, attention_dim()), dv(n, attention_dim());
    for (std::size_t h = 0; h < heads; ++h) {
      const auto& a = cache.attention[h];
      const auto qh = slice_cols(cache.q, h * dh, dh);
      const auto kh = slice_cols(cache.k, h * dh, dh);
      const auto vh = slice_cols(cache.v, h * dh, dh);
      const auto dctx = slice_cols(dcontext, h * dh, dh);
      Tensor<T> da = matmul_nt(dctx, vh);
      add_into_cols(dv, matmul_tn(a, dctx), h * dh);
      // softmax jacobian, row by row
      Tensor<T> ds(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(da(i, j)) * a(i, j);
        for (std::size_t j = 0; j < n; ++j) ds(i, j) = static_cast<T>(a(i, j) * (da(i, j) - dot) * scale);
      }
      add_into_cols(dq, matmul(ds, kh), h * dh);
      add_into_cols(dk, matmul_tn(ds, qh), h * dh);
    }
    add_inplace(wq.grad, matmul_tn(cache.input, dq));
    add_inplace(wk.grad, matmul_tn(cache.input, dk));
    add_inplace(wv.grad, matmul_tn(cache.input, dv));
    Tensor<T> dx = matmul_nt(dq, wq.value);
    add_inplace(dx, matmul_nt(dk, wk.value));
    add_inplace(dx, matmul_nt(dv, wv.value));
    return dx;
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&wq);
    out.push_back(&wk);
    out.push_back(&wv);
    out.push_back(&wo);
  }
};

// ---------------------------------------------------------------------------
// Positional encoding

/// Sinusoidal absolute encoding: PE[pos,2i] = sin(pos/f^(2i/d)),
/// PE[pos,2i+1] = cos(pos/f^(2i/d)).
template <typename T = float>
Tensor<T> positional_encoding(std::size_t n, std::size_t d, double frequency = 10000.0) {
  if (d % 2 != 0) throw ShapeError("positional encoding needs an even width, got " + std::to_string(d));
  Tensor<T> pe(n, d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(frequency, static_cast<double>(i) / static_cast<double>(d));
      pe(pos, i) = static_cast<T>(std::sin(angle));
      pe(pos, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

}  // namespace tprobe
