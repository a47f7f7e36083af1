#pragma once

// Dense building blocks with explicit forward/backward passes. Every layer
// caches what its backward pass needs during forward; gradients accumulate
// into Parameter::grad and are cleared by the owning model.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "iclhcg/error.hpp"
#include "iclhcg/rng.hpp"

namespace iclhcg::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
};

/// Owns parameters at stable addresses, in registration order.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    auto& p = storage_.emplace_back();
    p.name = std::move(name);
    p.value = Matrix<T>::Zero(rows, cols);
    p.grad = Matrix<T>::Zero(rows, cols);
    return p;
  }

  std::deque<Parameter<T>>& all() { return storage_; }
  const std::deque<Parameter<T>>& all() const { return storage_; }

  void zero_grad() {
    for (auto& p : storage_) p.grad.setZero();
  }

  std::size_t count() const {
    std::size_t total = 0;
    for (const auto& p : storage_) total += static_cast<std::size_t>(p.value.size());
    return total;
  }

 private:
  std::deque<Parameter<T>> storage_;
};

template <typename T>
void init_normal(Matrix<T>& m, double stddev, CounterRng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
void init_uniform(Matrix<T>& m, double bound, CounterRng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  }
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T softplus(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;  // in x out
  Parameter<T>* bias = nullptr;    // 1 x out, optional

  void create(ParameterSet<T>& params, const std::string& name, Eigen::Index in, Eigen::Index out,
              bool with_bias = true) {
    weight = &params.add(name + ".weight", in, out);
    if (with_bias) bias = &params.add(name + ".bias", 1, out);
  }

  void forward(const Matrix<T>& x, Matrix<T>& y) const {
    y.noalias() = x * weight->value;
    if (bias) y.rowwise() += bias->value.row(0);
  }

  /// Accumulates parameter gradients; writes dx unless it is null.
  void backward(const Matrix<T>& x, const Matrix<T>& dy, Matrix<T>* dx) const {
    weight->grad.noalias() += x.transpose() * dy;
    if (bias) bias->grad.row(0) += dy.colwise().sum();
    if (dx) dx->noalias() = dy * weight->value.transpose();
  }
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* shift = nullptr;
  T eps = T(1e-5);

  Matrix<T> xhat;
  std::vector<T> rstd;

  void create(ParameterSet<T>& params, const std::string& name, Eigen::Index dim) {
    gain = &params.add(name + ".gain", 1, dim);
    gain->value.setOnes();
    shift = &params.add(name + ".shift", 1, dim);
  }

  void forward(const Matrix<T>& x, Matrix<T>& y) {
    const auto rows = x.rows();
    const auto d = x.cols();
    xhat.resize(rows, d);
    rstd.resize(static_cast<std::size_t>(rows));
    y.resize(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const T mean = x.row(r).mean();
      const T var = (x.row(r).array() - mean).square().mean();
      const T s = T(1) / std::sqrt(var + eps);
      rstd[static_cast<std::size_t>(r)] = s;
      xhat.row(r) = (x.row(r).array() - mean) * s;
    }
    y.array() = (xhat.array().rowwise() * gain->value.row(0).array()).rowwise() + shift->value.row(0).array();
  }

  void backward(const Matrix<T>& dy, Matrix<T>& dx) const {
    const auto rows = dy.rows();
    const auto d = dy.cols();
    gain->grad.row(0) += (dy.array() * xhat.array()).matrix().colwise().sum();
    shift->grad.row(0) += dy.colwise().sum();
    dx.resize(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const RowVector<T> dxhat = (dy.row(r).array() * gain->value.row(0).array()).matrix();
      const T mean_dxhat = dxhat.mean();
      const T mean_dxhat_xhat = (dxhat.array() * xhat.row(r).array()).mean();
      dx.row(r) = ((dxhat.array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat) *
                   rstd[static_cast<std::size_t>(r)])
                      .matrix();
    }
  }
};

/// tanh-approximated GELU, elementwise.
template <typename T>
struct Gelu {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;

  static Matrix<T> inner_tanh(const Matrix<T>& x) {
    const auto v = x.array();
    return (T(kC) * (v + T(kA) * v.cube())).tanh().matrix();
  }

  static void forward(const Matrix<T>& x, Matrix<T>& y) {
    const Matrix<T> t = inner_tanh(x);
    y = (T(0.5) * x.array() * (T(1) + t.array())).matrix();
  }

  static void backward(const Matrix<T>& x, const Matrix<T>& dy, Matrix<T>& dx) {
    const Matrix<T> t = inner_tanh(x);
    const auto v = x.array();
    const auto ta = t.array();
    const auto du = T(kC) * (T(1) + T(3 * kA) * v.square());
    dx = (dy.array() * (T(0.5) * (T(1) + ta) + T(0.5) * v * (T(1) - ta.square()) * du)).matrix();
  }
};

template <typename T>
struct Silu {
  static void forward(const Matrix<T>& x, Matrix<T>& y) {
    y = x.unaryExpr([](T v) { return v * sigmoid(v); });
  }

  static T derivative(T v) {
    const T s = sigmoid(v);
    return s * (T(1) + v * (T(1) - s));
  }
};

/// Token-id lookup table.
template <typename T>
struct Embedding {
  Parameter<T>* table = nullptr;  // vocab x dim

  void create(ParameterSet<T>& params, const std::string& name, Eigen::Index vocab, Eigen::Index dim) {
    table = &params.add(name, vocab, dim);
  }

  void forward(const std::vector<std::int32_t>& ids, Matrix<T>& y) const {
    y.resize(static_cast<Eigen::Index>(ids.size()), table->value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }

  void backward(const std::vector<std::int32_t>& ids, const Matrix<T>& dy) const {
    for (std::size_t i = 0; i < ids.size(); ++i) table->grad.row(ids[i]) += dy.row(static_cast<Eigen::Index>(i));
  }
};

/// Reorders rows between batch-major (b*T + t) and time-major (t*B + b).
template <typename T>
void to_time_major(const Matrix<T>& in, Eigen::Index batch, Eigen::Index length, Matrix<T>& out) {
  out.resize(in.rows(), in.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index t = 0; t < length; ++t) out.row(t * batch + b) = in.row(b * length + t);
  }
}

template <typename T>
void to_batch_major(const Matrix<T>& in, Eigen::Index batch, Eigen::Index length, Matrix<T>& out) {
  out.resize(in.rows(), in.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index t = 0; t < length; ++t) out.row(b * length + t) = in.row(t * batch + b);
  }
}

}  // namespace iclhcg::nn
