#pragma once

// Stacked LSTM and GRU language models: token embedding, recurrent layers,
// linear readout. Internals run time-major (row t*B + b) so each step reads a
// contiguous B-row block.

#include <cmath>
#include <string>
#include <vector>

#include "iclhcg/nn/model.hpp"
#include "iclhcg/nn/tensor.hpp"

namespace iclhcg::nn {

namespace detail {

// h_prev for every step: row block t holds h_{t-1}, block 0 is zero.
template <typename T>
void shifted_states(const Matrix<T>& h, Eigen::Index B, Matrix<T>& out) {
  out.resize(h.rows(), h.cols());
  out.topRows(B).setZero();
  out.bottomRows(h.rows() - B) = h.topRows(h.rows() - B);
}

}  // namespace detail

template <typename T>
class Lstm final : public SequenceModel<T> {
 public:
  explicit Lstm(ModelConfig config) : SequenceModel<T>(std::move(config)) {
    const auto& c = this->config_;
    auto& p = this->params_;
    const Eigen::Index d = c.hidden;
    emb_.create(p, "tok_emb", c.vocab, d);
    layers_.resize(static_cast<std::size_t>(c.layers));
    for (int l = 0; l < c.layers; ++l) {
      auto& L = layers_[static_cast<std::size_t>(l)];
      const std::string prefix = "layers." + std::to_string(l) + ".";
      L.input.create(p, prefix + "input", d, 4 * d);
      L.recurrent.create(p, prefix + "recurrent", d, 4 * d, false);
    }
    head_.create(p, "head", d, c.vocab);

    CounterRng rng(c.init_seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    init_normal(emb_.table->value, 1.0, rng);
    for (auto& L : layers_) {
      init_uniform(L.input.weight->value, bound, rng);
      init_uniform(L.recurrent.weight->value, bound, rng);
      init_uniform(L.input.bias->value, bound, rng);
      // Gate order i, f, g, o; start with the forget gate open.
      L.input.bias->value.middleCols(d, d).array() += T(1);
    }
    init_uniform(head_.weight->value, bound, rng);
  }

 protected:
  void run_forward(const TokenBatch& batch) override {
    B_ = batch.batch;
    T_ = batch.length;
    ids_ = batch.ids;
    const Eigen::Index d = this->config_.hidden;
    Matrix<T> emb;
    emb_.forward(ids_, emb);
    to_time_major(emb, B_, T_, x0_);

    const Matrix<T>* x = &x0_;
    for (auto& L : layers_) {
      L.x = *x;
      L.input.forward(L.x, L.gates);  // pre-activations, overwritten below
      L.h.resize(B_ * T_, d);
      L.c.resize(B_ * T_, d);
      Matrix<T> h_prev = Matrix<T>::Zero(B_, d);
      Matrix<T> c_prev = Matrix<T>::Zero(B_, d);
      Matrix<T> pre(B_, 4 * d);
      for (Eigen::Index t = 0; t < T_; ++t) {
        pre = L.gates.middleRows(t * B_, B_);
        pre.noalias() += h_prev * L.recurrent.weight->value;
        auto act = L.gates.middleRows(t * B_, B_);
        act.leftCols(2 * d) = pre.leftCols(2 * d).unaryExpr([](T v) { return sigmoid(v); });
        act.middleCols(2 * d, d) = pre.middleCols(2 * d, d).array().tanh().matrix();
        act.rightCols(d) = pre.rightCols(d).unaryExpr([](T v) { return sigmoid(v); });
        auto c = L.c.middleRows(t * B_, B_);
        c.array() = act.middleCols(d, d).array() * c_prev.array() +
                    act.leftCols(d).array() * act.middleCols(2 * d, d).array();
        auto h = L.h.middleRows(t * B_, B_);
        h.array() = act.rightCols(d).array() * c.array().tanh();
        h_prev = h;
        c_prev = c;
      }
      x = &L.h;
    }
    to_batch_major(*x, B_, T_, top_);
    head_.forward(top_, this->logits_);
  }

  void run_backward(const Matrix<T>& dlogits) override {
    const Eigen::Index d = this->config_.hidden;
    Matrix<T> dtop, dh_all;
    head_.backward(top_, dlogits, &dtop);
    to_time_major(dtop, B_, T_, dh_all);

    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      auto& L = *it;
      Matrix<T> dpre(B_ * T_, 4 * d);
      Matrix<T> dh_next = Matrix<T>::Zero(B_, d);
      Matrix<T> dc_next = Matrix<T>::Zero(B_, d);
      for (Eigen::Index t = T_ - 1; t >= 0; --t) {
        const auto act = L.gates.middleRows(t * B_, B_);
        const auto i = act.leftCols(d).array();
        const auto f = act.middleCols(d, d).array();
        const auto g = act.middleCols(2 * d, d).array();
        const auto o = act.rightCols(d).array();
        const auto c = L.c.middleRows(t * B_, B_).array();
        const Matrix<T> c_prev =
            t > 0 ? Matrix<T>(L.c.middleRows((t - 1) * B_, B_)) : Matrix<T>(Matrix<T>::Zero(B_, d));
        const Matrix<T> dh = dh_all.middleRows(t * B_, B_) + dh_next;
        const Matrix<T> tanh_c = c.tanh().matrix();
        Matrix<T> dc = (dh.array() * o * (T(1) - tanh_c.array().square())).matrix() + dc_next;
        auto dp = dpre.middleRows(t * B_, B_);
        dp.leftCols(d) = (dc.array() * g * i * (T(1) - i)).matrix();
        dp.middleCols(d, d) = (dc.array() * c_prev.array() * f * (T(1) - f)).matrix();
        dp.middleCols(2 * d, d) = (dc.array() * i * (T(1) - g.square())).matrix();
        dp.rightCols(d) = (dh.array() * tanh_c.array() * o * (T(1) - o)).matrix();
        dc_next = (dc.array() * f).matrix();
        dh_next.noalias() = dp * L.recurrent.weight->value.transpose();
      }
      Matrix<T> h_prev;
      detail::shifted_states(L.h, B_, h_prev);
      L.recurrent.weight->grad.noalias() += h_prev.transpose() * dpre;
      Matrix<T> dx;
      L.input.backward(L.x, dpre, &dx);
      dh_all = std::move(dx);
    }
    Matrix<T> demb;
    to_batch_major(dh_all, B_, T_, demb);
    emb_.backward(ids_, demb);
  }

 private:
  struct Layer {
    Linear<T> input, recurrent;
    Matrix<T> x, gates, h, c;
  };

  Embedding<T> emb_;
  std::vector<Layer> layers_;
  Linear<T> head_;
  Eigen::Index B_ = 0, T_ = 0;
  std::vector<std::int32_t> ids_;
  Matrix<T> x0_, top_;
};

template <typename T>
class Gru final : public SequenceModel<T> {
 public:
  explicit Gru(ModelConfig config) : SequenceModel<T>(std::move(config)) {
    const auto& c = this->config_;
    auto& p = this->params_;
    const Eigen::Index d = c.hidden;
    emb_.create(p, "tok_emb", c.vocab, d);
    layers_.resize(static_cast<std::size_t>(c.layers));
    for (int l = 0; l < c.layers; ++l) {
      auto& L = layers_[static_cast<std::size_t>(l)];
      const std::string prefix = "layers." + std::to_string(l) + ".";
      L.input.create(p, prefix + "input", d, 3 * d);
      L.recurrent.create(p, prefix + "recurrent", d, 3 * d);
    }
    head_.create(p, "head", d, c.vocab);

    CounterRng rng(c.init_seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    init_normal(emb_.table->value, 1.0, rng);
    for (auto& L : layers_) {
      init_uniform(L.input.weight->value, bound, rng);
      init_uniform(L.recurrent.weight->value, bound, rng);
      init_uniform(L.input.bias->value, bound, rng);
      init_uniform(L.recurrent.bias->value, bound, rng);
    }
    init_uniform(head_.weight->value, bound, rng);
  }

 protected:
  // Gate order r, z, n:
  //   r = s(xr + hr), z = s(xz + hz), n = tanh(xn + r * hn), h = (1-z) n + z h_prev
  void run_forward(const TokenBatch& batch) override {
    B_ = batch.batch;
    T_ = batch.length;
    ids_ = batch.ids;
    const Eigen::Index d = this->config_.hidden;
    Matrix<T> emb;
    emb_.forward(ids_, emb);
    to_time_major(emb, B_, T_, x0_);

    const Matrix<T>* x = &x0_;
    for (auto& L : layers_) {
      L.x = *x;
      Matrix<T> xw;
      L.input.forward(L.x, xw);
      L.gates.resize(B_ * T_, 3 * d);
      L.hn.resize(B_ * T_, d);
      L.h.resize(B_ * T_, d);
      Matrix<T> h_prev = Matrix<T>::Zero(B_, d);
      Matrix<T> hw(B_, 3 * d);
      for (Eigen::Index t = 0; t < T_; ++t) {
        L.recurrent.forward(h_prev, hw);
        const auto xs = xw.middleRows(t * B_, B_);
        auto act = L.gates.middleRows(t * B_, B_);
        act.leftCols(2 * d) = (xs.leftCols(2 * d) + hw.leftCols(2 * d)).unaryExpr([](T v) { return sigmoid(v); });
        L.hn.middleRows(t * B_, B_) = hw.rightCols(d);
        act.rightCols(d).array() = (xs.rightCols(d).array() + act.leftCols(d).array() * hw.rightCols(d).array()).tanh();
        auto h = L.h.middleRows(t * B_, B_);
        h.array() = (T(1) - act.middleCols(d, d).array()) * act.rightCols(d).array() +
                    act.middleCols(d, d).array() * h_prev.array();
        h_prev = h;
      }
      x = &L.h;
    }
    to_batch_major(*x, B_, T_, top_);
    head_.forward(top_, this->logits_);
  }

  void run_backward(const Matrix<T>& dlogits) override {
    const Eigen::Index d = this->config_.hidden;
    Matrix<T> dtop, dh_all;
    head_.backward(top_, dlogits, &dtop);
    to_time_major(dtop, B_, T_, dh_all);

    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      auto& L = *it;
      Matrix<T> dxw(B_ * T_, 3 * d);
      Matrix<T> dhw(B_ * T_, 3 * d);
      Matrix<T> dh_next = Matrix<T>::Zero(B_, d);
      for (Eigen::Index t = T_ - 1; t >= 0; --t) {
        const auto act = L.gates.middleRows(t * B_, B_);
        const auto r = act.leftCols(d).array();
        const auto z = act.middleCols(d, d).array();
        const auto nn = act.rightCols(d).array();
        const auto hn = L.hn.middleRows(t * B_, B_).array();
        const Matrix<T> h_prev =
            t > 0 ? Matrix<T>(L.h.middleRows((t - 1) * B_, B_)) : Matrix<T>(Matrix<T>::Zero(B_, d));
        const Matrix<T> dh = dh_all.middleRows(t * B_, B_) + dh_next;
        const Matrix<T> dn_pre = (dh.array() * (T(1) - z) * (T(1) - nn.square())).matrix();
        const Matrix<T> dz_pre = (dh.array() * (h_prev.array() - nn) * z * (T(1) - z)).matrix();
        const Matrix<T> dr_pre = (dn_pre.array() * hn * r * (T(1) - r)).matrix();
        auto dx = dxw.middleRows(t * B_, B_);
        dx.leftCols(d) = dr_pre;
        dx.middleCols(d, d) = dz_pre;
        dx.rightCols(d) = dn_pre;
        auto dr = dhw.middleRows(t * B_, B_);
        dr.leftCols(d) = dr_pre;
        dr.middleCols(d, d) = dz_pre;
        dr.rightCols(d) = (dn_pre.array() * r).matrix();
        dh_next = (dh.array() * z).matrix();
        dh_next.noalias() += dr * L.recurrent.weight->value.transpose();
      }
      Matrix<T> h_prev;
      detail::shifted_states(L.h, B_, h_prev);
      L.recurrent.backward(h_prev, dhw, nullptr);
      Matrix<T> dx;
      L.input.backward(L.x, dxw, &dx);
      dh_all = std::move(dx);
    }
    Matrix<T> demb;
    to_batch_major(dh_all, B_, T_, demb);
    emb_.backward(ids_, demb);
  }

 private:
  struct Layer {
    Linear<T> input, recurrent;
    Matrix<T> x, gates, hn, h;
  };

  Embedding<T> emb_;
  std::vector<Layer> layers_;
  Linear<T> head_;
  Eigen::Index B_ = 0, T_ = 0;
  std::vector<std::int32_t> ids_;
  Matrix<T> x0_, top_;
};

}  // namespace iclhcg::nn
