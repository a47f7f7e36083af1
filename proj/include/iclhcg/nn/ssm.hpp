#pragma once

// Simplified selective state-space model in the style of Mamba. Each block:
//
//   a = LayerNorm(x)
//   [u_pre, g_pre] = a W_in + b_in
//   u = silu(causal depthwise conv(u_pre))
//   [dt_low, B, C] = u W_x
//   delta = softplus(dt_low W_dt + b_dt)
//   s_t = exp(delta_t * A) * s_{t-1} + delta_t * B_t * u_t      (per channel, diagonal A < 0)
//   y_t = C_t . s_t + D * u_t
//   x  += (y * silu(g_pre)) W_out + b_out
//
// The stack shares the transformer shell minus position embeddings: token
// embedding, blocks, final LayerNorm, untied readout.

#include <cmath>
#include <string>
#include <vector>

#include "iclhcg/nn/model.hpp"
#include "iclhcg/nn/tensor.hpp"

namespace iclhcg::nn {

template <typename T>
class SelectiveSsm final : public SequenceModel<T> {
 public:
  explicit SelectiveSsm(ModelConfig config) : SequenceModel<T>(std::move(config)) {
    const auto& c = this->config_;
    auto& p = this->params_;
    const Eigen::Index d = c.hidden;
    di_ = static_cast<Eigen::Index>(c.ssm_expand) * d;
    S_ = c.ssm_state;
    R_ = c.dt_rank();
    K_ = c.ssm_conv;
    emb_.create(p, "tok_emb", c.vocab, d);
    blocks_.resize(static_cast<std::size_t>(c.layers));
    for (int l = 0; l < c.layers; ++l) {
      auto& b = blocks_[static_cast<std::size_t>(l)];
      const std::string prefix = "layers." + std::to_string(l) + ".";
      b.ln.create(p, prefix + "ln", d);
      b.in_proj.create(p, prefix + "in_proj", d, 2 * di_);
      b.conv_w = &p.add(prefix + "conv.weight", di_, K_);
      b.conv_b = &p.add(prefix + "conv.bias", 1, di_);
      b.x_proj.create(p, prefix + "x_proj", di_, R_ + 2 * S_, false);
      b.dt_proj.create(p, prefix + "dt_proj", R_, di_);
      b.a_log = &p.add(prefix + "a_log", di_, S_);
      b.d_skip = &p.add(prefix + "d_skip", 1, di_);
      b.out_proj.create(p, prefix + "out_proj", di_, d);
    }
    ln_f_.create(p, "ln_f", d);
    head_.create(p, "head", d, c.vocab);

    CounterRng rng(c.init_seed);
    const double std = 0.02;
    init_normal(emb_.table->value, std, rng);
    for (auto& b : blocks_) {
      init_normal(b.in_proj.weight->value, std, rng);
      init_uniform(b.conv_w->value, 1.0 / std::sqrt(static_cast<double>(K_)), rng);
      init_normal(b.x_proj.weight->value, std, rng);
      init_uniform(b.dt_proj.weight->value, 1.0 / std::sqrt(static_cast<double>(R_)), rng);
      // Step sizes start log-uniform in [1e-3, 1e-1]; bias = softplus^-1(dt).
      for (Eigen::Index ch = 0; ch < di_; ++ch) {
        const double dt = std::exp(std::log(1e-3) + rng.uniform() * (std::log(1e-1) - std::log(1e-3)));
        b.dt_proj.bias->value(0, ch) = static_cast<T>(dt + std::log(-std::expm1(-dt)));
        for (Eigen::Index n = 0; n < S_; ++n) b.a_log->value(ch, n) = static_cast<T>(std::log(n + 1.0));
      }
      b.d_skip->value.setOnes();
      init_normal(b.out_proj.weight->value, std / std::sqrt(2.0 * c.layers), rng);
    }
    init_normal(head_.weight->value, std, rng);
  }

 protected:
  void run_forward(const TokenBatch& batch) override {
    B_ = batch.batch;
    T_ = batch.length;
    ids_ = batch.ids;
    emb_.forward(ids_, x0_);
    const Matrix<T>* x = &x0_;
    for (auto& blk : blocks_) {
      blk.x_in = *x;
      block_forward(blk);
      x = &blk.x_out;
    }
    ln_f_.forward(*x, final_);
    head_.forward(final_, this->logits_);
  }

  void run_backward(const Matrix<T>& dlogits) override {
    Matrix<T> dfinal, dx;
    head_.backward(final_, dlogits, &dfinal);
    ln_f_.backward(dfinal, dx);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      Matrix<T> din;
      block_backward(*it, dx, din);
      dx = std::move(din);
    }
    emb_.backward(ids_, dx);
  }

 private:
  struct Block {
    LayerNorm<T> ln;
    Linear<T> in_proj, x_proj, dt_proj, out_proj;
    Parameter<T>* conv_w = nullptr;
    Parameter<T>* conv_b = nullptr;
    Parameter<T>* a_log = nullptr;
    Parameter<T>* d_skip = nullptr;
    Matrix<T> x_in, a, xz, uc, u, xp, dt_low, dt_pre, delta, y, gate, yg, x_out;
  };

  void block_forward(Block& blk) const {
    const Eigen::Index N = B_ * T_;
    blk.ln.forward(blk.x_in, blk.a);
    blk.in_proj.forward(blk.a, blk.xz);

    blk.uc.resize(N, di_);
    for (Eigen::Index b = 0; b < B_; ++b) {
      for (Eigen::Index t = 0; t < T_; ++t) {
        auto out = blk.uc.row(b * T_ + t);
        out = blk.conv_b->value.row(0);
        for (Eigen::Index j = 0; j < K_; ++j) {
          const Eigen::Index src = t - (K_ - 1) + j;
          if (src < 0) continue;
          out.array() += blk.conv_w->value.col(j).transpose().array() *
                         blk.xz.row(b * T_ + src).leftCols(di_).array();
        }
      }
    }
    Silu<T>::forward(blk.uc, blk.u);
    blk.x_proj.forward(blk.u, blk.xp);
    blk.dt_low = blk.xp.leftCols(R_);
    blk.dt_proj.forward(blk.dt_low, blk.dt_pre);
    blk.delta = blk.dt_pre.unaryExpr([](T v) { return softplus(v); });

    const Matrix<T> A = -blk.a_log->value.array().exp().matrix();
    blk.y.resize(N, di_);
    Matrix<T> state(di_, S_);
    for (Eigen::Index b = 0; b < B_; ++b) {
      state.setZero();
      for (Eigen::Index t = 0; t < T_; ++t) {
        const Eigen::Index r = b * T_ + t;
        const auto Bt = blk.xp.row(r).segment(R_, S_);
        const auto Ct = blk.xp.row(r).segment(R_ + S_, S_);
        for (Eigen::Index c = 0; c < di_; ++c) {
          const T dl = blk.delta(r, c);
          const T du = dl * blk.u(r, c);
          T acc = T(0);
          for (Eigen::Index n = 0; n < S_; ++n) {
            T& s = state(c, n);
            s = std::exp(dl * A(c, n)) * s + du * Bt(n);
            acc += s * Ct(n);
          }
          blk.y(r, c) = acc + blk.d_skip->value(0, c) * blk.u(r, c);
        }
      }
    }
    const auto gpre = blk.xz.rightCols(di_);
    blk.gate = gpre.unaryExpr([](T v) { return v * sigmoid(v); });
    blk.yg = (blk.y.array() * blk.gate.array()).matrix();
    Matrix<T> out;
    blk.out_proj.forward(blk.yg, out);
    blk.x_out = blk.x_in + out;
  }

  void block_backward(Block& blk, const Matrix<T>& dout, Matrix<T>& dx) const {
    const Eigen::Index N = B_ * T_;
    Matrix<T> dyg;
    blk.out_proj.backward(blk.yg, dout, &dyg);
    const Matrix<T> dy = (dyg.array() * blk.gate.array()).matrix();

    Matrix<T> dxz(N, 2 * di_);
    const auto gpre = blk.xz.rightCols(di_);
    dxz.rightCols(di_) = (dyg.array() * blk.y.array()).matrix().binaryExpr(
        gpre, [](T g, T v) { return g * Silu<T>::derivative(v); });

    Matrix<T> du = (dy.array().rowwise() * blk.d_skip->value.row(0).array()).matrix();
    blk.d_skip->grad.row(0) += (dy.array() * blk.u.array()).matrix().colwise().sum();

    const Matrix<T> A = -blk.a_log->value.array().exp().matrix();
    Matrix<T> dA = Matrix<T>::Zero(di_, S_);
    Matrix<T> ddelta = Matrix<T>::Zero(N, di_);
    Matrix<T> dxp = Matrix<T>::Zero(N, R_ + 2 * S_);
    // Per sequence: replay the scan keeping every state and decay factor.
    Matrix<T> states(T_ * di_, S_), decay(T_ * di_, S_), ds(di_, S_);
    for (Eigen::Index b = 0; b < B_; ++b) {
      ds.setZero();
      for (Eigen::Index t = 0; t < T_; ++t) {
        const Eigen::Index r = b * T_ + t;
        const auto Bt = blk.xp.row(r).segment(R_, S_);
        for (Eigen::Index c = 0; c < di_; ++c) {
          const T dl = blk.delta(r, c);
          const T du_in = dl * blk.u(r, c);
          for (Eigen::Index n = 0; n < S_; ++n) {
            const T a = std::exp(dl * A(c, n));
            const T prev = t > 0 ? states((t - 1) * di_ + c, n) : T(0);
            decay(t * di_ + c, n) = a;
            states(t * di_ + c, n) = a * prev + du_in * Bt(n);
          }
        }
      }
      for (Eigen::Index t = T_ - 1; t >= 0; --t) {
        const Eigen::Index r = b * T_ + t;
        const auto Bt = blk.xp.row(r).segment(R_, S_);
        const auto Ct = blk.xp.row(r).segment(R_ + S_, S_);
        auto dBt = dxp.row(r).segment(R_, S_);
        auto dCt = dxp.row(r).segment(R_ + S_, S_);
        for (Eigen::Index c = 0; c < di_; ++c) {
          const T g = dy(r, c);
          const T dl = blk.delta(r, c);
          const T uc = blk.u(r, c);
          T ddl = T(0);
          T duc = T(0);
          for (Eigen::Index n = 0; n < S_; ++n) {
            const T s = states(t * di_ + c, n);
            const T a = decay(t * di_ + c, n);
            const T prev = t > 0 ? states((t - 1) * di_ + c, n) : T(0);
            T& d = ds(c, n);
            d += g * Ct(n);
            dCt(n) += g * s;
            const T darg = d * prev * a;  // d/d(delta * A)
            ddl += darg * A(c, n) + d * uc * Bt(n);
            dA(c, n) += darg * dl;
            dBt(n) += d * dl * uc;
            duc += d * dl * Bt(n);
            d *= a;
          }
          ddelta(r, c) += ddl;
          du(r, c) += duc;
        }
      }
    }
    blk.a_log->grad.array() += dA.array() * A.array();

    const Matrix<T> ddt_pre = ddelta.binaryExpr(blk.dt_pre, [](T g, T v) { return g * sigmoid(v); });
    Matrix<T> ddt_low;
    blk.dt_proj.backward(blk.dt_low, ddt_pre, &ddt_low);
    dxp.leftCols(R_) += ddt_low;
    Matrix<T> du_proj;
    blk.x_proj.backward(blk.u, dxp, &du_proj);
    du += du_proj;

    const Matrix<T> duc = du.binaryExpr(blk.uc, [](T g, T v) { return g * Silu<T>::derivative(v); });
    blk.conv_b->grad.row(0) += duc.colwise().sum();
    auto dupre = dxz.leftCols(di_);
    dupre.setZero();
    for (Eigen::Index b = 0; b < B_; ++b) {
      for (Eigen::Index t = 0; t < T_; ++t) {
        const auto g = duc.row(b * T_ + t).array();
        for (Eigen::Index j = 0; j < K_; ++j) {
          const Eigen::Index src = t - (K_ - 1) + j;
          if (src < 0) continue;
          blk.conv_w->grad.col(j).transpose().array() += g * blk.xz.row(b * T_ + src).leftCols(di_).array();
          dupre.row(b * T_ + src).array() += g * blk.conv_w->value.col(j).transpose().array();
        }
      }
    }

    Matrix<T> da;
    blk.in_proj.backward(blk.a, dxz, &da);
    blk.ln.backward(da, dx);
    dx += dout;
  }

  Eigen::Index di_ = 0, S_ = 0, R_ = 0, K_ = 0;
  Embedding<T> emb_;
  std::vector<Block> blocks_;
  LayerNorm<T> ln_f_;
  Linear<T> head_;
  Eigen::Index B_ = 0, T_ = 0;
  std::vector<std::int32_t> ids_;
  Matrix<T> x0_, final_;
};

}  // namespace iclhcg::nn
