#pragma once

// Decoder-only transformer: learned token and absolute position embeddings,
// pre-norm blocks (causal multi-head self-attention, GELU MLP with 4x
// expansion), final layer norm and an untied readout.

#include <cmath>
#include <string>
#include <vector>

#include "iclhcg/nn/model.hpp"
#include "iclhcg/nn/tensor.hpp"

namespace iclhcg::nn {

template <typename T>
class Transformer final : public SequenceModel<T> {
 public:
  explicit Transformer(ModelConfig config) : SequenceModel<T>(std::move(config)) {
    const auto& c = this->config_;
    auto& p = this->params_;
    const Eigen::Index d = c.hidden;
    tok_emb_.create(p, "tok_emb", c.vocab, d);
    pos_emb_ = &p.add("pos_emb", c.max_len, d);
    blocks_.resize(static_cast<std::size_t>(c.layers));
    for (int l = 0; l < c.layers; ++l) {
      auto& b = blocks_[static_cast<std::size_t>(l)];
      const std::string prefix = "layers." + std::to_string(l) + ".";
      b.ln1.create(p, prefix + "ln1", d);
      b.qkv.create(p, prefix + "attn.qkv", d, 3 * d);
      b.proj.create(p, prefix + "attn.proj", d, d);
      b.ln2.create(p, prefix + "ln2", d);
      b.fc1.create(p, prefix + "mlp.fc1", d, 4 * d);
      b.fc2.create(p, prefix + "mlp.fc2", 4 * d, d);
    }
    ln_f_.create(p, "ln_f", d);
    head_.create(p, "head", d, c.vocab);

    CounterRng rng(c.init_seed);
    const double std = 0.02;
    const double residual_std = std / std::sqrt(2.0 * c.layers);
    init_normal(tok_emb_.table->value, std, rng);
    init_normal(pos_emb_->value, std, rng);
    for (auto& b : blocks_) {
      init_normal(b.qkv.weight->value, std, rng);
      init_normal(b.proj.weight->value, residual_std, rng);
      init_normal(b.fc1.weight->value, std, rng);
      init_normal(b.fc2.weight->value, residual_std, rng);
    }
    init_normal(head_.weight->value, std, rng);
  }

 protected:
  void run_forward(const TokenBatch& batch) override {
    B_ = batch.batch;
    T_ = batch.length;
    ids_ = batch.ids;

    tok_emb_.forward(ids_, x0_);
    for (Eigen::Index b = 0; b < B_; ++b) x0_.middleRows(b * T_, T_) += pos_emb_->value.topRows(T_);

    const Matrix<T>* x = &x0_;
    for (auto& blk : blocks_) {
      blk.x_in = *x;
      blk.ln1.forward(blk.x_in, blk.a);
      blk.qkv.forward(blk.a, blk.qkv_out);
      attention_forward(blk);
      blk.proj.forward(blk.attn_cat, blk.attn_out);
      blk.x_mid = blk.x_in + blk.attn_out;
      blk.ln2.forward(blk.x_mid, blk.m);
      blk.fc1.forward(blk.m, blk.h1);
      Gelu<T>::forward(blk.h1, blk.g);
      blk.fc2.forward(blk.g, blk.mlp_out);
      blk.x_out = blk.x_mid + blk.mlp_out;
      x = &blk.x_out;
    }
    ln_f_.forward(*x, final_);
    head_.forward(final_, this->logits_);
  }

  void run_backward(const Matrix<T>& dlogits) override {
    Matrix<T> dfinal;
    head_.backward(final_, dlogits, &dfinal);
    Matrix<T> dx;
    ln_f_.backward(dfinal, dx);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      auto& blk = *it;
      // x_out = x_mid + fc2(gelu(fc1(ln2(x_mid))))
      Matrix<T> dg, dh1, dm, dmid;
      blk.fc2.backward(blk.g, dx, &dg);
      Gelu<T>::backward(blk.h1, dg, dh1);
      blk.fc1.backward(blk.m, dh1, &dm);
      blk.ln2.backward(dm, dmid);
      dmid += dx;
      // x_mid = x_in + proj(attn(qkv(ln1(x_in))))
      Matrix<T> dcat, dqkv, da, din;
      blk.proj.backward(blk.attn_cat, dmid, &dcat);
      attention_backward(blk, dcat, dqkv);
      blk.qkv.backward(blk.a, dqkv, &da);
      blk.ln1.backward(da, din);
      dx = din + dmid;
    }
    tok_emb_.backward(ids_, dx);
    for (Eigen::Index b = 0; b < B_; ++b) pos_emb_->grad.topRows(T_) += dx.middleRows(b * T_, T_);
  }

 private:
  struct Block {
    LayerNorm<T> ln1, ln2;
    Linear<T> qkv, proj, fc1, fc2;
    Matrix<T> x_in, a, qkv_out, probs, attn_cat, attn_out, x_mid, m, h1, g, mlp_out, x_out;
  };

  // probs stores one T x T softmax matrix per (batch, head), stacked by rows.
  void attention_forward(Block& blk) const {
    const auto& c = this->config_;
    const Eigen::Index d = c.hidden;
    const Eigen::Index H = c.heads;
    const Eigen::Index dh = d / H;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    blk.probs.resize(B_ * H * T_, T_);
    blk.attn_cat.resize(B_ * T_, d);
    Matrix<T> scores(T_, T_);
    for (Eigen::Index b = 0; b < B_; ++b) {
      for (Eigen::Index h = 0; h < H; ++h) {
        const auto q = blk.qkv_out.block(b * T_, h * dh, T_, dh);
        const auto k = blk.qkv_out.block(b * T_, d + h * dh, T_, dh);
        const auto v = blk.qkv_out.block(b * T_, 2 * d + h * dh, T_, dh);
        scores.template triangularView<Eigen::Lower>() = q * k.transpose();
        auto probs = blk.probs.block((b * H + h) * T_, 0, T_, T_);
        for (Eigen::Index i = 0; i < T_; ++i) {
          auto row = probs.row(i);
          const auto live = scores.row(i).head(i + 1).array() * scale;
          row.head(i + 1) = (live - live.maxCoeff()).exp().matrix();
          row.head(i + 1) /= row.head(i + 1).sum();
          row.tail(T_ - i - 1).setZero();
        }
        blk.attn_cat.block(b * T_, h * dh, T_, dh).noalias() = probs.template triangularView<Eigen::Lower>() * v;
      }
    }
  }

  void attention_backward(const Block& blk, const Matrix<T>& dcat, Matrix<T>& dqkv) const {
    const auto& c = this->config_;
    const Eigen::Index d = c.hidden;
    const Eigen::Index H = c.heads;
    const Eigen::Index dh = d / H;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    dqkv.setZero(B_ * T_, 3 * d);
    Matrix<T> dprobs(T_, T_), dscores(T_, T_);
    for (Eigen::Index b = 0; b < B_; ++b) {
      for (Eigen::Index h = 0; h < H; ++h) {
        const auto q = blk.qkv_out.block(b * T_, h * dh, T_, dh);
        const auto k = blk.qkv_out.block(b * T_, d + h * dh, T_, dh);
        const auto v = blk.qkv_out.block(b * T_, 2 * d + h * dh, T_, dh);
        const auto probs = blk.probs.block((b * H + h) * T_, 0, T_, T_);
        const auto dout = dcat.block(b * T_, h * dh, T_, dh);
        dprobs.template triangularView<Eigen::Lower>() = dout * v.transpose();
        dqkv.block(b * T_, 2 * d + h * dh, T_, dh).noalias() =
            probs.transpose().template triangularView<Eigen::Upper>() * dout;
        for (Eigen::Index i = 0; i < T_; ++i) {
          const auto p = probs.row(i).head(i + 1).array();
          const auto g = dprobs.row(i).head(i + 1).array();
          const T dot = (p * g).sum();
          dscores.row(i).head(i + 1) = (p * (g - dot) * scale).matrix();
          dscores.row(i).tail(T_ - i - 1).setZero();
        }
        dqkv.block(b * T_, h * dh, T_, dh).noalias() = dscores.template triangularView<Eigen::Lower>() * k;
        dqkv.block(b * T_, d + h * dh, T_, dh).noalias() =
            dscores.transpose().template triangularView<Eigen::Upper>() * q;
      }
    }
  }

  Embedding<T> tok_emb_;
  Parameter<T>* pos_emb_ = nullptr;
  std::vector<Block> blocks_;
  LayerNorm<T> ln_f_;
  Linear<T> head_;

  Eigen::Index B_ = 0, T_ = 0;
  std::vector<std::int32_t> ids_;
  Matrix<T> x0_, final_;
};

}  // namespace iclhcg::nn
