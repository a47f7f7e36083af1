#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iclhcg/error.hpp"
#include "iclhcg/nn/tensor.hpp"

namespace iclhcg::nn {

enum class Arch { Transformer, Lstm, Gru, Ssm };

inline std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::Transformer: return "transformer";
    case Arch::Lstm: return "lstm";
    case Arch::Gru: return "gru";
    case Arch::Ssm: return "ssm";
  }
  return "?";
}

inline Arch parse_arch(std::string_view name) {
  if (name == "transformer") return Arch::Transformer;
  if (name == "lstm") return Arch::Lstm;
  if (name == "gru") return Arch::Gru;
  if (name == "ssm") return Arch::Ssm;
  throw ConfigError("unknown architecture '" + std::string(name) + "' (expected transformer|lstm|gru|ssm)");
}

struct ModelConfig {
  Arch arch = Arch::Transformer;
  int layers = 2;
  int hidden = 128;
  int heads = 4;
  int vocab = 0;
  int max_len = 0;  // longest input sequence the model accepts
  std::uint64_t init_seed = 0;
  // Selective-SSM shape.
  int ssm_state = 16;
  int ssm_expand = 2;
  int ssm_conv = 4;
  int ssm_dt_rank = 0;  // 0: ceil(hidden / 16)

  int dt_rank() const { return ssm_dt_rank > 0 ? ssm_dt_rank : (hidden + 15) / 16; }

  void validate() const {
    if (layers < 1) throw ConfigError("model needs at least one layer");
    if (hidden < 1) throw ConfigError("hidden dimension must be positive");
    if (vocab < 1) throw ConfigError("vocabulary size must be positive");
    if (max_len < 1) throw ConfigError("max_len must be positive");
    if (arch == Arch::Transformer) {
      if (heads < 1 || hidden % heads != 0) {
        throw ConfigError("hidden dimension " + std::to_string(hidden) + " is not divisible by " +
                          std::to_string(heads) + " heads");
      }
    }
    if (arch == Arch::Ssm && (ssm_state < 1 || ssm_expand < 1 || ssm_conv < 1)) {
      throw ConfigError("invalid selective-SSM shape");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"arch", std::string(to_string(c.arch))},
                     {"layers", c.layers},
                     {"hidden", c.hidden},
                     {"heads", c.heads},
                     {"vocab", c.vocab},
                     {"max_len", c.max_len},
                     {"init_seed", c.init_seed},
                     {"ssm_state", c.ssm_state},
                     {"ssm_expand", c.ssm_expand},
                     {"ssm_conv", c.ssm_conv},
                     {"ssm_dt_rank", c.ssm_dt_rank}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.arch = parse_arch(j.at("arch").get<std::string>());
  c.layers = j.at("layers").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.heads = j.value("heads", 4);
  c.vocab = j.at("vocab").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.init_seed = j.value("init_seed", std::uint64_t{0});
  c.ssm_state = j.value("ssm_state", 16);
  c.ssm_expand = j.value("ssm_expand", 2);
  c.ssm_conv = j.value("ssm_conv", 4);
  c.ssm_dt_rank = j.value("ssm_dt_rank", 0);
}

/// B sequences of equal length, row-major (b * length + t).
struct TokenBatch {
  int batch = 0;
  int length = 0;
  std::vector<std::int32_t> ids;

  std::int32_t at(int b, int t) const { return ids[static_cast<std::size_t>(b * length + t)]; }
};

/// Next-token predictor. forward() returns (batch*length) x vocab logits,
/// row b*length + t scoring the token after position t; logits at t depend
/// only on tokens 0..t. backward() takes d(loss)/d(logits) for the most
/// recent forward and accumulates parameter gradients.
template <typename T>
class SequenceModel {
 public:
  explicit SequenceModel(ModelConfig config) : config_(std::move(config)) { config_.validate(); }
  virtual ~SequenceModel() = default;

  SequenceModel(const SequenceModel&) = delete;
  SequenceModel& operator=(const SequenceModel&) = delete;

  const Matrix<T>& forward(const TokenBatch& batch) {
    check_batch(batch);
    run_forward(batch);
    return logits_;
  }

  void backward(const Matrix<T>& dlogits) {
    if (dlogits.rows() != logits_.rows() || dlogits.cols() != logits_.cols()) {
      throw ConfigError("logit gradient shape differs from the last forward pass");
    }
    run_backward(dlogits);
  }

  const Matrix<T>& logits() const { return logits_; }
  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  void zero_grad() { params_.zero_grad(); }

 protected:
  virtual void run_forward(const TokenBatch& batch) = 0;
  virtual void run_backward(const Matrix<T>& dlogits) = 0;

  void check_batch(const TokenBatch& batch) const {
    if (batch.batch < 1 || batch.length < 1) throw BoundsError("empty token batch");
    if (batch.length > config_.max_len) {
      throw BoundsError("sequence length " + std::to_string(batch.length) + " exceeds max_len " +
                        std::to_string(config_.max_len));
    }
    if (batch.ids.size() != static_cast<std::size_t>(batch.batch) * static_cast<std::size_t>(batch.length)) {
      throw BoundsError("token batch size mismatch");
    }
    for (auto id : batch.ids) {
      if (id < 0 || id >= config_.vocab) throw BoundsError("token id " + std::to_string(id) + " outside vocabulary");
    }
  }

  ModelConfig config_;
  ParameterSet<T> params_;
  Matrix<T> logits_;
};

}  // namespace iclhcg::nn
