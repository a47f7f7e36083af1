#pragma once

#include <memory>

#include "iclhcg/nn/model.hpp"
#include "iclhcg/nn/recurrent.hpp"
#include "iclhcg/nn/ssm.hpp"
#include "iclhcg/nn/transformer.hpp"

namespace iclhcg::nn {

template <typename T>
std::unique_ptr<SequenceModel<T>> make_model(const ModelConfig& config) {
  switch (config.arch) {
    case Arch::Transformer: return std::make_unique<Transformer<T>>(config);
    case Arch::Lstm: return std::make_unique<Lstm<T>>(config);
    case Arch::Gru: return std::make_unique<Gru<T>>(config);
    case Arch::Ssm: return std::make_unique<SelectiveSsm<T>>(config);
  }
  throw ConfigError("unknown architecture");
}

}  // namespace iclhcg::nn
