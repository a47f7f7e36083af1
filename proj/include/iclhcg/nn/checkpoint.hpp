#pragma once

// Checkpoint layout (little-endian):
//   "ICLHCGCK" u32 version
//   u64 len, metadata JSON {"model": ModelConfig, "extra": ...}
//   u32 dtype (4 = float, 8 = double), u32 tensor count
//   per tensor: u32 name len, name, u64 rows, u64 cols, raw values
//   u8 has_optimizer; if set: i64 steps, then first and second moments in parameter order

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iclhcg/error.hpp"
#include "iclhcg/nn/factory.hpp"
#include "iclhcg/nn/optim.hpp"

namespace iclhcg::nn {

inline constexpr char kCheckpointMagic[8] = {'I', 'C', 'L', 'H', 'C', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class BlobWriter {
 public:
  explicit BlobWriter(std::ostream& out) : out_(out) {}
  template <typename V>
  void pod(const V& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void string(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename T>
  void matrix(const Matrix<T>& m) {
    pod(static_cast<std::uint64_t>(m.rows()));
    pod(static_cast<std::uint64_t>(m.cols()));
    bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(T));
  }

 private:
  std::ostream& out_;
};

class BlobReader {
 public:
  BlobReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename V>
  V pod() {
    V v{};
    bytes(&v, sizeof(V));
    return v;
  }
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw LoadError("checkpoint '" + path_ + "' is truncated");
  }
  std::string string() {
    const auto n = pod<std::uint32_t>();
    if (n > (1u << 24)) throw LoadError("checkpoint '" + path_ + "' has a corrupt string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  template <typename T>
  void matrix_into(Matrix<T>& m, const std::string& what) {
    const auto rows = pod<std::uint64_t>();
    const auto cols = pod<std::uint64_t>();
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols())) {
      throw LoadError("checkpoint tensor '" + what + "' has shape " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", model expects " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()));
    }
    bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(T));
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace detail

/// Writes atomically (temp file + rename).
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const SequenceModel<T>& model,
                     const nlohmann::json& extra = nlohmann::json::object(), const AdamW<T>* optimizer = nullptr) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot open '" + tmp + "' for writing");
    detail::BlobWriter w(out);
    w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.pod(kCheckpointVersion);
    const std::string meta = nlohmann::json{{"model", model.config()}, {"extra", extra}}.dump();
    w.pod(static_cast<std::uint64_t>(meta.size()));
    w.bytes(meta.data(), meta.size());
    w.pod(static_cast<std::uint32_t>(sizeof(T)));
    const auto& params = model.parameters().all();
    w.pod(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
      w.string(p.name);
      w.matrix(p.value);
    }
    w.pod(static_cast<std::uint8_t>(optimizer ? 1 : 0));
    if (optimizer) {
      w.pod(static_cast<std::int64_t>(optimizer->steps()));
      for (const auto& m : optimizer->first_moments()) w.matrix(m);
      for (const auto& v : optimizer->second_moments()) w.matrix(v);
    }
    out.flush();
    if (!out) throw LoadError("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

struct CheckpointHeader {
  ModelConfig config;
  nlohmann::json extra;
};

namespace detail {

inline CheckpointHeader read_header(BlobReader& r, const std::string& path) {
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw LoadError("'" + path + "' is not a checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = r.pod<std::uint64_t>();
  if (len > (1u << 24)) throw LoadError("checkpoint '" + path + "' has a corrupt header");
  std::string meta(len, '\0');
  r.bytes(meta.data(), len);
  try {
    const auto j = nlohmann::json::parse(meta);
    return CheckpointHeader{j.at("model").get<ModelConfig>(), j.value("extra", nlohmann::json::object())};
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint '" + path + "' has an unreadable header: " + e.what());
  }
}

}  // namespace detail

inline CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path.string() + "'");
  detail::BlobReader r(in, path.string());
  return detail::read_header(r, path.string());
}

/// Restores parameters (and optimizer state when both sides have it) into an
/// existing model whose config must equal the stored one.
template <typename T>
CheckpointHeader load_checkpoint(const std::filesystem::path& path, SequenceModel<T>& model,
                                 AdamW<T>* optimizer = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path.string() + "'");
  detail::BlobReader r(in, path.string());
  auto header = detail::read_header(r, path.string());
  if (!(header.config == model.config())) {
    throw LoadError("checkpoint model config " + nlohmann::json(header.config).dump() +
                    " does not match expected " + nlohmann::json(model.config()).dump());
  }
  const auto dtype = r.pod<std::uint32_t>();
  if (dtype != sizeof(T)) {
    throw LoadError("checkpoint stores " + std::to_string(dtype * 8) + "-bit values, model uses " +
                    std::to_string(sizeof(T) * 8));
  }
  auto& params = model.parameters().all();
  const auto count = r.pod<std::uint32_t>();
  if (count != params.size()) throw LoadError("checkpoint tensor count differs from the model");
  for (auto& p : params) {
    const auto name = r.string();
    if (name != p.name) throw LoadError("checkpoint tensor '" + name + "' where '" + p.name + "' was expected");
    r.matrix_into(p.value, name);
  }
  const auto has_opt = r.pod<std::uint8_t>();
  if (optimizer) {
    if (!has_opt) throw LoadError("checkpoint '" + path.string() + "' carries no optimizer state");
    optimizer->set_steps(r.pod<std::int64_t>());
    for (std::size_t k = 0; k < params.size(); ++k) r.matrix_into(optimizer->first_moments()[k], params[k].name + ".m");
    for (std::size_t k = 0; k < params.size(); ++k) r.matrix_into(optimizer->second_moments()[k], params[k].name + ".v");
  }
  return header;
}

/// Builds the stored architecture and loads it. If `expected` is given the
/// stored config must match it.
template <typename T>
std::unique_ptr<SequenceModel<T>> load_model(const std::filesystem::path& path,
                                             const ModelConfig* expected = nullptr) {
  const auto header = read_checkpoint_header(path);
  if (expected && !(header.config == *expected)) {
    throw LoadError("checkpoint model config " + nlohmann::json(header.config).dump() +
                    " does not match expected " + nlohmann::json(*expected).dump());
  }
  auto model = make_model<T>(header.config);
  load_checkpoint(path, *model);
  return model;
}

}  // namespace iclhcg::nn
