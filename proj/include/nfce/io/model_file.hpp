#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "nfce/classical.hpp"
#include "nfce/io/binary.hpp"
#include "nfce/racnn.hpp"

namespace nfce {

enum class ModelKind : std::uint32_t { denoiser = 1, mmse = 2 };

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const StoredTensor&) const = default;
};

/// In-memory image of a model container. Config and metadata are kept as
/// the exact JSON text that is stored, so load/save is byte-preserving.
struct ModelFile {
  ModelKind kind = ModelKind::denoiser;
  std::string config_json = "{}";
  std::string meta_json = "{}";
  std::vector<StoredTensor> tensors;

  nlohmann::json config() const { return nlohmann::json::parse(config_json); }
  nlohmann::json meta() const { return nlohmann::json::parse(meta_json); }

  const StoredTensor& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw FormatError("model file: missing tensor '" + name + "'");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_rows", c.image_rows}, {"image_cols", c.image_cols},
          {"width", c.width},           {"depth", c.depth},
          {"kernel", c.kernel},         {"variant", to_string(c.variant)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.image_rows = j.at("image_rows").get<std::size_t>();
    c.image_cols = j.at("image_cols").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

namespace io {

inline constexpr char kModelMagic[4] = {'N', 'F', 'C', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

/// Layout (little endian):
///   "NFCM" | u32 version | u32 kind
///   u32 n | n bytes config JSON
///   u32 n | n bytes training-meta JSON
///   u32 tensor count
///   per tensor: u16 n | name | u32 rank | rank x u32 dims | f32 data
///   u32 CRC-32 of every preceding byte
inline std::vector<std::uint8_t> encode_model(const ModelFile& mf) {
  ByteWriter w;
  w.raw(std::string_view(kModelMagic, 4));
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(mf.kind));
  w.u32(static_cast<std::uint32_t>(mf.config_json.size()));
  w.raw(mf.config_json);
  w.u32(static_cast<std::uint32_t>(mf.meta_json.size()));
  w.raw(mf.meta_json);
  w.u32(static_cast<std::uint32_t>(mf.tensors.size()));
  for (const auto& t : mf.tensors) {
    require(t.name.size() < 65536, "tensor name too long");
    require(t.data.size() == shape_size(t.shape), "stored tensor size mismatch");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data) w.f32(v);
  }
  seal_with_crc(w);
  return std::move(w.bytes());
}

inline ModelFile decode_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 ||
      std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) !=
          std::string_view(kModelMagic, 4)) {
    throw FormatError("model: bad magic (not an NFCM model file)");
  }
  const std::size_t body = verify_crc(bytes, "model");
  ByteReader r(bytes.data(), body);
  r.raw(4);
  const std::uint32_t version = r.u32();
  if (version != kModelVersion) {
    throw FormatError("model: unsupported version " + std::to_string(version));
  }
  ModelFile mf;
  const std::uint32_t kind = r.u32();
  if (kind != static_cast<std::uint32_t>(ModelKind::denoiser) &&
      kind != static_cast<std::uint32_t>(ModelKind::mmse)) {
    throw FormatError("model: unknown kind " + std::to_string(kind));
  }
  mf.kind = static_cast<ModelKind>(kind);
  mf.config_json = r.raw(r.u32());
  mf.meta_json = r.raw(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.raw(r.u16());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("model: tensor rank too large");
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.u32());
      n *= t.shape.back();
    }
    if (n * 4 > r.remaining()) throw FormatError("model: tensor data truncated");
    t.data.resize(n);
    for (auto& v : t.data) v = r.f32();
    mf.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("model: trailing bytes before CRC");
  return mf;
}

inline void save_model_file(const std::string& path, const ModelFile& mf) {
  write_file(path, encode_model(mf));
}

inline ModelFile load_model_file(const std::string& path) {
  try {
    return decode_model(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
}

}  // namespace io

template <typename T>
ModelFile to_model_file(Racnn<T>& model, const nlohmann::json& meta = nlohmann::json::object()) {
  ModelFile mf;
  mf.kind = ModelKind::denoiser;
  mf.config_json = to_json(model.config()).dump();
  mf.meta_json = meta.dump();
  auto store = [&](const NamedTensor<T>& nt) {
    StoredTensor st;
    st.name = nt.name;
    st.shape = nt.tensor->shape();
    st.data.assign(nt.tensor->values().begin(), nt.tensor->values().end());
    mf.tensors.push_back(std::move(st));
  };
  for (const auto& p : model.parameters()) store(p);
  for (const auto& b : model.buffers()) store(b);
  return mf;
}

/// Rebuilds a denoiser, checking every tensor against the shapes implied by
/// the stored configuration.
template <typename T>
Racnn<T> racnn_from_model_file(const ModelFile& mf) {
  if (mf.kind != ModelKind::denoiser) throw FormatError("model: not a denoiser model");
  Racnn<T> model(model_config_from_json(mf.config()));
  auto params = model.parameters();
  auto buffers = model.buffers();
  params.insert(params.end(), buffers.begin(), buffers.end());
  if (params.size() != mf.tensors.size()) {
    throw FormatError("model: expected " + std::to_string(params.size()) +
                      " tensors, file has " + std::to_string(mf.tensors.size()));
  }
  for (const auto& p : params) {
    const StoredTensor& st = mf.tensor(p.name);
    if (st.shape != p.tensor->shape()) {
      throw FormatError("model: tensor '" + p.name + "' has shape " + shape_string(st.shape) +
                        ", config implies " + shape_string(p.tensor->shape()));
    }
    *p.tensor = Tensor<T>(st.shape, std::vector<T>(st.data.begin(), st.data.end()));
  }
  model.set_mode(nn::Mode::eval);
  return model;
}

inline ModelFile to_model_file(const MmseFilter& filter,
                               const nlohmann::json& meta = nlohmann::json::object()) {
  ModelFile mf;
  mf.kind = ModelKind::mmse;
  const auto m = static_cast<std::size_t>(filter.dim());
  mf.config_json = nlohmann::json{{"antennas", m},
                                  {"calibration_samples", filter.sample_count}}
                       .dump();
  mf.meta_json = meta.dump();
  StoredTensor re{"covariance.real", {m, m}, {}}, im{"covariance.imag", {m, m}, {}};
  re.data.reserve(m * m);
  im.data.reserve(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const Complex v = filter.covariance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      re.data.push_back(static_cast<float>(v.real()));
      im.data.push_back(static_cast<float>(v.imag()));
    }
  }
  mf.tensors = {std::move(re), std::move(im)};
  return mf;
}

inline MmseFilter mmse_from_model_file(const ModelFile& mf) {
  if (mf.kind != ModelKind::mmse) throw FormatError("model: not an MMSE filter");
  std::size_t m = 0;
  MmseFilter f;
  try {
    const auto cfg = mf.config();
    m = cfg.at("antennas").get<std::size_t>();
    f.sample_count = cfg.at("calibration_samples").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("mmse config: ") + e.what());
  }
  const StoredTensor& re = mf.tensor("covariance.real");
  const StoredTensor& im = mf.tensor("covariance.imag");
  if (re.shape != Shape{m, m} || im.shape != Shape{m, m}) {
    throw FormatError("mmse: covariance shape does not match antenna count");
  }
  f.covariance.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      f.covariance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          Complex(re.data[i * m + j], im.data[i * m + j]);
  return f;
}

}  // namespace nfce
