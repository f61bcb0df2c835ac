#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfce/channel.hpp"
#include "nfce/io/binary.hpp"
#include "nfce/parallel.hpp"

namespace nfce {

/// One stored clean channel. `seed` regenerates its noise online.
struct DatasetRecord {
  std::uint16_t num_far = 0;
  std::uint16_t num_near = 0;
  std::uint64_t seed = 0;
  ComplexVector h;
};

/// Clean channels at on-disk (f32) precision.
struct Dataset {
  std::uint32_t antennas = 0;
  std::uint32_t flags = 0;
  std::vector<DatasetRecord> records;

  std::size_t size() const { return records.size(); }
};

/// Rounds each component to the nearest f32 value.
inline ComplexVector round_to_f32(const ComplexVector& h) {
  ComplexVector out(h.size());
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    out[i] = Complex(static_cast<float>(h[i].real()), static_cast<float>(h[i].imag()));
  }
  return out;
}

/// Record i is drawn with seed derive_seed(base_seed, i), so the result does
/// not depend on the worker count.
inline Dataset generate_dataset(const ArrayConfig& cfg, const ScenarioSpec& scenario,
                                std::size_t count, std::uint64_t base_seed) {
  cfg.validate();
  scenario.validate();
  Dataset ds;
  ds.antennas = static_cast<std::uint32_t>(cfg.num_antennas);
  ds.records.resize(count);
  parallel_for(count, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(base_seed, i);
    const ChannelRealization ch = sample_channel(cfg, scenario, seed);
    DatasetRecord& r = ds.records[i];
    r.num_far = static_cast<std::uint16_t>(ch.paths.num_far());
    r.num_near = static_cast<std::uint16_t>(ch.paths.num_near());
    r.seed = seed;
    r.h = round_to_f32(ch.h);
  });
  return ds;
}

namespace io {

inline constexpr char kDatasetMagic[4] = {'N', 'F', 'C', 'E'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 24;

inline std::size_t dataset_record_bytes(std::size_t antennas) { return 12 + 8 * antennas; }

inline std::size_t dataset_file_bytes(std::size_t antennas, std::size_t count) {
  return kDatasetHeaderBytes + count * dataset_record_bytes(antennas) + 4;
}

/// Layout (little endian):
///   "NFCE" | u32 version | u32 M | u64 count | u32 flags
///   count x { u16 L_f | u16 L_n | u64 seed | 2M x f32 (re, im interleaved) }
///   u32 CRC-32 of every preceding byte
inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes().reserve(dataset_file_bytes(ds.antennas, ds.size()));
  w.raw(std::string_view(kDatasetMagic, 4));
  w.u32(kDatasetVersion);
  w.u32(ds.antennas);
  w.u64(ds.size());
  w.u32(ds.flags);
  for (const DatasetRecord& r : ds.records) {
    require(static_cast<std::uint32_t>(r.h.size()) == ds.antennas,
            "dataset record length differs from header M");
    w.u16(r.num_far);
    w.u16(r.num_near);
    w.u64(r.seed);
    for (Eigen::Index m = 0; m < r.h.size(); ++m) {
      w.f32(static_cast<float>(r.h[m].real()));
      w.f32(static_cast<float>(r.h[m].imag()));
    }
  }
  seal_with_crc(w);
  return std::move(w.bytes());
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kDatasetHeaderBytes + 4) throw FormatError("dataset: file too short");
  if (std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) !=
      std::string_view(kDatasetMagic, 4)) {
    throw FormatError("dataset: bad magic (not an NFCE dataset)");
  }
  const std::size_t body = verify_crc(bytes, "dataset");
  ByteReader r(bytes.data(), body);
  r.raw(4);
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  }
  Dataset ds;
  ds.antennas = r.u32();
  const std::uint64_t count = r.u64();
  ds.flags = r.u32();
  if (ds.antennas == 0) throw FormatError("dataset: M must be positive");
  if (bytes.size() != dataset_file_bytes(ds.antennas, count)) {
    throw FormatError("dataset: file size does not match header (M=" +
                      std::to_string(ds.antennas) + ", count=" + std::to_string(count) + ")");
  }
  ds.records.resize(count);
  for (auto& rec : ds.records) {
    rec.num_far = r.u16();
    rec.num_near = r.u16();
    rec.seed = r.u64();
    rec.h.resize(ds.antennas);
    for (std::uint32_t m = 0; m < ds.antennas; ++m) {
      const float re = r.f32();
      const float im = r.f32();
      rec.h[m] = Complex(re, im);
    }
  }
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  write_file(path, encode_dataset(ds));
}

inline Dataset load_dataset(const std::string& path) {
  try {
    return decode_dataset(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
}

}  // namespace io
}  // namespace nfce
