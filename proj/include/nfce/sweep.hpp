#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "nfce/classical.hpp"
#include "nfce/io/dataset_file.hpp"
#include "nfce/metrics.hpp"
#include "nfce/observation.hpp"
#include "nfce/parallel.hpp"
#include "nfce/racnn.hpp"

namespace nfce {

/// What an estimator knows about the cell it is evaluated in.
struct CellContext {
  std::size_t scenario_index = 0;
  const ScenarioSpec* scenario = nullptr;
  double snr_db = 0.0;
  /// Clean channels of the cell. Only genie baselines may read this.
  std::span<const ComplexVector> truth;
};

/// Common interface for every channel estimator in a sweep. estimate() must
/// be safe to call concurrently once prepare() has returned.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual std::string name() const = 0;
  /// Called once per sweep, before any cell is evaluated.
  virtual void prepare(const ArrayConfig&, std::span<const ScenarioSpec>, std::uint64_t) {}
  /// Called instead of prepare() when evaluating stored channels; the given
  /// clean channels describe the evaluation distribution.
  virtual void prepare_from_channels(std::span<const ComplexVector>) {}
  virtual std::vector<ComplexVector> estimate(const CellContext& cell,
                                              std::span<const Observation> batch) const = 0;
};

class LsEstimator final : public Estimator {
 public:
  std::string name() const override { return "ls"; }
  std::vector<ComplexVector> estimate(const CellContext&,
                                      std::span<const Observation> batch) const override {
    std::vector<ComplexVector> out;
    out.reserve(batch.size());
    for (const auto& obs : batch) out.push_back(ls_estimate(obs));
    return out;
  }
};

/// Linear MMSE. Either fitted per scenario on fresh clean calibration draws
/// from that scenario, or a fixed filter used for every cell.
class MmseEstimator final : public Estimator {
 public:
  explicit MmseEstimator(std::size_t calibration_size = 10000)
      : calibration_size_(calibration_size) {}
  explicit MmseEstimator(MmseFilter fixed) : fixed_(std::move(fixed)), has_fixed_(true) {}

  std::string name() const override { return "mmse"; }

  void prepare(const ArrayConfig& cfg, std::span<const ScenarioSpec> scenarios,
               std::uint64_t seed) override {
    if (has_fixed_) return;
    filters_.clear();
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
      std::vector<ComplexVector> calib(calibration_size_);
      parallel_for(calibration_size_, [&](std::size_t i) {
        calib[i] = sample_channel(cfg, scenarios[s], derive_seed(seed, 0xCA1B, s, i)).h;
      });
      filters_.push_back(fit_mmse(std::span<const ComplexVector>(calib)));
    }
  }

  void prepare_from_channels(std::span<const ComplexVector> channels) override {
    if (has_fixed_) return;
    filters_ = {fit_mmse(channels)};
  }

  std::vector<ComplexVector> estimate(const CellContext& cell,
                                      std::span<const Observation> batch) const override {
    const MmseFilter& f = has_fixed_ ? fixed_ : filters_.at(cell.scenario_index);
    std::vector<ComplexVector> out;
    out.reserve(batch.size());
    // One Wiener matrix per distinct noise level in the batch.
    std::map<double, ComplexMatrix> wiener;
    for (const auto& obs : batch) {
      auto it = wiener.find(obs.noise_var);
      if (it == wiener.end()) it = wiener.emplace(obs.noise_var, f.wiener_matrix(obs.noise_var)).first;
      out.push_back(it->second * obs.x_noisy);
    }
    return out;
  }

 private:
  std::size_t calibration_size_ = 10000;
  MmseFilter fixed_;
  bool has_fixed_ = false;
  std::vector<MmseFilter> filters_;
};

/// Learned denoiser: input minus predicted noise, in chunks.
template <typename T>
class DenoiserEstimator final : public Estimator {
 public:
  DenoiserEstimator(Racnn<T> model, std::string name, std::size_t chunk = 256)
      : model_(std::move(model)), name_(std::move(name)), chunk_(chunk) {
    model_.set_mode(nn::Mode::eval);
  }

  std::string name() const override { return name_; }

  std::vector<ComplexVector> estimate(const CellContext&,
                                      std::span<const Observation> batch) const override {
    const ModelConfig& mc = model_.config();
    std::vector<ComplexVector> out;
    out.reserve(batch.size());
    for (std::size_t start = 0; start < batch.size(); start += chunk_) {
      const std::size_t end = std::min(batch.size(), start + chunk_);
      std::vector<ComplexVector> xs;
      for (std::size_t i = start; i < end; ++i) xs.push_back(batch[i].x_noisy);
      const auto result = denoise(model_, batch_to_images<T>(xs, mc.image_rows, mc.image_cols));
      for (auto& h : images_to_batch(result.h_hat)) out.push_back(std::move(h));
    }
    return out;
  }

  const Racnn<T>& model() const { return model_; }

 private:
  Racnn<T> model_;
  std::string name_;
  std::size_t chunk_;
};

/// Genie baseline returning the clean channel.
class OracleEstimator final : public Estimator {
 public:
  std::string name() const override { return "oracle"; }
  std::vector<ComplexVector> estimate(const CellContext& cell,
                                      std::span<const Observation>) const override {
    return {cell.truth.begin(), cell.truth.end()};
  }
};

struct NmseCell {
  std::string scenario;
  std::string num_far;   // fixed count or "uLO-HI"
  std::string num_near;
  double snr_db = 0.0;
  std::string estimator;
  double nmse = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_samples = 0;
  std::uint64_t observation_checksum = 0;
  std::string error;
};

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct NmseReport {
  std::vector<NmseCell> cells;
  nlohmann::json config = nlohmann::json::object();

  /// FNV-1a 64 of the canonical config JSON, as 16 hex digits.
  std::string fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : config.dump()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  const NmseCell* find(const std::string& scenario_label, double snr_db,
                       const std::string& estimator) const {
    for (const auto& c : cells) {
      if (c.estimator == estimator && c.snr_db == snr_db &&
          (c.scenario + ":" + c.num_far + "/" + c.num_near) == scenario_label)
        return &c;
    }
    return nullptr;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "scenario,L_f,L_n,snr_db,estimator,nmse,n_samples\n";
    for (const auto& c : cells) {
      os << c.scenario << ',' << c.num_far << ',' << c.num_near << ','
         << format_double(c.snr_db) << ',' << c.estimator << ',' << format_double(c.nmse)
         << ',' << c.n_samples << '\n';
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json cells_json = nlohmann::json::array();
    for (const auto& c : cells) {
      nlohmann::json j{{"scenario", c.scenario}, {"L_f", c.num_far},
                       {"L_n", c.num_near},      {"snr_db", c.snr_db},
                       {"estimator", c.estimator}, {"n_samples", c.n_samples}};
      j["nmse"] = std::isnan(c.nmse) ? nlohmann::json(nullptr) : nlohmann::json(c.nmse);
      if (!c.error.empty()) j["error"] = c.error;
      cells_json.push_back(std::move(j));
    }
    return {{"fingerprint", fingerprint()}, {"config", config}, {"cells", cells_json}};
  }
};

struct SweepConfig {
  ArrayConfig array = ArrayConfig::half_wavelength(256);
  std::vector<ScenarioSpec> scenarios;
  std::vector<double> snrs_db;
  std::size_t samples_per_cell = 1000;
  std::uint64_t seed = 1;
  double transmit_power = 1.0;
  std::size_t batch_size = 1000;  // observations handed to an estimator at once
};

inline nlohmann::json to_json(const SweepConfig& cfg, std::span<const std::string> estimators) {
  nlohmann::json scen = nlohmann::json::array();
  for (const auto& s : cfg.scenarios) {
    scen.push_back({{"name", s.name}, {"L_f", s.far.to_string()}, {"L_n", s.near.to_string()},
                    {"distance", {s.distance_min, s.distance_max}},
                    {"gain_variance", s.gain_variance}});
  }
  return {{"antennas", cfg.array.num_antennas}, {"wavelength", cfg.array.wavelength},
          {"spacing", cfg.array.spacing},       {"scenarios", scen},
          {"snrs_db", cfg.snrs_db},             {"samples_per_cell", cfg.samples_per_cell},
          {"seed", cfg.seed},                   {"transmit_power", cfg.transmit_power},
          {"estimators", std::vector<std::string>(estimators.begin(), estimators.end())}};
}

/// FNV-1a over the bit patterns of every observed vector.
inline std::uint64_t observation_checksum(std::span<const Observation> obs) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& o : obs) {
    for (Eigen::Index m = 0; m < o.x_noisy.size(); ++m) {
      mix(o.x_noisy[m].real());
      mix(o.x_noisy[m].imag());
    }
    mix(o.noise_var);
  }
  return h;
}

namespace detail {

/// Runs one estimator over a cell in batches and stores the aggregate NMSE,
/// or the error message if the estimator throws.
inline void evaluate_cell(const Estimator& estimator, CellContext ctx,
                          std::span<const ComplexVector> truth,
                          std::span<const Observation> obs, std::size_t batch_size,
                          NmseCell& cell) {
  cell.n_samples = obs.size();
  try {
    std::vector<ComplexVector> est;
    est.reserve(obs.size());
    for (std::size_t start = 0; start < obs.size(); start += batch_size) {
      const std::size_t end = std::min(obs.size(), start + batch_size);
      ctx.truth = truth.subspan(start, end - start);
      auto part = estimator.estimate(ctx, obs.subspan(start, end - start));
      require(part.size() == end - start, "estimator returned wrong number of estimates");
      for (auto& v : part) est.push_back(std::move(v));
    }
    cell.nmse = nmse(truth, est);
  } catch (const std::exception& ex) {
    cell.error = ex.what();
    cell.nmse = std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace detail

/// Evaluates every (scenario, SNR, estimator) cell. Within a cell all
/// estimators see the same channel and noise draws. A throwing estimator
/// marks only its own cell as failed.
inline NmseReport run_sweep(std::span<Estimator* const> estimators, const SweepConfig& cfg) {
  cfg.array.validate();
  require(!cfg.scenarios.empty(), "sweep: empty scenario grid");
  require(!cfg.snrs_db.empty(), "sweep: empty SNR grid");
  require(cfg.samples_per_cell >= 1, "sweep: samples_per_cell must be positive");
  require(!estimators.empty(), "sweep: no estimators");

  std::vector<std::string> names;
  for (auto* e : estimators) names.push_back(e->name());
  for (auto* e : estimators) e->prepare(cfg.array, cfg.scenarios, cfg.seed);

  const std::size_t n_scen = cfg.scenarios.size(), n_snr = cfg.snrs_db.size(),
                    n_est = estimators.size();
  NmseReport report;
  report.config = to_json(cfg, names);
  report.cells.resize(n_scen * n_snr * n_est);

  parallel_for(n_scen * n_snr, [&](std::size_t cell_index) {
    const std::size_t s = cell_index / n_snr, k = cell_index % n_snr;
    const ScenarioSpec& scen = cfg.scenarios[s];
    const double snr = cfg.snrs_db[k];
    std::vector<ComplexVector> truth(cfg.samples_per_cell);
    std::vector<Observation> obs(cfg.samples_per_cell);
    for (std::size_t i = 0; i < cfg.samples_per_cell; ++i) {
      truth[i] = sample_channel(cfg.array, scen, derive_seed(cfg.seed, 0xC4A, s, i)).h;
      obs[i] = observe(truth[i], snr, cfg.transmit_power, derive_seed(cfg.seed, 0x5EED, s, k, i),
                       scen.gain_variance);
    }
    const std::uint64_t checksum = observation_checksum(obs);
    for (std::size_t e = 0; e < n_est; ++e) {
      NmseCell& cell = report.cells[(s * n_snr + k) * n_est + e];
      cell.scenario = scen.name;
      cell.num_far = scen.far.to_string();
      cell.num_near = scen.near.to_string();
      cell.snr_db = snr;
      cell.estimator = names[e];
      CellContext ctx{s, &scen, snr, {}};
      detail::evaluate_cell(*estimators[e], ctx, truth, obs, cfg.batch_size, cell);
      cell.observation_checksum = checksum;
    }
  });
  return report;
}

/// Evaluates estimators on stored clean channels. The noise for record i at
/// SNR index k is drawn with derive_seed(record.seed, 0xE7A1, k), so every
/// estimator sees the same observations.
inline NmseReport run_dataset_eval(std::span<Estimator* const> estimators, const Dataset& ds,
                                   std::span<const double> snrs_db,
                                   std::span<const ComplexVector> calibration,
                                   double transmit_power = 1.0, std::size_t batch_size = 1000) {
  require(ds.size() >= 1, "eval: empty dataset");
  require(!snrs_db.empty(), "eval: empty SNR grid");
  require(!estimators.empty(), "eval: no estimators");
  std::vector<std::string> names;
  for (auto* e : estimators) names.push_back(e->name());
  for (auto* e : estimators) e->prepare_from_channels(calibration);

  std::vector<ComplexVector> truth;
  truth.reserve(ds.size());
  for (const auto& r : ds.records) truth.push_back(r.h);

  NmseReport report;
  report.config = {{"antennas", ds.antennas},
                   {"samples", ds.size()},
                   {"snrs_db", std::vector<double>(snrs_db.begin(), snrs_db.end())},
                   {"transmit_power", transmit_power},
                   {"calibration_samples", calibration.size()},
                   {"estimators", names}};
  const std::size_t n_snr = snrs_db.size(), n_est = estimators.size();
  report.cells.resize(n_snr * n_est);
  ScenarioSpec scen;
  scen.name = "dataset";
  parallel_for(n_snr, [&](std::size_t k) {
    std::vector<Observation> obs(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      obs[i] = observe(truth[i], snrs_db[k], transmit_power,
                       derive_seed(ds.records[i].seed, 0xE7A1, k));
    }
    const std::uint64_t checksum = observation_checksum(obs);
    for (std::size_t e = 0; e < n_est; ++e) {
      NmseCell& cell = report.cells[k * n_est + e];
      cell.scenario = "dataset";
      cell.num_far = "file";
      cell.num_near = "file";
      cell.snr_db = snrs_db[k];
      cell.estimator = names[e];
      detail::evaluate_cell(*estimators[e], CellContext{0, &scen, snrs_db[k], {}}, truth, obs,
                            batch_size, cell);
      cell.observation_checksum = checksum;
    }
  });
  return report;
}

/// "0:4:20" (start:step:stop, inclusive) or "10,15" or "20".
inline std::vector<double> parse_snr_grid(const std::string& text) {
  auto to_d = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw InvalidArgument("invalid SNR grid '" + text + "'");
    }
  };
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw InvalidArgument("invalid SNR grid '" + text + "' (start:step:stop)");
    const double start = to_d(parts[0]), step = to_d(parts[1]), stop = to_d(parts[2]);
    if (!(step > 0) || stop < start) throw InvalidArgument("invalid SNR grid '" + text + "'");
    const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) out.push_back(start + step * static_cast<double>(i));
    return out;
  }
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) out.push_back(to_d(p));
  if (out.empty()) throw InvalidArgument("empty SNR grid");
  return out;
}

/// Groups separated by ';', each "far:3,5,7", "near:3,5,7" or
/// "hybrid:6/3,9/3,u0-10/u0-10". Counts accept N or uLO-HI.
inline std::vector<ScenarioSpec> parse_scenario_grid(const std::string& text) {
  std::vector<ScenarioSpec> out;
  std::stringstream groups(text);
  for (std::string group; std::getline(groups, group, ';');) {
    if (group.empty()) continue;
    const auto colon = group.find(':');
    if (colon == std::string::npos) {
      throw InvalidArgument("invalid scenario group '" + group + "' (expected kind:list)");
    }
    const std::string kind = group.substr(0, colon);
    std::stringstream items(group.substr(colon + 1));
    for (std::string item; std::getline(items, item, ',');) {
      if (kind == "far") {
        out.push_back(ScenarioSpec::far_only(PathCount::parse(item)));
      } else if (kind == "near") {
        out.push_back(ScenarioSpec::near_only(PathCount::parse(item)));
      } else if (kind == "hybrid") {
        const auto slash = item.find('/');
        if (slash == std::string::npos) {
          throw InvalidArgument("hybrid scenario '" + item + "' must be LF/LN");
        }
        out.push_back(ScenarioSpec::hybrid(PathCount::parse(item.substr(0, slash)),
                                           PathCount::parse(item.substr(slash + 1))));
      } else {
        throw InvalidArgument("unknown scenario kind '" + kind + "' (far|near|hybrid)");
      }
      out.back().validate();
    }
  }
  if (out.empty()) throw InvalidArgument("empty scenario grid");
  return out;
}

}  // namespace nfce
