#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <vector>

#include "nfce/io/dataset_file.hpp"
#include "nfce/observation.hpp"
#include "nfce/optim.hpp"
#include "nfce/racnn.hpp"

namespace nfce {

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  std::vector<double> train_snrs_db{10.0, 15.0};
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  double transmit_power = 1.0;
  AdamOptions adam{};
  std::function<void(const EpochStats&)> on_epoch;

  void validate() const {
    require(epochs >= 1, "train: epochs must be >= 1");
    require(batch_size >= 2, "train: batch size must be >= 2 (batch norm)");
    require(!train_snrs_db.empty(), "train: at least one training SNR required");
    require(val_fraction >= 0.0 && val_fraction < 1.0, "train: val_fraction must be in [0, 1)");
    require(adam.learning_rate >= 0.0, "train: learning rate must be non-negative");
  }
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  std::size_t skipped_steps = 0;
};

namespace detail {

inline constexpr std::uint64_t kSplitStream = 0x5B1171;
inline constexpr std::uint64_t kShuffleStream = 0x5F1E;
inline constexpr std::uint64_t kTrainNoiseStream = 0x7A15;
inline constexpr std::uint64_t kValNoiseStream = 0x7A1D;

/// Noisy and clean images for a list of dataset records. Each sample draws
/// its SNR uniformly from `snrs` and its noise from `noise_seed(record)`.
template <typename T, typename SeedFn>
std::pair<Tensor<T>, Tensor<T>> make_batch(const Dataset& ds,
                                           std::span<const std::size_t> indices,
                                           const ModelConfig& mc,
                                           const std::vector<double>& snrs,
                                           double transmit_power, Rng& snr_rng,
                                           SeedFn&& noise_seed) {
  std::vector<ComplexVector> noisy, clean;
  noisy.reserve(indices.size());
  clean.reserve(indices.size());
  for (std::size_t idx : indices) {
    const DatasetRecord& rec = ds.records[idx];
    const double snr = snrs[static_cast<std::size_t>(
        snr_rng.uniform_int(0, static_cast<std::int64_t>(snrs.size()) - 1))];
    noisy.push_back(observe(rec.h, snr, transmit_power, noise_seed(rec)).x_noisy);
    clean.push_back(rec.h);
  }
  return {batch_to_images<T>(noisy, mc.image_rows, mc.image_cols),
          batch_to_images<T>(clean, mc.image_rows, mc.image_cols)};
}

}  // namespace detail

/// Minibatch Adam on the MSE between the denoised output and the clean image.
/// A held-out split is scored in eval mode after every epoch, with fresh
/// noise each epoch. Deterministic for a fixed dataset, config and seed.
template <typename T>
TrainResult train(Racnn<T>& model, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  require(ds.antennas == mc.antennas(), "train: dataset M does not match model image size");
  require(ds.size() >= 2, "train: dataset needs at least two samples");

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  {
    Rng rng(derive_seed(cfg.seed, detail::kSplitStream));
    for (std::size_t i = order.size(); i-- > 1;) {
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }
  }
  std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(ds.size())));
  n_val = std::min(n_val, ds.size() - 2);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  TrainResult result;
  result.train_samples = train_idx.size();
  result.val_samples = val_idx.size();

  auto params = model.parameters();
  std::vector<Tensor<T>*> param_ptrs;
  for (auto& p : params) param_ptrs.push_back(p.tensor);
  AdamState<T> adam;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle(derive_seed(cfg.seed, detail::kShuffleStream, epoch));
    for (std::size_t i = train_idx.size(); i-- > 1;) {
      std::swap(train_idx[i], train_idx[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }
    model.set_mode(nn::Mode::train);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(start + cfg.batch_size, train_idx.size());
      if (end - start < 2) break;
      const std::span<const std::size_t> batch(train_idx.data() + start, end - start);
      auto [x, clean] = detail::make_batch<T>(
          ds, batch, mc, cfg.train_snrs_db, cfg.transmit_power, shuffle,
          [&](const DatasetRecord& r) { return derive_seed(r.seed, cfg.seed, detail::kTrainNoiseStream, epoch); });

      RacnnCache<T> cache;
      const Tensor<T> noise_hat = model.forward(x, nn::Mode::train, &cache);
      Tensor<T> h_hat(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) h_hat[i] = x[i] - noise_hat[i];
      auto [loss, grad] = mse_loss(h_hat, clean);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << epoch << ", batch " << batch_no
           << " (loss=" << loss << ")";
        throw NumericalError(os.str());
      }
      for (auto& g : grad.values()) g = -g;  // d h_hat / d noise_hat = -1
      const std::vector<Tensor<T>> grads = model.backward(cache, grad);
      if (!adam_step<T>(adam, param_ptrs, grads, cfg.adam)) ++result.skipped_steps;
      model.update_running_stats(cache);
      loss_sum += loss * static_cast<double>(end - start);
      loss_count += end - start;
    }

    model.set_mode(nn::Mode::eval);
    double val_sum = 0.0;
    std::size_t val_count = 0;
    Rng val_rng(derive_seed(cfg.seed, detail::kValNoiseStream, epoch));
    for (std::size_t start = 0; start < val_idx.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, val_idx.size());
      const std::span<const std::size_t> batch(val_idx.data() + start, end - start);
      auto [x, clean] = detail::make_batch<T>(
          ds, batch, mc, cfg.train_snrs_db, cfg.transmit_power, val_rng,
          [&](const DatasetRecord& r) { return derive_seed(r.seed, cfg.seed, detail::kValNoiseStream, epoch); });
      const DenoiseResult<T> out = denoise(model, x);
      val_sum += mse_loss(out.h_hat, clean).loss * static_cast<double>(end - start);
      val_count += end - start;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_mse = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    stats.val_mse = val_count ? val_sum / static_cast<double>(val_count)
                              : std::numeric_limits<double>::quiet_NaN();
    result.history.push_back(stats);
    if (cfg.on_epoch) cfg.on_epoch(stats);
  }
  model.set_mode(nn::Mode::eval);
  return result;
}

}  // namespace nfce
