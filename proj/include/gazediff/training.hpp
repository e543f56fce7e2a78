#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gazediff/denoiser.hpp"

namespace gazediff {

/// One training window: n ground-truth coordinates and the conditioning tokens of its frames.
struct TrainingWindow {
  std::vector<Point2> coords;
  std::vector<CondToken> tokens;
};

struct TrainConfig {
  std::size_t epochs = 70;
  std::size_t batch_size = 8;
  AdamConfig adam;
  /// History length k is drawn uniformly from {0, ..., max_history} (capped at n-1).
  std::size_t max_history = 90;
  std::uint64_t seed = 0;
  /// OpenMP threads for per-example gradients; 0 uses the runtime default.
  int workers = 0;
};

struct TrainResult {
  /// Mean masked loss of every epoch run by this call.
  std::vector<double> epoch_loss;
  std::size_t first_epoch = 0;
};

/// Example drawn for a given (epoch, position-in-epoch): history length, timestep, noise seed.
struct ExampleDraw {
  std::size_t history_len = 0;
  std::size_t t = 1;
  std::uint64_t noise_seed = 0;
};

ExampleDraw draw_example(const TrainConfig& cfg, std::size_t window_len, std::size_t train_steps, std::size_t epoch,
                         std::size_t position);

/// Epoch order of the dataset: a seeded permutation.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count);

struct BatchItem {
  const TrainingWindow* window = nullptr;
  ExampleDraw draw;
};

/// Mean-over-batch gradient and per-example losses. Per-example gradients are computed in
/// parallel into separate buffers and summed in batch order, so the result does not depend
/// on the thread count.
double batch_gradient(const Denoiser& model, std::span<const BatchItem> batch, const NoiseSchedule& sched,
                      Gradients& out, int workers = 0);

namespace reference {
double batch_gradient_serial(const Denoiser& model, std::span<const BatchItem> batch, const NoiseSchedule& sched,
                             Gradients& out);
}  // namespace reference

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

/// Trains until `cfg.epochs` epochs are complete. Resumes from the epoch implied by the
/// parameter step counter, so a restored checkpoint continues the same sequence of batches.
TrainResult train(Denoiser& model, std::span<const TrainingWindow> data, const NoiseSchedule& sched,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace gazediff
