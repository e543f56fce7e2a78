#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gazediff/conditioning.hpp"
#include "gazediff/denoiser.hpp"
#include "gazediff/diffusion.hpp"
#include "gazediff/metrics.hpp"
#include "gazediff/training.hpp"

namespace gazediff {

/// Every tunable of a run. Parsed from `key = value` lines; `#` starts a comment.
struct RunConfig {
  std::uint64_t seed = 1;
  int workers = 0;

  // synthetic dataset
  std::filesystem::path dataset_root = "data";
  std::size_t num_clips = 8;
  std::size_t observers_per_clip = 4;
  double clip_duration_s = 60.0;
  double rate_hz = 30.0;
  std::size_t saliency_height = 32;
  std::size_t saliency_width = 32;
  int video_width_px = 1280;
  int video_height_px = 720;
  std::vector<std::size_t> blob_counts{1, 2};
  double blob_sigma = 0.08;
  double motion_speed = 0.1;
  OracleGazeParams oracle;

  // windows and conditioning
  std::size_t history_len = 90;
  std::size_t predict_len = 45;
  std::size_t cond_stride = 5;
  std::size_t pool_rows = 4;
  std::size_t pool_cols = 4;

  // diffusion
  std::size_t train_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  std::size_t sample_steps = 50;
  double eta = 0.0;

  // denoiser
  std::size_t base_width = 32;
  std::vector<std::size_t> level_mults{1, 2, 4};
  std::vector<std::size_t> attn_levels;
  std::size_t cond_dim = 16;
  std::size_t heads = 4;

  // training
  double lr = 1e-4;
  std::size_t epochs = 70;
  std::size_t batch_size = 8;
  std::size_t max_history = 90;
  /// Observers excluded from training (held out for evaluation).
  std::vector<std::string> holdout_observers;
  std::filesystem::path checkpoint = "model.gzdf";
  std::filesystem::path loss_csv = "loss.csv";

  // generation
  std::filesystem::path gen_root = "generated";
  double horizon_s = 10.0;
  std::size_t num_samples = 10;
  /// Observer whose first history_len samples seed a warm start.
  std::string warm_observer;
  std::optional<Point2> cold_start;

  // evaluation
  std::size_t metric_grid_rows = 8;
  std::size_t metric_grid_cols = 8;
  double max_lag_s = 2.0;
  MetricSpace metric_space = MetricSpace::Pixels;
  /// GT observers scored by `evaluate`; empty means every observer.
  std::vector<std::string> eval_observers;
  std::filesystem::path report_path = "report.csv";

  /// Throws UsageError naming the line for syntax errors, unknown or repeated keys, and bad values.
  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  /// Range checks of every module invariant. Throws UsageError.
  void validate() const;

  WindowSpec window() const { return {history_len, predict_len}; }
  DiffusionConfig diffusion() const;
  DenoiserConfig denoiser() const;
  TrainConfig training() const;
  MetricConfig metrics() const;
  PoolGrid pool_grid() const { return {pool_rows, pool_cols}; }
  std::size_t horizon_samples() const;

  /// Canonical `key = value` text; parse(to_text()) reproduces the config.
  std::string to_text() const;
};

}  // namespace gazediff
