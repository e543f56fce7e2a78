#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gazediff/core.hpp"

namespace gazediff {

/// Per-frame single-channel saliency, frame-major then row-major, values in [0,1].
struct SaliencyClip {
  std::size_t height = 0;
  std::size_t width = 0;
  double rate_hz = 30.0;
  std::string video_id;
  std::vector<float> values;

  std::size_t frame_count() const { return height * width == 0 ? 0 : values.size() / (height * width); }
  std::span<const float> frame(std::size_t f) const {
    return std::span<const float>(values).subspan(f * height * width, height * width);
  }
  /// Throws DataError when shapes disagree or a value falls outside [0,1].
  void validate() const;
};

struct PoolGrid {
  std::size_t rows = 4;
  std::size_t cols = 4;
};

/// Pooled grids for every frame, frame-major, each rows x cols.
struct PooledFrames {
  PoolGrid grid;
  std::vector<double> values;

  std::size_t frame_count() const { return values.size() / (grid.rows * grid.cols); }
  std::span<const double> frame(std::size_t f) const {
    const auto cells = grid.rows * grid.cols;
    return std::span<const double>(values).subspan(f * cells, cells);
  }
};

/// A pooled value tagged with the normalized center of its cell.
struct LatentToken {
  double value = 0.0;
  double row = 0.0;
  double col = 0.0;

  friend bool operator==(const LatentToken&, const LatentToken&) = default;
};

struct LatentSequence {
  PoolGrid grid;
  std::size_t stride_frames = 5;
  double source_rate_hz = 30.0;
  std::size_t source_frame_count = 0;
  /// Source frame index of every kept token-set.
  std::vector<std::size_t> frame_index;
  /// token-set-major, rows*cols tokens per set.
  std::vector<LatentToken> tokens;

  std::size_t set_count() const { return frame_index.size(); }
  std::size_t tokens_per_set() const { return grid.rows * grid.cols; }
  std::span<const LatentToken> set(std::size_t s) const {
    return std::span<const LatentToken>(tokens).subspan(s * tokens_per_set(), tokens_per_set());
  }

  friend bool operator==(const LatentSequence&, const LatentSequence&) = default;
};

/// What the denoiser attends to: a latent token plus its time offset within the window, in [0,1).
struct CondToken {
  double value = 0.0;
  double row = 0.0;
  double col = 0.0;
  double time = 0.0;
};

/// Cell boundaries along one axis: equal partitions, remainder to the last cell.
std::vector<std::size_t> partition_bounds(std::size_t extent, std::size_t cells);

PooledFrames pool_compress(const SaliencyClip& clip, PoolGrid grid);

LatentSequence temporal_subsample(const PooledFrames& pooled, std::size_t stride_frames, double source_rate_hz = 30.0);

/// Tokens of every kept frame in [frame_begin, frame_begin + window_len), time-tagged relative to the window.
std::vector<CondToken> window_tokens(const LatentSequence& latents, long frame_begin, std::size_t window_len);

namespace reference {
/// Single-threaded pooling kept as the test oracle for the parallel kernel.
PooledFrames pool_compress_serial(const SaliencyClip& clip, PoolGrid grid);
}  // namespace reference

struct SynthSceneSpec {
  std::size_t blob_count = 1;
  double blob_sigma = 0.08;
  double motion_speed = 0.1;
  std::uint64_t seed = 1;
  double duration_s = 10.0;
  double rate_hz = 30.0;
  std::size_t height = 32;
  std::size_t width = 32;

  void validate() const;
};

struct SynthScene {
  SaliencyClip clip;
  /// Blob centers per frame, frame-major, blob_count per frame.
  std::vector<Point2> centers;
};

SynthScene synth_scene_with_truth(const SynthSceneSpec& spec);
SaliencyClip synth_scene(const SynthSceneSpec& spec);

struct OracleGazeParams {
  double fixation_dwell_s = 0.8;
  double saccade_dur_s = 0.05;
  double pursuit_gain = 0.5;
  double jitter_sigma = 0.004;
};

/// Sub-pixel saliency peaks of one frame (local maxima above `min_value`), strongest first.
std::vector<Point2> find_peaks(std::span<const float> frame, std::size_t height, std::size_t width,
                               double min_value = 0.25);

/// Simulated viewer: fixation with jitter, minimum-jerk saccades between peaks, lagged pursuit of moving peaks.
GazeTrajectory synth_gaze_oracle(const SaliencyClip& clip, std::uint64_t seed, const OracleGazeParams& params,
                                 std::string observer_id = "oracle");

// SALB: "SALB", u32 LE {version=1, frame_count, H, W}, then float32 LE values.
void write_salb(const SaliencyClip& clip, const std::filesystem::path& path);
SaliencyClip read_salb(const std::filesystem::path& path, double rate_hz = 30.0);
/// Directory of P5 frames named %06d.pgm, scaled by 1/255.
SaliencyClip read_pgm_dir(const std::filesystem::path& dir, double rate_hz = 30.0);
SaliencyClip load_saliency(const std::filesystem::path& path, double rate_hz = 30.0);

}  // namespace gazediff
