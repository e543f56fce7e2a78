#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gazediff {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// One gaze sample: time in seconds, position normalized to the frame.
struct GazeSample {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const GazeSample&, const GazeSample&) = default;
};

/// A fixed-rate raw gaze signal of one observer on one video.
struct GazeTrajectory {
  std::vector<GazeSample> samples;
  double rate_hz = 30.0;
  std::string observer_id;
  std::string video_id;
  /// Number of samples clamped into the frame at ingestion.
  std::size_t clamp_count = 0;

  std::size_t size() const { return samples.size(); }
  std::vector<Point2> points() const;
};

struct VideoMeta {
  std::string video_id;
  int width_px = 0;
  int height_px = 0;
  double rate_hz = 0.0;
  int frame_count = 0;

  /// Throws UsageError when any dimension or the rate is not positive.
  void validate() const;
};

/// k history samples followed by predict_len generated samples.
struct WindowSpec {
  std::size_t history_len = 90;
  std::size_t predict_len = 45;

  std::size_t window_len() const { return history_len + predict_len; }
  void validate() const;
};

struct Window {
  std::vector<Point2> coords;
  std::size_t begin = 0;  // index of the first sample in the source trajectory
  std::size_t end = 0;    // one past the last
};

struct WindowSet {
  std::vector<Window> windows;
  /// Set when the trajectory was shorter than one window.
  bool too_short = false;
};

Point2 normalize(Point2 px, const VideoMeta& meta);
Point2 denormalize(Point2 unit, const VideoMeta& meta);

/// Raw row of a gaze CSV, before normalization.
struct GazeRow {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  std::string observer;
  std::size_t line = 0;
};

/// Parses `t,x,y,observer` rows. Throws DataError naming the line on malformed input.
std::vector<GazeRow> read_gaze_rows(const std::filesystem::path& path);

/// Reads a pixel-space gaze CSV into one trajectory per observer (first-seen order).
/// Duplicate timestamps keep the first row; each one is reported through `warnings`.
std::vector<GazeTrajectory> ingest_gaze_csv(const std::filesystem::path& path, const VideoMeta& meta,
                                            std::vector<std::string>* warnings = nullptr);

/// Timestamps closer than this are the same instant; CSV timestamps carry six decimals.
inline constexpr double kTimeTolerance = 1e-6;

/// Uniform resampling by linear interpolation over [t_first, t_last]. Target instants within
/// kTimeTolerance of a source sample take that sample's value.
GazeTrajectory resample(const GazeTrajectory& traj, double target_hz);

WindowSet to_windows(const GazeTrajectory& traj, const WindowSpec& spec, std::size_t stride);

void write_trajectory_csv(const GazeTrajectory& traj, const VideoMeta& meta,
                          const std::filesystem::path& path);

/// Builds a trajectory from normalized points at `rate_hz`, first sample at `t0`.
GazeTrajectory make_trajectory(std::span<const Point2> points, double rate_hz, double t0,
                               std::string observer_id, std::string video_id);

}  // namespace gazediff
