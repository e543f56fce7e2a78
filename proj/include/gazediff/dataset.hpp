#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gazediff/conditioning.hpp"
#include "gazediff/core.hpp"
#include "gazediff/run_config.hpp"
#include "gazediff/training.hpp"

namespace gazediff {

struct ManifestEntry {
  VideoMeta meta;
  /// Relative to the dataset root.
  std::filesystem::path saliency;
  std::vector<std::filesystem::path> gaze;
};

/// `manifest.csv` under a dataset root:
/// `video_id,width_px,height_px,rate_hz,frame_count,saliency,gaze` with gaze paths joined by ';'.
struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> videos;

  const ManifestEntry& find(const std::string& video_id) const;
};

inline const char* kManifestName = "manifest.csv";

void write_manifest(const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& root);

/// Writes the synthetic dataset of `cfg`: per clip a SALB file and one gaze CSV per oracle observer.
Manifest synth_dataset(const RunConfig& cfg);

std::string clip_id(std::size_t clip);
std::string observer_name(std::size_t observer);

/// A video with its conditioning latents and resampled gaze.
struct VideoData {
  VideoMeta meta;
  LatentSequence latents;
  std::vector<GazeTrajectory> gaze;

  const GazeTrajectory& observer(const std::string& id) const;
};

VideoData load_video(const Manifest& manifest, const ManifestEntry& entry, const RunConfig& cfg);

/// Source frame of a trajectory's first sample.
std::size_t first_frame(const GazeTrajectory& traj);

/// Training windows (stride = predict_len) of every observer not held out, with their tokens.
std::vector<TrainingWindow> training_windows(const std::vector<VideoData>& videos, const RunConfig& cfg);

/// Observer that seeds warm starts: `warm_observer`, else the first held-out observer, else the first one.
const GazeTrajectory& warm_start_source(const VideoData& video, const RunConfig& cfg);

/// Mean Euclidean step between consecutive samples, over all given trajectories.
double mean_step(const std::vector<const GazeTrajectory*>& trajectories);

/// Isotropic Gaussian random walk from `start`, reflected into [0,1]^2, whose expected step
/// length equals `step_length`. Returns `count` points after the start.
std::vector<Point2> random_walk(Point2 start, std::size_t count, double step_length, std::uint64_t seed);

/// Samples of `traj` with t in [t_begin, t_end] (1e-6 s tolerance).
GazeTrajectory crop(const GazeTrajectory& traj, double t_begin, double t_end);

}  // namespace gazediff
