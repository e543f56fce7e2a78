#include "gazediff/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "gazediff/error.hpp"
#include "gazediff/seed.hpp"

namespace gazediff {

namespace {

constexpr std::uint64_t kSceneStream = 0x5343454e45;  // "SCENE"
constexpr std::uint64_t kObserverStream = 0x4f4253;   // "OBS"

constexpr const char* kManifestHeader = "video_id,width_px,height_px,rate_hz,frame_count,saliency,gaze";

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

const ManifestEntry& Manifest::find(const std::string& video_id) const {
  for (const auto& v : videos)
    if (v.meta.video_id == video_id) return v;
  throw DataError("video '" + video_id + "' is not in the manifest under " + root.string());
}

std::string clip_id(std::size_t clip) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip%02zu", clip);
  return buf;
}

std::string observer_name(std::size_t observer) { return "obs" + std::to_string(observer); }

void write_manifest(const Manifest& manifest) {
  const auto path = manifest.root / kManifestName;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << kManifestHeader << '\n';
  char rate[64];
  for (const auto& v : manifest.videos) {
    std::snprintf(rate, sizeof rate, "%.17g", v.meta.rate_hz);
    out << v.meta.video_id << ',' << v.meta.width_px << ',' << v.meta.height_px << ',' << rate << ','
        << v.meta.frame_count << ',' << v.saliency.generic_string() << ',';
    for (std::size_t i = 0; i < v.gaze.size(); ++i) out << (i ? ";" : "") << v.gaze[i].generic_string();
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& root) {
  const auto path = root / kManifestName;
  std::ifstream in(path);
  if (!in) throw DataError("missing manifest: " + path.string());
  Manifest m;
  m.root = root;
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw DataError(path.string() + ":1: expected header '" + kManifestHeader + "'");
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (f.size() != 7) throw DataError(where + "expected 7 fields");
    ManifestEntry e;
    try {
      e.meta.video_id = f[0];
      e.meta.width_px = std::stoi(f[1]);
      e.meta.height_px = std::stoi(f[2]);
      e.meta.rate_hz = std::stod(f[3]);
      e.meta.frame_count = std::stoi(f[4]);
    } catch (const std::exception&) {
      throw DataError(where + "malformed numeric field");
    }
    try {
      e.meta.validate();
    } catch (const Error& err) {
      throw DataError(where + err.what());
    }
    e.saliency = f[5];
    for (const auto& g : split(f[6], ';'))
      if (!g.empty()) e.gaze.emplace_back(g);
    if (e.gaze.empty()) throw DataError(where + "no gaze files listed");
    for (const auto& v : m.videos)
      if (v.meta.video_id == e.meta.video_id) throw DataError(where + "duplicate video '" + e.meta.video_id + "'");
    m.videos.push_back(std::move(e));
  }
  if (m.videos.empty()) throw DataError("manifest lists no videos: " + path.string());
  return m;
}

Manifest synth_dataset(const RunConfig& cfg) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(cfg.dataset_root, ec);
  if (ec) throw DataError("cannot create dataset root " + cfg.dataset_root.string() + ": " + ec.message());

  Manifest manifest;
  manifest.root = cfg.dataset_root;
  for (std::size_t c = 0; c < cfg.num_clips; ++c) {
    SynthSceneSpec spec;
    spec.blob_count = cfg.blob_counts[c % cfg.blob_counts.size()];
    spec.blob_sigma = cfg.blob_sigma;
    spec.motion_speed = cfg.motion_speed;
    spec.seed = derive_seed(cfg.seed, kSceneStream, c);
    spec.duration_s = cfg.clip_duration_s;
    spec.rate_hz = cfg.rate_hz;
    spec.height = cfg.saliency_height;
    spec.width = cfg.saliency_width;
    SaliencyClip clip = synth_scene(spec);
    clip.video_id = clip_id(c);

    ManifestEntry e;
    e.meta = {clip.video_id, cfg.video_width_px, cfg.video_height_px, cfg.rate_hz,
              static_cast<int>(clip.frame_count())};
    const std::filesystem::path dir = e.meta.video_id;
    std::filesystem::create_directories(cfg.dataset_root / dir, ec);
    if (ec) throw DataError("cannot create " + (cfg.dataset_root / dir).string() + ": " + ec.message());
    e.saliency = dir / "saliency.salb";
    write_salb(clip, cfg.dataset_root / e.saliency);
    for (std::size_t o = 0; o < cfg.observers_per_clip; ++o) {
      auto traj = synth_gaze_oracle(clip, derive_seed(cfg.seed, kObserverStream ^ c, o), cfg.oracle, observer_name(o));
      traj.video_id = e.meta.video_id;
      const auto rel = dir / ("gaze_" + observer_name(o) + ".csv");
      write_trajectory_csv(traj, e.meta, cfg.dataset_root / rel);
      e.gaze.push_back(rel);
    }
    manifest.videos.push_back(std::move(e));
  }
  write_manifest(manifest);
  return manifest;
}

const GazeTrajectory& VideoData::observer(const std::string& id) const {
  for (const auto& g : gaze)
    if (g.observer_id == id) return g;
  throw DataError("video '" + meta.video_id + "' has no observer '" + id + "'");
}

VideoData load_video(const Manifest& manifest, const ManifestEntry& entry, const RunConfig& cfg) {
  VideoData v;
  v.meta = entry.meta;
  const auto clip = load_saliency(manifest.root / entry.saliency, entry.meta.rate_hz);
  if (static_cast<int>(clip.frame_count()) != entry.meta.frame_count)
    throw DataError("video '" + entry.meta.video_id + "': saliency has " + std::to_string(clip.frame_count()) +
                    " frames, manifest says " + std::to_string(entry.meta.frame_count));
  v.latents = temporal_subsample(pool_compress(clip, cfg.pool_grid()), cfg.cond_stride, entry.meta.rate_hz);
  for (const auto& rel : entry.gaze) {
    for (auto& traj : ingest_gaze_csv(manifest.root / rel, entry.meta)) {
      if (traj.samples.size() < 2) throw DataError(rel.string() + ": observer '" + traj.observer_id + "' has one sample");
      v.gaze.push_back(resample(traj, cfg.rate_hz));
    }
  }
  return v;
}

std::size_t first_frame(const GazeTrajectory& traj) {
  if (traj.samples.empty()) return 0;
  return static_cast<std::size_t>(std::llround(std::max(0.0, traj.samples.front().t) * traj.rate_hz));
}

std::vector<TrainingWindow> training_windows(const std::vector<VideoData>& videos, const RunConfig& cfg) {
  const auto spec = cfg.window();
  const std::size_t n = spec.window_len();
  std::vector<TrainingWindow> out;
  for (const auto& v : videos) {
    for (const auto& traj : v.gaze) {
      if (std::find(cfg.holdout_observers.begin(), cfg.holdout_observers.end(), traj.observer_id) !=
          cfg.holdout_observers.end())
        continue;
      const std::size_t offset = first_frame(traj);
      for (auto& w : to_windows(traj, spec, cfg.predict_len).windows) {
        TrainingWindow tw;
        tw.coords = std::move(w.coords);
        tw.tokens = window_tokens(v.latents, static_cast<long>(offset + w.begin), n);
        out.push_back(std::move(tw));
      }
    }
  }
  return out;
}

const GazeTrajectory& warm_start_source(const VideoData& video, const RunConfig& cfg) {
  if (!cfg.warm_observer.empty()) return video.observer(cfg.warm_observer);
  for (const auto& id : cfg.holdout_observers)
    for (const auto& g : video.gaze)
      if (g.observer_id == id) return g;
  if (video.gaze.empty()) throw DataError("video '" + video.meta.video_id + "' has no gaze");
  return video.gaze.front();
}

double mean_step(const std::vector<const GazeTrajectory*>& trajectories) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto* t : trajectories) {
    for (std::size_t i = 1; i < t->samples.size(); ++i) {
      total += std::hypot(t->samples[i].x - t->samples[i - 1].x, t->samples[i].y - t->samples[i - 1].y);
      ++steps;
    }
  }
  if (steps == 0) throw DataError("mean_step: no consecutive samples");
  return total / static_cast<double>(steps);
}

namespace {
double reflect_unit(double v) {
  // fold onto [0, 2), then mirror the upper half
  v = std::fmod(v, 2.0);
  if (v < 0.0) v += 2.0;
  return v > 1.0 ? 2.0 - v : v;
}
}  // namespace

std::vector<Point2> random_walk(Point2 start, std::size_t count, double step_length, std::uint64_t seed) {
  // E|step| of an isotropic 2D Gaussian with per-axis sigma s is s * sqrt(pi / 2)
  const double sigma = step_length / std::sqrt(std::numbers::pi / 2.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Point2> out;
  out.reserve(count);
  Point2 p = start;
  for (std::size_t i = 0; i < count; ++i) {
    p.x = reflect_unit(p.x + sigma * normal(rng));
    p.y = reflect_unit(p.y + sigma * normal(rng));
    out.push_back(p);
  }
  return out;
}

GazeTrajectory crop(const GazeTrajectory& traj, double t_begin, double t_end) {
  GazeTrajectory out = traj;
  out.samples.clear();
  for (const auto& s : traj.samples)
    if (s.t >= t_begin - kTimeTolerance && s.t <= t_end + kTimeTolerance) out.samples.push_back(s);
  return out;
}

}  // namespace gazediff
