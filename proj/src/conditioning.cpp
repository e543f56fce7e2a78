#include "gazediff/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>

#include "binary_io.hpp"
#include "gazediff/error.hpp"

namespace gazediff {

void SaliencyClip::validate() const {
  if (height == 0 || width == 0) throw DataError("saliency clip '" + video_id + "' has an empty frame shape");
  if (values.empty() || values.size() % (height * width) != 0)
    throw DataError("saliency clip '" + video_id + "': value count is not a whole number of frames");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0f && values[i] <= 1.0f))
      throw DataError("saliency clip '" + video_id + "': value out of [0,1] at index " + std::to_string(i));
  }
}

std::vector<std::size_t> partition_bounds(std::size_t extent, std::size_t cells) {
  std::vector<std::size_t> bounds(cells + 1);
  const std::size_t step = extent / cells;
  for (std::size_t c = 0; c < cells; ++c) bounds[c] = c * step;
  bounds[cells] = extent;
  return bounds;
}

namespace {

void check_grid(const SaliencyClip& clip, PoolGrid grid) {
  if (grid.rows == 0 || grid.cols == 0) throw UsageError("pool grid must be at least 1x1");
  if (grid.rows > clip.height || grid.cols > clip.width)
    throw UsageError("pool grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                     " larger than frame " + std::to_string(clip.height) + "x" + std::to_string(clip.width));
}

void pool_frame(std::span<const float> frame, std::size_t width, const std::vector<std::size_t>& rb,
                const std::vector<std::size_t>& cb, std::span<double> out) {
  const std::size_t rows = rb.size() - 1;
  const std::size_t cols = cb.size() - 1;
  for (std::size_t gi = 0; gi < rows; ++gi) {
    for (std::size_t gj = 0; gj < cols; ++gj) {
      double sum = 0.0;
      for (std::size_t r = rb[gi]; r < rb[gi + 1]; ++r)
        for (std::size_t c = cb[gj]; c < cb[gj + 1]; ++c) sum += frame[r * width + c];
      const auto count = static_cast<double>((rb[gi + 1] - rb[gi]) * (cb[gj + 1] - cb[gj]));
      out[gi * cols + gj] = std::clamp(sum / count, 0.0, 1.0);
    }
  }
}

}  // namespace

PooledFrames pool_compress(const SaliencyClip& clip, PoolGrid grid) {
  check_grid(clip, grid);
  const auto rb = partition_bounds(clip.height, grid.rows);
  const auto cb = partition_bounds(clip.width, grid.cols);
  const auto frames = static_cast<long>(clip.frame_count());
  const std::size_t cells = grid.rows * grid.cols;

  PooledFrames out{grid, std::vector<double>(clip.frame_count() * cells)};
#pragma omp parallel for schedule(static)
  for (long f = 0; f < frames; ++f) {
    const auto fi = static_cast<std::size_t>(f);
    pool_frame(clip.frame(fi), clip.width, rb, cb, std::span<double>(out.values).subspan(fi * cells, cells));
  }
  return out;
}

namespace reference {

PooledFrames pool_compress_serial(const SaliencyClip& clip, PoolGrid grid) {
  check_grid(clip, grid);
  const auto rb = partition_bounds(clip.height, grid.rows);
  const auto cb = partition_bounds(clip.width, grid.cols);
  PooledFrames out{grid, {}};
  out.values.reserve(clip.frame_count() * grid.rows * grid.cols);
  for (std::size_t f = 0; f < clip.frame_count(); ++f) {
    const auto frame = clip.frame(f);
    for (std::size_t gi = 0; gi < grid.rows; ++gi) {
      for (std::size_t gj = 0; gj < grid.cols; ++gj) {
        double sum = 0.0;
        for (std::size_t r = rb[gi]; r < rb[gi + 1]; ++r)
          for (std::size_t c = cb[gj]; c < cb[gj + 1]; ++c) sum += frame[r * clip.width + c];
        const auto count = static_cast<double>((rb[gi + 1] - rb[gi]) * (cb[gj + 1] - cb[gj]));
        out.values.push_back(std::clamp(sum / count, 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace reference

LatentSequence temporal_subsample(const PooledFrames& pooled, std::size_t stride_frames, double source_rate_hz) {
  if (stride_frames < 1) throw UsageError("temporal_subsample: stride must be at least 1");
  LatentSequence out;
  out.grid = pooled.grid;
  out.stride_frames = stride_frames;
  out.source_rate_hz = source_rate_hz;
  out.source_frame_count = pooled.frame_count();
  for (std::size_t f = 0; f < pooled.frame_count(); f += stride_frames) {
    out.frame_index.push_back(f);
    const auto cells = pooled.frame(f);
    for (std::size_t i = 0; i < pooled.grid.rows; ++i)
      for (std::size_t j = 0; j < pooled.grid.cols; ++j)
        out.tokens.push_back({cells[i * pooled.grid.cols + j], (static_cast<double>(i) + 0.5) / pooled.grid.rows,
                              (static_cast<double>(j) + 0.5) / pooled.grid.cols});
  }
  return out;
}

std::vector<CondToken> window_tokens(const LatentSequence& latents, long frame_begin, std::size_t window_len) {
  std::vector<CondToken> out;
  const long frame_end = frame_begin + static_cast<long>(window_len);
  for (std::size_t s = 0; s < latents.set_count(); ++s) {
    const auto f = static_cast<long>(latents.frame_index[s]);
    if (f < frame_begin || f >= frame_end) continue;
    const double time = static_cast<double>(f - frame_begin) / static_cast<double>(window_len);
    for (const auto& tok : latents.set(s)) out.push_back({tok.value, tok.row, tok.col, time});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SynthSceneSpec::validate() const {
  if (blob_count < 1) throw UsageError("synth scene: blob_count must be positive");
  if (!(blob_sigma > 0.0)) throw UsageError("synth scene: blob_sigma must be positive");
  if (!(duration_s > 0.0) || !(rate_hz > 0.0)) throw UsageError("synth scene: duration and rate must be positive");
  if (!(motion_speed >= 0.0)) throw UsageError("synth scene: motion_speed must be non-negative");
  if (height == 0 || width == 0) throw UsageError("synth scene: frame shape must be non-empty");
}

namespace {

// Blob centers are confined to this box so peaks stay well inside the frame.
constexpr double kBoxLo = 0.1;
constexpr double kBoxHi = 0.9;
// Mean-reversion rate of the blob velocity process, 1/s.
constexpr double kVelocityReversion = 0.5;

void reflect(double& pos, double& vel) {
  for (int guard = 0; guard < 8 && (pos < kBoxLo || pos > kBoxHi); ++guard) {
    if (pos < kBoxLo) pos = 2 * kBoxLo - pos;
    if (pos > kBoxHi) pos = 2 * kBoxHi - pos;
    vel = -vel;
  }
  pos = std::clamp(pos, kBoxLo, kBoxHi);
}

}  // namespace

SynthScene synth_scene_with_truth(const SynthSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const auto frames = static_cast<std::size_t>(std::llround(spec.duration_s * spec.rate_hz));
  const double dt = 1.0 / spec.rate_hz;
  // Stationary per-axis velocity std is motion_speed / sqrt(2), so RMS speed is motion_speed.
  const double vel_std = spec.motion_speed / std::sqrt(2.0);
  const double vel_kick = spec.motion_speed * std::sqrt(kVelocityReversion);

  std::vector<Point2> pos(spec.blob_count), vel(spec.blob_count);
  for (std::size_t b = 0; b < spec.blob_count; ++b) {
    pos[b] = {kBoxLo + 0.1 + 0.6 * unit(rng), kBoxLo + 0.1 + 0.6 * unit(rng)};
    vel[b] = {vel_std * normal(rng), vel_std * normal(rng)};
  }

  SynthScene scene;
  scene.clip.height = spec.height;
  scene.clip.width = spec.width;
  scene.clip.rate_hz = spec.rate_hz;
  scene.clip.values.resize(std::max<std::size_t>(frames, 1) * spec.height * spec.width);
  scene.centers.reserve(frames * spec.blob_count);

  const double inv_two_sigma2 = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma);
  std::vector<double> field(spec.height * spec.width);
  for (std::size_t f = 0; f < std::max<std::size_t>(frames, 1); ++f) {
    std::fill(field.begin(), field.end(), 0.0);
    for (std::size_t b = 0; b < spec.blob_count; ++b) {
      scene.centers.push_back(pos[b]);
      for (std::size_t r = 0; r < spec.height; ++r) {
        const double dy = (static_cast<double>(r) + 0.5) / spec.height - pos[b].y;
        for (std::size_t c = 0; c < spec.width; ++c) {
          const double dx = (static_cast<double>(c) + 0.5) / spec.width - pos[b].x;
          field[r * spec.width + c] += std::exp(-(dx * dx + dy * dy) * inv_two_sigma2);
        }
      }
    }
    const double peak = *std::max_element(field.begin(), field.end());
    auto* dst = scene.clip.values.data() + f * spec.height * spec.width;
    for (std::size_t i = 0; i < field.size(); ++i) dst[i] = static_cast<float>(peak > 0 ? field[i] / peak : 0.0);

    for (std::size_t b = 0; b < spec.blob_count; ++b) {
      if (spec.motion_speed > 0.0) {
        vel[b].x += -kVelocityReversion * vel[b].x * dt + vel_kick * std::sqrt(dt) * normal(rng);
        vel[b].y += -kVelocityReversion * vel[b].y * dt + vel_kick * std::sqrt(dt) * normal(rng);
      }
      pos[b].x += vel[b].x * dt;
      pos[b].y += vel[b].y * dt;
      reflect(pos[b].x, vel[b].x);
      reflect(pos[b].y, vel[b].y);
    }
  }
  return scene;
}

SaliencyClip synth_scene(const SynthSceneSpec& spec) { return synth_scene_with_truth(spec).clip; }

std::vector<Point2> find_peaks(std::span<const float> frame, std::size_t height, std::size_t width, double min_value) {
  struct Peak {
    Point2 p;
    double v;
    std::size_t idx;
  };
  std::vector<Peak> peaks;
  auto at = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= static_cast<long>(height) || c >= static_cast<long>(width)) return -1.0;
    return frame[static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)];
  };
  // Offset of a parabola through log-values; exact for a Gaussian profile.
  auto refine = [](double l, double c, double r) {
    if (l <= 0.0 || r <= 0.0 || c <= 0.0) return 0.0;
    const double ll = std::log(l), lc = std::log(c), lr = std::log(r);
    const double denom = ll - 2.0 * lc + lr;
    if (!(denom < 0.0)) return 0.0;
    return std::clamp(0.5 * (ll - lr) / denom, -0.5, 0.5);
  };

  for (long r = 0; r < static_cast<long>(height); ++r) {
    for (long c = 0; c < static_cast<long>(width); ++c) {
      const double v = at(r, c);
      if (v < min_value) continue;
      bool is_max = true;
      for (long dr = -1; dr <= 1 && is_max; ++dr)
        for (long dc = -1; dc <= 1 && is_max; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const double n = at(r + dr, c + dc);
          // Plateaus resolve to their first cell in scan order.
          const bool earlier = dr < 0 || (dr == 0 && dc < 0);
          if (earlier ? n >= v : n > v) is_max = false;
        }
      if (!is_max) continue;
      const double ox = (c > 0 && c + 1 < static_cast<long>(width)) ? refine(at(r, c - 1), v, at(r, c + 1)) : 0.0;
      const double oy = (r > 0 && r + 1 < static_cast<long>(height)) ? refine(at(r - 1, c), v, at(r + 1, c)) : 0.0;
      peaks.push_back({{(static_cast<double>(c) + 0.5 + ox) / width, (static_cast<double>(r) + 0.5 + oy) / height},
                       v,
                       static_cast<std::size_t>(r) * width + static_cast<std::size_t>(c)});
    }
  }
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.v > b.v; });
  std::vector<Point2> out;
  out.reserve(peaks.size());
  for (const auto& p : peaks) out.push_back(p.p);
  return out;
}

namespace {

double dist2(Point2 a, Point2 b) { return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y); }

std::size_t nearest(const std::vector<Point2>& pts, Point2 q) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (dist2(pts[i], q) < dist2(pts[best], q)) best = i;
  return best;
}

double minimum_jerk(double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  return tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
}

}  // namespace

GazeTrajectory synth_gaze_oracle(const SaliencyClip& clip, std::uint64_t seed, const OracleGazeParams& params,
                                 std::string observer_id) {
  if (clip.frame_count() == 0) throw DataError("synth_gaze_oracle: empty clip");
  if (!(params.pursuit_gain > 0.0 && params.pursuit_gain <= 1.0))
    throw UsageError("pursuit_gain must lie in (0, 1]");
  if (!(params.saccade_dur_s > 0.0) || !(params.fixation_dwell_s > 0.0) || !(params.jitter_sigma >= 0.0))
    throw UsageError("oracle gaze parameters must be positive");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double dt = 1.0 / clip.rate_hz;
  auto draw_dwell = [&] { return params.fixation_dwell_s * (0.5 + unit(rng)); };

  auto peaks = find_peaks(clip.frame(0), clip.height, clip.width);
  if (peaks.empty()) peaks.push_back({0.5, 0.5});
  Point2 target = peaks[static_cast<std::size_t>(unit(rng) * static_cast<double>(peaks.size())) % peaks.size()];
  Point2 gaze = target;
  bool saccade = false;
  double dwell = draw_dwell();
  double progress = 0.0;
  Point2 saccade_start = gaze;

  std::vector<Point2> pts;
  pts.reserve(clip.frame_count());
  for (std::size_t f = 0; f < clip.frame_count(); ++f) {
    const double jx = params.jitter_sigma > 0 ? params.jitter_sigma * normal(rng) : 0.0;
    const double jy = params.jitter_sigma > 0 ? params.jitter_sigma * normal(rng) : 0.0;
    pts.push_back({std::clamp(gaze.x + jx, 0.0, 1.0), std::clamp(gaze.y + jy, 0.0, 1.0)});

    if (f > 0) {
      auto current = find_peaks(clip.frame(f), clip.height, clip.width);
      if (!current.empty()) peaks = std::move(current);
    }
    target = peaks[nearest(peaks, target)];

    if (saccade) {
      progress += dt / params.saccade_dur_s;
      const double s = minimum_jerk(progress);
      gaze = {saccade_start.x + (target.x - saccade_start.x) * s, saccade_start.y + (target.y - saccade_start.y) * s};
      if (progress >= 1.0) {
        saccade = false;
        dwell = draw_dwell();
      }
    } else {
      gaze = {gaze.x + params.pursuit_gain * (target.x - gaze.x), gaze.y + params.pursuit_gain * (target.y - gaze.y)};
      dwell -= dt;
      if (dwell <= 0.0) {
        if (peaks.size() > 1) {
          const std::size_t here = nearest(peaks, target);
          std::size_t pick = static_cast<std::size_t>(unit(rng) * static_cast<double>(peaks.size() - 1));
          pick = std::min(pick, peaks.size() - 2);
          if (pick >= here) ++pick;
          target = peaks[pick];
          saccade = true;
          progress = 0.0;
          saccade_start = gaze;
        } else {
          dwell = draw_dwell();
        }
      }
    }
  }
  return make_trajectory(pts, clip.rate_hz, 0.0, std::move(observer_id), clip.video_id);
}

// ---------------------------------------------------------------------------
// Storage

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_salb(const SaliencyClip& clip, const std::filesystem::path& path) {
  clip.validate();
  detail::ByteWriter w;
  w.bytes("SALB", 4);
  w.uint<std::uint32_t>(1);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(clip.frame_count()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(clip.height));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(clip.width));
  for (float v : clip.values) w.f32(v);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw DataError("write failed: " + path.string());
}

SaliencyClip read_salb(const std::filesystem::path& path, double rate_hz) {
  const auto buf = slurp(path);
  detail::ByteReader r(buf);
  std::string magic;
  if (!r.bytes(magic, 4) || magic != "SALB") throw DataError(path.string() + ": not a SALB file (bad magic)");
  std::uint32_t version = 0, frames = 0, h = 0, w = 0;
  if (!r.uint(version) || !r.uint(frames) || !r.uint(h) || !r.uint(w))
    throw DataError(path.string() + ": truncated SALB header at offset " + std::to_string(r.offset()));
  if (version != 1) throw DataError(path.string() + ": unsupported SALB version " + std::to_string(version));
  if (frames == 0 || h == 0 || w == 0) throw DataError(path.string() + ": SALB header declares an empty clip");
  const std::size_t count = static_cast<std::size_t>(frames) * h * w;
  if (r.remaining() != count * 4)
    throw DataError(path.string() + ": SALB payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                    std::to_string(count * 4) + " (data starts at offset " + std::to_string(r.offset()) + ")");
  SaliencyClip clip;
  clip.height = h;
  clip.width = w;
  clip.rate_hz = rate_hz;
  clip.video_id = path.stem().string();
  clip.values.resize(count);
  for (auto& v : clip.values) r.f32(v);
  clip.validate();
  return clip;
}

SaliencyClip read_pgm_dir(const std::filesystem::path& dir, double rate_hz) {
  SaliencyClip clip;
  clip.rate_hz = rate_hz;
  clip.video_id = dir.filename().string();
  for (std::size_t f = 0;; ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.pgm", f);
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) break;
    const auto buf = slurp(path);
    std::size_t pos = 0;
    auto token = [&]() -> std::string {
      for (;;) {
        while (pos < buf.size() && std::isspace(buf[pos])) ++pos;
        if (pos < buf.size() && buf[pos] == '#') {
          while (pos < buf.size() && buf[pos] != '\n') ++pos;
          continue;
        }
        break;
      }
      std::string t;
      while (pos < buf.size() && !std::isspace(buf[pos])) t.push_back(static_cast<char>(buf[pos++]));
      return t;
    };
    if (token() != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
      w = std::stoul(token());
      h = std::stoul(token());
      maxval = std::stoul(token());
    } catch (const std::exception&) {
      throw DataError(path.string() + ": malformed PGM header");
    }
    ++pos;  // single whitespace before raster
    if (maxval != 255) throw DataError(path.string() + ": only 8-bit PGM frames are supported");
    if (f == 0) {
      clip.width = w;
      clip.height = h;
    } else if (w != clip.width || h != clip.height) {
      throw DataError(path.string() + ": frame shape differs from first frame");
    }
    if (buf.size() < pos + w * h) throw DataError(path.string() + ": truncated PGM raster");
    for (std::size_t i = 0; i < w * h; ++i) clip.values.push_back(static_cast<float>(buf[pos + i]) / 255.0f);
  }
  if (clip.values.empty()) throw DataError(dir.string() + ": no frames named 000000.pgm ...");
  clip.validate();
  return clip;
}

SaliencyClip load_saliency(const std::filesystem::path& path, double rate_hz) {
  if (std::filesystem::is_directory(path)) return read_pgm_dir(path, rate_hz);
  return read_salb(path, rate_hz);
}

}  // namespace gazediff
