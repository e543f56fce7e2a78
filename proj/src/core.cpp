#include "gazediff/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "gazediff/error.hpp"

namespace gazediff {

std::vector<Point2> GazeTrajectory::points() const {
  std::vector<Point2> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.x, s.y});
  return out;
}

void VideoMeta::validate() const {
  if (width_px <= 0 || height_px <= 0 || frame_count <= 0 || !(rate_hz > 0.0))
    throw UsageError("video meta '" + video_id + "': dimensions, frame count and rate must be positive");
}

void WindowSpec::validate() const {
  if (predict_len < 1) throw UsageError("predict_len must be at least 1");
}

Point2 normalize(Point2 px, const VideoMeta& meta) {
  return {px.x / meta.width_px, px.y / meta.height_px};
}

Point2 denormalize(Point2 unit, const VideoMeta& meta) {
  return {unit.x * meta.width_px, unit.y * meta.height_px};
}

namespace {

bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace

std::vector<GazeRow> read_gaze_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open gaze CSV: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty gaze CSV: " + path.string());
  if (trim(line) != "t,x,y,observer")
    throw DataError(path.string() + ":1: expected header 't,x,y,observer'");

  std::vector<GazeRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    GazeRow row;
    row.line = line_no;
    if (fields.size() != 4 || !parse_double(fields[0], row.t) || !parse_double(fields[1], row.x) ||
        !parse_double(fields[2], row.y))
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    row.observer = trim(std::string(fields[3]));
    if (row.observer.empty())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty observer");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("gaze CSV has no data rows: " + path.string());
  return rows;
}

std::vector<GazeTrajectory> ingest_gaze_csv(const std::filesystem::path& path, const VideoMeta& meta,
                                            std::vector<std::string>* warnings) {
  meta.validate();
  auto rows = read_gaze_rows(path);

  std::vector<std::string> order;
  std::map<std::string, std::vector<GazeRow>> by_observer;
  for (auto& r : rows) {
    auto [it, inserted] = by_observer.try_emplace(r.observer);
    if (inserted) order.push_back(r.observer);
    it->second.push_back(std::move(r));
  }

  std::vector<GazeTrajectory> out;
  for (const auto& observer : order) {
    auto& obs_rows = by_observer[observer];
    std::stable_sort(obs_rows.begin(), obs_rows.end(),
                     [](const GazeRow& a, const GazeRow& b) { return a.t < b.t; });
    GazeTrajectory traj;
    traj.observer_id = observer;
    traj.video_id = meta.video_id;
    for (const auto& r : obs_rows) {
      if (!traj.samples.empty() && r.t == traj.samples.back().t) {
        if (warnings)
          warnings->push_back(path.string() + ":" + std::to_string(r.line) + ": duplicate timestamp for observer '" +
                              observer + "', row dropped");
        continue;
      }
      Point2 p = normalize({r.x, r.y}, meta);
      Point2 c{std::clamp(p.x, 0.0, 1.0), std::clamp(p.y, 0.0, 1.0)};
      if (c != p) ++traj.clamp_count;
      traj.samples.push_back({r.t, c.x, c.y});
    }
    const auto n = traj.samples.size();
    if (n >= 2 && traj.samples.back().t > traj.samples.front().t)
      traj.rate_hz = static_cast<double>(n - 1) / (traj.samples.back().t - traj.samples.front().t);
    else
      traj.rate_hz = meta.rate_hz;
    out.push_back(std::move(traj));
  }
  return out;
}

GazeTrajectory resample(const GazeTrajectory& traj, double target_hz) {
  if (!(target_hz > 0.0)) throw UsageError("resample: target rate must be positive");
  if (traj.samples.size() < 2) throw DataError("resample: need at least two samples to interpolate");

  const auto& s = traj.samples;
  const double t0 = s.front().t;
  const double span = s.back().t - t0;
  const auto count = static_cast<std::size_t>(std::floor((span + kTimeTolerance) * target_hz)) + 1;

  GazeTrajectory out;
  out.rate_hz = target_hz;
  out.observer_id = traj.observer_id;
  out.video_id = traj.video_id;
  out.clamp_count = traj.clamp_count;
  out.samples.reserve(count);

  std::size_t seg = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = t0 + static_cast<double>(i) / target_hz;
    while (seg + 2 < s.size() && s[seg + 1].t <= t + kTimeTolerance) ++seg;
    const auto& a = s[seg];
    const auto& b = s[seg + 1];
    if (std::abs(t - a.t) <= kTimeTolerance) {
      out.samples.push_back({t, a.x, a.y});
    } else if (std::abs(t - b.t) <= kTimeTolerance) {
      out.samples.push_back({t, b.x, b.y});
    } else {
      const double w = std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0);
      out.samples.push_back({t, a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)});
    }
  }
  return out;
}

WindowSet to_windows(const GazeTrajectory& traj, const WindowSpec& spec, std::size_t stride) {
  spec.validate();
  if (stride < 1) throw UsageError("to_windows: stride must be at least 1");
  WindowSet out;
  const std::size_t n = spec.window_len();
  if (traj.samples.size() < n) {
    out.too_short = true;
    return out;
  }
  for (std::size_t begin = 0; begin + n <= traj.samples.size(); begin += stride) {
    Window w;
    w.begin = begin;
    w.end = begin + n;
    w.coords.reserve(n);
    for (std::size_t i = begin; i < w.end; ++i) w.coords.push_back({traj.samples[i].x, traj.samples[i].y});
    out.windows.push_back(std::move(w));
  }
  return out;
}

void write_trajectory_csv(const GazeTrajectory& traj, const VideoMeta& meta, const std::filesystem::path& path) {
  if (traj.samples.empty()) throw DataError("refusing to write an empty trajectory to " + path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "t,x,y,observer\n";
  char buf[128];
  for (const auto& s : traj.samples) {
    const Point2 px = denormalize({s.x, s.y}, meta);
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,", s.t, px.x, px.y);
    out << buf << traj.observer_id << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

GazeTrajectory make_trajectory(std::span<const Point2> points, double rate_hz, double t0, std::string observer_id,
                               std::string video_id) {
  GazeTrajectory traj;
  traj.rate_hz = rate_hz;
  traj.observer_id = std::move(observer_id);
  traj.video_id = std::move(video_id);
  traj.samples.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    traj.samples.push_back({t0 + static_cast<double>(i) / rate_hz, points[i].x, points[i].y});
  return traj;
}

}  // namespace gazediff
