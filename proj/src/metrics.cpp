#include "gazediff/metrics.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <sstream>

#include "gazediff/error.hpp"

namespace gazediff {

void MetricConfig::validate() const {
  if (grid_rows < 1 || grid_cols < 1) throw UsageError("metric grid must be at least 1x1");
  if (!(max_lag_s >= 0.0)) throw UsageError("max_lag_s must be non-negative");
}

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::Levenshtein: return "levenshtein";
    case Metric::DiscreteFrechet: return "discrete_frechet";
    case Metric::Dtw: return "dtw";
    case Metric::MaxTemporalCorrelation: return "max_temporal_correlation";
  }
  return "?";
}

std::vector<int> quantize_to_string(std::span<const Point2> points, std::size_t rows, std::size_t cols) {
  if (rows < 1 || cols < 1) throw UsageError("quantize_to_string: grid must be at least 1x1");
  std::vector<int> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const auto r = std::min(static_cast<std::size_t>(std::clamp(p.y, 0.0, 1.0) * static_cast<double>(rows)), rows - 1);
    const auto c = std::min(static_cast<std::size_t>(std::clamp(p.x, 0.0, 1.0) * static_cast<double>(cols)), cols - 1);
    out.push_back(static_cast<int>(r * cols + c));
  }
  return out;
}

std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

inline double dist(Point2 a, Point2 b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

void require_non_empty(std::span<const Point2> p, std::span<const Point2> q, const char* what) {
  if (p.empty() || q.empty()) throw UsageError(std::string(what) + ": sequences must be non-empty");
}

}  // namespace

double discrete_frechet(std::span<const Point2> p, std::span<const Point2> q) {
  require_non_empty(p, q, "discrete_frechet");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(q.size(), inf), cur(q.size(), inf);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double d = dist(p[i], q[j]);
      double reach;
      if (i == 0 && j == 0) reach = -inf;
      else if (i == 0) reach = cur[j - 1];
      else if (j == 0) reach = prev[j];
      else reach = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = std::max(d, reach);
    }
    std::swap(prev, cur);
  }
  return prev[q.size() - 1];
}

double dtw(std::span<const Point2> p, std::span<const Point2> q) {
  require_non_empty(p, q, "dtw");
  std::vector<double> prev(q.size()), cur(q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double d = dist(p[i], q[j]);
      if (i == 0 && j == 0) cur[j] = d;
      else if (i == 0) cur[j] = d + cur[j - 1];
      else if (j == 0) cur[j] = d + prev[j];
      else cur[j] = d + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[q.size() - 1];
}

namespace {

double pearson(const double* a, const double* b, std::size_t n) {
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  // Relative threshold so a numerically constant signal counts as zero-variance.
  const double scale_a = std::max(std::abs(ma), 1.0), scale_b = std::max(std::abs(mb), 1.0);
  if (saa <= 1e-24 * scale_a * scale_a * static_cast<double>(n) ||
      sbb <= 1e-24 * scale_b * scale_b * static_cast<double>(n))
    return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace

double max_temporal_correlation(std::span<const Point2> p, std::span<const Point2> q, std::size_t max_lag) {
  std::vector<double> px(p.size()), py(p.size()), qx(q.size()), qy(q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    px[i] = p[i].x;
    py[i] = p[i].y;
  }
  for (std::size_t i = 0; i < q.size(); ++i) {
    qx[i] = q[i].x;
    qy[i] = q[i].y;
  }
  double best = -std::numeric_limits<double>::infinity();
  const long lag_max = static_cast<long>(max_lag);
  for (long lag = -lag_max; lag <= lag_max; ++lag) {
    // pairs (p[i], q[i + lag])
    const long i0 = std::max(0L, -lag);
    const long i1 = std::min(static_cast<long>(p.size()), static_cast<long>(q.size()) - lag);
    if (i1 - i0 < 2) continue;
    const auto n = static_cast<std::size_t>(i1 - i0);
    const double cx = pearson(px.data() + i0, qx.data() + i0 + lag, n);
    const double cy = pearson(py.data() + i0, qy.data() + i0 + lag, n);
    best = std::max(best, 0.5 * (cx + cy));
  }
  if (!std::isfinite(best))
    throw UsageError("max_temporal_correlation: fewer than two overlapping samples at every lag");
  return best;
}

MetricValues score_pair(std::span<const Point2> gt, std::span<const Point2> generated, const VideoMeta& meta,
                        const MetricConfig& cfg) {
  require_non_empty(gt, generated, "score_pair");
  std::vector<Point2> a(gt.begin(), gt.end()), b(generated.begin(), generated.end());
  if (cfg.space == MetricSpace::Pixels) {
    for (auto& pt : a) pt = denormalize(pt, meta);
    for (auto& pt : b) pt = denormalize(pt, meta);
  }
  const std::size_t common = std::min(gt.size(), generated.size());
  MetricValues v{};
  const auto sa = quantize_to_string(gt.first(common), cfg.grid_rows, cfg.grid_cols);
  const auto sb = quantize_to_string(generated.first(common), cfg.grid_rows, cfg.grid_cols);
  v[static_cast<std::size_t>(Metric::Levenshtein)] = static_cast<double>(levenshtein(sa, sb));
  v[static_cast<std::size_t>(Metric::DiscreteFrechet)] = discrete_frechet(a, b);
  v[static_cast<std::size_t>(Metric::Dtw)] = dtw(a, b);
  const auto lag = static_cast<std::size_t>(std::llround(cfg.max_lag_s * meta.rate_hz));
  v[static_cast<std::size_t>(Metric::MaxTemporalCorrelation)] =
      max_temporal_correlation(std::span<const Point2>(a).first(common), std::span<const Point2>(b).first(common), lag);
  return v;
}

namespace {

void check_video(const VideoEvaluation& video) {
  if (video.gt.empty()) throw DataError("video '" + video.meta.video_id + "' has no ground-truth trajectories");
  if (video.generated.empty()) throw DataError("video '" + video.meta.video_id + "' has no generated trajectories");
  for (const auto& t : video.gt)
    if (t.empty()) throw DataError("video '" + video.meta.video_id + "' has an empty ground-truth trajectory");
  for (const auto& t : video.generated)
    if (t.empty()) throw DataError("video '" + video.meta.video_id + "' has an empty generated trajectory");
}

VideoScores summarize(const VideoEvaluation& video, const std::vector<std::vector<MetricValues>>& table) {
  VideoScores vs;
  vs.video_id = video.meta.video_id;
  vs.gt_paths = video.gt.size();
  vs.generated_paths = video.generated.size();
  for (auto m : kAllMetrics) {
    const auto mi = static_cast<std::size_t>(m);
    double best_sum = 0.0, mean_sum = 0.0;
    for (const auto& row : table) {
      double best = row.front()[mi];
      double sum = 0.0;
      for (const auto& cell : row) {
        best = lower_is_better(m) ? std::min(best, cell[mi]) : std::max(best, cell[mi]);
        sum += cell[mi];
      }
      best_sum += best;
      mean_sum += sum / static_cast<double>(row.size());
    }
    vs.metrics[mi] = {mean_sum / static_cast<double>(table.size()), best_sum / static_cast<double>(table.size())};
  }
  return vs;
}

ScoreReport combine(std::vector<VideoScores> videos) {
  ScoreReport report;
  for (const auto& v : videos) {
    report.gt_paths += v.gt_paths;
    report.generated_paths += v.generated_paths;
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      report.overall[m].mean += v.metrics[m].mean;
      report.overall[m].best += v.metrics[m].best;
    }
  }
  for (auto& s : report.overall) {
    s.mean /= static_cast<double>(videos.size());
    s.best /= static_cast<double>(videos.size());
  }
  report.videos = std::move(videos);
  return report;
}

}  // namespace

std::vector<std::vector<MetricValues>> pairwise_scores(const VideoEvaluation& video, const MetricConfig& cfg,
                                                       int workers) {
  cfg.validate();
  check_video(video);
  const std::size_t gens = video.generated.size();
  std::vector<std::vector<MetricValues>> table(video.gt.size(), std::vector<MetricValues>(gens));
  const long pairs = static_cast<long>(video.gt.size() * gens);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers > 0 ? workers : omp_get_max_threads())
  for (long idx = 0; idx < pairs; ++idx) {
    const auto g = static_cast<std::size_t>(idx) / gens;
    const auto s = static_cast<std::size_t>(idx) % gens;
    try {
      table[g][s] = score_pair(video.gt[g], video.generated[s], video.meta, cfg);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return table;
}

ScoreReport evaluate_protocol(std::span<const VideoEvaluation> videos, const MetricConfig& cfg, int workers) {
  if (videos.empty()) throw DataError("evaluate_protocol: no videos");
  std::vector<VideoScores> scores;
  for (const auto& v : videos) scores.push_back(summarize(v, pairwise_scores(v, cfg, workers)));
  return combine(std::move(scores));
}

namespace reference {

std::vector<std::vector<MetricValues>> pairwise_scores_serial(const VideoEvaluation& video, const MetricConfig& cfg) {
  cfg.validate();
  check_video(video);
  std::vector<std::vector<MetricValues>> table;
  for (const auto& gt : video.gt) {
    auto& row = table.emplace_back();
    for (const auto& gen : video.generated) row.push_back(score_pair(gt, gen, video.meta, cfg));
  }
  return table;
}

ScoreReport evaluate_protocol_serial(std::span<const VideoEvaluation> videos, const MetricConfig& cfg) {
  if (videos.empty()) throw DataError("evaluate_protocol: no videos");
  std::vector<VideoScores> scores;
  for (const auto& v : videos) scores.push_back(summarize(v, pairwise_scores_serial(v, cfg)));
  return combine(std::move(scores));
}

}  // namespace reference

bool report_ordering_holds(const ScoreReport& report) {
  auto ok = [](const std::array<MetricSummary, kMetricCount>& s) {
    for (auto m : kAllMetrics) {
      const auto& v = s[static_cast<std::size_t>(m)];
      // Averaging can reorder the last bit of equal values.
      const double slack = 1e-12 * std::max(1.0, std::abs(v.mean));
      if (lower_is_better(m) ? v.best > v.mean + slack : v.best < v.mean - slack) return false;
    }
    return true;
  };
  if (!ok(report.overall)) return false;
  for (const auto& v : report.videos)
    if (!ok(v.metrics)) return false;
  return true;
}

void write_report_csv(const ScoreReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write report " + path.string());
  out << "video_id,metric,variant,value\n";
  char buf[64];
  auto rows = [&](const std::string& id, const std::array<MetricSummary, kMetricCount>& s) {
    for (auto m : kAllMetrics) {
      const auto& v = s[static_cast<std::size_t>(m)];
      std::snprintf(buf, sizeof buf, "%.9g", v.mean);
      out << id << ',' << metric_name(m) << ",mean," << buf << '\n';
      std::snprintf(buf, sizeof buf, "%.9g", v.best);
      out << id << ',' << metric_name(m) << ",best," << buf << '\n';
    }
  };
  for (const auto& v : report.videos) rows(v.video_id, v.metrics);
  rows("ALL", report.overall);
  if (!out) throw DataError("write failed: " + path.string());
}

std::string format_report(const ScoreReport& report) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu videos, %zu GT paths, %zu generated paths\n", report.videos.size(),
                report.gt_paths, report.generated_paths);
  os << buf;
  std::snprintf(buf, sizeof buf, "%-26s %14s %14s\n", "metric", "mean", "best");
  os << buf;
  for (auto m : kAllMetrics) {
    const auto& v = report[m];
    std::snprintf(buf, sizeof buf, "%-26s %14.4f %14.4f\n", metric_name(m), v.mean, v.best);
    os << buf;
  }
  return os.str();
}

}  // namespace gazediff
