#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gazediff/core.hpp"

namespace gazediff {

enum class MetricSpace { Pixels, Normalized };

struct MetricConfig {
  std::size_t grid_rows = 8;
  std::size_t grid_cols = 8;
  double max_lag_s = 2.0;
  MetricSpace space = MetricSpace::Pixels;

  void validate() const;
};

enum class Metric : std::size_t { Levenshtein = 0, DiscreteFrechet = 1, Dtw = 2, MaxTemporalCorrelation = 3 };
inline constexpr std::size_t kMetricCount = 4;
inline constexpr std::array<Metric, kMetricCount> kAllMetrics{Metric::Levenshtein, Metric::DiscreteFrechet,
                                                              Metric::Dtw, Metric::MaxTemporalCorrelation};

constexpr bool lower_is_better(Metric m) { return m != Metric::MaxTemporalCorrelation; }
const char* metric_name(Metric m);

/// Row-major grid-cell symbol of every normalized point; x = 1 or y = 1 falls in the last cell.
std::vector<int> quantize_to_string(std::span<const Point2> points, std::size_t rows, std::size_t cols);

std::size_t levenshtein(std::span<const int> a, std::span<const int> b);

/// Throws UsageError on empty input.
double discrete_frechet(std::span<const Point2> p, std::span<const Point2> q);
double dtw(std::span<const Point2> p, std::span<const Point2> q);

/// Max over integer lags in [-max_lag, max_lag] of the mean of the x- and y-axis Pearson
/// correlations between p[i] and q[i + lag]. Lags with fewer than two overlapping samples are
/// skipped; a zero-variance axis contributes 0.
double max_temporal_correlation(std::span<const Point2> p, std::span<const Point2> q, std::size_t max_lag);

using MetricValues = std::array<double, kMetricCount>;

/// All four metrics for one pair of normalized trajectories on the same video.
MetricValues score_pair(std::span<const Point2> gt, std::span<const Point2> generated, const VideoMeta& meta,
                        const MetricConfig& cfg);

struct MetricSummary {
  double mean = 0.0;
  double best = 0.0;
};

struct VideoScores {
  std::string video_id;
  std::size_t gt_paths = 0;
  std::size_t generated_paths = 0;
  std::array<MetricSummary, kMetricCount> metrics{};
};

struct ScoreReport {
  std::vector<VideoScores> videos;
  /// Unweighted average over videos.
  std::array<MetricSummary, kMetricCount> overall{};
  std::size_t gt_paths = 0;
  std::size_t generated_paths = 0;

  const MetricSummary& operator[](Metric m) const { return overall[static_cast<std::size_t>(m)]; }
};

/// True when best <= mean for distances and best >= mean for correlation, per video and overall.
bool report_ordering_holds(const ScoreReport& report);

/// Normalized trajectories of one video.
struct VideoEvaluation {
  VideoMeta meta;
  std::vector<std::vector<Point2>> gt;
  std::vector<std::vector<Point2>> generated;
};

/// Scores every (GT, generated) pair, then per GT path takes best and mean over generated
/// paths, averages over GT paths, and finally over videos. Pairs are evaluated in parallel and
/// reduced in index order.
ScoreReport evaluate_protocol(std::span<const VideoEvaluation> videos, const MetricConfig& cfg, int workers = 0);

/// Pairwise metric table of one video, [gt][generated].
std::vector<std::vector<MetricValues>> pairwise_scores(const VideoEvaluation& video, const MetricConfig& cfg,
                                                       int workers = 0);

namespace reference {
std::vector<std::vector<MetricValues>> pairwise_scores_serial(const VideoEvaluation& video, const MetricConfig& cfg);
ScoreReport evaluate_protocol_serial(std::span<const VideoEvaluation> videos, const MetricConfig& cfg);
}  // namespace reference

/// `video_id,metric,variant,value`, one block per video followed by `ALL` summary rows.
void write_report_csv(const ScoreReport& report, const std::filesystem::path& path);
std::string format_report(const ScoreReport& report);

}  // namespace gazediff
