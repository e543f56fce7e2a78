#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "gazediff/conditioning.hpp"
#include "gazediff/core.hpp"

namespace gazediff {

/// beta/alpha/alpha_bar tables; step t is 1-based, index t-1.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  std::size_t steps() const { return beta.size(); }
  /// alpha_bar at step t, with alpha_bar(0) = 1.
  double alpha_bar_at(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }
};

NoiseSchedule linear_beta_schedule(std::size_t steps, double beta_start, double beta_end);

struct DiffusionConfig {
  NoiseSchedule schedule = linear_beta_schedule(1000, 1e-4, 2e-2);
  std::size_t sample_steps = 50;
  WindowSpec window;
  std::size_t cond_stride = 5;
  double eta = 0.0;
  double rate_hz = 30.0;

  void validate() const;
};

/// Noise predictor interface shared by the trained network and analytic test oracles.
/// `input` is window_len x 3 (x, y, history flag), position-major; returns window_len x 2.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual std::vector<double> predict_noise(std::span<const double> input, std::size_t t,
                                            std::span<const CondToken> tokens) const = 0;
};

/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps, elementwise.
std::vector<double> forward_noise(std::span<const double> x0, std::size_t t, std::span<const double> eps,
                                  const NoiseSchedule& sched);

struct TrainingExample {
  std::size_t window_len = 0;
  std::size_t history_len = 0;
  std::size_t t = 0;
  std::vector<double> input;       // n x 3
  std::vector<double> mask;        // n, 1 on supervised (suffix) positions
  std::vector<double> target_eps;  // n x 2, zero on the prefix
};

/// Clean prefix of length k with flag 1, forward-noised suffix with flag 0.
TrainingExample make_training_example(std::span<const Point2> window, std::size_t k, std::size_t t,
                                      std::uint64_t seed, const NoiseSchedule& sched);

/// Mean squared error over masked positions (both coordinates); `mask` has one entry per position.
double ddpm_loss(std::span<const double> pred_eps, std::span<const double> target_eps, std::span<const double> mask);
/// d loss / d pred_eps.
std::vector<double> ddpm_loss_grad(std::span<const double> pred_eps, std::span<const double> target_eps,
                                   std::span<const double> mask);

/// Sub-ladder of `sample_steps` timesteps in increasing order, uniform over [1, T], ending at T.
std::vector<std::size_t> ddim_timesteps(std::size_t train_steps, std::size_t sample_steps);

/// Runs the DDIM reverse process over `ladder` (descending from ladder.back()) on the suffix,
/// starting from `suffix` (predict_len x 2). Returns the unclamped x0 estimate.
std::vector<double> ddim_denoise(std::span<const Point2> history, std::vector<double> suffix,
                                 std::span<const std::size_t> ladder, std::span<const CondToken> tokens,
                                 const NoisePredictor& model, const NoiseSchedule& sched, double eta,
                                 std::mt19937_64& rng);

/// Draws the initial suffix from `seed`, denoises with the configured ladder, clamps to [0,1]^2.
std::vector<Point2> ddim_sample_window(std::span<const Point2> history, std::span<const CondToken> tokens,
                                       const NoisePredictor& model, const DiffusionConfig& cfg, std::uint64_t seed);

struct RolloutRequest {
  /// Either k points, or a single point replicated to fill the history (cold start).
  std::vector<Point2> history;
  /// First generated frame; window m spans frames [start + m*P - k, start + m*P + P).
  std::size_t start_frame = 0;
  std::size_t horizon = 0;
  std::uint64_t seed = 0;
  std::string observer_id = "generated";
  std::string video_id;
};

struct RolloutResult {
  GazeTrajectory trajectory;
  /// Set when the stimulus ended before the requested horizon.
  bool truncated = false;
  std::size_t windows = 0;
  /// History fed to each window, for inspection.
  std::vector<std::vector<Point2>> histories;
};

RolloutResult rollout(const RolloutRequest& request, const LatentSequence& latents, const NoisePredictor& model,
                      const DiffusionConfig& cfg);

/// Seed of rollout window `step`.
inline std::uint64_t window_seed(std::uint64_t seed, std::uint64_t step) { return seed ^ step; }

}  // namespace gazediff
