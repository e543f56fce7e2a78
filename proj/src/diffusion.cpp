#include "gazediff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gazediff/error.hpp"

namespace gazediff {

NoiseSchedule linear_beta_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 2) throw UsageError("noise schedule needs at least 2 steps");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw UsageError("noise schedule requires 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double running = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    s.beta[i] = beta_start + static_cast<double>(i) / static_cast<double>(steps - 1) * (beta_end - beta_start);
    s.alpha[i] = 1.0 - s.beta[i];
    running *= s.alpha[i];
    s.alpha_bar[i] = running;
  }
  return s;
}

void DiffusionConfig::validate() const {
  window.validate();
  if (sample_steps < 1 || sample_steps > schedule.steps())
    throw UsageError("sample_steps must lie in [1, T]");
  if (!(eta >= 0.0 && eta <= 1.0)) throw UsageError("eta must lie in [0, 1]");
  if (cond_stride < 1) throw UsageError("cond_stride must be at least 1");
  if (!(rate_hz > 0.0)) throw UsageError("rate_hz must be positive");
}

std::vector<double> forward_noise(std::span<const double> x0, std::size_t t, std::span<const double> eps,
                                  const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps())
    throw UsageError("forward_noise: step " + std::to_string(t) + " outside [1, " + std::to_string(sched.steps()) + "]");
  if (eps.size() != x0.size()) throw UsageError("forward_noise: noise shape differs from x0");
  const double a = std::sqrt(sched.alpha_bar_at(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar_at(t));
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

TrainingExample make_training_example(std::span<const Point2> window, std::size_t k, std::size_t t,
                                      std::uint64_t seed, const NoiseSchedule& sched) {
  const std::size_t n = window.size();
  if (k >= n) throw UsageError("make_training_example: history length must be below the window length");
  TrainingExample ex;
  ex.window_len = n;
  ex.history_len = k;
  ex.t = t;
  ex.input.assign(n * 3, 0.0);
  ex.mask.assign(n, 0.0);
  ex.target_eps.assign(n * 2, 0.0);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x0, eps;
  x0.reserve((n - k) * 2);
  eps.reserve((n - k) * 2);
  for (std::size_t i = k; i < n; ++i) {
    x0.push_back(window[i].x);
    x0.push_back(window[i].y);
    eps.push_back(normal(rng));
    eps.push_back(normal(rng));
  }
  const auto noised = forward_noise(x0, t, eps, sched);

  for (std::size_t i = 0; i < n; ++i) {
    if (i < k) {
      ex.input[3 * i] = window[i].x;
      ex.input[3 * i + 1] = window[i].y;
      ex.input[3 * i + 2] = 1.0;
    } else {
      const std::size_t j = i - k;
      ex.input[3 * i] = noised[2 * j];
      ex.input[3 * i + 1] = noised[2 * j + 1];
      ex.mask[i] = 1.0;
      ex.target_eps[2 * i] = eps[2 * j];
      ex.target_eps[2 * i + 1] = eps[2 * j + 1];
    }
  }
  return ex;
}

namespace {

double masked_count(std::span<const double> pred, std::span<const double> target, std::span<const double> mask) {
  if (pred.size() != target.size() || pred.size() != mask.size() * 2)
    throw UsageError("ddpm_loss: shape mismatch");
  double count = 0.0;
  for (double m : mask) count += m;
  if (count <= 0.0) throw UsageError("ddpm_loss: mask selects no positions");
  return 2.0 * count;
}

}  // namespace

double ddpm_loss(std::span<const double> pred_eps, std::span<const double> target_eps, std::span<const double> mask) {
  const double count = masked_count(pred_eps, target_eps, mask);
  double sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0.0) continue;
    for (std::size_t c = 0; c < 2; ++c) {
      const double d = pred_eps[2 * i + c] - target_eps[2 * i + c];
      sum += mask[i] * d * d;
    }
  }
  return sum / count;
}

std::vector<double> ddpm_loss_grad(std::span<const double> pred_eps, std::span<const double> target_eps,
                                   std::span<const double> mask) {
  const double count = masked_count(pred_eps, target_eps, mask);
  std::vector<double> g(pred_eps.size(), 0.0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0.0) continue;
    for (std::size_t c = 0; c < 2; ++c)
      g[2 * i + c] = 2.0 * mask[i] * (pred_eps[2 * i + c] - target_eps[2 * i + c]) / count;
  }
  return g;
}

std::vector<std::size_t> ddim_timesteps(std::size_t train_steps, std::size_t sample_steps) {
  if (sample_steps < 1 || sample_steps > train_steps) throw UsageError("ddim_timesteps: need 1 <= S <= T");
  if (sample_steps == 1) return {train_steps};
  std::vector<std::size_t> out(sample_steps);
  for (std::size_t i = 0; i < sample_steps; ++i) out[i] = 1 + i * (train_steps - 1) / (sample_steps - 1);
  return out;
}

std::vector<double> ddim_denoise(std::span<const Point2> history, std::vector<double> suffix,
                                 std::span<const std::size_t> ladder, std::span<const CondToken> tokens,
                                 const NoisePredictor& model, const NoiseSchedule& sched, double eta,
                                 std::mt19937_64& rng) {
  const std::size_t k = history.size();
  const std::size_t p = suffix.size() / 2;
  const std::size_t n = k + p;
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> input(n * 3, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    input[3 * i] = history[i].x;
    input[3 * i + 1] = history[i].y;
    input[3 * i + 2] = 1.0;
  }

  for (std::size_t step = ladder.size(); step-- > 0;) {
    const std::size_t t = ladder[step];
    const std::size_t t_prev = step > 0 ? ladder[step - 1] : 0;
    for (std::size_t j = 0; j < p; ++j) {
      input[3 * (k + j)] = suffix[2 * j];
      input[3 * (k + j) + 1] = suffix[2 * j + 1];
      input[3 * (k + j) + 2] = 0.0;
    }
    const auto eps_full = model.predict_noise(input, t, tokens);
    if (eps_full.size() != n * 2)
      throw NumericalError("denoiser returned " + std::to_string(eps_full.size()) + " values, expected " +
                           std::to_string(n * 2));

    const double ab = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_at(t_prev);
    const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    const double dir_scale = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    for (std::size_t i = 0; i < 2 * p; ++i) {
      const double eps = eps_full[2 * k + i];
      const double x0 = (suffix[i] - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
      double next = std::sqrt(ab_prev) * x0 + dir_scale * eps;
      if (sigma > 0.0) next += sigma * normal(rng);
      if (!std::isfinite(next))
        throw NumericalError("DDIM step t=" + std::to_string(t) + " produced a non-finite value at suffix element " +
                             std::to_string(i));
      suffix[i] = next;
    }
  }
  return suffix;
}

std::vector<Point2> ddim_sample_window(std::span<const Point2> history, std::span<const CondToken> tokens,
                                       const NoisePredictor& model, const DiffusionConfig& cfg, std::uint64_t seed) {
  if (history.size() != cfg.window.history_len)
    throw UsageError("ddim_sample_window: history has " + std::to_string(history.size()) + " samples, expected " +
                     std::to_string(cfg.window.history_len));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> suffix(cfg.window.predict_len * 2);
  for (auto& v : suffix) v = normal(rng);
  const auto ladder = ddim_timesteps(cfg.schedule.steps(), cfg.sample_steps);
  const auto x0 = ddim_denoise(history, std::move(suffix), ladder, tokens, model, cfg.schedule, cfg.eta, rng);
  std::vector<Point2> out(cfg.window.predict_len);
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = {std::clamp(x0[2 * j], 0.0, 1.0), std::clamp(x0[2 * j + 1], 0.0, 1.0)};
  return out;
}

RolloutResult rollout(const RolloutRequest& request, const LatentSequence& latents, const NoisePredictor& model,
                      const DiffusionConfig& cfg) {
  cfg.validate();
  const std::size_t k = cfg.window.history_len;
  const std::size_t p = cfg.window.predict_len;
  if (request.horizon < 1) throw UsageError("rollout: horizon must be at least one sample");
  if (latents.set_count() == 0) throw DataError("rollout: conditioning latents are empty");

  std::vector<Point2> history;
  if (request.history.size() == k) {
    history = request.history;
  } else if (request.history.size() == 1) {
    history.assign(k, request.history.front());
  } else {
    throw UsageError("rollout: initial history must hold " + std::to_string(k) + " samples or a single point");
  }

  const std::size_t frames = latents.source_frame_count;
  if (request.start_frame >= frames) throw DataError("rollout: start frame lies beyond the stimulus");
  const std::size_t available = std::min(request.horizon, frames - request.start_frame);

  RolloutResult result;
  result.truncated = available < request.horizon;
  std::vector<Point2> emitted;
  emitted.reserve(available);
  for (std::size_t m = 0; emitted.size() < available; ++m) {
    const long frame_begin = static_cast<long>(request.start_frame + m * p) - static_cast<long>(k);
    const auto tokens = window_tokens(latents, frame_begin, k + p);
    const auto pred = ddim_sample_window(history, tokens, model, cfg, window_seed(request.seed, m));
    result.histories.push_back(history);
    for (const auto& pt : pred) {
      if (emitted.size() < available) emitted.push_back(pt);
    }
    std::vector<Point2> joined = std::move(history);
    joined.insert(joined.end(), pred.begin(), pred.end());
    history.assign(joined.end() - static_cast<long>(k), joined.end());
    ++result.windows;
  }
  result.trajectory = make_trajectory(emitted, cfg.rate_hz, static_cast<double>(request.start_frame) / cfg.rate_hz,
                                      request.observer_id, request.video_id);
  return result;
}

}  // namespace gazediff
