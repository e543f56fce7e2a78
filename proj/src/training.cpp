#include "gazediff/training.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <string>

#include "gazediff/error.hpp"
#include "gazediff/seed.hpp"

namespace gazediff {

namespace {
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kExampleStream = 2;
}  // namespace

ExampleDraw draw_example(const TrainConfig& cfg, std::size_t window_len, std::size_t train_steps, std::size_t epoch,
                         std::size_t position) {
  std::mt19937_64 rng(derive_seed(cfg.seed, kExampleStream, (static_cast<std::uint64_t>(epoch) << 32) ^ position));
  const std::size_t k_max = std::min(cfg.max_history, window_len - 1);
  ExampleDraw d;
  d.history_len = std::uniform_int_distribution<std::size_t>(0, k_max)(rng);
  d.t = std::uniform_int_distribution<std::size_t>(1, train_steps)(rng);
  d.noise_seed = rng();
  return d;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, kShuffleStream, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace {

double example_gradient(const Denoiser& model, const BatchItem& item, const NoiseSchedule& sched, Gradients& g) {
  const auto ex =
      make_training_example(item.window->coords, item.draw.history_len, item.draw.t, item.draw.noise_seed, sched);
  ForwardCache cache;
  const auto pred = model.forward(ex.input, ex.t, item.window->tokens, &cache);
  const double loss = ddpm_loss(pred, ex.target_eps, ex.mask);
  const auto dpred = ddpm_loss_grad(pred, ex.target_eps, ex.mask);
  model.backward(cache, dpred, g);
  return loss;
}

double reduce(std::vector<Gradients>& per_example, const std::vector<double>& losses, Gradients& out) {
  out.zero();
  for (const auto& g : per_example) out.add(g);
  out.scale(1.0 / static_cast<double>(per_example.size()));
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(losses.size());
}

}  // namespace

double batch_gradient(const Denoiser& model, std::span<const BatchItem> batch, const NoiseSchedule& sched,
                      Gradients& out, int workers) {
  if (batch.empty()) throw UsageError("batch_gradient: empty batch");
  std::vector<Gradients> per_example(batch.size(), model.params().zero_gradients());
  std::vector<double> losses(batch.size(), 0.0);
  std::exception_ptr failure;
  const long count = static_cast<long>(batch.size());
  const int threads = workers > 0 ? workers : 0;
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads > 0 ? threads : omp_get_max_threads()) \
    if (count > 1)
  for (long i = 0; i < count; ++i) {
    try {
      losses[static_cast<std::size_t>(i)] =
          example_gradient(model, batch[static_cast<std::size_t>(i)], sched, per_example[static_cast<std::size_t>(i)]);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return reduce(per_example, losses, out);
}

namespace reference {

double batch_gradient_serial(const Denoiser& model, std::span<const BatchItem> batch, const NoiseSchedule& sched,
                             Gradients& out) {
  if (batch.empty()) throw UsageError("batch_gradient: empty batch");
  std::vector<Gradients> per_example(batch.size(), model.params().zero_gradients());
  std::vector<double> losses(batch.size(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) losses[i] = example_gradient(model, batch[i], sched, per_example[i]);
  return reduce(per_example, losses, out);
}

}  // namespace reference

TrainResult train(Denoiser& model, std::span<const TrainingWindow> data, const NoiseSchedule& sched,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (data.empty()) throw DataError("train: dataset is empty");
  if (cfg.batch_size == 0) throw UsageError("train: batch_size must be positive");
  const std::size_t n = model.config().window_len;
  for (const auto& w : data) {
    if (w.coords.size() != n)
      throw DataError("train: window of length " + std::to_string(w.coords.size()) + " but model expects " +
                      std::to_string(n));
  }

  const std::size_t batches = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::uint64_t step = model.params().step();
  if (step % batches != 0)
    throw DataError("train: checkpoint step " + std::to_string(step) + " is not on an epoch boundary (" +
                    std::to_string(batches) + " batches per epoch)");

  TrainResult result;
  result.first_epoch = static_cast<std::size_t>(step / batches);
  Gradients grads = model.params().zero_gradients();
  std::vector<BatchItem> batch;
  for (std::size_t epoch = result.first_epoch; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(cfg.seed, epoch, data.size());
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      batch.clear();
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(begin + cfg.batch_size, data.size());
      for (std::size_t pos = begin; pos < end; ++pos)
        batch.push_back({&data[order[pos]], draw_example(cfg, n, sched.steps(), epoch, pos)});
      auto dump = [&](const std::string& what) {
        std::string msg = what + " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                          "; batch examples (window, k, t):";
        for (std::size_t pos = begin; pos < end; ++pos) {
          const auto d = draw_example(cfg, n, sched.steps(), epoch, pos);
          msg += " (" + std::to_string(order[pos]) + "," + std::to_string(d.history_len) + "," +
                 std::to_string(d.t) + ")";
        }
        return NumericalError(msg);
      };
      double loss = 0.0;
      try {
        loss = batch_gradient(model, batch, sched, grads, cfg.workers);
      } catch (const NumericalError& e) {
        throw dump(e.what());
      }
      if (!std::isfinite(loss)) throw dump("non-finite training loss");
      loss_sum += loss * static_cast<double>(end - begin);
      adam_step(model.params(), grads, cfg.adam);
    }
    const double epoch_loss = loss_sum / static_cast<double>(data.size());
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return result;
}

}  // namespace gazediff
