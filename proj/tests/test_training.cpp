#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "gazediff/error.hpp"
#include "gazediff/training.hpp"
#include "gradcheck.hpp"

using namespace gazediff;

namespace {

const NoiseSchedule kSched = linear_beta_schedule(1000, 1e-4, 2e-2);

std::vector<TrainingWindow> make_windows(std::size_t count, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TrainingWindow> out(count);
  for (auto& w : out) {
    const Point2 start{u(rng), u(rng)};
    for (std::size_t i = 0; i < n; ++i)
      w.coords.push_back({std::clamp(start.x + 0.01 * static_cast<double>(i), 0.0, 1.0), start.y});
    for (int j = 0; j < 6; ++j) w.tokens.push_back({u(rng), u(rng), u(rng), u(rng)});
  }
  return out;
}

TrainConfig small_train(std::size_t epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 3;
  tc.max_history = 10;
  tc.seed = 5;
  tc.adam.lr = 1e-3;
  return tc;
}

}  // namespace

TEST_CASE("draw_example ranges and epoch_order permutations") {
  TrainConfig tc;
  std::set<std::size_t> ks;
  for (std::size_t pos = 0; pos < 4000; ++pos) {
    const auto d = draw_example(tc, 135, 1000, 3, pos);
    CHECK(d.history_len <= 90);
    CHECK(d.t >= 1);
    CHECK(d.t <= 1000);
    ks.insert(d.history_len);
  }
  CHECK(ks.size() == 91);
  for (std::size_t pos = 0; pos < 200; ++pos) CHECK(draw_example(tc, 16, 1000, 0, pos).history_len <= 15);
  CHECK(draw_example(tc, 135, 1000, 2, 7).noise_seed == draw_example(tc, 135, 1000, 2, 7).noise_seed);

  auto order = epoch_order(1, 4, 50);
  CHECK(order != epoch_order(1, 5, 50));
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> iota(50);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  CHECK(order == iota);
}

TEST_CASE("masked loss gradient vanishes on the history prefix") {
  Denoiser model(gradcheck::tiny_config(), 2);
  randomize_parameters(model.params(), 3, 0.3);
  const auto windows = make_windows(1, 16, 4);
  std::mt19937_64 rng(6);
  for (int c = 0; c < 20; ++c) {
    const std::size_t k = rng() % 16, t = 1 + rng() % 1000;
    const auto ex = make_training_example(windows[0].coords, k, t, rng(), kSched);
    const auto pred = model.forward(ex.input, t, windows[0].tokens);
    const auto g = ddpm_loss_grad(pred, ex.target_eps, ex.mask);
    for (std::size_t i = 0; i < 2 * k; ++i) CHECK(g[i] == 0.0);
  }
}

TEST_CASE("parallel batch gradient equals the serial reference") {
  Denoiser model(gradcheck::tiny_config(), 7);
  randomize_parameters(model.params(), 8, 0.2);
  const auto windows = make_windows(6, 16, 9);
  const auto tc = small_train(1);
  std::vector<BatchItem> batch;
  for (std::size_t i = 0; i < windows.size(); ++i) batch.push_back({&windows[i], draw_example(tc, 16, 1000, 0, i)});
  auto serial = model.params().zero_gradients();
  const double ls = reference::batch_gradient_serial(model, batch, kSched, serial);
  for (int workers : {1, 2, 3}) {
    auto par = model.params().zero_gradients();
    CHECK(batch_gradient(model, batch, kSched, par, workers) == ls);
    CHECK(par.g == serial.g);
  }
  auto g = model.params().zero_gradients();
  CHECK_THROWS_AS(batch_gradient(model, std::span<const BatchItem>{}, kSched, g), UsageError);
}

TEST_CASE("training overfits a single example") {
  auto cfg = gradcheck::tiny_config();
  Denoiser model(cfg, 10);
  const auto windows = make_windows(1, 16, 11);
  const auto probe = make_training_example(windows[0].coords, 4, 300, 12, kSched);
  auto probe_loss = [&] { return ddpm_loss(model.forward(probe.input, probe.t, windows[0].tokens), probe.target_eps, probe.mask); };
  const double before = probe_loss();
  auto tc = small_train(200);
  tc.batch_size = 1;
  const auto r = train(model, windows, kSched, tc);
  CHECK(r.epoch_loss.size() == 200);
  CHECK(model.params().step() == 200);
  CHECK(probe_loss() < before);
}

TEST_CASE("training is deterministic and resumes on epoch boundaries") {
  const auto windows = make_windows(7, 16, 13);
  const auto cfg = gradcheck::tiny_config();

  Denoiser a(cfg, 14), b(cfg, 14);
  const auto ra = train(a, windows, kSched, small_train(4));
  const auto rb = train(b, windows, kSched, small_train(4));
  CHECK(ra.epoch_loss == rb.epoch_loss);
  CHECK(a.params() == b.params());

  Denoiser c(cfg, 14);
  std::vector<std::size_t> seen;
  const auto r1 = train(c, windows, kSched, small_train(2), [&](std::size_t e, double) { seen.push_back(e); });
  const auto r2 = train(c, windows, kSched, small_train(4), [&](std::size_t e, double) { seen.push_back(e); });
  CHECK(r2.first_epoch == 2);
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(c.params() == a.params());
  std::vector<double> joined = r1.epoch_loss;
  joined.insert(joined.end(), r2.epoch_loss.begin(), r2.epoch_loss.end());
  CHECK(joined == ra.epoch_loss);

  Denoiser d(cfg, 14);
  d.params().set_step(1);
  CHECK_THROWS_AS(train(d, windows, kSched, small_train(2)), DataError);
  CHECK_THROWS_AS(train(d, std::span<const TrainingWindow>{}, kSched, small_train(2)), DataError);
  auto wrong = make_windows(2, 12, 1);
  Denoiser e(cfg, 14);
  CHECK_THROWS_AS(train(e, wrong, kSched, small_train(1)), DataError);
}

TEST_CASE("non-finite loss aborts with the batch listed") {
  Denoiser model(gradcheck::tiny_config(), 15);
  auto windows = make_windows(2, 16, 16);
  windows[0].coords[15].x = std::nan("");
  windows[1].coords[15].x = std::nan("");
  try {
    train(model, windows, kSched, small_train(1));
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}
