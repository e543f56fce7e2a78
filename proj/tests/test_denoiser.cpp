#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "gazediff/denoiser.hpp"
#include "gazediff/diffusion.hpp"
#include "gazediff/error.hpp"
#include "gradcheck.hpp"
#include "layers.hpp"
#include "test_util.hpp"

using namespace gazediff;

namespace {

std::vector<double> random_input(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> in(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    in[3 * i] = u(rng);
    in[3 * i + 1] = u(rng);
    in[3 * i + 2] = i < k ? 1.0 : 0.0;
  }
  return in;
}

std::vector<CondToken> random_tokens(std::mt19937_64& rng, std::size_t count) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<CondToken> t;
  for (std::size_t i = 0; i < count; ++i) t.push_back({u(rng), u(rng), u(rng), u(rng)});
  return t;
}

float as_float(double v) { return static_cast<float>(v); }

}  // namespace

TEST_CASE("sinusoidal_embed values") {
  const auto zero = sinusoidal_embed(0.0, 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(zero[i] == (i % 2 == 0 ? 0.0 : 1.0));
  const auto e = sinusoidal_embed(1.0, 4);
  CHECK(e[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(e[1] == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
  CHECK(e[2] == doctest::Approx(std::sin(1.0 / 100.0)).epsilon(1e-15));
  CHECK(e[3] == doctest::Approx(std::cos(1.0 / 100.0)).epsilon(1e-15));
  for (double t : {3.0, 57.0, 999.0})
    for (double v : sinusoidal_embed(t, 32)) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  CHECK_THROWS_AS(sinusoidal_embed(1.0, 5), UsageError);
}

TEST_CASE("fresh denoiser outputs zeros of shape n x 2") {
  auto cfg = gradcheck::tiny_config();
  cfg.window_len = 21;
  const Denoiser model(cfg, 3);
  std::mt19937_64 rng(1);
  const auto out = model.forward(random_input(rng, 21, 5), 400, random_tokens(rng, 10));
  CHECK(out.size() == 42);
  CHECK(std::all_of(out.begin(), out.end(), [](double v) { return v == 0.0; }));
  CHECK(cfg.padded_len() == 22);
  CHECK_THROWS_AS(model.forward(std::vector<double>(9), 1, {}), UsageError);
}

TEST_CASE("cross-attention is equivariant to token order") {
  Denoiser model(gradcheck::tiny_config(), 4);
  randomize_parameters(model.params(), 5, 0.3);
  std::mt19937_64 rng(2);
  const auto in = random_input(rng, 16, 6);
  auto tokens = random_tokens(rng, 24);
  const auto a = model.forward(in, 250, tokens);
  std::shuffle(tokens.begin(), tokens.end(), rng);
  const auto b = model.forward(in, 250, tokens);
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst < 1e-6);
  // the tokens do reach the output
  for (auto& t : tokens) t.value = 1.0 - t.value;
  const auto c = model.forward(in, 250, tokens);
  CHECK(c != b);
}

TEST_CASE("backward of a zero output gradient is zero") {
  Denoiser model(gradcheck::tiny_config(), 6);
  randomize_parameters(model.params(), 7, 0.3);
  std::mt19937_64 rng(3);
  ForwardCache cache;
  model.forward(random_input(rng, 16, 4), 10, random_tokens(rng, 8), &cache);
  auto g = model.params().zero_gradients();
  const auto ig = model.backward(cache, std::vector<double>(32, 0.0), g);
  for (const auto& t : g.g) CHECK(std::all_of(t.begin(), t.end(), [](double v) { return v == 0.0; }));
  CHECK(std::all_of(ig.input.begin(), ig.input.end(), [](double v) { return v == 0.0; }));
  ForwardCache empty;
  CHECK_THROWS_AS(model.backward(empty, std::vector<double>(32, 0.0), g), UsageError);
}

TEST_CASE("finite-difference gradient check on a tiny denoiser") {
  const auto r = gradcheck::run(101);
  INFO("worst parameter tensor: " << r.worst_name);
  CHECK(r.worst_param < 1e-4);
  CHECK(r.worst_input < 1e-4);
  CHECK(r.worst_token < 1e-4);
  CHECK(r.tensors > 50);
}

TEST_CASE("conv1d gradients match the transposed-convolution closed form") {
  ParameterSet ps;
  for (std::size_t stride : {1, 2}) {
    const auto conv = nn::Conv1d::make(ps, "c" + std::to_string(stride), 3, 4, 3, stride, 1);
    std::mt19937_64 rng(stride);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : ps.at(conv.weight).value) v = normal(rng);
    for (auto& v : ps.at(conv.bias).value) v = normal(rng);
    nn::Mat x(3, 10);
    for (auto& v : x.d) v = normal(rng);
    const std::size_t lout = conv.out_len(10);
    nn::Mat dy(4, lout);
    for (auto& v : dy.d) v = normal(rng);

    const nn::Mat y = conv.forward(ps, x);
    const double* w = ps.value(conv.weight);
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t p = 0; p < lout; ++p) {
        double s = ps.value(conv.bias)[o];
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t k = 0; k < 3; ++k) {
            const long src = static_cast<long>(p * stride + k) - 1;
            if (src >= 0 && src < 10) s += w[(o * 3 + i) * 3 + k] * x.at(i, static_cast<std::size_t>(src));
          }
        CHECK(y.at(o, p) == doctest::Approx(s).epsilon(1e-12));
      }

    auto g = ps.zero_gradients();
    const nn::Mat dx = conv.backward(ps, x, dy, g);
    nn::Mat dx_ref(3, 10);
    std::vector<double> dw_ref(36, 0.0), db_ref(4, 0.0);
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t p = 0; p < lout; ++p) {
        db_ref[o] += dy.at(o, p);
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t k = 0; k < 3; ++k) {
            const long src = static_cast<long>(p * stride + k) - 1;
            if (src < 0 || src >= 10) continue;
            dx_ref.at(i, static_cast<std::size_t>(src)) += w[(o * 3 + i) * 3 + k] * dy.at(o, p);
            dw_ref[(o * 3 + i) * 3 + k] += x.at(i, static_cast<std::size_t>(src)) * dy.at(o, p);
          }
      }
    for (std::size_t i = 0; i < dx.d.size(); ++i) CHECK(dx.d[i] == doctest::Approx(dx_ref.d[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < 36; ++i) CHECK(g.g[conv.weight][i] == doctest::Approx(dw_ref[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < 4; ++i) CHECK(g.g[conv.bias][i] == doctest::Approx(db_ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("group norm group counts") {
  CHECK(nn::group_count(8) == 4);
  CHECK(nn::group_count(16) == 8);
  CHECK(nn::group_count(6) == 2);
  CHECK(nn::group_count(3) == 1);
  CHECK(nn::group_count(128) == 8);
}

TEST_CASE("adam_step against a scalar oracle") {
  ParameterSet ps;
  ps.add("a", {3});
  ps.add("b", {2});
  ps.at(0).value = {0.5, -0.25, 1.0};
  ps.at(1).value = {0.5, -0.25};
  const AdamConfig cfg;

  auto zero = ps.zero_gradients();
  ParameterSet fresh = ps;
  adam_step(fresh, zero, cfg);
  CHECK(fresh.at(0).value == ps.at(0).value);
  CHECK(fresh.step() == 1);

  Gradients g = ps.zero_gradients();
  g.g[0] = {0.3, -2.0, 1e-3};
  g.g[1] = {0.3, -2.0};
  ParameterSet one = ps;
  adam_step(one, g, cfg);
  for (std::size_t j = 0; j < 3; ++j) {
    const double gj = g.g[0][j];
    CHECK(one.at(0).value[j] == as_float(ps.at(0).value[j] - cfg.lr * gj / (std::abs(gj) + cfg.eps)));
  }
  CHECK(one.at(0).value[0] == one.at(1).value[0]);
  CHECK(one.at(0).value[1] == one.at(1).value[1]);

  // several steps of a varying gradient, scalar recurrence in double with float32 storage
  ParameterSet multi = ps;
  double x = ps.at(0).value[0], m = 0, v = 0;
  for (int step = 1; step <= 25; ++step) {
    const double gv = std::sin(step * 0.7) + 0.1 * step;
    Gradients gs = ps.zero_gradients();
    gs.g[0][0] = gv;
    adam_step(multi, gs, cfg);
    const double m_new = cfg.beta1 * m + (1 - cfg.beta1) * gv;
    const double v_new = cfg.beta2 * v + (1 - cfg.beta2) * gv * gv;
    const double m_hat = m_new / (1 - std::pow(cfg.beta1, step));
    const double v_hat = v_new / (1 - std::pow(cfg.beta2, step));
    x = as_float(x - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    m = as_float(m_new);
    v = as_float(v_new);
    CHECK(multi.at(0).value[0] == x);
    CHECK(multi.at(0).m[0] == m);
  }
  CHECK(multi.step() == 25);

  Gradients bad;
  CHECK_THROWS_AS(adam_step(multi, bad, cfg), UsageError);
}

TEST_CASE("initial masked loss is about one") {
  DenoiserConfig cfg;
  cfg.base_width = 8;
  cfg.window_len = 40;
  cfg.cond_dim = 8;
  const Denoiser model(cfg, 9);
  const auto sched = linear_beta_schedule(1000, 1e-4, 2e-2);
  std::mt19937_64 rng(10);
  double total = 0;
  const int batch = 400;
  for (int b = 0; b < batch; ++b) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Point2> window(40);
    for (auto& p : window) p = {u(rng), u(rng)};
    const auto ex = make_training_example(window, rng() % 30, 1 + rng() % 1000, rng(), sched);
    const auto pred = model.forward(ex.input, ex.t, {});
    total += ddpm_loss(pred, ex.target_eps, ex.mask);
  }
  CHECK(total / batch == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("checkpoint round trip and corruption") {
  testutil::TempDir dir;
  Denoiser model(gradcheck::tiny_config(), 11);
  randomize_parameters(model.params(), 12, 0.2);
  // values and moments must be float32-representable to round-trip
  auto grads = model.params().zero_gradients();
  for (auto& t : grads.g)
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = std::sin(static_cast<double>(j));
  adam_step(model.params(), grads, AdamConfig{});
  adam_step(model.params(), grads, AdamConfig{});
  const auto path = dir.path / "m.gzdf";
  save_checkpoint(model.params(), path);

  Denoiser loaded(gradcheck::tiny_config(), 99);
  load_checkpoint(loaded.params(), path);
  CHECK(loaded.params() == model.params());
  CHECK(loaded.params().step() == 2);

  const auto info = read_checkpoint_info(path);
  CHECK(info.tensors.size() == 3 * model.params().count());
  CHECK(std::is_sorted(info.tensors.begin(), info.tensors.end(),
                       [](const auto& a, const auto& b) { return a.name < b.name; }));

  const auto bytes = testutil::read_text(path);
  CHECK(bytes.substr(0, 4) == "GZDF");
  testutil::write_text(dir.path / "t.gzdf", bytes.substr(0, bytes.size() / 2));
  try {
    load_checkpoint(loaded.params(), dir.path / "t.gzdf");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  CHECK_THROWS_AS(read_checkpoint_info(dir.path / "t.gzdf"), DataError);

  auto other_cfg = gradcheck::tiny_config();
  other_cfg.base_width = 16;
  Denoiser other(other_cfg, 1);
  CHECK_THROWS_AS(load_checkpoint(other.params(), path), DataError);
  CHECK_THROWS_AS(load_checkpoint(other.params(), dir.path / "none.gzdf"), DataError);
}

TEST_CASE("denoiser config validation") {
  DenoiserConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.has_self_attention(2));
  CHECK(!cfg.has_self_attention(0));
  CHECK(cfg.padded_len() == 136);
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = DenoiserConfig{};
  cfg.attn_levels = {5};
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = DenoiserConfig{};
  cfg.in_channels = 2;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
}
