#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "gazediff/conditioning.hpp"
#include "gazediff/error.hpp"
#include "test_util.hpp"

using namespace gazediff;

namespace {

SaliencyClip random_clip(std::size_t frames, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  SaliencyClip c;
  c.height = h;
  c.width = w;
  c.values.resize(frames * h * w);
  for (auto& v : c.values) v = u(rng);
  return c;
}

// Mean over the cells of the partition, written as a direct double loop.
std::vector<double> naive_pool(const SaliencyClip& clip, std::size_t f, std::size_t gr, std::size_t gc) {
  const std::size_t rh = clip.height / gr, cw = clip.width / gc;
  std::vector<double> out;
  for (std::size_t i = 0; i < gr; ++i) {
    const std::size_t r0 = i * rh, r1 = i + 1 == gr ? clip.height : (i + 1) * rh;
    for (std::size_t j = 0; j < gc; ++j) {
      const std::size_t c0 = j * cw, c1 = j + 1 == gc ? clip.width : (j + 1) * cw;
      double s = 0;
      int n = 0;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c, ++n) s += clip.values[f * clip.height * clip.width + r * clip.width + c];
      out.push_back(s / n);
    }
  }
  return out;
}

// Gaussian blob moving along x at `speed` (normalized units per second).
SaliencyClip moving_blob(double speed, std::size_t frames, double rate) {
  SaliencyClip c;
  c.height = c.width = 64;
  c.rate_hz = rate;
  c.values.resize(frames * 64 * 64);
  const double sigma = 0.06;
  for (std::size_t f = 0; f < frames; ++f) {
    const double cx = 0.2 + speed * static_cast<double>(f) / rate, cy = 0.5;
    for (std::size_t r = 0; r < 64; ++r)
      for (std::size_t col = 0; col < 64; ++col) {
        const double dx = (col + 0.5) / 64 - cx, dy = (r + 0.5) / 64 - cy;
        c.values[f * 4096 + r * 64 + col] = static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
      }
  }
  return c;
}

}  // namespace

TEST_CASE("pool_compress hand cases") {
  SaliencyClip ones;
  ones.height = ones.width = 4;
  ones.values.assign(16, 1.0f);
  const auto p = pool_compress(ones, {2, 2});
  CHECK(p.values == std::vector<double>(4, 1.0));

  SaliencyClip checker;
  checker.height = checker.width = 2;
  checker.values = {0, 1, 1, 0};
  CHECK(pool_compress(checker, {1, 1}).values == std::vector<double>{0.5});

  CHECK_THROWS_AS(pool_compress(checker, {3, 1}), UsageError);
  CHECK_THROWS_AS(pool_compress(checker, {0, 1}), UsageError);
}

TEST_CASE("pool_compress matches a naive double loop with remainders in the last cell") {
  const auto clip = random_clip(3, 5, 5, 1);
  const auto p = pool_compress(clip, {2, 2});
  CHECK(partition_bounds(5, 2) == std::vector<std::size_t>{0, 2, 5});
  for (std::size_t f = 0; f < 3; ++f) {
    const auto want = naive_pool(clip, f, 2, 2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p.frame(f)[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
  const auto odd = random_clip(2, 7, 11, 2);
  const auto q = pool_compress(odd, {3, 4});
  for (std::size_t f = 0; f < 2; ++f) {
    const auto want = naive_pool(odd, f, 3, 4);
    for (std::size_t i = 0; i < 12; ++i) CHECK(q.frame(f)[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("pool_compress preserves the mean on equal partitions") {
  const auto clip = random_clip(4, 32, 32, 3);
  const auto p = pool_compress(clip, {4, 4});
  for (std::size_t f = 0; f < 4; ++f) {
    double a = 0, b = 0;
    for (auto v : clip.frame(f)) a += v;
    for (auto v : p.frame(f)) b += v;
    CHECK(a / 1024 == doctest::Approx(b / 16).epsilon(1e-6));
  }
}

TEST_CASE("parallel pooling equals the serial reference") {
  const auto clip = random_clip(40, 30, 50, 4);
  CHECK(pool_compress(clip, {4, 6}).values == reference::pool_compress_serial(clip, {4, 6}).values);
}

TEST_CASE("temporal_subsample counts and tags") {
  const auto clip = random_clip(135, 8, 8, 5);
  const auto pooled = pool_compress(clip, {4, 4});
  const auto lat = temporal_subsample(pooled, 5);
  CHECK(lat.set_count() == 27);
  CHECK(lat.tokens_per_set() == 16);
  CHECK(temporal_subsample(pooled, 1).set_count() == 135);

  const auto seven = temporal_subsample(pool_compress(random_clip(7, 4, 4, 6), {2, 2}), 3);
  CHECK(seven.frame_index == std::vector<std::size_t>{0, 3, 6});
  CHECK(seven.set_count() == 3);
  CHECK(seven.tokens[0].row == 0.25);
  CHECK(seven.tokens[0].col == 0.25);
  CHECK(seven.tokens[3].row == 0.75);
  CHECK(seven.tokens[3].col == 0.75);

  // kept sets are the pooled frames verbatim
  for (std::size_t s = 0; s < lat.set_count(); ++s)
    for (std::size_t i = 0; i < 16; ++i) CHECK(lat.set(s)[i].value == pooled.frame(5 * s)[i]);

  CHECK_THROWS_AS(temporal_subsample(pooled, 0), UsageError);
}

TEST_CASE("window_tokens time tags") {
  const auto lat = temporal_subsample(pool_compress(random_clip(300, 8, 8, 7), {4, 4}), 5);
  const auto toks = window_tokens(lat, 10, 135);
  CHECK(toks.size() == 27 * 16);
  CHECK(toks.front().time == 0.0);
  CHECK(toks.back().time == doctest::Approx(130.0 / 135.0));
  // a window starting off the stride grid
  const auto shifted = window_tokens(lat, 12, 135);
  CHECK(shifted.size() == 27 * 16);
  CHECK(shifted.front().time == doctest::Approx(3.0 / 135.0));
  // partly before the first frame
  CHECK(window_tokens(lat, -90, 135).size() == 9 * 16);
}

TEST_CASE("synth_scene static blob and determinism") {
  SynthSceneSpec spec;
  spec.motion_speed = 0.0;
  spec.duration_s = 1.0;
  spec.seed = 42;
  const auto scene = synth_scene_with_truth(spec);
  const auto& clip = scene.clip;
  REQUIRE(clip.frame_count() == 30);
  for (std::size_t f = 1; f < 30; ++f) CHECK(std::equal(clip.frame(f).begin(), clip.frame(f).end(), clip.frame(0).begin()));
  const auto f0 = clip.frame(0);
  const auto arg = static_cast<std::size_t>(std::max_element(f0.begin(), f0.end()) - f0.begin());
  const auto c = scene.centers.front();
  CHECK(arg / clip.width == static_cast<std::size_t>(c.y * clip.height));
  CHECK(arg % clip.width == static_cast<std::size_t>(c.x * clip.width));
  CHECK(*std::max_element(f0.begin(), f0.end()) == 1.0f);

  spec.motion_speed = 0.1;
  spec.blob_count = 2;
  CHECK(synth_scene(spec).values == synth_scene(spec).values);
}

TEST_CASE("synth_scene centers stay inside the frame over 60 s") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    SynthSceneSpec spec;
    spec.blob_count = 2;
    spec.motion_speed = 0.3;
    spec.duration_s = 60.0;
    spec.seed = seed;
    spec.height = spec.width = 8;
    const auto scene = synth_scene_with_truth(spec);
    CHECK(scene.centers.size() == 1800 * 2);
    for (auto p : scene.centers) {
      CHECK(p.x >= 0.0);
      CHECK(p.x <= 1.0);
      CHECK(p.y >= 0.0);
      CHECK(p.y <= 1.0);
    }
    CHECK_NOTHROW(scene.clip.validate());
  }
  SynthSceneSpec bad;
  bad.blob_sigma = 0.0;
  CHECK_THROWS_AS(synth_scene(bad), UsageError);
}

TEST_CASE("synth_gaze_oracle degenerate and deterministic cases") {
  SynthSceneSpec spec;
  spec.motion_speed = 0.0;
  spec.duration_s = 3.0;
  spec.seed = 9;
  spec.height = spec.width = 64;
  const auto scene = synth_scene_with_truth(spec);
  OracleGazeParams p;
  p.jitter_sigma = 0.0;
  p.pursuit_gain = 1.0;
  const auto g = synth_gaze_oracle(scene.clip, 1, p);
  for (const auto& s : g.samples) {
    CHECK(s.x == g.samples.front().x);
    CHECK(s.y == g.samples.front().y);
  }
  CHECK(g.samples.front().x == doctest::Approx(scene.centers.front().x).epsilon(1e-3));
  CHECK(g.samples.front().y == doctest::Approx(scene.centers.front().y).epsilon(1e-3));

  SynthSceneSpec moving = spec;
  moving.motion_speed = 0.2;
  moving.blob_count = 2;
  moving.duration_s = 20.0;
  const auto clip = synth_scene(moving);
  const auto a = synth_gaze_oracle(clip, 5, OracleGazeParams{});
  const auto b = synth_gaze_oracle(clip, 5, OracleGazeParams{});
  CHECK(a.samples == b.samples);
  CHECK(a.samples != synth_gaze_oracle(clip, 6, OracleGazeParams{}).samples);
  for (const auto& s : a.samples) {
    CHECK(s.x >= 0.0);
    CHECK(s.x <= 1.0);
    CHECK(s.y >= 0.0);
    CHECK(s.y <= 1.0);
  }
}

TEST_CASE("synth_gaze_oracle pursuit lag matches the first-order tracker") {
  const double speed = 0.1, rate = 30.0;
  for (double gain : {0.25, 0.5}) {
    const auto clip = moving_blob(speed, 150, rate);
    OracleGazeParams p;
    p.jitter_sigma = 0.0;
    p.pursuit_gain = gain;
    p.fixation_dwell_s = 100.0;
    const auto g = synth_gaze_oracle(clip, 3, p);
    const double expected = speed / (gain * rate);
    for (std::size_t f = 100; f < 140; ++f) {
      const double center = 0.2 + speed * static_cast<double>(f) / rate;
      CHECK(center - g.samples[f].x == doctest::Approx(expected).epsilon(0.05));
    }
  }
}

TEST_CASE("SALB and PGM storage") {
  testutil::TempDir dir;
  auto clip = random_clip(3, 4, 5, 10);
  write_salb(clip, dir.path / "c.salb");
  const auto back = read_salb(dir.path / "c.salb");
  CHECK(back.values == clip.values);
  CHECK(back.height == 4);
  CHECK(back.width == 5);
  CHECK(load_saliency(dir.path / "c.salb").values == clip.values);

  auto bytes = testutil::read_text(dir.path / "c.salb");
  testutil::write_text(dir.path / "t.salb", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_salb(dir.path / "t.salb"), DataError);
  testutil::write_text(dir.path / "m.salb", "XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(read_salb(dir.path / "m.salb"), DataError);

  std::filesystem::create_directory(dir.path / "pgm");
  for (int f = 0; f < 2; ++f) {
    std::string img = "P5\n3 2\n255\n";
    for (int i = 0; i < 6; ++i) img.push_back(static_cast<char>(f * 100 + i * 30));
    char name[32];
    std::snprintf(name, sizeof name, "%06d.pgm", f);
    testutil::write_text(dir.path / "pgm" / name, img);
  }
  const auto pgm = load_saliency(dir.path / "pgm");
  CHECK(pgm.frame_count() == 2);
  CHECK(pgm.width == 3);
  CHECK(pgm.height == 2);
  CHECK(pgm.values[7] == doctest::Approx(130.0 / 255.0));

  clip.values[2] = 1.5f;
  CHECK_THROWS_AS(clip.validate(), DataError);
}
