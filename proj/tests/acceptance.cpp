// End-to-end acceptance run: prints one PASS/FAIL line per criterion and exits nonzero on any failure.
// Usage: acceptance [criterion numbers...]; no arguments runs all ten.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gazediff/commands.hpp"
#include "gazediff/dataset.hpp"
#include "gazediff/diffusion.hpp"
#include "gazediff/error.hpp"
#include "gazediff/metrics.hpp"
#include "gazediff/run_config.hpp"
#include "gazediff/training.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gazediff;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kOracleRel = 1e-12;
constexpr double kOracleSeconds = 10.0;
constexpr double kMomentRel = 0.02;
constexpr double kMomentSeconds = 30.0;
constexpr double kInversionAbs = 1e-5;
constexpr double kGradRel = 1e-4;
constexpr double kGradSeconds = 300.0;
constexpr double kDtwImprovement = 0.30;
constexpr double kMtcMargin = 0.1;
constexpr double kColdRel = 0.10;
constexpr double kSelfCorrelationTol = 1e-9;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::map<fs::path, std::string> snapshot(const fs::path& root) {
  std::map<fs::path, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root)] = testutil::read_text(e.path());
  return out;
}

// Every report produced by the run, for criterion 10.
std::vector<std::pair<std::string, ScoreReport>> g_reports;

// ---------------------------------------------------------------------------------------------
// 1-5: oracle and property checks

Outcome metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::size_t lev_mismatch = 0;
  for (int c = 0; c < 200; ++c) {
    const auto p = oracle::random_points(rng, 1 + rng() % 6);
    const auto q = oracle::random_points(rng, 1 + rng() % 6);
    worst = std::max(worst, oracle::rel_diff(dtw(p, q), oracle::exhaustive_dtw(p, q)));
    worst = std::max(worst, oracle::rel_diff(discrete_frechet(p, q), oracle::exhaustive_frechet(p, q)));
    const auto a = quantize_to_string(p, 8, 8), b = quantize_to_string(q, 8, 8);
    if (levenshtein(a, b) != oracle::naive_levenshtein(a, b)) ++lev_mismatch;
  }
  const double secs = seconds_since(t0);
  return {worst <= kOracleRel && lev_mismatch == 0 && secs < kOracleSeconds,
          "200 pairs, worst dtw/frechet rel diff " + fmt("%.2e", worst) + ", levenshtein mismatches " +
              std::to_string(lev_mismatch) + ", " + fmt("%.2f", secs) + " s"};
}

// The mean tolerance is 2% of the RMS scale of x_t, max(|sqrt(ab) x0|, sqrt(1 - ab)), since at
// t = 1000 the mean itself is ~0.006 x0 and no 1e5-draw estimate resolves 2% of it.
Outcome forward_moments() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto sched = linear_beta_schedule(1000, 1e-4, 2e-2);
  const std::vector<double> x0{0.3, 0.8};
  const std::size_t draws = 100000;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> normal(0.0, 1.0);
  bool ok = true;
  std::string detail;
  for (std::size_t t : {1, 500, 1000}) {
    const double ab = sched.alpha_bar_at(t);
    double worst_mean = 0.0, worst_var = 0.0;
    std::vector<double> sum(2, 0.0), sq(2, 0.0);
    std::vector<double> eps(2);
    for (std::size_t d = 0; d < draws; ++d) {
      for (auto& e : eps) e = normal(rng);
      const auto xt = forward_noise(x0, t, eps, sched);
      for (int c = 0; c < 2; ++c) {
        sum[c] += xt[c];
        sq[c] += xt[c] * xt[c];
      }
    }
    for (int c = 0; c < 2; ++c) {
      const double mean = sum[c] / draws;
      const double var = sq[c] / draws - mean * mean;
      const double want_mean = std::sqrt(ab) * x0[c], want_var = 1.0 - ab;
      const double scale = std::max(std::abs(want_mean), std::sqrt(want_var));
      worst_mean = std::max(worst_mean, std::abs(mean - want_mean) / scale);
      worst_var = std::max(worst_var, std::abs(var - want_var) / want_var);
    }
    ok = ok && worst_mean <= kMomentRel && worst_var <= kMomentRel;
    detail += "t=" + std::to_string(t) + " mean " + fmt("%.4f", worst_mean) + " var " + fmt("%.4f", worst_var) + "; ";
  }
  const double secs = seconds_since(t0);
  return {ok && secs < kMomentSeconds, detail + fmt("%.2f", secs) + " s"};
}

// History-dependent clean suffix, kept inside (0,1) so the final clamp is inactive.
std::vector<double> oracle_target(std::span<const double> input, std::size_t k, std::size_t p) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mx += input[3 * i];
    my += input[3 * i + 1];
  }
  mx /= static_cast<double>(std::max<std::size_t>(k, 1));
  my /= static_cast<double>(std::max<std::size_t>(k, 1));
  std::vector<double> out(2 * p);
  for (std::size_t j = 0; j < p; ++j) {
    out[2 * j] = 0.1 + 0.8 * std::fmod(mx + 0.013 * static_cast<double>(j), 1.0);
    out[2 * j + 1] = 0.1 + 0.8 * std::fmod(my + 0.007 * static_cast<double>(j), 1.0);
  }
  return out;
}

struct InversionRun {
  double worst = 0.0;
  std::vector<std::vector<Point2>> windows;
};

InversionRun invert_windows() {
  DiffusionConfig cfg;
  const oracle::ExactNoise model(cfg.schedule, oracle_target);
  const std::size_t k = cfg.window.history_len, p = cfg.window.predict_len;
  std::mt19937_64 rng(303);
  InversionRun run;
  for (int w = 0; w < 100; ++w) {
    const auto history = oracle::random_points(rng, k);
    std::vector<double> input(3 * k);
    for (std::size_t i = 0; i < k; ++i) input[3 * i] = history[i].x, input[3 * i + 1] = history[i].y;
    const auto want = oracle_target(input, k, p);
    const auto got = ddim_sample_window(history, {}, model, cfg, rng());
    for (std::size_t j = 0; j < p; ++j)
      run.worst = std::max({run.worst, std::abs(got[j].x - want[2 * j]), std::abs(got[j].y - want[2 * j + 1])});
    run.windows.push_back(got);
  }
  return run;
}

Outcome oracle_inversion() {
  const auto run = invert_windows();
  return {run.worst <= kInversionAbs, "100 windows, 50 DDIM steps, max abs error " + fmt("%.2e", run.worst)};
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = gradcheck::run(seed);
    for (auto [v, name] : {std::pair{r.worst_param, r.worst_name}, std::pair{r.worst_input, std::string("input")},
                           std::pair{r.worst_token, std::string("tokens")}})
      if (v > worst) {
        worst = v;
        where = name + " (seed " + std::to_string(seed) + ")";
      }
  }
  const double secs = seconds_since(t0);
  return {worst < kGradRel && secs < kGradSeconds,
          "3 seeds, worst rel error " + fmt("%.2e", worst) + " at " + where + ", " + fmt("%.1f", secs) + " s"};
}

Outcome masked_prefix() {
  DenoiserConfig dc;
  dc.base_width = 8;
  dc.level_mults = {1, 2};
  dc.cond_dim = 8;
  dc.heads = 2;
  Denoiser model(dc, 5);
  randomize_parameters(model.params(), 6, 0.3);
  const auto sched = linear_beta_schedule(1000, 1e-4, 2e-2);
  std::mt19937_64 rng(7);
  const auto window = oracle::random_points(rng, dc.window_len);
  const auto tokens_src = oracle::random_points(rng, 8);
  std::vector<CondToken> tokens;
  for (const auto& t : tokens_src) tokens.push_back({t.x, t.y, t.x * t.y, 0.5});
  std::size_t nonzero = 0, loss_changes = 0;
  for (int c = 0; c < 50; ++c) {
    const std::size_t k = rng() % 91, t = 1 + rng() % 1000;
    const auto ex = make_training_example(window, k, t, rng(), sched);
    auto pred = model.forward(ex.input, t, tokens);
    const auto g = ddpm_loss_grad(pred, ex.target_eps, ex.mask);
    for (std::size_t i = 0; i < 2 * k; ++i)
      if (g[i] != 0.0) ++nonzero;
    const double before = ddpm_loss(pred, ex.target_eps, ex.mask);
    for (std::size_t i = 0; i < 2 * k; ++i) pred[i] += 1.0 + static_cast<double>(i);
    if (ddpm_loss(pred, ex.target_eps, ex.mask) != before) ++loss_changes;
  }
  return {nonzero == 0 && loss_changes == 0, "50 (k, t) draws, nonzero prefix gradients " + std::to_string(nonzero) +
                                                 ", loss changed by prefix edits " + std::to_string(loss_changes)};
}

// ---------------------------------------------------------------------------------------------
// 6-10: toy pipeline

RunConfig toy_config(const fs::path& dir) {
  RunConfig cfg;
  cfg.dataset_root = dir / "data";
  cfg.num_clips = 8;
  cfg.observers_per_clip = 4;
  cfg.clip_duration_s = 60.0;
  cfg.base_width = 16;
  cfg.lr = 1e-3;
  cfg.epochs = 30;
  cfg.horizon_s = 10.0;
  cfg.num_samples = 10;
  cfg.holdout_observers = {"obs3"};
  cfg.eval_observers = {"obs3"};
  cfg.checkpoint = dir / "model.gzdf";
  cfg.loss_csv = dir / "loss.csv";
  cfg.gen_root = dir / "warm";
  cfg.report_path = dir / "warm_report.csv";
  return cfg;
}

ScoreReport evaluate_into(const RunConfig& cfg, const fs::path& gen_root, const std::string& label) {
  auto c = cfg;
  c.report_path = gen_root.parent_path() / (label + "_report.csv");
  std::ostringstream table;
  auto report = cmd_evaluate(c, cfg.dataset_root, gen_root, table);
  std::cout << "  [" << label << "]\n";
  std::istringstream lines(table.str());
  for (std::string line; std::getline(lines, line);) std::cout << "    " << line << "\n";
  g_reports.emplace_back(label, report);
  return report;
}

// Matched-speed random walk from the last warm-history point, on the warm rollouts' timestamps.
void write_random_walks(const RunConfig& cfg, const fs::path& out_root) {
  const auto manifest = read_manifest(cfg.dataset_root);
  for (std::size_t vi = 0; vi < manifest.videos.size(); ++vi) {
    const auto& entry = manifest.videos[vi];
    const auto video = load_video(manifest, entry, cfg);
    std::vector<const GazeTrajectory*> train;
    for (const auto& g : video.gaze)
      if (std::find(cfg.holdout_observers.begin(), cfg.holdout_observers.end(), g.observer_id) ==
          cfg.holdout_observers.end())
        train.push_back(&g);
    const double step = mean_step(train);
    const auto& src = warm_start_source(video, cfg);
    const Point2 start = src.points()[cfg.history_len - 1];
    const double t0 = static_cast<double>(first_frame(src) + cfg.history_len) / cfg.rate_hz;
    fs::create_directories(out_root / entry.meta.video_id);
    for (std::size_t i = 0; i < cfg.num_samples; ++i) {
      const auto walk = random_walk(start, cfg.horizon_samples(), step, sample_seed(cfg.seed, vi, i));
      char name[32];
      std::snprintf(name, sizeof name, "gen_%02zu.csv", i);
      write_trajectory_csv(make_trajectory(walk, cfg.rate_hz, t0, "walk" + std::to_string(i), entry.meta.video_id),
                           entry.meta, out_root / entry.meta.video_id / name);
    }
  }
}

// Cold start per video from the first ground-truth coordinate of the warm-start observer.
void generate_cold(const RunConfig& cfg, const fs::path& out_root, std::ostream& log) {
  const auto manifest = read_manifest(cfg.dataset_root);
  for (const auto& entry : manifest.videos) {
    const auto video = load_video(manifest, entry, cfg);
    auto c = cfg;
    c.gen_root = out_root;
    c.cold_start = warm_start_source(video, cfg).points().front();
    cmd_generate(c, log, {entry.meta.video_id});
  }
}

struct ToyState {
  fs::path dir;
  RunConfig cfg;
  bool trained = false;
  TrainSummary summary;
  std::optional<ScoreReport> warm;
};

ToyState g_toy;

void ensure_toy(std::ostream& log) {
  if (g_toy.trained) return;
  cmd_synth(g_toy.cfg, log);
  g_toy.summary = cmd_train(g_toy.cfg, log);
  cmd_generate(g_toy.cfg, log);
  g_toy.trained = true;
}

const ScoreReport& warm_report(std::ostream& log) {
  ensure_toy(log);
  if (!g_toy.warm) g_toy.warm = evaluate_into(g_toy.cfg, g_toy.cfg.gen_root, "warm");
  return *g_toy.warm;
}

Outcome toy_end_to_end(std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& warm = warm_report(log);
  write_random_walks(g_toy.cfg, g_toy.dir / "walk");
  const auto walk = evaluate_into(g_toy.cfg, g_toy.dir / "walk", "walk");
  const double dtw_gain = 1.0 - warm[Metric::Dtw].mean / walk[Metric::Dtw].mean;
  const double mtc_gain = warm[Metric::MaxTemporalCorrelation].mean - walk[Metric::MaxTemporalCorrelation].mean;
  const auto& loss = g_toy.summary.epoch_loss;
  return {dtw_gain >= kDtwImprovement && mtc_gain >= kMtcMargin,
          "mean DTW " + fmt("%.1f", warm[Metric::Dtw].mean) + " vs walk " + fmt("%.1f", walk[Metric::Dtw].mean) +
              " (" + fmt("%.1f", 100 * dtw_gain) + "% lower), mean MTC " +
              fmt("%.3f", warm[Metric::MaxTemporalCorrelation].mean) + " vs walk " +
              fmt("%.3f", walk[Metric::MaxTemporalCorrelation].mean) + " (+" + fmt("%.3f", mtc_gain) + "), loss " +
              fmt("%.4f", loss.front()) + " -> " + fmt("%.4f", loss.back()) + ", " +
              fmt("%.0f", seconds_since(t0)) + " s"};
}

Outcome cold_start(std::ostream& log) {
  const auto& warm = warm_report(log);
  generate_cold(g_toy.cfg, g_toy.dir / "cold", log);
  const auto cold = evaluate_into(g_toy.cfg, g_toy.dir / "cold", "cold");
  const double lev = oracle::rel_diff(cold[Metric::Levenshtein].mean, warm[Metric::Levenshtein].mean);
  const double mtc =
      oracle::rel_diff(cold[Metric::MaxTemporalCorrelation].mean, warm[Metric::MaxTemporalCorrelation].mean);
  return {lev <= kColdRel && mtc <= kColdRel,
          "levenshtein cold " + fmt("%.2f", cold[Metric::Levenshtein].mean) + " vs warm " +
              fmt("%.2f", warm[Metric::Levenshtein].mean) + " (" + fmt("%.1f", 100 * lev) + "%), MTC cold " +
              fmt("%.3f", cold[Metric::MaxTemporalCorrelation].mean) + " vs warm " +
              fmt("%.3f", warm[Metric::MaxTemporalCorrelation].mean) + " (" + fmt("%.1f", 100 * mtc) + "%)"};
}

Outcome prediction_length(std::ostream& log) {
  const auto& warm = warm_report(log);
  auto cfg = g_toy.cfg;
  cfg.predict_len = 90;
  cfg.checkpoint = g_toy.dir / "p90.gzdf";
  cfg.loss_csv = g_toy.dir / "p90_loss.csv";
  cfg.gen_root = g_toy.dir / "p90";
  cmd_train(cfg, log);
  cmd_generate(cfg, log);
  const auto p90 = evaluate_into(cfg, cfg.gen_root, "p90");
  return {p90[Metric::Dtw].mean >= warm[Metric::Dtw].mean,
          "mean DTW predict 90: " + fmt("%.1f", p90[Metric::Dtw].mean) + ", predict 45: " +
              fmt("%.1f", warm[Metric::Dtw].mean)};
}

Outcome determinism(std::ostream& log) {
  const auto a = invert_windows(), b = invert_windows();
  const bool inversion_same = a.windows == b.windows;

  ensure_toy(log);
  testutil::TempDir rerun;
  auto cfg = toy_config(rerun.path);
  cmd_synth(cfg, log);
  cmd_train(cfg, log);
  cmd_generate(cfg, log);
  const bool data_same = snapshot(cfg.dataset_root) == snapshot(g_toy.cfg.dataset_root);
  const bool model_same = testutil::read_text(cfg.checkpoint) == testutil::read_text(g_toy.cfg.checkpoint);
  const bool loss_same = testutil::read_text(cfg.loss_csv) == testutil::read_text(g_toy.cfg.loss_csv);
  const auto gen = snapshot(cfg.gen_root);
  const bool gen_same = gen == snapshot(g_toy.cfg.gen_root);
  auto yn = [](bool v) { return std::string(v ? "identical" : "DIFFERENT"); };
  return {inversion_same && data_same && model_same && loss_same && gen_same,
          "inversion windows " + yn(inversion_same) + ", dataset " + yn(data_same) + ", checkpoint " +
              yn(model_same) + ", loss csv " + yn(loss_same) + ", " + std::to_string(gen.size()) +
              " rollout CSVs " + yn(gen_same)};
}

Outcome protocol_sanity(std::ostream& log) {
  ensure_toy(log);
  const auto manifest = read_manifest(g_toy.cfg.dataset_root);
  const auto self_root = g_toy.dir / "self";
  for (const auto& entry : manifest.videos) {
    fs::create_directories(self_root / entry.meta.video_id);
    for (const auto& rel : entry.gaze)
      if (rel.filename().string().find("obs3") != std::string::npos)
        fs::copy_file(manifest.root / rel, self_root / entry.meta.video_id / rel.filename(),
                      fs::copy_options::overwrite_existing);
  }
  const auto self = evaluate_into(g_toy.cfg, self_root, "self");
  bool perfect = true;
  for (const auto& v : self.videos) {
    for (Metric m : kAllMetrics) {
      const double best = v.metrics[static_cast<std::size_t>(m)].best;
      if (lower_is_better(m) ? best != 0.0 : std::abs(best - 1.0) > kSelfCorrelationTol) perfect = false;
    }
  }
  std::size_t ordered = 0;
  for (const auto& [label, r] : g_reports)
    if (report_ordering_holds(r)) ++ordered;
  return {perfect && ordered == g_reports.size() && self.videos.size() == manifest.videos.size(),
          std::to_string(self.videos.size()) + " videos self-scored " + (perfect ? "perfectly" : "IMPERFECTLY") +
              ", ordering holds on " + std::to_string(ordered) + "/" + std::to_string(g_reports.size()) + " reports"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  if (selected.empty())
    for (int i = 1; i <= 10; ++i) selected.insert(i);

  testutil::TempDir work;
  g_toy.dir = work.path;
  g_toy.cfg = toy_config(work.path);
  std::ostringstream log;

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"metric oracle equivalence", metric_oracles},
      {"forward-noise closed form", forward_moments},
      {"oracle-denoiser inversion", oracle_inversion},
      {"gradient check", gradient_check},
      {"masked-loss contract", masked_prefix},
      {"toy end-to-end vs random walk", [&] { return toy_end_to_end(log); }},
      {"cold-start robustness", [&] { return cold_start(log); }},
      {"prediction-length ablation", [&] { return prediction_length(log); }},
      {"determinism", [&] { return determinism(log); }},
      {"protocol sanity", [&] { return protocol_sanity(log); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << o.detail << "\n"
              << std::flush;
  }
  return failures == 0 ? 0 : 1;
}
