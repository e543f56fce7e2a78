#include "gazediff/commands.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>

#include "gazediff/dataset.hpp"
#include "gazediff/error.hpp"
#include "gazediff/seed.hpp"

namespace gazediff {

namespace {

constexpr std::uint64_t kInitStream = 0x494e4954;    // "INIT"
constexpr std::uint64_t kSampleStream = 0x47454e;    // "GEN"

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<VideoData> load_all(const Manifest& m, const RunConfig& cfg) {
  std::vector<VideoData> out;
  for (const auto& e : m.videos) out.push_back(load_video(m, e, cfg));
  return out;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& loss) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e + 1, loss[e]);
    out << buf;
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<double> read_loss_csv(const std::filesystem::path& path) {
  std::vector<double> loss;
  std::ifstream in(path);
  if (!in) return loss;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(path.string() + ": malformed loss row '" + line + "'");
    loss.push_back(std::stod(line.substr(comma + 1)));
  }
  return loss;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

std::uint64_t sample_seed(std::uint64_t seed, std::size_t video, std::size_t sample) {
  return derive_seed(seed, kSampleStream ^ (static_cast<std::uint64_t>(video) << 24), sample);
}

std::vector<std::filesystem::path> csv_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

void cmd_synth(const RunConfig& cfg, std::ostream& log) {
  const auto manifest = synth_dataset(cfg);
  log << "synth: wrote " << manifest.videos.size() << " clips x " << cfg.observers_per_clip << " observers under "
      << cfg.dataset_root.string() << "\n";
}

TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log, bool resume) {
  cfg.validate();
  const auto manifest = read_manifest(cfg.dataset_root);
  const auto videos = load_all(manifest, cfg);
  const auto data = training_windows(videos, cfg);
  if (data.empty())
    throw DataError("train: no training windows (trajectories shorter than " +
                    std::to_string(cfg.window().window_len()) + " samples?)");

  Denoiser model(cfg.denoiser(), derive_seed(cfg.seed, kInitStream));
  std::vector<double> history;
  if (resume) {
    if (!std::filesystem::exists(cfg.checkpoint))
      throw DataError("train --resume: checkpoint " + cfg.checkpoint.string() + " does not exist");
    load_checkpoint(model.params(), cfg.checkpoint);
    history = read_loss_csv(cfg.loss_csv);
  }
  const auto tc = cfg.training();
  const std::size_t batches = (data.size() + tc.batch_size - 1) / tc.batch_size;
  const auto done = static_cast<std::size_t>(model.params().step() / batches);
  history.resize(std::min(history.size(), done));
  if (history.size() < done) history.resize(done, std::numeric_limits<double>::quiet_NaN());

  log << "train: " << data.size() << " windows, " << model.params().scalar_count() << " parameters, epochs "
      << done + 1 << ".." << tc.epochs << "\n";
  const auto result = train(model, data, cfg.diffusion().schedule, tc, [&](std::size_t epoch, double loss) {
    history.push_back(loss);
    save_checkpoint(model.params(), cfg.checkpoint);
    write_loss_csv(cfg.loss_csv, history);
    log << "epoch " << epoch + 1 << " loss " << fmt("%.6f", loss) << "\n" << std::flush;
  });
  if (result.epoch_loss.empty()) {
    save_checkpoint(model.params(), cfg.checkpoint);
    write_loss_csv(cfg.loss_csv, history);
  }
  return {data.size(), result.first_epoch, result.epoch_loss};
}

void cmd_generate(const RunConfig& cfg, std::ostream& log, const std::vector<std::string>& only) {
  cfg.validate();
  const auto manifest = read_manifest(cfg.dataset_root);
  for (const auto& id : only) (void)manifest.find(id);
  if (!std::filesystem::exists(cfg.checkpoint))
    throw DataError("generate: checkpoint " + cfg.checkpoint.string() + " does not exist");
  Denoiser model(cfg.denoiser(), 0);
  load_checkpoint(model.params(), cfg.checkpoint);
  const auto dcfg = cfg.diffusion();
  const std::size_t k = cfg.history_len;
  const std::size_t horizon = cfg.horizon_samples();

  for (std::size_t vi = 0; vi < manifest.videos.size(); ++vi) {
    const auto& entry = manifest.videos[vi];
    if (!only.empty() && std::find(only.begin(), only.end(), entry.meta.video_id) == only.end()) continue;
    const auto video = load_video(manifest, entry, cfg);

    RolloutRequest base;
    base.video_id = entry.meta.video_id;
    base.horizon = horizon;
    if (cfg.cold_start) {
      base.history = {*cfg.cold_start};
      base.start_frame = k;
    } else {
      const auto& src = warm_start_source(video, cfg);
      if (src.samples.size() < k)
        throw DataError("generate: observer '" + src.observer_id + "' of '" + entry.meta.video_id + "' has " +
                        std::to_string(src.samples.size()) + " samples, warm start needs " + std::to_string(k));
      const auto pts = src.points();
      base.history.assign(pts.begin(), pts.begin() + static_cast<long>(k));
      base.start_frame = first_frame(src) + k;
    }

    std::vector<RolloutResult> results(cfg.num_samples);
    std::exception_ptr failure;
    const long count = static_cast<long>(cfg.num_samples);
#pragma omp parallel for schedule(dynamic, 1) num_threads(cfg.workers > 0 ? cfg.workers : omp_get_max_threads())
    for (long i = 0; i < count; ++i) {
      try {
        RolloutRequest req = base;
        req.seed = sample_seed(cfg.seed, vi, static_cast<std::size_t>(i));
        char name[32];
        std::snprintf(name, sizeof name, "gen%02ld", i);
        req.observer_id = name;
        results[static_cast<std::size_t>(i)] = rollout(req, video.latents, model, dcfg);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);

    const auto dir = cfg.gen_root / entry.meta.video_id;
    ensure_dir(dir);
    for (const auto& old : csv_files(dir))
      if (old.filename().string().rfind("gen_", 0) == 0) std::filesystem::remove(old);
    for (std::size_t i = 0; i < results.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "gen_%02zu.csv", i);
      write_trajectory_csv(results[i].trajectory, entry.meta, dir / name);
    }
    log << "generate: " << entry.meta.video_id << " " << results.size() << " x " << results.front().trajectory.size()
        << " samples (" << (cfg.cold_start ? "cold" : "warm") << " start at frame " << base.start_frame << ")"
        << (results.front().truncated ? ", truncated at stimulus end" : "") << "\n";
  }
}

ScoreReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& gt_root,
                         const std::filesystem::path& gen_root, std::ostream& out) {
  cfg.validate();
  const auto manifest = read_manifest(gt_root);
  if (!std::filesystem::is_directory(gen_root)) throw DataError("generated root " + gen_root.string() + " is missing");
  std::vector<std::string> gen_videos;
  for (const auto& entry : std::filesystem::directory_iterator(gen_root))
    if (entry.is_directory()) gen_videos.push_back(entry.path().filename().string());
  std::sort(gen_videos.begin(), gen_videos.end());
  for (const auto& id : gen_videos) (void)manifest.find(id);

  std::vector<VideoEvaluation> evals;
  for (const auto& entry : manifest.videos) {
    const auto& id = entry.meta.video_id;
    if (!std::binary_search(gen_videos.begin(), gen_videos.end(), id))
      throw DataError("video '" + id + "' has ground truth but no generated trajectories under " + gen_root.string());
    VideoEvaluation ev;
    ev.meta = entry.meta;
    double t_lo = std::numeric_limits<double>::infinity();
    double t_hi = -t_lo;
    for (const auto& file : csv_files(gen_root / id)) {
      for (auto& traj : ingest_gaze_csv(file, entry.meta)) {
        if (traj.samples.size() >= 2) traj = resample(traj, cfg.rate_hz);
        t_lo = std::min(t_lo, traj.samples.front().t);
        t_hi = std::max(t_hi, traj.samples.back().t);
        ev.generated.push_back(traj.points());
      }
    }
    if (ev.generated.empty()) throw DataError("video '" + id + "' has no generated trajectories under " + gen_root.string());
    for (const auto& rel : entry.gaze) {
      for (auto& traj : ingest_gaze_csv(manifest.root / rel, entry.meta)) {
        if (!cfg.eval_observers.empty() &&
            std::find(cfg.eval_observers.begin(), cfg.eval_observers.end(), traj.observer_id) ==
                cfg.eval_observers.end())
          continue;
        if (traj.samples.size() >= 2) traj = resample(traj, cfg.rate_hz);
        const auto cropped = crop(traj, t_lo, t_hi);
        if (cropped.samples.empty())
          throw DataError("video '" + id + "': observer '" + traj.observer_id +
                          "' has no samples in the generated time span");
        ev.gt.push_back(cropped.points());
      }
    }
    if (ev.gt.empty()) throw DataError("video '" + id + "' has no ground-truth trajectories to score");
    evals.push_back(std::move(ev));
  }
  const auto report = evaluate_protocol(evals, cfg.metrics(), cfg.workers);
  write_report_csv(report, cfg.report_path);
  out << format_report(report);
  return report;
}

namespace {

std::size_t inspect_salb(const SaliencyClip& clip, const char* format, std::ostream& out) {
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  std::size_t bad = 0;
  for (float v : clip.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    if (!(v >= 0.0f && v <= 1.0f)) ++bad;
  }
  out << "format: " << format << "\nframes: " << clip.frame_count() << "\nheight: " << clip.height
      << "\nwidth: " << clip.width << "\nvalue range: [" << lo << ", " << hi << "]\n";
  out << "range check [0,1]: " << (bad ? "FAIL (" + std::to_string(bad) + " values)" : std::string("pass")) << "\n";
  return bad ? 1 : 0;
}

std::size_t inspect_gzdf(const std::filesystem::path& path, std::ostream& out) {
  const auto info = read_checkpoint_info(path);
  std::size_t violations = 0, scalars = 0;
  out << "format: GZDF\ntensors: " << info.tensors.size() << "\nstep: " << info.step << "\n";
  for (const auto& t : info.tensors) {
    std::size_t n = 1;
    std::string dims;
    for (auto d : t.dims) {
      n *= d;
      dims += (dims.empty() ? "" : "x") + std::to_string(d);
    }
    scalars += n;
    out << "  " << t.name << " [" << dims << "] range [" << t.min << ", " << t.max << "]"
        << (t.finite ? "" : " NON-FINITE") << "\n";
    if (!t.finite) ++violations;
  }
  out << "scalars: " << scalars << "\nfinite check: " << (violations ? "FAIL" : "pass") << "\n";
  return violations;
}

std::size_t inspect_csv(const std::filesystem::path& path, std::ostream& out) {
  const auto rows = read_gaze_rows(path);
  struct Stats {
    std::size_t count = 0;
    double t_first = 0, t_last = 0, x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Stats> stats;
  std::vector<std::string> violations;
  for (const auto& r : rows) {
    auto [it, fresh] = stats.try_emplace(r.observer);
    auto& s = it->second;
    if (fresh) {
      order.push_back(r.observer);
      s = {0, r.t, r.t, r.x, r.x, r.y, r.y};
    } else if (!(r.t > s.t_last)) {
      violations.push_back("line " + std::to_string(r.line) + ": observer '" + r.observer + "' t=" +
                           fmt("%.6f", r.t) + " does not increase (previous " + fmt("%.6f", s.t_last) + ")");
    }
    if (r.t < 0.0) violations.push_back("line " + std::to_string(r.line) + ": negative timestamp");
    ++s.count;
    s.t_last = std::max(s.t_last, r.t);
    s.x_lo = std::min(s.x_lo, r.x);
    s.x_hi = std::max(s.x_hi, r.x);
    s.y_lo = std::min(s.y_lo, r.y);
    s.y_hi = std::max(s.y_hi, r.y);
  }
  out << "format: gaze CSV\nrows: " << rows.size() << "\nobservers: " << order.size() << "\n";
  for (const auto& o : order) {
    const auto& s = stats[o];
    const double span = s.t_last - s.t_first;
    out << "  " << o << ": " << s.count << " samples, t [" << fmt("%.6f", s.t_first) << ", " << fmt("%.6f", s.t_last)
        << "]";
    if (s.count > 1 && span > 0) out << ", rate " << fmt("%.4f", static_cast<double>(s.count - 1) / span) << " Hz";
    out << ", x [" << s.x_lo << ", " << s.x_hi << "] px, y [" << s.y_lo << ", " << s.y_hi << "] px\n";
  }
  out << "monotone time check: " << (violations.empty() ? "pass" : "FAIL") << "\n";
  for (const auto& v : violations) out << "  violation: " << v << "\n";
  return violations.size();
}

}  // namespace

std::size_t cmd_inspect(const std::filesystem::path& path, std::ostream& out, double rate_hz) {
  if (std::filesystem::is_directory(path)) return inspect_salb(read_pgm_dir(path, rate_hz), "PGM directory", out);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  const std::string m(magic, static_cast<std::size_t>(in.gcount()));
  in.close();
  if (m == "SALB") return inspect_salb(read_salb(path, rate_hz), "SALB", out);
  if (m == "GZDF") return inspect_gzdf(path, out);
  if (m == "t,x,") return inspect_csv(path, out);
  throw DataError(path.string() + ": unknown format (magic '" + m + "')");
}

}  // namespace gazediff
