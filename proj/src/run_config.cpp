#include "gazediff/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "gazediff/error.hpp"

namespace gazediff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_int(const std::string& v) {
  T out{};
  const auto s = trim(v);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) throw UsageError("expected an integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& v) {
  double out = 0.0;
  const auto s = trim(v);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty() || !std::isfinite(out))
    throw UsageError("expected a finite number, got '" + v + "'");
  return out;
}

std::string real_text(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

std::vector<std::size_t> parse_sizes(const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_int<std::size_t>(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>)
      out += v[i];
    else
      out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define GZ_SIZE(name) \
  Field{#name, [](RunConfig& c, const std::string& v) { c.name = parse_int<std::size_t>(v); }, \
        [](const RunConfig& c) { return std::to_string(c.name); }}
#define GZ_REAL(name, member) \
  Field{name, [](RunConfig& c, const std::string& v) { c.member = parse_real(v); }, \
        [](const RunConfig& c) { return real_text(c.member); }}
#define GZ_PATH(name) \
  Field{#name, [](RunConfig& c, const std::string& v) { c.name = trim(v); }, \
        [](const RunConfig& c) { return c.name.string(); }}
#define GZ_SIZES(name) \
  Field{#name, [](RunConfig& c, const std::string& v) { c.name = parse_sizes(v); }, \
        [](const RunConfig& c) { return join(c.name); }}
#define GZ_NAMES(name) \
  Field{#name, [](RunConfig& c, const std::string& v) { c.name = split_list(v); }, \
        [](const RunConfig& c) { return join(c.name); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      Field{"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_int<std::uint64_t>(v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      Field{"workers", [](RunConfig& c, const std::string& v) { c.workers = parse_int<int>(v); },
            [](const RunConfig& c) { return std::to_string(c.workers); }},
      GZ_PATH(dataset_root),
      GZ_SIZE(num_clips),
      GZ_SIZE(observers_per_clip),
      GZ_REAL("clip_duration_s", clip_duration_s),
      GZ_REAL("rate_hz", rate_hz),
      GZ_SIZE(saliency_height),
      GZ_SIZE(saliency_width),
      Field{"video_width_px", [](RunConfig& c, const std::string& v) { c.video_width_px = parse_int<int>(v); },
            [](const RunConfig& c) { return std::to_string(c.video_width_px); }},
      Field{"video_height_px", [](RunConfig& c, const std::string& v) { c.video_height_px = parse_int<int>(v); },
            [](const RunConfig& c) { return std::to_string(c.video_height_px); }},
      GZ_SIZES(blob_counts),
      GZ_REAL("blob_sigma", blob_sigma),
      GZ_REAL("motion_speed", motion_speed),
      GZ_REAL("fixation_dwell_s", oracle.fixation_dwell_s),
      GZ_REAL("saccade_dur_s", oracle.saccade_dur_s),
      GZ_REAL("pursuit_gain", oracle.pursuit_gain),
      GZ_REAL("jitter_sigma", oracle.jitter_sigma),
      GZ_SIZE(history_len),
      GZ_SIZE(predict_len),
      GZ_SIZE(cond_stride),
      GZ_SIZE(pool_rows),
      GZ_SIZE(pool_cols),
      GZ_SIZE(train_steps),
      GZ_REAL("beta_start", beta_start),
      GZ_REAL("beta_end", beta_end),
      GZ_SIZE(sample_steps),
      GZ_REAL("eta", eta),
      GZ_SIZE(base_width),
      GZ_SIZES(level_mults),
      GZ_SIZES(attn_levels),
      GZ_SIZE(cond_dim),
      GZ_SIZE(heads),
      GZ_REAL("lr", lr),
      GZ_SIZE(epochs),
      GZ_SIZE(batch_size),
      GZ_SIZE(max_history),
      GZ_NAMES(holdout_observers),
      GZ_PATH(checkpoint),
      GZ_PATH(loss_csv),
      GZ_PATH(gen_root),
      GZ_REAL("horizon_s", horizon_s),
      GZ_SIZE(num_samples),
      Field{"warm_observer", [](RunConfig& c, const std::string& v) { c.warm_observer = trim(v); },
            [](const RunConfig& c) { return c.warm_observer; }},
      Field{"cold_start",
            [](RunConfig& c, const std::string& v) {
              const auto parts = split_list(v);
              if (parts.empty()) {
                c.cold_start.reset();
                return;
              }
              if (parts.size() != 2) throw UsageError("cold_start expects 'x,y', got '" + v + "'");
              c.cold_start = Point2{parse_real(parts[0]), parse_real(parts[1])};
            },
            [](const RunConfig& c) {
              return c.cold_start ? real_text(c.cold_start->x) + "," + real_text(c.cold_start->y) : std::string();
            }},
      GZ_SIZE(metric_grid_rows),
      GZ_SIZE(metric_grid_cols),
      GZ_REAL("max_lag_s", max_lag_s),
      Field{"metric_space",
            [](RunConfig& c, const std::string& v) {
              const auto s = trim(v);
              if (s == "pixels")
                c.metric_space = MetricSpace::Pixels;
              else if (s == "normalized")
                c.metric_space = MetricSpace::Normalized;
              else
                throw UsageError("metric_space must be 'pixels' or 'normalized', got '" + v + "'");
            },
            [](const RunConfig& c) {
              return std::string(c.metric_space == MetricSpace::Pixels ? "pixels" : "normalized");
            }},
      GZ_NAMES(eval_observers),
      GZ_PATH(report_path),
  };
  return table;
}

#undef GZ_SIZE
#undef GZ_REAL
#undef GZ_PATH
#undef GZ_SIZES
#undef GZ_NAMES

void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError("config: " + what);
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields())
      if (key == f.key) field = &f;
    if (!field) throw UsageError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw UsageError(where + "key '" + key + "' given twice");
    try {
      field->set(cfg, value);
    } catch (const UsageError& e) {
      throw UsageError(where + key + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  require(workers >= 0, "workers must be >= 0");
  require(num_clips >= 1, "num_clips must be >= 1");
  require(observers_per_clip >= 1, "observers_per_clip must be >= 1");
  require(clip_duration_s > 0.0, "clip_duration_s must be positive");
  require(rate_hz > 0.0, "rate_hz must be positive");
  require(saliency_height >= 1 && saliency_width >= 1, "saliency size must be positive");
  require(video_width_px > 0 && video_height_px > 0, "video size must be positive");
  require(!blob_counts.empty(), "blob_counts must not be empty");
  for (auto b : blob_counts) require(b >= 1, "every blob count must be >= 1");
  require(blob_sigma > 0.0, "blob_sigma must be positive");
  require(motion_speed >= 0.0, "motion_speed must be >= 0");
  require(oracle.fixation_dwell_s > 0.0, "fixation_dwell_s must be positive");
  require(oracle.saccade_dur_s > 0.0, "saccade_dur_s must be positive");
  require(oracle.pursuit_gain > 0.0 && oracle.pursuit_gain <= 1.0, "pursuit_gain must be in (0,1]");
  require(oracle.jitter_sigma >= 0.0, "jitter_sigma must be >= 0");
  require(predict_len >= 1, "predict_len must be >= 1");
  require(cond_stride >= 1, "cond_stride must be >= 1");
  require(pool_rows >= 1 && pool_cols >= 1, "pool grid must be positive");
  require(pool_rows <= saliency_height && pool_cols <= saliency_width, "pool grid larger than the saliency frame");
  require(train_steps >= 2, "train_steps must be >= 2");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, "need 0 < beta_start <= beta_end < 1");
  require(sample_steps >= 1 && sample_steps <= train_steps, "need 1 <= sample_steps <= train_steps");
  require(eta >= 0.0 && eta <= 1.0, "eta must be in [0,1]");
  require(lr > 0.0, "lr must be positive");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(horizon_s > 0.0, "horizon_s must be positive");
  require(num_samples >= 1, "num_samples must be >= 1");
  if (cold_start)
    require(cold_start->x >= 0.0 && cold_start->x <= 1.0 && cold_start->y >= 0.0 && cold_start->y <= 1.0,
            "cold_start must lie in [0,1]^2");
  require(metric_grid_rows >= 1 && metric_grid_cols >= 1, "metric grid must be positive");
  require(max_lag_s >= 0.0, "max_lag_s must be >= 0");
  try {
    denoiser().validate();
  } catch (const Error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

DiffusionConfig RunConfig::diffusion() const {
  DiffusionConfig d;
  d.schedule = linear_beta_schedule(train_steps, beta_start, beta_end);
  d.sample_steps = sample_steps;
  d.window = window();
  d.cond_stride = cond_stride;
  d.eta = eta;
  d.rate_hz = rate_hz;
  return d;
}

DenoiserConfig RunConfig::denoiser() const {
  DenoiserConfig d;
  d.base_width = base_width;
  d.level_mults = level_mults;
  d.attn_levels = attn_levels;
  d.cond_dim = cond_dim;
  d.heads = heads;
  d.window_len = history_len + predict_len;
  return d;
}

TrainConfig RunConfig::training() const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.adam.lr = lr;
  t.max_history = max_history;
  t.seed = seed;
  t.workers = workers;
  return t;
}

MetricConfig RunConfig::metrics() const {
  MetricConfig m;
  m.grid_rows = metric_grid_rows;
  m.grid_cols = metric_grid_cols;
  m.max_lag_s = max_lag_s;
  m.space = metric_space;
  return m;
}

std::size_t RunConfig::horizon_samples() const {
  return static_cast<std::size_t>(std::llround(horizon_s * rate_hz));
}

}  // namespace gazediff
