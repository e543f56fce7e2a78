#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gazediff/commands.hpp"
#include "gazediff/error.hpp"
#include "gazediff/run_config.hpp"

namespace {

// Accepts `x=0.5 y=0.5`, `0.5 0.5` or `0.5,0.5`.
gazediff::Point2 parse_point(const std::vector<std::string>& tokens) {
  std::vector<std::string> parts;
  for (const auto& tok : tokens) {
    std::size_t start = 0;
    for (;;) {
      const auto comma = tok.find(',', start);
      parts.push_back(tok.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  if (parts.size() != 2) throw gazediff::UsageError("--cold-start expects two coordinates, e.g. x=0.5 y=0.5");
  gazediff::Point2 p;
  bool have_x = false, have_y = false;
  for (std::size_t i = 0; i < 2; ++i) {
    std::string s = parts[i];
    char axis = i == 0 ? 'x' : 'y';
    if (s.size() > 2 && (s[0] == 'x' || s[0] == 'y') && s[1] == '=') {
      axis = s[0];
      s = s.substr(2);
    }
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw gazediff::UsageError("--cold-start: cannot parse '" + parts[i] + "'");
    }
    (axis == 'x' ? p.x : p.y) = v;
    (axis == 'x' ? have_x : have_y) = true;
  }
  if (!have_x || !have_y) throw gazediff::UsageError("--cold-start needs one x and one y value");
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gazediff: autoregressive diffusion gaze trajectories"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--seed", seed, "override the configured seed");
  app.add_option("--workers", workers, "worker threads (0 = all cores)");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");

  auto* train = app.add_subcommand("train", "train the denoiser");
  bool resume = false;
  train->add_flag("--resume", resume, "continue from the configured checkpoint");

  auto* generate = app.add_subcommand("generate", "sample gaze trajectories");
  std::vector<std::string> videos;
  std::vector<std::string> cold;
  std::optional<double> horizon;
  std::optional<std::size_t> samples;
  std::string checkpoint, out_root;
  generate->add_option("--video", videos, "restrict to these video ids");
  generate->add_option("--cold-start", cold, "start from one replicated point, e.g. x=0.5 y=0.5")->expected(1, 2);
  generate->add_option("--horizon", horizon, "seconds to generate");
  generate->add_option("--samples", samples, "trajectories per video");
  generate->add_option("--checkpoint", checkpoint, "GZDF checkpoint");
  generate->add_option("--out", out_root, "output root");

  auto* evaluate = app.add_subcommand("evaluate", "score generated trajectories against ground truth");
  std::string gt_root, gen_root, report;
  evaluate->add_option("--gt", gt_root, "dataset root with manifest.csv");
  evaluate->add_option("--gen", gen_root, "root with one directory of CSVs per video");
  evaluate->add_option("--report", report, "report CSV path");

  auto* inspect = app.add_subcommand("inspect", "summarize a SALB, GZDF or gaze CSV file");
  std::string inspect_path;
  inspect->add_option("path", inspect_path, "file or PGM directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    gazediff::RunConfig cfg = config_path.empty() ? gazediff::RunConfig{} : gazediff::RunConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;

    if (*inspect) {
      const auto violations = gazediff::cmd_inspect(inspect_path, std::cout, cfg.rate_hz);
      return violations == 0 ? 0 : 2;
    }
    if (*generate) {
      if (!cold.empty()) cfg.cold_start = parse_point(cold);
      if (horizon) cfg.horizon_s = *horizon;
      if (samples) cfg.num_samples = *samples;
      if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
      if (!out_root.empty()) cfg.gen_root = out_root;
    }
    if (*evaluate && !report.empty()) cfg.report_path = report;
    cfg.validate();

    if (*synth) gazediff::cmd_synth(cfg, std::cout);
    if (*train) gazediff::cmd_train(cfg, std::cout, resume);
    if (*generate) gazediff::cmd_generate(cfg, std::cout, videos);
    if (*evaluate)
      gazediff::cmd_evaluate(cfg, gt_root.empty() ? cfg.dataset_root : std::filesystem::path(gt_root),
                             gen_root.empty() ? cfg.gen_root : std::filesystem::path(gen_root), std::cout);
    return 0;
  } catch (const gazediff::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const gazediff::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const gazediff::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
