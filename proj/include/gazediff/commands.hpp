#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "gazediff/metrics.hpp"
#include "gazediff/run_config.hpp"

namespace gazediff {

/// Writes the synthetic dataset and its manifest under `dataset_root`.
void cmd_synth(const RunConfig& cfg, std::ostream& log);

struct TrainSummary {
  std::size_t windows = 0;
  std::size_t first_epoch = 0;
  std::vector<double> epoch_loss;
};

/// Trains on the dataset manifest, writing the checkpoint and `epoch,loss` CSV after every epoch.
/// With `resume`, continues from an existing checkpoint.
TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log, bool resume = false);

/// Writes `num_samples` rollouts per video to `<gen_root>/<video_id>/gen_NN.csv`.
/// `videos` restricts the set; empty means every video of the manifest.
void cmd_generate(const RunConfig& cfg, std::ostream& log, const std::vector<std::string>& videos = {});

/// Scores every video directory of `gen_root` against the GT of `gt_root`, writes the report CSV to
/// `report_path` and prints a summary.
ScoreReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& gt_root,
                         const std::filesystem::path& gen_root, std::ostream& out);

/// Prints a structural summary of a SALB, GZDF or gaze CSV file. Returns the number of invariant
/// violations found; throws DataError for unreadable or unknown input.
std::size_t cmd_inspect(const std::filesystem::path& path, std::ostream& out, double rate_hz = 30.0);

/// Sample seed of rollout `sample` on the `video`-th video; distinct samples never share window seeds.
std::uint64_t sample_seed(std::uint64_t seed, std::size_t video, std::size_t sample);

/// Trajectory CSVs directly under `dir`, sorted by file name.
std::vector<std::filesystem::path> csv_files(const std::filesystem::path& dir);

}  // namespace gazediff
