#ifndef LIQA_HARNESS_HPP
#define LIQA_HARNESS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "liqa/trainer.hpp"

// Experiment configuration, persistence, result tables and figure emission.
namespace liqa::harness {

// Environment variable prefixed to relative manifest paths.
inline constexpr const char* kDataRootEnv = "LIQA_DATA_ROOT";

struct StreamConfig {
  std::string kind = "synthetic";  // synthetic | distortion_shift | dataset_shift

  // synthetic
  int d_in = 16;
  int families = 10;
  int samples_per_family = 60;
  int m0 = 7;
  int delta = 1;
  Scalar cluster_spread = 0.25;
  Scalar cluster_separation = 4.0;
  std::string quality_map = "smoothstep";

  // distortion_shift
  std::string manifest;
  std::vector<std::string> base_labels;
  std::vector<std::string> novel_labels;

  // dataset_shift
  std::vector<std::string> manifests;

  // novel-order permutation (0 keeps the configured order)
  std::uint64_t permutation_seed = 0;
};

struct ExperimentConfig {
  std::string method = "liqa";
  StreamConfig stream;
  train::TrainSchedule schedule;
  losses::LossWeights weights;
  std::string replay_strategy;  // resolved default: dist for jt_pr, qua_and_dist otherwise
  int n_buf = 1400;
  std::string ablation = "full";
  train::EqModeConfig eq_mode;
  std::string validation = "current";  // current | pooled
  baselines::BaselineHyperparams baseline;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string out = "out";

  void validate() const;
  std::string resolved_replay_strategy() const;

  static ExperimentConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
  static ExperimentConfig load(const std::string& path);
  void save(const std::string& path) const;
};

// Builds the stream for one run seed (synthetic data and splits are
// regenerated per seed; the permutation order stays fixed by config).
tasks::TaskStream build_stream(const StreamConfig& cfg, std::uint64_t run_seed);

struct ResultBundle {
  std::vector<std::uint64_t> seeds;
  std::vector<metrics::EvalLedger> per_seed;
  std::vector<Scalar> mean_c;                         // per task, over seeds
  std::vector<Scalar> mean_f;                         // per task, NaN at task 0
  std::vector<std::pair<Scalar, Scalar>> per_seed_cf;  // (C-bar, F-bar)
  Scalar c_bar = 0.0, f_bar = 0.0;                     // seed averages
  std::map<int, Scalar> final_srcc;                    // distortion -> mean SRCC at final task
};

// Runs the configured method once per seed, persisting ledgers, checkpoints,
// progress logs, summaries and the resolved config under out/<method>/.
// stop_after_task limits each run to tasks [0, stop_after_task] when >= 0.
ResultBundle run_experiment(const ExperimentConfig& config, int stop_after_task = -1);

// Continues interrupted runs from their last task checkpoints and rebuilds
// the summaries. dir is either one method directory or an out root holding
// several of them.
ResultBundle resume_experiment(const std::string& dir);

// Recomputes a ResultBundle from the per-seed ledgers on disk.
ResultBundle collect_results(const std::string& method_dir);

// C-vs-task and F-vs-task line charts (one series per method found under
// out_root) with CSV sidecars carrying exactly the plotted values.
void emit_curves(const std::string& out_root);

// t-SNE projection of real features (final-task extractor) against pseudo
// features (penultimate-task generator). Returns the embedding; writes the
// figure and its CSV sidecar next to it.
Matrix project_features(const Matrix& real_features, const Matrix& pseudo_features,
                        const std::vector<int>& real_labels, const std::vector<int>& pseudo_labels,
                        const std::string& path_base, std::uint64_t seed);

// Drives project_features from a finished synthetic-stream run.
void write_projection_figure(const ExperimentConfig& config, std::uint64_t seed,
                             const std::string& path_base);

// Full report: summaries plus figures when requested.
void write_report(const std::string& out_root, bool figures);

struct PermutationRow {
  int order_index = 0;
  std::uint64_t permutation_seed = 0;
  Scalar c_bar = 0.0;
  Scalar f_bar = 0.0;
};

// Reruns the experiment under n_orders seeded permutations of the novel
// order; writes out/permutations.csv including the C-bar spread.
std::vector<PermutationRow> permutation_suite(const ExperimentConfig& config, int n_orders);

}  // namespace liqa::harness

#endif  // LIQA_HARNESS_HPP
