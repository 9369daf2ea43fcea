#ifndef LIQA_TASKS_HPP
#define LIQA_TASKS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "liqa/core.hpp"

// Task streams, datasets, splits, score normalization, synthetic task
// generation and manifest ingestion.
namespace liqa::tasks {

// Either a synthetic feature-source vector or a path to an image on disk.
struct SampleInput {
  Vector vec;
  std::string image_path;
  bool is_image() const { return !image_path.empty(); }
};

struct LabeledSample {
  SampleInput input;
  Scalar score = 0.0;              // normalized, in [0,1]
  int distortion_id = 0;           // global id within its stream
  std::string reference_id;        // content group; empty when unknown
  std::pair<Scalar, Scalar> source_range{0.0, 1.0};
};

struct TaskSpec {
  int task_index = 0;
  std::vector<int> distortion_ids;
  std::vector<LabeledSample> train, val, test;
};

struct TaskStream {
  std::vector<TaskSpec> tasks;
  int m0 = 0;
  int delta = 0;
  int m_all = 0;
  std::vector<std::string> labels;  // one human-readable label per global id

  int num_tasks() const { return static_cast<int>(tasks.size()); }
  int m_cur(int t) const { return m0 + delta * t; }
  int m_pre(int t) const { return m0 + delta * (t - 1); }
  int intro_task_of(int distortion_id) const;
  // Held-out test samples of one distortion (they live in exactly one task).
  std::vector<const LabeledSample*> test_of_distortion(int distortion_id) const;

  void validate() const;
};

// ---- score normalization ----------------------------------------------------

// Affine map of raw annotations onto [0,1]; DMOS-style scales are flipped so
// that a higher value always denotes better perceptual quality.
std::vector<Scalar> rescale_scores(const std::vector<Scalar>& raw,
                                   std::pair<Scalar, Scalar> range, bool higher_is_better);

// ---- splitting ----------------------------------------------------------------

struct SplitRatios {
  Scalar train = 0.8, val = 0.1, test = 0.1;
};

struct SplitResult {
  std::vector<LabeledSample> train, val, test;
};

// Disjoint cover of the input. With by_reference, samples sharing a
// reference_id land in exactly one split. Non-divisible sizes round by
// largest remainder. `label` names the dataset in error messages.
SplitResult split_dataset(const std::vector<LabeledSample>& samples, SplitRatios ratios,
                          std::uint64_t seed, bool by_reference,
                          const std::string& label = "dataset");

// ---- stream builders -----------------------------------------------------------

// Per-distortion sample pools already carrying their train/val/test splits.
using LabeledPools = std::map<std::string, SplitResult>;

// T0 holds the base labels; novel labels are chunked delta at a time, in the
// given order when permutation_seed == 0 and in seeded-shuffled order
// otherwise. Global distortion ids are assigned consecutively in stream order.
TaskStream build_distortion_shift_stream(const LabeledPools& pools,
                                         const std::vector<std::string>& base_labels,
                                         const std::vector<std::string>& novel_labels, int delta,
                                         std::uint64_t permutation_seed);

// ---- manifests -------------------------------------------------------------------

struct ManifestRow {
  std::string image_path;
  Scalar raw_score = 0.0;
  std::string distortion_label;
  std::string reference_id;
};

// CSV with header image_path,raw_score,distortion_label,reference_id plus a
// sidecar <csv>.meta.json carrying score_range and higher_is_better.
struct DatasetManifest {
  std::string name;
  std::vector<ManifestRow> rows;
  std::pair<Scalar, Scalar> score_range{0.0, 1.0};
  bool higher_is_better = true;

  static DatasetManifest load(const std::string& csv_path);
  void validate() const;
};

// One dataset per task, distortion_id == task index, scores rescaled per
// manifest. Splits are by reference when every row carries a reference_id.
TaskStream build_dataset_shift_stream(const std::vector<DatasetManifest>& manifests,
                                      std::uint64_t split_seed);

// Grouping + rescaling front end for single-dataset distortion-shift streams.
TaskStream build_distortion_shift_stream_from_manifest(const DatasetManifest& manifest,
                                                       const std::vector<std::string>& base_labels,
                                                       const std::vector<std::string>& novel_labels,
                                                       int delta, std::uint64_t permutation_seed,
                                                       std::uint64_t split_seed);

// ---- synthetic streams ---------------------------------------------------------------

enum class QualityMap { identity, smoothstep };

Scalar apply_quality_map(QualityMap m, Scalar u);
std::string quality_map_name(QualityMap m);
QualityMap parse_quality_map(const std::string& name);

struct SyntheticFamilySpec {
  int distortion_id = 0;
  Vector cluster_mean;
  Scalar cluster_spread = 1.0;
  QualityMap quality_map = QualityMap::smoothstep;
  int samples_per_family = 60;
};

// Samples are cluster_mean + cluster_spread * gaussian, displaced along a
// seeded per-family intensity axis by u in [0,1]; score = quality_map(u).
// Pure function of (specs, m0, delta, seed).
TaskStream generate_synthetic_stream(const std::vector<SyntheticFamilySpec>& specs, int m0,
                                     int delta, std::uint64_t seed);

// Families on separated coordinate axes: ||mean_i - mean_j|| =
// sqrt(2) * separation * spread for i != j.
std::vector<SyntheticFamilySpec> make_separated_families(int count, int d_in, Scalar spread,
                                                         Scalar separation, QualityMap qm,
                                                         int samples_per_family);

struct SyntheticStreamSpec {
  std::vector<SyntheticFamilySpec> families;
  int m0 = 0;
  int delta = 1;
  std::uint64_t seed = 0;
};

// Single structured-text file with the seed embedded; loading regenerates the
// identical stream via generate_synthetic_stream.
void save_synthetic_stream_spec(const SyntheticStreamSpec& spec, const std::string& path);
SyntheticStreamSpec load_synthetic_stream_spec(const std::string& path);

// ---- image crops ---------------------------------------------------------------------

struct Image {
  int height = 0, width = 0, channels = 0;
  std::vector<Scalar> px;  // row-major, values in [0,1]

  Scalar& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  Scalar at(int y, int x, int c) const {
    return px[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

enum class Phase { train, val, test };

inline constexpr int kCropSize = 300;

// Random crop for training, center crop for validation and testing.
Image crop_for_phase(const Image& img, Phase phase, Rng& rng);

// KADID-10K distortion grouping used by the distortion-shift protocol.
const std::vector<std::string>& kadid_base_labels();
const std::vector<std::string>& kadid_novel_labels();

}  // namespace liqa::tasks

#endif  // LIQA_TASKS_HPP
