#include "liqa/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace liqa::tasks {

using nlohmann::json;

int TaskStream::intro_task_of(int distortion_id) const {
  for (const TaskSpec& t : tasks)
    for (int j : t.distortion_ids)
      if (j == distortion_id) return t.task_index;
  throw std::invalid_argument("TaskStream: unknown distortion id " + std::to_string(distortion_id));
}

std::vector<const LabeledSample*> TaskStream::test_of_distortion(int distortion_id) const {
  const int t = intro_task_of(distortion_id);
  std::vector<const LabeledSample*> out;
  for (const LabeledSample& s : tasks[static_cast<std::size_t>(t)].test)
    if (s.distortion_id == distortion_id) out.push_back(&s);
  return out;
}

void TaskStream::validate() const {
  require(!tasks.empty(), "TaskStream: empty stream");
  require(static_cast<int>(tasks.front().distortion_ids.size()) == m0,
          "TaskStream: base task must hold m0 distortions");
  std::set<int> seen;
  for (const TaskSpec& t : tasks) {
    if (t.task_index > 0)
      require(static_cast<int>(t.distortion_ids.size()) == delta,
              "TaskStream: novel task " + std::to_string(t.task_index) +
                  " must hold delta distortions");
    for (int j : t.distortion_ids) {
      require(seen.insert(j).second,
              "TaskStream: distortion id " + std::to_string(j) + " appears in two tasks");
      require(j >= 0 && j < m_all, "TaskStream: distortion id out of range");
    }
    auto check_samples = [&](const std::vector<LabeledSample>& v) {
      for (const LabeledSample& s : v) {
        require(std::find(t.distortion_ids.begin(), t.distortion_ids.end(), s.distortion_id) !=
                    t.distortion_ids.end(),
                "TaskStream: sample distortion id outside its task");
        require(s.score >= 0.0 && s.score <= 1.0, "TaskStream: sample score outside [0,1]");
      }
    };
    check_samples(t.train);
    check_samples(t.val);
    check_samples(t.test);
  }
  require(static_cast<int>(seen.size()) == m_all, "TaskStream: m_all does not match id count");
}

std::vector<Scalar> rescale_scores(const std::vector<Scalar>& raw, std::pair<Scalar, Scalar> range,
                                   bool higher_is_better) {
  const auto [lo, hi] = range;
  require(lo < hi, "rescale_scores: invalid range, lo must be < hi");
  std::vector<Scalar> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    require(raw[i] >= lo && raw[i] <= hi, "rescale_scores: row " + std::to_string(i) +
                                              " value " + std::to_string(raw[i]) +
                                              " outside [" + std::to_string(lo) + "," +
                                              std::to_string(hi) + "]");
    const Scalar v = (raw[i] - lo) / (hi - lo);
    out[i] = higher_is_better ? v : 1.0 - v;
  }
  return out;
}

namespace {

// Largest-remainder apportionment of n into the three split sizes.
std::array<std::size_t, 3> split_counts(std::size_t n, SplitRatios r) {
  const Scalar ratios[3] = {r.train, r.val, r.test};
  std::array<std::size_t, 3> counts{};
  Scalar fracs[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const Scalar target = static_cast<Scalar>(n) * ratios[i];
    counts[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::floor(target + 1e-9));
    fracs[i] = target - std::floor(target + 1e-9);
    assigned += counts[static_cast<std::size_t>(i)];
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (fracs[a] != fracs[b]) return fracs[a] > fracs[b];
    return a < b;  // ties go to train, then val
  });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned)
    ++counts[static_cast<std::size_t>(order[k % 3])];
  return counts;
}

}  // namespace

SplitResult split_dataset(const std::vector<LabeledSample>& samples, SplitRatios ratios,
                          std::uint64_t seed, bool by_reference, const std::string& label) {
  require(std::abs(ratios.train + ratios.val + ratios.test - 1.0) < 1e-9,
          "split_dataset: ratios must sum to 1");
  require(!samples.empty(), "split_dataset: empty sample set for " + label);
  Rng rng(seed);
  SplitResult out;
  const auto counts = split_counts(samples.size(), ratios);

  if (!by_reference) {
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    std::size_t at = 0;
    for (std::size_t k = 0; k < counts[0]; ++k) out.train.push_back(samples[idx[at++]]);
    for (std::size_t k = 0; k < counts[1]; ++k) out.val.push_back(samples[idx[at++]]);
    for (std::size_t k = 0; k < counts[2]; ++k) out.test.push_back(samples[idx[at++]]);
    return out;
  }

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require(!samples[i].reference_id.empty(),
            "split_dataset: sample without reference_id in " + label);
    groups[samples[i].reference_id].push_back(i);
  }
  require(groups.size() >= 3, "split_dataset: " + label + " has only " +
                                  std::to_string(groups.size()) +
                                  " reference groups, need at least 3");

  std::vector<std::string> keys;
  for (const auto& [k, _] : groups) keys.push_back(k);
  rng.shuffle(keys);

  // Whole reference groups go to the split with the largest remaining deficit.
  std::array<Scalar, 3> deficit = {static_cast<Scalar>(counts[0]), static_cast<Scalar>(counts[1]),
                                   static_cast<Scalar>(counts[2])};
  std::array<std::vector<std::size_t>, 3> assigned;
  for (const std::string& key : keys) {
    const std::size_t part = static_cast<std::size_t>(
        std::distance(deficit.begin(), std::max_element(deficit.begin(), deficit.end())));
    for (std::size_t i : groups[key]) assigned[part].push_back(i);
    deficit[part] -= static_cast<Scalar>(groups[key].size());
  }
  // No split may end up empty; steal a group from the largest one if needed.
  for (std::size_t part = 0; part < 3; ++part) {
    if (!assigned[part].empty()) continue;
    const std::size_t donor = static_cast<std::size_t>(std::distance(
        assigned.begin(), std::max_element(assigned.begin(), assigned.end(),
                                           [](const auto& a, const auto& b) { return a.size() < b.size(); })));
    const std::string& ref = samples[assigned[donor].back()].reference_id;
    std::vector<std::size_t> moved, kept;
    for (std::size_t i : assigned[donor])
      (samples[i].reference_id == ref ? moved : kept).push_back(i);
    assigned[donor] = kept;
    assigned[part] = moved;
  }
  for (std::size_t i : assigned[0]) out.train.push_back(samples[i]);
  for (std::size_t i : assigned[1]) out.val.push_back(samples[i]);
  for (std::size_t i : assigned[2]) out.test.push_back(samples[i]);
  return out;
}

namespace {

TaskStream assemble_stream(const LabeledPools& pools, const std::vector<std::string>& ordered_labels,
                           int m0, int delta) {
  require((static_cast<int>(ordered_labels.size()) - m0) % delta == 0,
          "stream builder: novel label count not divisible by delta");
  TaskStream stream;
  stream.m0 = m0;
  stream.delta = delta;
  stream.m_all = static_cast<int>(ordered_labels.size());
  stream.labels = ordered_labels;
  const int novel = stream.m_all - m0;
  const int num_tasks = 1 + novel / delta;

  int next_id = 0;
  for (int t = 0; t < num_tasks; ++t) {
    TaskSpec task;
    task.task_index = t;
    const int width = (t == 0) ? m0 : delta;
    for (int k = 0; k < width; ++k) {
      const int id = next_id++;
      task.distortion_ids.push_back(id);
      const auto it = pools.find(ordered_labels[static_cast<std::size_t>(id)]);
      require(it != pools.end(), "stream builder: no samples for label '" +
                                     ordered_labels[static_cast<std::size_t>(id)] + "'");
      auto append = [&](const std::vector<LabeledSample>& src, std::vector<LabeledSample>& dst) {
        for (LabeledSample s : src) {
          s.distortion_id = id;
          dst.push_back(std::move(s));
        }
      };
      append(it->second.train, task.train);
      append(it->second.val, task.val);
      append(it->second.test, task.test);
    }
    stream.tasks.push_back(std::move(task));
  }
  stream.validate();
  return stream;
}

std::string valid_deltas_message(int novel) {
  std::string deltas;
  for (int d = 1; d <= novel; ++d)
    if (novel % d == 0) deltas += (deltas.empty() ? "" : ", ") + std::to_string(d);
  return "valid deltas for " + std::to_string(novel) + " novel distortions: " + deltas;
}

}  // namespace

TaskStream build_distortion_shift_stream(const LabeledPools& pools,
                                         const std::vector<std::string>& base_labels,
                                         const std::vector<std::string>& novel_labels, int delta,
                                         std::uint64_t permutation_seed) {
  require(!base_labels.empty(), "build_distortion_shift_stream: no base labels");
  require(delta >= 1, "build_distortion_shift_stream: delta must be >= 1");
  for (const std::string& b : base_labels)
    require(std::find(novel_labels.begin(), novel_labels.end(), b) == novel_labels.end(),
            "build_distortion_shift_stream: label '" + b + "' is both base and novel");
  require(static_cast<int>(novel_labels.size()) % delta == 0,
          "build_distortion_shift_stream: " + valid_deltas_message(static_cast<int>(novel_labels.size())));

  std::vector<std::string> ordered = base_labels;
  std::vector<std::string> novel = novel_labels;
  if (permutation_seed != 0) {
    Rng rng(permutation_seed);
    rng.shuffle(novel);
  }
  ordered.insert(ordered.end(), novel.begin(), novel.end());
  return assemble_stream(pools, ordered, static_cast<int>(base_labels.size()), delta);
}

void DatasetManifest::validate() const {
  require(score_range.first < score_range.second, "manifest " + name + ": invalid score range");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(!rows[i].image_path.empty(), "manifest " + name + ": empty image path at row " +
                                             std::to_string(i));
    require(rows[i].raw_score >= score_range.first && rows[i].raw_score <= score_range.second,
            "manifest " + name + ": score out of range at row " + std::to_string(i));
  }
}

DatasetManifest DatasetManifest::load(const std::string& csv_path) {
  std::ifstream csv(csv_path);
  require(csv.good(), "manifest: cannot open " + csv_path);
  DatasetManifest m;
  m.name = std::filesystem::path(csv_path).stem().string();

  std::string line;
  require(static_cast<bool>(std::getline(csv, line)), "manifest " + m.name + ": empty file");
  require(line == "image_path,raw_score,distortion_label,reference_id",
          "manifest " + m.name + ": unexpected header '" + line + "'");
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestRow row;
    std::string field;
    std::getline(ss, row.image_path, ',');
    std::getline(ss, field, ',');
    row.raw_score = std::stod(field);
    std::getline(ss, row.distortion_label, ',');
    std::getline(ss, row.reference_id, ',');
    m.rows.push_back(std::move(row));
  }

  const std::string meta_path = csv_path + ".meta.json";
  std::ifstream meta(meta_path);
  require(meta.good(), "manifest " + m.name + ": missing sidecar " + meta_path);
  json j = json::parse(meta);
  m.score_range = {j.at("score_range").at(0).get<Scalar>(),
                   j.at("score_range").at(1).get<Scalar>()};
  m.higher_is_better = j.at("higher_is_better").get<bool>();
  if (j.contains("name")) m.name = j.at("name").get<std::string>();
  m.validate();
  return m;
}

namespace {

std::vector<LabeledSample> manifest_to_samples(const DatasetManifest& m) {
  std::vector<Scalar> raw;
  raw.reserve(m.rows.size());
  for (const ManifestRow& r : m.rows) raw.push_back(r.raw_score);
  const std::vector<Scalar> scores = rescale_scores(raw, m.score_range, m.higher_is_better);

  std::vector<LabeledSample> samples;
  samples.reserve(m.rows.size());
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    LabeledSample s;
    s.input.image_path = m.rows[i].image_path;
    s.score = scores[i];
    s.reference_id = m.rows[i].reference_id;
    s.source_range = m.score_range;
    samples.push_back(std::move(s));
  }
  return samples;
}

bool all_have_references(const std::vector<LabeledSample>& samples) {
  return std::all_of(samples.begin(), samples.end(),
                     [](const LabeledSample& s) { return !s.reference_id.empty(); });
}

}  // namespace

TaskStream build_dataset_shift_stream(const std::vector<DatasetManifest>& manifests,
                                      std::uint64_t split_seed) {
  require(manifests.size() >= 2, "build_dataset_shift_stream: need at least 2 manifests");
  LabeledPools pools;
  std::vector<std::string> labels;
  for (std::size_t t = 0; t < manifests.size(); ++t) {
    const DatasetManifest& m = manifests[t];
    require(!m.rows.empty(), "build_dataset_shift_stream: manifest '" + m.name + "' is empty");
    std::vector<LabeledSample> samples = manifest_to_samples(m);
    pools[m.name] = split_dataset(samples, SplitRatios{}, mix_seed(split_seed, t),
                                  all_have_references(samples), m.name);
    labels.push_back(m.name);
  }
  return build_distortion_shift_stream(pools, {labels.front()},
                                       {labels.begin() + 1, labels.end()}, 1, 0);
}

TaskStream build_distortion_shift_stream_from_manifest(const DatasetManifest& manifest,
                                                       const std::vector<std::string>& base_labels,
                                                       const std::vector<std::string>& novel_labels,
                                                       int delta, std::uint64_t permutation_seed,
                                                       std::uint64_t split_seed) {
  require(!manifest.rows.empty(), "distortion-shift: manifest '" + manifest.name + "' is empty");
  std::vector<LabeledSample> samples = manifest_to_samples(manifest);
  const SplitResult whole = split_dataset(samples, SplitRatios{}, split_seed,
                                          all_have_references(samples), manifest.name);
  // Group by distortion label, preserving the dataset-level split membership.
  // Rows are matched back by image_path, which is unique per row.
  LabeledPools pools;
  std::map<std::string, std::size_t> path_to_row;
  for (std::size_t i = 0; i < manifest.rows.size(); ++i)
    path_to_row[manifest.rows[i].image_path] = i;
  auto group = [&](const std::vector<LabeledSample>& part,
                   std::vector<LabeledSample> SplitResult::*member) {
    for (const LabeledSample& s : part) {
      const std::size_t row = path_to_row.at(s.input.image_path);
      (pools[manifest.rows[row].distortion_label].*member).push_back(s);
    }
  };
  group(whole.train, &SplitResult::train);
  group(whole.val, &SplitResult::val);
  group(whole.test, &SplitResult::test);
  return build_distortion_shift_stream(pools, base_labels, novel_labels, delta, permutation_seed);
}

Scalar apply_quality_map(QualityMap m, Scalar u) {
  switch (m) {
    case QualityMap::identity:
      return u;
    case QualityMap::smoothstep:
      return u * u * (3.0 - 2.0 * u);
  }
  throw std::logic_error("apply_quality_map: unknown map");
}

std::string quality_map_name(QualityMap m) {
  return m == QualityMap::identity ? "identity" : "smoothstep";
}

QualityMap parse_quality_map(const std::string& name) {
  if (name == "identity") return QualityMap::identity;
  if (name == "smoothstep") return QualityMap::smoothstep;
  throw std::invalid_argument("unknown quality map '" + name + "'");
}

TaskStream generate_synthetic_stream(const std::vector<SyntheticFamilySpec>& specs, int m0,
                                     int delta, std::uint64_t seed) {
  require(static_cast<int>(specs.size()) >= m0 + delta,
          "generate_synthetic_stream: need at least m0 + delta families");
  const Eigen::Index d_in = specs.front().cluster_mean.size();
  LabeledPools pools;
  std::vector<std::string> labels;

  for (std::size_t i = 0; i < specs.size(); ++i) {
    const SyntheticFamilySpec& f = specs[i];
    require(f.distortion_id == static_cast<int>(i),
            "generate_synthetic_stream: family distortion ids must be consecutive stream-order ints");
    require(f.cluster_spread > 0.0, "generate_synthetic_stream: cluster_spread must be positive");
    require(f.cluster_mean.size() == d_in, "generate_synthetic_stream: mixed input dims");
    require(f.samples_per_family > 0, "generate_synthetic_stream: samples_per_family must be > 0");

    Rng axis_rng(mix_seed(seed, 9000 + i));
    Vector axis = axis_rng.normal_vector(d_in);
    // The axis must dominate the spread noise along its own direction, or the
    // achievable SRCC is capped well below 1 regardless of the model.
    axis *= 16.0 * f.cluster_spread / axis.norm();

    Rng rng(mix_seed(seed, 100 + i));
    std::vector<LabeledSample> samples;
    const int n = f.samples_per_family;
    for (int k = 0; k < n; ++k) {
      const Scalar u = (static_cast<Scalar>(k) + rng.uniform()) / static_cast<Scalar>(n);
      LabeledSample s;
      s.input.vec = f.cluster_mean + f.cluster_spread * rng.normal_vector(d_in) + (u - 0.5) * axis;
      s.score = apply_quality_map(f.quality_map, u);
      s.distortion_id = static_cast<int>(i);
      samples.push_back(std::move(s));
    }
    const std::string label = "family_" + std::to_string(i);
    pools[label] = split_dataset(samples, SplitRatios{}, mix_seed(seed, 500 + i), false, label);
    labels.push_back(label);
  }

  return build_distortion_shift_stream(pools, {labels.begin(), labels.begin() + m0},
                                       {labels.begin() + m0, labels.end()}, delta, 0);
}

std::vector<SyntheticFamilySpec> make_separated_families(int count, int d_in, Scalar spread,
                                                         Scalar separation, QualityMap qm,
                                                         int samples_per_family) {
  require(count >= 1 && d_in >= count,
          "make_separated_families: need d_in >= count for axis-aligned separation");
  std::vector<SyntheticFamilySpec> specs;
  for (int i = 0; i < count; ++i) {
    SyntheticFamilySpec f;
    f.distortion_id = i;
    f.cluster_mean = Vector::Zero(d_in);
    f.cluster_mean(i) = separation * spread;
    f.cluster_spread = spread;
    f.quality_map = qm;
    f.samples_per_family = samples_per_family;
    specs.push_back(std::move(f));
  }
  return specs;
}

void save_synthetic_stream_spec(const SyntheticStreamSpec& spec, const std::string& path) {
  json j;
  j["seed"] = spec.seed;
  j["m0"] = spec.m0;
  j["delta"] = spec.delta;
  j["families"] = json::array();
  for (const SyntheticFamilySpec& f : spec.families) {
    json jf;
    jf["distortion_id"] = f.distortion_id;
    jf["cluster_mean"] = std::vector<Scalar>(f.cluster_mean.data(),
                                             f.cluster_mean.data() + f.cluster_mean.size());
    jf["cluster_spread"] = f.cluster_spread;
    jf["quality_map"] = quality_map_name(f.quality_map);
    jf["samples_per_family"] = f.samples_per_family;
    j["families"].push_back(std::move(jf));
  }
  std::ofstream out(path);
  require(out.good(), "save_synthetic_stream_spec: cannot write " + path);
  out << j.dump(2) << '\n';
}

SyntheticStreamSpec load_synthetic_stream_spec(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_synthetic_stream_spec: cannot open " + path);
  json j = json::parse(in);
  SyntheticStreamSpec spec;
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.m0 = j.at("m0").get<int>();
  spec.delta = j.at("delta").get<int>();
  for (const json& jf : j.at("families")) {
    SyntheticFamilySpec f;
    f.distortion_id = jf.at("distortion_id").get<int>();
    const auto mean = jf.at("cluster_mean").get<std::vector<Scalar>>();
    f.cluster_mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    f.cluster_spread = jf.at("cluster_spread").get<Scalar>();
    f.quality_map = parse_quality_map(jf.at("quality_map").get<std::string>());
    f.samples_per_family = jf.at("samples_per_family").get<int>();
    spec.families.push_back(std::move(f));
  }
  return spec;
}

Image crop_for_phase(const Image& img, Phase phase, Rng& rng) {
  require(img.height >= kCropSize && img.width >= kCropSize,
          "crop_for_phase: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
              " smaller than " + std::to_string(kCropSize) + "x" + std::to_string(kCropSize));
  int y0 = 0, x0 = 0;
  if (phase == Phase::train) {
    y0 = static_cast<int>(rng.index(img.height - kCropSize + 1));
    x0 = static_cast<int>(rng.index(img.width - kCropSize + 1));
  } else {
    y0 = (img.height - kCropSize) / 2;
    x0 = (img.width - kCropSize) / 2;
  }
  Image out;
  out.height = kCropSize;
  out.width = kCropSize;
  out.channels = img.channels;
  out.px.resize(static_cast<std::size_t>(kCropSize) * kCropSize * img.channels);
  for (int y = 0; y < kCropSize; ++y)
    for (int x = 0; x < kCropSize; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

const std::vector<std::string>& kadid_base_labels() {
  static const std::vector<std::string> labels = {"CQ", "JPEG", "CSA1", "WNCC", "Q", "JIT", "IN"};
  return labels;
}

const std::vector<std::string>& kadid_novel_labels() {
  static const std::vector<std::string> labels = {"JP2K", "CSA2", "PIX", "WN",  "CB", "GB",
                                                  "DA",   "CC",   "BR",  "NEP", "MS", "MB",
                                                  "MN",   "LB",   "DN",  "HS",  "CD", "CS"};
  return labels;
}

}  // namespace liqa::tasks
