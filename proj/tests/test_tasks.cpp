#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "liqa/tasks.hpp"

using namespace liqa;
using namespace liqa::tasks;

namespace {

std::vector<LabeledSample> make_samples(int n, int refs = 0) {
  std::vector<LabeledSample> out;
  for (int i = 0; i < n; ++i) {
    LabeledSample s;
    s.input.vec = Vector::Constant(4, static_cast<Scalar>(i));
    s.score = static_cast<Scalar>(i % 10) / 10.0;
    s.distortion_id = 0;
    if (refs > 0) s.reference_id = "ref" + std::to_string(i % refs);
    out.push_back(std::move(s));
  }
  return out;
}

std::uint64_t stream_checksum(const TaskStream& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mixin = [&h](const std::vector<LabeledSample>& v) {
    for (const LabeledSample& smp : v) {
      h ^= checksum(smp.input.vec);
      h *= 0x100000001b3ull;
      h ^= checksum_bytes(&smp.score, sizeof smp.score);
      h *= 0x100000001b3ull;
    }
  };
  for (const TaskSpec& t : s.tasks) {
    mixin(t.train);
    mixin(t.val);
    mixin(t.test);
  }
  return h;
}

}  // namespace

TEST_CASE("rescale endpoints and flipping") {
  CHECK(rescale_scores({2.0, 7.0}, {2.0, 7.0}, true) == std::vector<Scalar>{0.0, 1.0});
  CHECK(rescale_scores({0.0, 50.0, 100.0}, {0.0, 100.0}, false) ==
        std::vector<Scalar>{1.0, 0.5, 0.0});
  CHECK(rescale_scores({1.0, 5.0}, {1.0, 5.0}, true) == std::vector<Scalar>{0.0, 1.0});
}

TEST_CASE("rescale rejects out-of-range rows with the offending index") {
  try {
    rescale_scores({1.0, 9.0}, {0.0, 5.0}, true);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
  CHECK_THROWS(rescale_scores({0.0}, {1.0, 1.0}, true));
}

TEST_CASE("rescale preserves or reverses order") {
  const std::vector<Scalar> raw = {3.0, 1.0, 4.0, 1.5, 2.0};
  const auto up = rescale_scores(raw, {0.0, 5.0}, true);
  const auto down = rescale_scores(raw, {0.0, 5.0}, false);
  for (std::size_t a = 0; a < raw.size(); ++a)
    for (std::size_t b = 0; b < raw.size(); ++b) {
      if (raw[a] < raw[b]) {
        CHECK(up[a] < up[b]);
        CHECK(down[a] > down[b]);
      }
    }
}

TEST_CASE("split sizes use largest remainder") {
  const auto split = split_dataset(make_samples(10), SplitRatios{}, 1, false);
  CHECK(split.train.size() == 8);
  CHECK(split.val.size() == 1);
  CHECK(split.test.size() == 1);

  const auto odd = split_dataset(make_samples(17), SplitRatios{}, 1, false);
  CHECK(odd.train.size() + odd.val.size() + odd.test.size() == 17);
}

TEST_CASE("split is deterministic under the seed") {
  const auto a = split_dataset(make_samples(23), SplitRatios{}, 42, false);
  const auto b = split_dataset(make_samples(23), SplitRatios{}, 42, false);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i)
    CHECK(a.train[i].input.vec == b.train[i].input.vec);
}

TEST_CASE("split by reference keeps every group in one partition") {
  const auto samples = make_samples(100, 10);
  const auto split = split_dataset(samples, SplitRatios{}, 3, true);
  std::map<std::string, std::set<int>> where;
  for (const auto& s : split.train) where[s.reference_id].insert(0);
  for (const auto& s : split.val) where[s.reference_id].insert(1);
  for (const auto& s : split.test) where[s.reference_id].insert(2);
  CHECK(where.size() == 10);
  for (const auto& [ref, parts] : where) CHECK(parts.size() == 1);
  CHECK(split.train.size() + split.val.size() + split.test.size() == 100);
}

TEST_CASE("split by reference needs at least 3 groups") {
  try {
    split_dataset(make_samples(20, 2), SplitRatios{}, 1, true, "tiny_set");
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("tiny_set") != std::string::npos);
  }
}

namespace {

LabeledPools pools_for(const std::vector<std::string>& labels, int per_label = 12) {
  LabeledPools pools;
  for (const std::string& l : labels)
    pools[l] = split_dataset(make_samples(per_label), SplitRatios{}, 7, false, l);
  return pools;
}

std::vector<std::string> label_range(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("distortion-shift stream chunks novel labels by delta") {
  const auto base = label_range("b", 7);
  const auto novel = label_range("n", 18);
  LabeledPools pools = pools_for(base);
  for (const auto& [k, v] : pools_for(novel)) pools[k] = v;

  for (const auto& [delta, expected_tasks] : std::vector<std::pair<int, int>>{{1, 19}, {6, 4}, {18, 2}}) {
    const TaskStream s = build_distortion_shift_stream(pools, base, novel, delta, 0);
    CHECK(s.num_tasks() == expected_tasks);
    CHECK(s.m0 == 7);
    CHECK(s.delta == delta);
    CHECK(s.m_all == 25);
    for (int t = 1; t < s.num_tasks(); ++t) CHECK(s.m_cur(t) - s.m_pre(t) == delta);
  }
}

TEST_CASE("distortion-shift stream rejects non-divisible deltas") {
  const auto base = label_range("b", 2);
  const auto novel = label_range("n", 7);
  LabeledPools pools = pools_for(base);
  for (const auto& [k, v] : pools_for(novel)) pools[k] = v;
  try {
    build_distortion_shift_stream(pools, base, novel, 4, 0);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("1, 7") != std::string::npos);
  }
}

TEST_CASE("distortion ids are disjoint and consecutive in stream order") {
  const auto base = label_range("b", 3);
  const auto novel = label_range("n", 4);
  LabeledPools pools = pools_for(base);
  for (const auto& [k, v] : pools_for(novel)) pools[k] = v;
  const TaskStream s = build_distortion_shift_stream(pools, base, novel, 2, 0);
  std::set<int> seen;
  for (const TaskSpec& t : s.tasks)
    for (int j : t.distortion_ids) CHECK(seen.insert(j).second);
  CHECK(seen.size() == 7);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 6);
}

TEST_CASE("permutation seed shuffles only the novel order") {
  const auto base = label_range("b", 2);
  const auto novel = label_range("n", 6);
  LabeledPools pools = pools_for(base);
  for (const auto& [k, v] : pools_for(novel)) pools[k] = v;
  const TaskStream plain = build_distortion_shift_stream(pools, base, novel, 1, 0);
  const TaskStream shuffled = build_distortion_shift_stream(pools, base, novel, 1, 1234);
  CHECK(std::vector<std::string>(plain.labels.begin(), plain.labels.begin() + 2) ==
        std::vector<std::string>(shuffled.labels.begin(), shuffled.labels.begin() + 2));
  CHECK(plain.labels != shuffled.labels);
  const TaskStream again = build_distortion_shift_stream(pools, base, novel, 1, 1234);
  CHECK(shuffled.labels == again.labels);
}

namespace {

std::string write_manifest(const std::string& stem, int rows, std::pair<Scalar, Scalar> range,
                           bool higher_is_better, bool with_refs = true) {
  const std::string dir = (std::filesystem::temp_directory_path() / "liqa_task_tests").string();
  std::filesystem::create_directories(dir);
  const std::string csv = dir + "/" + stem + ".csv";
  std::ofstream os(csv);
  os << "image_path,raw_score,distortion_label,reference_id\n";
  for (int i = 0; i < rows; ++i) {
    const Scalar v = range.first + (range.second - range.first) * i / std::max(1, rows - 1);
    os << "img/" << stem << "_" << i << ".png," << v << ",blur,"
       << (with_refs ? "ref" + std::to_string(i % 5) : "") << "\n";
  }
  os.close();
  std::ofstream meta(csv + ".meta.json");
  meta << "{\"name\": \"" << stem << "\", \"score_range\": [" << range.first << ", "
       << range.second << "], \"higher_is_better\": " << (higher_is_better ? "true" : "false")
       << "}\n";
  return csv;
}

}  // namespace

TEST_CASE("manifest loading and dataset-shift stream") {
  const std::string live = write_manifest("live_like", 30, {0.0, 100.0}, false);
  const std::string koniq = write_manifest("koniq_like", 30, {1.0, 5.0}, true);
  const DatasetManifest m1 = DatasetManifest::load(live);
  const DatasetManifest m2 = DatasetManifest::load(koniq);
  CHECK(m1.name == "live_like");
  CHECK_FALSE(m1.higher_is_better);
  CHECK(m1.rows.size() == 30);

  const TaskStream s = build_dataset_shift_stream({m1, m2}, 5);
  CHECK(s.num_tasks() == 2);
  CHECK(s.m_all == 2);
  CHECK(s.m0 == 1);
  CHECK(s.delta == 1);
  // one dataset per task, distortion_id == task index
  for (int t = 0; t < 2; ++t)
    for (const LabeledSample& smp : s.tasks[static_cast<std::size_t>(t)].train)
      CHECK(smp.distortion_id == t);
  // DMOS flips so that higher always means better
  for (const LabeledSample& smp : s.tasks[0].train) {
    CHECK(smp.score >= 0.0);
    CHECK(smp.score <= 1.0);
  }
}

TEST_CASE("six ordered manifests give six tasks") {
  std::vector<DatasetManifest> manifests;
  for (const std::string& name :
       {"LIVE", "CSIQ", "BID", "CLIVE", "KonIQ-10K", "KADID-10K"}) {
    manifests.push_back(DatasetManifest::load(write_manifest(name, 30, {0.0, 10.0}, true)));
  }
  const TaskStream s = build_dataset_shift_stream(manifests, 5);
  CHECK(s.num_tasks() == 6);
  CHECK(s.labels.front() == "LIVE");
  CHECK(s.labels.back() == "KADID-10K");
  for (const LabeledSample& smp : s.tasks[3].train) CHECK(smp.distortion_id == 3);
}

TEST_CASE("empty manifest is rejected by name") {
  DatasetManifest bad;
  bad.name = "hollow";
  bad.score_range = {0.0, 1.0};
  DatasetManifest ok;
  ok.name = "fine";
  ok.score_range = {0.0, 1.0};
  for (int i = 0; i < 12; ++i)
    ok.rows.push_back({"p" + std::to_string(i), 0.5, "blur", "r" + std::to_string(i)});
  try {
    build_dataset_shift_stream({ok, bad}, 1);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("hollow") != std::string::npos);
  }
}

TEST_CASE("synthetic stream chunk arithmetic") {
  const auto specs = make_separated_families(10, 12, 0.5, 4.0, QualityMap::smoothstep, 12);
  const TaskStream s = generate_synthetic_stream(specs, 4, 2, 9);
  CHECK(s.num_tasks() == 4);  // base + 3 novel
  CHECK(s.m0 == 4);
  CHECK(s.m_all == 10);
  s.validate();
}

TEST_CASE("quality maps") {
  CHECK(apply_quality_map(QualityMap::identity, 0.3) == doctest::Approx(0.3));
  CHECK(apply_quality_map(QualityMap::smoothstep, 0.0) == doctest::Approx(0.0));
  CHECK(apply_quality_map(QualityMap::smoothstep, 1.0) == doctest::Approx(1.0));
  for (Scalar u = 0.0; u < 1.0; u += 0.05)
    CHECK(apply_quality_map(QualityMap::smoothstep, u + 0.01) >
          apply_quality_map(QualityMap::smoothstep, u));
  CHECK(parse_quality_map("identity") == QualityMap::identity);
  CHECK_THROWS(parse_quality_map("cubic_spline"));
}

TEST_CASE("synthetic stream is a pure function of its seed") {
  const auto specs = make_separated_families(6, 8, 0.25, 4.0, QualityMap::smoothstep, 15);
  const TaskStream a = generate_synthetic_stream(specs, 4, 1, 77);
  const TaskStream b = generate_synthetic_stream(specs, 4, 1, 77);
  const TaskStream c = generate_synthetic_stream(specs, 4, 1, 78);
  CHECK(stream_checksum(a) == stream_checksum(b));
  CHECK(stream_checksum(a) != stream_checksum(c));
}

TEST_CASE("synthetic stream spec round trips through its file") {
  SyntheticStreamSpec spec;
  spec.families = make_separated_families(5, 8, 0.25, 4.0, QualityMap::smoothstep, 15);
  spec.m0 = 3;
  spec.delta = 1;
  spec.seed = 4242;
  const std::string path =
      (std::filesystem::temp_directory_path() / "liqa_task_tests" / "stream.json").string();
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  save_synthetic_stream_spec(spec, path);
  const SyntheticStreamSpec loaded = load_synthetic_stream_spec(path);
  CHECK(loaded.seed == spec.seed);
  CHECK(loaded.m0 == spec.m0);
  CHECK(loaded.families.size() == spec.families.size());
  const TaskStream a = generate_synthetic_stream(spec.families, spec.m0, spec.delta, spec.seed);
  const TaskStream b =
      generate_synthetic_stream(loaded.families, loaded.m0, loaded.delta, loaded.seed);
  CHECK(stream_checksum(a) == stream_checksum(b));
}

TEST_CASE("crop keeps exact-size images unchanged") {
  Image img;
  img.height = img.width = kCropSize;
  img.channels = 1;
  img.px.assign(static_cast<std::size_t>(kCropSize) * kCropSize, 0.25);
  Rng rng(1);
  for (Phase phase : {Phase::train, Phase::val, Phase::test}) {
    const Image out = crop_for_phase(img, phase, rng);
    CHECK(out.px == img.px);
  }
}

TEST_CASE("center crop takes the middle window") {
  Image img;
  img.height = img.width = 400;
  img.channels = 1;
  img.px.resize(400 * 400);
  for (int y = 0; y < 400; ++y)
    for (int x = 0; x < 400; ++x) img.at(y, x, 0) = (y * 1000.0 + x) / 1e6;
  Rng rng(1);
  const Image out = crop_for_phase(img, Phase::test, rng);
  CHECK(out.height == kCropSize);
  CHECK(out.width == kCropSize);
  // pixels [50..350) in both axes
  CHECK(out.at(0, 0, 0) == doctest::Approx((50 * 1000.0 + 50) / 1e6));
  CHECK(out.at(299, 299, 0) == doctest::Approx((349 * 1000.0 + 349) / 1e6));
}

TEST_CASE("undersized images are rejected with their dimensions") {
  Image img;
  img.height = img.width = 256;
  img.channels = 3;
  img.px.assign(256 * 256 * 3, 0.0);
  Rng rng(1);
  try {
    crop_for_phase(img, Phase::train, rng);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("256") != std::string::npos);
  }
}

TEST_CASE("train crop stays in bounds and is seed-deterministic") {
  Image img;
  img.height = 320;
  img.width = 340;
  img.channels = 1;
  img.px.resize(320 * 340);
  for (std::size_t i = 0; i < img.px.size(); ++i) img.px[i] = static_cast<Scalar>(i % 97) / 97.0;
  Rng rng_a(5), rng_b(5);
  const Image a = crop_for_phase(img, Phase::train, rng_a);
  const Image b = crop_for_phase(img, Phase::train, rng_b);
  CHECK(a.px == b.px);
}

TEST_CASE("kadid grouping constants") {
  CHECK(kadid_base_labels().size() == 7);
  CHECK(kadid_novel_labels().size() == 18);
  CHECK(kadid_base_labels().front() == "CQ");
  CHECK(kadid_novel_labels().front() == "JP2K");
}
