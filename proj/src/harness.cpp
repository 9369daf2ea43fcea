#include "liqa/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "liqa/figures.hpp"
#include "liqa/tsne.hpp"

namespace liqa::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt17(Scalar v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  require(j.is_object(), "config: " + path + " must be an object");
  for (const auto& [key, _] : j.items())
    require(allowed.count(key) > 0, "config: unrecognized key '" + path + key + "'");
}

std::string data_rooted(const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  const char* root = std::getenv(kDataRootEnv);
  if (root && *root) return (fs::path(root) / path).string();
  return path;
}

}  // namespace

// ---- config ------------------------------------------------------------------

std::string ExperimentConfig::resolved_replay_strategy() const {
  if (!replay_strategy.empty()) return replay_strategy;
  return method == "jt_pr" ? "dist" : "qua_and_dist";
}

void ExperimentConfig::validate() const {
  baselines::parse_method(method);
  require(!seeds.empty(), "config: seeds must be non-empty");
  schedule.validate();
  weights.validate();
  train::parse_ablation(ablation);
  train::parse_replay_strategy(resolved_replay_strategy());
  require(n_buf >= 1, "config: replay.n_buf must be positive");
  require(validation == "current" || validation == "pooled",
          "config: validation must be 'current' or 'pooled'");
  require(!out.empty(), "config: out directory must be set");

  if (stream.kind == "synthetic") {
    require(stream.families >= stream.m0 + stream.delta,
            "config: stream.families must be at least m0 + delta");
    require((stream.families - stream.m0) % stream.delta == 0,
            "config: delta must divide the novel family count");
    require(stream.d_in >= stream.families,
            "config: stream.d_in must be >= families for separated clusters");
    require(stream.cluster_spread > 0 && stream.cluster_separation > 0,
            "config: cluster_spread and cluster_separation must be positive");
    require(stream.samples_per_family >= 10,
            "config: samples_per_family must be at least 10 for usable splits");
    tasks::parse_quality_map(stream.quality_map);
  } else if (stream.kind == "distortion_shift") {
    require(!stream.manifest.empty(), "config: distortion_shift needs stream.manifest");
    require(!stream.base_labels.empty() && !stream.novel_labels.empty(),
            "config: distortion_shift needs base_labels and novel_labels");
    require(static_cast<int>(stream.novel_labels.size()) % stream.delta == 0,
            "config: delta must divide the novel label count");
  } else if (stream.kind == "dataset_shift") {
    require(stream.manifests.size() >= 2, "config: dataset_shift needs at least 2 manifests");
  } else {
    throw std::invalid_argument("config: unknown stream.kind '" + stream.kind + "'");
  }
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  check_keys(j, "", {"method", "stream", "schedule", "weights", "replay", "ablation", "eq_mode",
                     "validation", "baseline", "seeds", "out"});
  ExperimentConfig cfg;
  if (j.contains("method")) cfg.method = j.at("method").get<std::string>();

  require(j.contains("stream"), "config: missing 'stream' section");
  {
    const json& js = j.at("stream");
    check_keys(js, "stream.",
               {"kind", "d_in", "families", "samples_per_family", "m0", "delta", "cluster_spread",
                "cluster_separation", "quality_map", "manifest", "base_labels", "novel_labels",
                "manifests", "permutation_seed"});
    StreamConfig& s = cfg.stream;
    if (js.contains("kind")) s.kind = js.at("kind").get<std::string>();
    if (js.contains("d_in")) s.d_in = js.at("d_in").get<int>();
    if (js.contains("families")) s.families = js.at("families").get<int>();
    if (js.contains("samples_per_family")) s.samples_per_family = js.at("samples_per_family").get<int>();
    if (js.contains("m0")) s.m0 = js.at("m0").get<int>();
    if (js.contains("delta")) s.delta = js.at("delta").get<int>();
    if (js.contains("cluster_spread")) s.cluster_spread = js.at("cluster_spread").get<Scalar>();
    if (js.contains("cluster_separation"))
      s.cluster_separation = js.at("cluster_separation").get<Scalar>();
    if (js.contains("quality_map")) s.quality_map = js.at("quality_map").get<std::string>();
    if (js.contains("manifest")) s.manifest = js.at("manifest").get<std::string>();
    if (js.contains("base_labels")) s.base_labels = js.at("base_labels").get<std::vector<std::string>>();
    if (js.contains("novel_labels"))
      s.novel_labels = js.at("novel_labels").get<std::vector<std::string>>();
    if (js.contains("manifests")) s.manifests = js.at("manifests").get<std::vector<std::string>>();
    if (js.contains("permutation_seed"))
      s.permutation_seed = js.at("permutation_seed").get<std::uint64_t>();
  }

  if (j.contains("schedule")) {
    const json& js = j.at("schedule");
    check_keys(js, "schedule.",
               {"epochs_single", "epochs_gan", "epochs_multi", "batch_regression", "batch_gan",
                "lr_base", "lr_extractor_novel", "lr_gan", "early_stop_min_epoch",
                "gan_augmentation_factor", "jitter_spread"});
    train::TrainSchedule& s = cfg.schedule;
    if (js.contains("epochs_single")) s.epochs_single = js.at("epochs_single").get<int>();
    if (js.contains("epochs_gan")) s.epochs_gan = js.at("epochs_gan").get<int>();
    if (js.contains("epochs_multi")) s.epochs_multi = js.at("epochs_multi").get<int>();
    if (js.contains("batch_regression")) s.batch_regression = js.at("batch_regression").get<int>();
    if (js.contains("batch_gan")) s.batch_gan = js.at("batch_gan").get<int>();
    if (js.contains("lr_base")) s.lr_base = js.at("lr_base").get<Scalar>();
    if (js.contains("lr_extractor_novel"))
      s.lr_extractor_novel = js.at("lr_extractor_novel").get<Scalar>();
    if (js.contains("lr_gan")) s.lr_gan = js.at("lr_gan").get<Scalar>();
    if (js.contains("early_stop_min_epoch"))
      s.early_stop_min_epoch = js.at("early_stop_min_epoch").get<int>();
    if (js.contains("gan_augmentation_factor"))
      s.gan_augmentation_factor = js.at("gan_augmentation_factor").get<int>();
    if (js.contains("jitter_spread")) s.jitter_spread = js.at("jitter_spread").get<Scalar>();
  }

  if (j.contains("weights")) {
    const json& js = j.at("weights");
    check_keys(js, "weights.", {"lambda_fd", "lambda_pr", "lambda_mse", "lambda_qua", "lambda_align"});
    losses::LossWeights& w = cfg.weights;
    if (js.contains("lambda_fd")) w.lambda_fd = js.at("lambda_fd").get<Scalar>();
    if (js.contains("lambda_pr")) w.lambda_pr = js.at("lambda_pr").get<Scalar>();
    if (js.contains("lambda_mse")) w.lambda_mse = js.at("lambda_mse").get<Scalar>();
    if (js.contains("lambda_qua")) w.lambda_qua = js.at("lambda_qua").get<Scalar>();
    if (js.contains("lambda_align")) w.lambda_align = js.at("lambda_align").get<Scalar>();
  }

  if (j.contains("replay")) {
    const json& js = j.at("replay");
    check_keys(js, "replay.", {"strategy", "n_buf"});
    if (js.contains("strategy")) cfg.replay_strategy = js.at("strategy").get<std::string>();
    if (js.contains("n_buf")) cfg.n_buf = js.at("n_buf").get<int>();
  }

  if (j.contains("ablation")) cfg.ablation = j.at("ablation").get<std::string>();

  if (j.contains("eq_mode")) {
    const json& js = j.at("eq_mode");
    check_keys(js, "eq_mode.", {"quality_assignment", "adversarial_form"});
    if (js.contains("quality_assignment")) {
      const std::string v = js.at("quality_assignment").get<std::string>();
      require(v == "text" || v == "printed", "config: eq_mode.quality_assignment must be text|printed");
      cfg.eq_mode.printed_quality_assignment = (v == "printed");
    }
    if (js.contains("adversarial_form")) {
      const std::string v = js.at("adversarial_form").get<std::string>();
      require(v == "standard" || v == "printed", "config: eq_mode.adversarial_form must be standard|printed");
      cfg.eq_mode.printed_adversarial = (v == "printed");
    }
  }

  if (j.contains("validation")) cfg.validation = j.at("validation").get<std::string>();

  if (j.contains("baseline")) {
    const json& js = j.at("baseline");
    check_keys(js, "baseline.", {"lambda_ewc", "lambda_online_ewc", "gamma", "lambda_si", "xi"});
    baselines::BaselineHyperparams& b = cfg.baseline;
    if (js.contains("lambda_ewc")) b.lambda_ewc = js.at("lambda_ewc").get<Scalar>();
    if (js.contains("lambda_online_ewc"))
      b.lambda_online_ewc = js.at("lambda_online_ewc").get<Scalar>();
    if (js.contains("gamma")) b.gamma = js.at("gamma").get<Scalar>();
    if (js.contains("lambda_si")) b.lambda_si = js.at("lambda_si").get<Scalar>();
    if (js.contains("xi")) b.xi = js.at("xi").get<Scalar>();
  }

  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("out")) cfg.out = j.at("out").get<std::string>();

  cfg.validate();
  return cfg;
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["method"] = method;
  json& js = j["stream"];
  js["kind"] = stream.kind;
  if (stream.kind == "synthetic") {
    js["d_in"] = stream.d_in;
    js["families"] = stream.families;
    js["samples_per_family"] = stream.samples_per_family;
    js["m0"] = stream.m0;
    js["delta"] = stream.delta;
    js["cluster_spread"] = stream.cluster_spread;
    js["cluster_separation"] = stream.cluster_separation;
    js["quality_map"] = stream.quality_map;
  } else if (stream.kind == "distortion_shift") {
    js["manifest"] = stream.manifest;
    js["base_labels"] = stream.base_labels;
    js["novel_labels"] = stream.novel_labels;
    js["delta"] = stream.delta;
  } else {
    js["manifests"] = stream.manifests;
  }
  js["permutation_seed"] = stream.permutation_seed;

  j["schedule"] = {{"epochs_single", schedule.epochs_single},
                   {"epochs_gan", schedule.epochs_gan},
                   {"epochs_multi", schedule.epochs_multi},
                   {"batch_regression", schedule.batch_regression},
                   {"batch_gan", schedule.batch_gan},
                   {"lr_base", schedule.lr_base},
                   {"lr_extractor_novel", schedule.lr_extractor_novel},
                   {"lr_gan", schedule.lr_gan},
                   {"early_stop_min_epoch", schedule.early_stop_min_epoch},
                   {"gan_augmentation_factor", schedule.gan_augmentation_factor},
                   {"jitter_spread", schedule.jitter_spread}};
  j["weights"] = {{"lambda_fd", weights.lambda_fd},
                  {"lambda_pr", weights.lambda_pr},
                  {"lambda_mse", weights.lambda_mse},
                  {"lambda_qua", weights.lambda_qua},
                  {"lambda_align", weights.lambda_align}};
  j["replay"] = {{"strategy", resolved_replay_strategy()}, {"n_buf", n_buf}};
  j["ablation"] = ablation;
  j["eq_mode"] = {{"quality_assignment", eq_mode.printed_quality_assignment ? "printed" : "text"},
                  {"adversarial_form", eq_mode.printed_adversarial ? "printed" : "standard"}};
  j["validation"] = validation;
  j["baseline"] = {{"lambda_ewc", baseline.lambda_ewc},
                   {"lambda_online_ewc", baseline.lambda_online_ewc},
                   {"gamma", baseline.gamma},
                   {"lambda_si", baseline.lambda_si},
                   {"xi", baseline.xi}};
  j["seeds"] = seeds;
  j["out"] = out;
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream outf(path);
  require(outf.good(), "config: cannot write " + path);
  outf << to_json_text();
}

// ---- stream building ------------------------------------------------------------

tasks::TaskStream build_stream(const StreamConfig& cfg, std::uint64_t run_seed) {
  if (cfg.kind == "synthetic") {
    std::vector<tasks::SyntheticFamilySpec> specs = tasks::make_separated_families(
        cfg.families, cfg.d_in, cfg.cluster_spread, cfg.cluster_separation,
        tasks::parse_quality_map(cfg.quality_map), cfg.samples_per_family);
    if (cfg.permutation_seed != 0) {
      std::vector<tasks::SyntheticFamilySpec> novel(specs.begin() + cfg.m0, specs.end());
      Rng rng(cfg.permutation_seed);
      rng.shuffle(novel);
      for (std::size_t i = 0; i < novel.size(); ++i) specs[static_cast<std::size_t>(cfg.m0) + i] = novel[i];
      for (std::size_t i = 0; i < specs.size(); ++i) specs[i].distortion_id = static_cast<int>(i);
    }
    return tasks::generate_synthetic_stream(specs, cfg.m0, cfg.delta, mix_seed(run_seed, 0xDA7A));
  }
  if (cfg.kind == "distortion_shift") {
    const tasks::DatasetManifest manifest = tasks::DatasetManifest::load(data_rooted(cfg.manifest));
    return tasks::build_distortion_shift_stream_from_manifest(
        manifest, cfg.base_labels, cfg.novel_labels, cfg.delta, cfg.permutation_seed,
        mix_seed(run_seed, 0x5917));
  }
  if (cfg.kind == "dataset_shift") {
    std::vector<tasks::DatasetManifest> manifests;
    for (const std::string& path : cfg.manifests)
      manifests.push_back(tasks::DatasetManifest::load(data_rooted(path)));
    return tasks::build_dataset_shift_stream(manifests, mix_seed(run_seed, 0x5917));
  }
  throw std::invalid_argument("build_stream: unknown kind '" + cfg.kind + "'");
}

// ---- per-seed runs -------------------------------------------------------------------

namespace {

int stream_input_dim(const tasks::TaskStream& stream) {
  for (const tasks::TaskSpec& t : stream.tasks)
    for (const tasks::LabeledSample& s : t.train) {
      require(!s.input.is_image(),
              "run_experiment: image-backed streams need the image backbone; desk-scale training "
              "uses feature-source vectors");
      return static_cast<int>(s.input.vec.size());
    }
  throw std::invalid_argument("run_experiment: stream has no training samples");
}

std::string seed_dir_of(const std::string& method_dir, std::uint64_t seed) {
  return method_dir + "/" + std::to_string(seed);
}

std::string checkpoint_path(const std::string& seed_dir, int task) {
  return seed_dir + "/checkpoints/task_" + std::to_string(task) + ".ckpt";
}

// Runs tasks [first_task, last_task] of one seed, checkpointing at every
// boundary; assumes bundle/ledger/method_state reflect first_task - 1.
metrics::EvalLedger run_seed_tasks(const ExperimentConfig& cfg, const tasks::TaskStream& stream,
                                   models::ModelBundle& bundle, metrics::EvalLedger ledger,
                                   const std::string& method_state, int first_task, int last_task,
                                   const std::string& seed_dir, std::uint64_t seed) {
  fs::create_directories(seed_dir + "/checkpoints");
  std::ofstream progress(seed_dir + "/progress.log",
                         first_task == 0 ? std::ios::trunc : std::ios::app);

  train::DataAccessAudit audit;
  train::AuditedStream astream(stream, &audit);
  const baselines::Method method = baselines::parse_method(cfg.method);

  if (method == baselines::Method::liqa || method == baselines::Method::jt_pr) {
    train::LiqaConfig lc;
    lc.schedule = cfg.schedule;
    lc.weights = cfg.weights;
    lc.replay_strategy = train::parse_replay_strategy(cfg.resolved_replay_strategy());
    lc.n_buf = cfg.n_buf;
    lc.ablation = train::parse_ablation(cfg.ablation);
    lc.eq_mode = cfg.eq_mode;
    lc.validation = (cfg.validation == "pooled") ? train::ValidationScheme::pooled_seen
                                                 : train::ValidationScheme::current_task;
    lc.pool_all_tasks = (method == baselines::Method::jt_pr);
    train::LiqaTrainer trainer(bundle, lc, &progress);
    for (int t = first_task; t <= last_task; ++t) {
      trainer.run_task(astream, t, mix_seed(seed, 10000 + static_cast<std::uint64_t>(t)), ledger);
      models::save_checkpoint(checkpoint_path(seed_dir, t), bundle, ledger, "");
    }
    for (const train::FreezeRecord& rec : trainer.freeze_log())
      require(rec.stable(), "run_experiment: frozen group '" + rec.selector +
                                "' changed during stage " + rec.stage);
  } else {
    train::BaselineConfig bc;
    bc.method = method;
    bc.hyper = cfg.baseline;
    bc.schedule = cfg.schedule;
    bc.validation = (cfg.validation == "pooled") ? train::ValidationScheme::pooled_seen
                                                 : train::ValidationScheme::current_task;
    train::BaselineTrainer trainer(bundle, bc, &progress);
    trainer.restore_method_state(method_state);
    for (int t = first_task; t <= last_task; ++t) {
      trainer.run_task(astream, t, mix_seed(seed, 10000 + static_cast<std::uint64_t>(t)), ledger);
      models::save_checkpoint(checkpoint_path(seed_dir, t), bundle, ledger,
                              trainer.method_state_blob());
    }
  }

  if (!baselines::stores_previous_data(method)) {
    for (const auto& [current, touched] : audit.train_accesses)
      require(current == touched, "run_experiment: method " + cfg.method +
                                      " touched training data of task " + std::to_string(touched) +
                                      " while learning task " + std::to_string(current));
  }

  std::ofstream ledger_csv(seed_dir + "/ledger.csv", std::ios::trunc);
  require(ledger_csv.good(), "run_experiment: cannot write ledger.csv in " + seed_dir);
  ledger.write_csv(ledger_csv);
  return ledger;
}

ResultBundle summarize(const ExperimentConfig& cfg, const std::vector<metrics::EvalLedger>& ledgers,
                       const tasks::TaskStream& label_stream) {
  ResultBundle rb;
  rb.seeds = cfg.seeds;
  rb.per_seed = ledgers;
  if (ledgers.empty()) return rb;
  const int max_task = ledgers.front().max_task();
  for (const metrics::EvalLedger& l : ledgers)
    require(l.max_task() == max_task, "summarize: seeds disagree on task count");

  for (int t = 0; t <= max_task; ++t) {
    Scalar c = 0.0, f = 0.0;
    for (const metrics::EvalLedger& l : ledgers) {
      c += l.correlation_index(t);
      if (t >= 1) f += l.forgetting_index(t);
    }
    rb.mean_c.push_back(c / static_cast<Scalar>(ledgers.size()));
    rb.mean_f.push_back(t >= 1 ? f / static_cast<Scalar>(ledgers.size())
                               : std::numeric_limits<Scalar>::quiet_NaN());
  }

  if (max_task >= 1) {
    Scalar cs = 0.0, fs = 0.0;
    for (const metrics::EvalLedger& l : ledgers) {
      const auto [cb, fb] = l.averaged_indices();
      rb.per_seed_cf.emplace_back(cb, fb);
      cs += cb;
      fs += fb;
    }
    rb.c_bar = cs / static_cast<Scalar>(ledgers.size());
    rb.f_bar = fs / static_cast<Scalar>(ledgers.size());
  }

  for (int j : ledgers.front().distortions_at(max_task)) {
    Scalar sum = 0.0;
    for (const metrics::EvalLedger& l : ledgers) sum += l.at(max_task, j);
    rb.final_srcc[j] = sum / static_cast<Scalar>(ledgers.size());
  }
  (void)label_stream;
  return rb;
}

void write_summaries(const std::string& method_dir, const ResultBundle& rb,
                     const std::vector<std::string>& labels) {
  {
    std::ofstream os(method_dir + "/summary.csv", std::ios::trunc);
    require(os.good(), "cannot write summary.csv");
    os << "task_index,C,F\n";
    for (std::size_t t = 0; t < rb.mean_c.size(); ++t) {
      os << t << ',' << fmt17(rb.mean_c[t]) << ',';
      if (t >= 1) os << fmt17(rb.mean_f[t]);
      os << '\n';
    }
  }
  {
    std::ofstream os(method_dir + "/overall.csv", std::ios::trunc);
    require(os.good(), "cannot write overall.csv");
    os << "seed,C_bar,F_bar\n";
    for (std::size_t i = 0; i < rb.per_seed_cf.size(); ++i)
      os << rb.seeds[i] << ',' << fmt17(rb.per_seed_cf[i].first) << ','
         << fmt17(rb.per_seed_cf[i].second) << '\n';
    if (!rb.per_seed_cf.empty())
      os << "mean," << fmt17(rb.c_bar) << ',' << fmt17(rb.f_bar) << '\n';
  }
  {
    std::ofstream os(method_dir + "/final_srcc.csv", std::ios::trunc);
    require(os.good(), "cannot write final_srcc.csv");
    os << "distortion_id,label,srcc\n";
    for (const auto& [j, v] : rb.final_srcc) {
      const std::string label =
          (j >= 0 && j < static_cast<int>(labels.size())) ? labels[static_cast<std::size_t>(j)] : "";
      os << j << ',' << label << ',' << fmt17(v) << '\n';
    }
  }
}

}  // namespace

ResultBundle run_experiment(const ExperimentConfig& config, int stop_after_task) {
  config.validate();
  const std::string method_dir = config.out + "/" + config.method;
  fs::create_directories(method_dir);

  const std::string config_path = method_dir + "/config.json";
  const std::string resolved = config.to_json_text();
  if (fs::exists(config_path)) {
    std::ifstream in(config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    require(ss.str() == resolved,
            "run_experiment: " + config_path +
                " holds a different configuration; use a fresh --out or resume it");
  } else {
    std::ofstream os(config_path);
    os << resolved;
  }

  std::vector<metrics::EvalLedger> ledgers;
  tasks::TaskStream label_stream;
  for (std::uint64_t seed : config.seeds) {
    const tasks::TaskStream stream = build_stream(config.stream, seed);
    if (label_stream.tasks.empty()) label_stream = stream;
    const int last_task = (stop_after_task >= 0)
                              ? std::min(stop_after_task, stream.num_tasks() - 1)
                              : stream.num_tasks() - 1;
    models::ModelBundle bundle(stream_input_dim(stream), mix_seed(seed, 5));
    ledgers.push_back(run_seed_tasks(config, stream, bundle, {}, {}, 0, last_task,
                                     seed_dir_of(method_dir, seed), seed));
  }

  ResultBundle rb = summarize(config, ledgers, label_stream);
  write_summaries(method_dir, rb, label_stream.labels);
  return rb;
}

namespace {

ResultBundle resume_method_dir(const std::string& method_dir) {
  const ExperimentConfig config = ExperimentConfig::load(method_dir + "/config.json");
  std::vector<metrics::EvalLedger> ledgers;
  tasks::TaskStream label_stream;

  for (std::uint64_t seed : config.seeds) {
    const tasks::TaskStream stream = build_stream(config.stream, seed);
    if (label_stream.tasks.empty()) label_stream = stream;
    const std::string seed_dir = seed_dir_of(method_dir, seed);
    const int final_task = stream.num_tasks() - 1;

    int last_done = -1;
    for (int t = 0; t <= final_task; ++t)
      if (fs::exists(checkpoint_path(seed_dir, t))) last_done = t;

    if (last_done == final_task) {
      std::ifstream in(seed_dir + "/ledger.csv");
      require(in.good(), "resume: missing ledger.csv for completed seed in " + seed_dir);
      ledgers.push_back(metrics::EvalLedger::read_csv(in));
      continue;
    }

    if (last_done < 0) {
      models::ModelBundle bundle(stream_input_dim(stream), mix_seed(seed, 5));
      ledgers.push_back(run_seed_tasks(config, stream, bundle, {}, {}, 0, final_task, seed_dir, seed));
      continue;
    }

    models::LoadedCheckpoint ckpt = models::load_checkpoint(checkpoint_path(seed_dir, last_done));
    require(ckpt.bundle.last_completed_task == last_done,
            "resume: checkpoint/task index mismatch in " + seed_dir);
    ledgers.push_back(run_seed_tasks(config, stream, ckpt.bundle, ckpt.ledger, ckpt.method_state,
                                     last_done + 1, final_task, seed_dir, seed));
  }

  ResultBundle rb = summarize(config, ledgers, label_stream);
  write_summaries(method_dir, rb, label_stream.labels);
  return rb;
}

std::vector<std::string> method_dirs_under(const std::string& out_root) {
  std::vector<std::string> dirs;
  if (fs::exists(out_root + "/config.json")) {
    dirs.push_back(out_root);
    return dirs;
  }
  require(fs::is_directory(out_root), "no such directory: " + out_root);
  for (const auto& entry : fs::directory_iterator(out_root))
    if (entry.is_directory() && fs::exists(entry.path() / "config.json"))
      dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  require(!dirs.empty(), "no runs found under " + out_root + " (missing config.json)");
  return dirs;
}

}  // namespace

ResultBundle resume_experiment(const std::string& dir) {
  ResultBundle last;
  for (const std::string& method_dir : method_dirs_under(dir)) last = resume_method_dir(method_dir);
  return last;
}

ResultBundle collect_results(const std::string& method_dir) {
  const ExperimentConfig config = ExperimentConfig::load(method_dir + "/config.json");
  std::vector<metrics::EvalLedger> ledgers;
  for (std::uint64_t seed : config.seeds) {
    std::ifstream in(seed_dir_of(method_dir, seed) + "/ledger.csv");
    require(in.good(), "collect_results: missing ledger.csv for seed " + std::to_string(seed));
    ledgers.push_back(metrics::EvalLedger::read_csv(in));
  }
  return summarize(config, ledgers, build_stream(config.stream, config.seeds.front()));
}

// ---- curves -----------------------------------------------------------------------

void emit_curves(const std::string& out_root) {
  struct MethodSummary {
    std::string name;
    std::vector<Scalar> c, f;  // f[0] is NaN
  };
  std::vector<MethodSummary> methods;
  for (const std::string& dir : method_dirs_under(out_root)) {
    std::ifstream in(dir + "/summary.csv");
    require(in.good(), "emit_curves: missing summary.csv in " + dir);
    MethodSummary ms;
    ms.name = fs::path(dir).filename().string();
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string field;
      std::getline(ss, field, ',');
      std::getline(ss, field, ',');
      ms.c.push_back(std::stod(field));
      std::getline(ss, field, ',');
      ms.f.push_back(field.empty() ? std::numeric_limits<Scalar>::quiet_NaN() : std::stod(field));
    }
    methods.push_back(std::move(ms));
  }
  require(!methods.empty(), "emit_curves: nothing to plot");
  for (const MethodSummary& ms : methods)
    require(ms.c.size() == methods.front().c.size(),
            "emit_curves: method '" + ms.name + "' has a mismatched task count");

  fs::create_directories(out_root + "/figures");
  const std::size_t n_tasks = methods.front().c.size();

  std::vector<figures::Series> c_series, f_series;
  for (const MethodSummary& ms : methods) {
    figures::Series cs{ms.name, {}, {}}, fsr{ms.name, {}, {}};
    for (std::size_t t = 0; t < n_tasks; ++t) {
      cs.x.push_back(static_cast<Scalar>(t));
      cs.y.push_back(ms.c[t]);
      if (t >= 1) {
        fsr.x.push_back(static_cast<Scalar>(t));
        fsr.y.push_back(ms.f[t]);
      }
    }
    c_series.push_back(std::move(cs));
    f_series.push_back(std::move(fsr));
  }
  figures::write_line_chart(out_root + "/figures/correlation_index", "Correlation index",
                            "task", "C", c_series);
  figures::write_line_chart(out_root + "/figures/forgetting_index", "Forgetting index",
                            "task", "F", f_series);

  {
    std::ofstream os(out_root + "/figures/correlation_index.csv", std::ios::trunc);
    os << "task_index";
    for (const MethodSummary& ms : methods) os << ',' << ms.name;
    os << '\n';
    for (std::size_t t = 0; t < n_tasks; ++t) {
      os << t;
      for (const MethodSummary& ms : methods) os << ',' << fmt17(ms.c[t]);
      os << '\n';
    }
  }
  {
    std::ofstream os(out_root + "/figures/forgetting_index.csv", std::ios::trunc);
    os << "task_index";
    for (const MethodSummary& ms : methods) os << ',' << ms.name;
    os << '\n';
    for (std::size_t t = 1; t < n_tasks; ++t) {
      os << t;
      for (const MethodSummary& ms : methods) os << ',' << fmt17(ms.f[t]);
      os << '\n';
    }
  }
}

// ---- feature projection ---------------------------------------------------------------

Matrix project_features(const Matrix& real_features, const Matrix& pseudo_features,
                        const std::vector<int>& real_labels, const std::vector<int>& pseudo_labels,
                        const std::string& path_base, std::uint64_t seed) {
  require(real_features.rows() >= 10, "project_features: fewer than 10 real points");
  require(pseudo_features.rows() >= 10, "project_features: fewer than 10 pseudo points");
  require(static_cast<Eigen::Index>(real_labels.size()) == real_features.rows() &&
              static_cast<Eigen::Index>(pseudo_labels.size()) == pseudo_features.rows(),
          "project_features: label count mismatch");

  Matrix all(real_features.rows() + pseudo_features.rows(), real_features.cols());
  all.topRows(real_features.rows()) = real_features;
  all.bottomRows(pseudo_features.rows()) = pseudo_features;

  tsne::TsneOptions opts;
  opts.seed = seed;
  const Matrix embedding = tsne::embed(all, opts);

  std::map<int, figures::ScatterClass> real_classes, pseudo_classes;
  for (Eigen::Index i = 0; i < real_features.rows(); ++i) {
    const int j = real_labels[static_cast<std::size_t>(i)];
    figures::ScatterClass& c = real_classes[j];
    c.name = "real j=" + std::to_string(j);
    c.cross_marker = false;
    c.color_index = j;
    c.x.push_back(embedding(i, 0));
    c.y.push_back(embedding(i, 1));
  }
  for (Eigen::Index i = 0; i < pseudo_features.rows(); ++i) {
    const int j = pseudo_labels[static_cast<std::size_t>(i)];
    const Eigen::Index row = real_features.rows() + i;
    figures::ScatterClass& c = pseudo_classes[j];
    c.name = "pseudo j=" + std::to_string(j);
    c.cross_marker = true;
    c.color_index = j;
    c.x.push_back(embedding(row, 0));
    c.y.push_back(embedding(row, 1));
  }
  std::vector<figures::ScatterClass> classes;
  for (auto& [_, c] : real_classes) classes.push_back(std::move(c));
  for (auto& [_, c] : pseudo_classes) classes.push_back(std::move(c));
  figures::write_scatter_chart(path_base, "Real vs pseudo features", classes);

  std::ofstream os(path_base + ".csv", std::ios::trunc);
  require(os.good(), "project_features: cannot write " + path_base + ".csv");
  os << "x,y,distortion_id,kind\n";
  for (Eigen::Index i = 0; i < embedding.rows(); ++i) {
    const bool is_real = i < real_features.rows();
    const int j = is_real ? real_labels[static_cast<std::size_t>(i)]
                          : pseudo_labels[static_cast<std::size_t>(i - real_features.rows())];
    os << fmt17(embedding(i, 0)) << ',' << fmt17(embedding(i, 1)) << ',' << j << ','
       << (is_real ? "real" : "pseudo") << '\n';
  }
  return embedding;
}

void write_projection_figure(const ExperimentConfig& config, std::uint64_t seed,
                             const std::string& path_base) {
  const std::string method_dir = config.out + "/" + config.method;
  const tasks::TaskStream stream = build_stream(config.stream, seed);
  const int final_task = stream.num_tasks() - 1;
  require(final_task >= 1, "write_projection_figure: need at least two tasks");

  const std::string seed_dir = seed_dir_of(method_dir, seed);
  models::LoadedCheckpoint final_ckpt = models::load_checkpoint(checkpoint_path(seed_dir, final_task));
  models::LoadedCheckpoint prev_ckpt =
      models::load_checkpoint(checkpoint_path(seed_dir, final_task - 1));

  const int m_pre = stream.m_pre(final_task);
  std::vector<Matrix> real_blocks, pseudo_blocks;
  std::vector<int> real_labels, pseudo_labels;
  Rng rng(mix_seed(seed, 0x7541));
  for (int j = 0; j < m_pre; ++j) {
    const auto test_ptrs = stream.test_of_distortion(j);
    std::vector<tasks::LabeledSample> samples;
    for (const tasks::LabeledSample* p : test_ptrs) samples.push_back(*p);
    const Matrix feats = final_ckpt.bundle.reg.extractor.apply(train::inputs_of(samples));
    real_blocks.push_back(feats);
    for (Eigen::Index i = 0; i < feats.rows(); ++i) real_labels.push_back(j);

    Vector s(feats.rows());
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = rng.uniform();
    const Matrix z = rng.normal_matrix(feats.rows(), models::kNoiseDim);
    pseudo_blocks.push_back(prev_ckpt.bundle.gen.generate_const(j, z, s));
    for (Eigen::Index i = 0; i < feats.rows(); ++i) pseudo_labels.push_back(j);
  }

  Eigen::Index n_real = 0, n_pseudo = 0;
  for (const Matrix& b : real_blocks) n_real += b.rows();
  for (const Matrix& b : pseudo_blocks) n_pseudo += b.rows();
  Matrix real(n_real, models::kFeatureDim), pseudo(n_pseudo, models::kFeatureDim);
  Eigen::Index at = 0;
  for (const Matrix& b : real_blocks) {
    real.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  at = 0;
  for (const Matrix& b : pseudo_blocks) {
    pseudo.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  project_features(real, pseudo, real_labels, pseudo_labels, path_base, mix_seed(seed, 0x7e57));
}

void write_report(const std::string& out_root, bool figures) {
  for (const std::string& dir : method_dirs_under(out_root)) {
    const ResultBundle rb = collect_results(dir);
    const ExperimentConfig config = ExperimentConfig::load(dir + "/config.json");
    write_summaries(dir, rb, build_stream(config.stream, config.seeds.front()).labels);
  }
  emit_curves(out_root);
  if (figures) {
    for (const std::string& dir : method_dirs_under(out_root)) {
      const ExperimentConfig config = ExperimentConfig::load(dir + "/config.json");
      const baselines::Method m = baselines::parse_method(config.method);
      if ((m == baselines::Method::liqa || m == baselines::Method::jt_pr) &&
          config.stream.kind == "synthetic") {
        write_projection_figure(config, config.seeds.front(),
                                out_root + "/figures/" + config.method + "_features");
      }
    }
  }
}

// ---- permutations ---------------------------------------------------------------------

std::vector<PermutationRow> permutation_suite(const ExperimentConfig& config, int n_orders) {
  require(n_orders >= 1, "permutation_suite: need at least one order");
  require(config.stream.kind != "dataset_shift",
          "permutation_suite: dataset-shift streams have a fixed order");
  std::vector<PermutationRow> rows;
  for (int k = 0; k < n_orders; ++k) {
    ExperimentConfig cfg = config;
    // Order 0 keeps the configured order; later orders are seeded shuffles.
    cfg.stream.permutation_seed =
        (k == 0) ? config.stream.permutation_seed : mix_seed(0xbadc0ffe + config.stream.permutation_seed, k);
    cfg.out = config.out + "/permute/order" + std::to_string(k);
    const ResultBundle rb = run_experiment(cfg);
    rows.push_back({k, cfg.stream.permutation_seed, rb.c_bar, rb.f_bar});
  }

  fs::create_directories(config.out);
  std::ofstream os(config.out + "/permutations.csv", std::ios::trunc);
  require(os.good(), "permutation_suite: cannot write permutations.csv");
  os << "order,permutation_seed,C_bar,F_bar\n";
  Scalar c_lo = rows.front().c_bar, c_hi = rows.front().c_bar;
  for (const PermutationRow& r : rows) {
    os << r.order_index << ',' << r.permutation_seed << ',' << fmt17(r.c_bar) << ','
       << fmt17(r.f_bar) << '\n';
    c_lo = std::min(c_lo, r.c_bar);
    c_hi = std::max(c_hi, r.c_bar);
  }
  os << "spread,," << fmt17(c_hi - c_lo) << ",\n";
  return rows;
}

}  // namespace liqa::harness
