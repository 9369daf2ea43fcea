#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "liqa/trainer.hpp"

using namespace liqa;
using namespace liqa::train;

namespace {

// Small fast stream: 4 base families + 2 novel tasks.
tasks::TaskStream tiny_stream(std::uint64_t seed = 3, int families = 6, int m0 = 4) {
  const auto specs =
      tasks::make_separated_families(families, 8, 0.25, 24.0, tasks::QualityMap::smoothstep, 30);
  return tasks::generate_synthetic_stream(specs, m0, 1, seed);
}

TrainSchedule tiny_schedule() {
  TrainSchedule s;
  s.epochs_single = 8;
  s.epochs_gan = 4;
  s.epochs_multi = 6;
  s.batch_regression = 24;
  s.batch_gan = 24;
  s.lr_base = 3e-4;
  s.lr_gan = 2e-3;
  s.early_stop_min_epoch = 3;
  s.gan_augmentation_factor = 2;
  return s;
}

LiqaConfig tiny_liqa_config() {
  LiqaConfig cfg;
  cfg.schedule = tiny_schedule();
  cfg.n_buf = 40;
  return cfg;
}

}  // namespace

TEST_CASE("replay plan satisfies the qua_and_dist allocation exactly") {
  const std::vector<int> seen = {0, 1, 2, 3, 4, 5, 6};
  const ReplayPlan plan = plan_replay(ReplayStrategy::qua_and_dist, 1400, seen, 9);
  CHECK(plan.conditions.size() == 1400);
  std::map<std::pair<int, int>, int> cell_counts;
  for (const auto& [j, s] : plan.conditions) {
    int bin = -1;
    for (int b = 0; b < 5; ++b)
      if (s >= kQualityBins[static_cast<std::size_t>(b)].first &&
          (b == 4 || s < kQualityBins[static_cast<std::size_t>(b)].second))
        bin = b;
    REQUIRE(bin >= 0);
    ++cell_counts[{j, bin}];
  }
  CHECK(cell_counts.size() == 35);
  for (const auto& [cell, count] : cell_counts) CHECK(count == 40);
}

TEST_CASE("replay plan count contracts for every strategy and m_pre") {
  for (int m_pre : {1, 2, 5, 7}) {
    std::vector<int> seen;
    for (int j = 0; j < m_pre; ++j) seen.push_back(j);

    const ReplayPlan random = plan_replay(ReplayStrategy::random, 1400, seen, 1);
    CHECK(random.conditions.size() == 1400);

    const ReplayPlan qua = plan_replay(ReplayStrategy::qua, 1400, seen, 2);
    CHECK(qua.conditions.size() == 1400);
    std::array<int, 5> bin_counts{};
    for (const auto& [j, s] : qua.conditions)
      for (int b = 0; b < 5; ++b)
        if (s >= kQualityBins[static_cast<std::size_t>(b)].first &&
            (b == 4 || s < kQualityBins[static_cast<std::size_t>(b)].second))
          ++bin_counts[static_cast<std::size_t>(b)];
    for (int b = 0; b < 5; ++b) CHECK(bin_counts[static_cast<std::size_t>(b)] == 280);

    const ReplayPlan dist = plan_replay(ReplayStrategy::dist, 1400, seen, 3);
    CHECK(static_cast<int>(dist.conditions.size()) == (1400 / m_pre) * m_pre);
    std::map<int, int> per_j;
    for (const auto& [j, s] : dist.conditions) ++per_j[j];
    for (int j : seen) CHECK(per_j[j] == 1400 / m_pre);

    const ReplayPlan qd = plan_replay(ReplayStrategy::qua_and_dist, 1400, seen, 4);
    CHECK(static_cast<int>(qd.conditions.size()) == (1400 / m_pre / 5) * m_pre * 5);
    for (const auto& [j, s] : qd.conditions) {
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
  }
}

TEST_CASE("replay plan with a single seen distortion uses it everywhere") {
  const ReplayPlan plan = plan_replay(ReplayStrategy::random, 100, {42}, 5);
  for (const auto& [j, s] : plan.conditions) CHECK(j == 42);
}

TEST_CASE("replay strategy parsing") {
  CHECK(parse_replay_strategy("qua_and_dist") == ReplayStrategy::qua_and_dist);
  CHECK(replay_strategy_name(ReplayStrategy::dist) == "dist");
  CHECK_THROWS(parse_replay_strategy("quantile"));
  CHECK_THROWS(plan_replay(ReplayStrategy::random, 10, {}, 1));
}

TEST_CASE("schedule validation") {
  TrainSchedule s;
  CHECK_NOTHROW(s.validate());
  s.early_stop_min_epoch = 70;
  CHECK_THROWS(s.validate());
  s = TrainSchedule{};
  s.batch_gan = 0;
  CHECK_THROWS(s.validate());
}

TEST_CASE("ablation parsing") {
  CHECK(parse_ablation("no_fd") == Ablation::no_fd);
  CHECK_THROWS(parse_ablation("no_everything"));
  const LiqaConfig cfg = ablation_variant(LiqaConfig{}, "no_split_merge");
  CHECK(cfg.ablation == Ablation::no_split_merge);
}

TEST_CASE("full liqa task pipeline runs the stages in order") {
  const tasks::TaskStream stream = tiny_stream();
  models::ModelBundle bundle(8, 7);
  LiqaTrainer trainer(bundle, tiny_liqa_config());
  DataAccessAudit audit;
  AuditedStream astream(stream, &audit);
  metrics::EvalLedger ledger;

  trainer.run_task(astream, 0, 100, ledger);
  trainer.run_task(astream, 1, 101, ledger);

  const std::vector<std::string> expected = {"merge", "gan",  "multihead", "eval",
                                             "merge", "gan",  "multihead", "eval"};
  CHECK(trainer.stage_log() == expected);

  // registries grew by delta = 1
  CHECK(bundle.registered_heads().size() == 5);
  // after task 1 on a 4-base stream the ledger row has 5 entries
  CHECK(ledger.distortions_at(1).size() == 5);
  CHECK(ledger.distortions_at(0).size() == 4);

  // every frozen group was bit-stable during its stage
  CHECK_FALSE(trainer.freeze_log().empty());
  for (const FreezeRecord& rec : trainer.freeze_log()) {
    INFO(rec.stage, " ", rec.selector);
    CHECK(rec.stable());
  }

  // the merge stage froze nothing; gan froze the regressor and previous
  // heads; multihead froze the extractor copy and previous aux heads
  std::set<std::string> gan_selectors, multi_selectors;
  for (const FreezeRecord& rec : trainer.freeze_log()) {
    if (rec.stage == "gan") gan_selectors.insert(rec.selector);
    if (rec.stage == "multihead") multi_selectors.insert(rec.selector);
  }
  CHECK(gan_selectors.count("reg") == 1);
  CHECK(gan_selectors.count("gen/prior/0/") == 1);
  CHECK(gan_selectors.count("gen/head/3/") == 1);
  CHECK(gan_selectors.count("disc/qual/0/") == 1);
  CHECK(gan_selectors.count("disc/rf/3/") == 1);
  CHECK(multi_selectors.count("aux/U") == 1);
  CHECK(multi_selectors.count("aux/head/0/") == 1);

  // U-hat was initialized from the single head's extractor, bitwise
  CHECK(models::group_checksum(bundle, "aux/U") == models::group_checksum(bundle, "reg/U"));

  // out-of-order tasks are rejected
  CHECK_THROWS(trainer.run_task(astream, 3, 103, ledger));

  // no previous-task training data was touched
  for (const auto& [current, touched] : audit.train_accesses) CHECK(current == touched);
}

TEST_CASE("same seed gives identical ledgers, different seed does not") {
  const tasks::TaskStream stream = tiny_stream();
  auto run = [&](std::uint64_t seed) {
    models::ModelBundle bundle(8, seed);
    LiqaTrainer trainer(bundle, tiny_liqa_config());
    AuditedStream astream(stream, nullptr);
    metrics::EvalLedger ledger;
    trainer.run_task(astream, 0, mix_seed(seed, 1), ledger);
    trainer.run_task(astream, 1, mix_seed(seed, 2), ledger);
    return ledger;
  };
  const metrics::EvalLedger a = run(5), b = run(5), c = run(6);
  CHECK(a.values() == b.values());
  CHECK(a.values() != c.values());
}

TEST_CASE("replay draws from the previous task's frozen generator, not the live one") {
  const tasks::TaskStream stream = tiny_stream();

  auto run_task1_merge = [&](bool poison_live_generator) {
    models::ModelBundle bundle(8, 21);
    LiqaTrainer trainer(bundle, tiny_liqa_config());
    AuditedStream astream(stream, nullptr);
    metrics::EvalLedger ledger;
    trainer.run_task(astream, 0, 300, ledger);

    // register task 1 heads exactly as run_task would, then train the merge
    // stage in isolation
    bundle.register_task_heads(stream.tasks[1].distortion_ids, 301);
    if (poison_live_generator) bundle.gen.embed.W.value.array() += 100.0;

    const ReplayPlan plan = plan_replay(ReplayStrategy::qua_and_dist, 40, {0, 1, 2, 3}, 302);
    const Matrix x = inputs_of(stream.tasks[1].train);
    const Vector s = scores_of(stream.tasks[1].train);
    const Matrix vx = inputs_of(stream.tasks[1].val);
    const Vector vs = scores_of(stream.tasks[1].val);
    bundle.unfreeze_all();
    trainer.train_single_head(x, s, vx, vs, false, plan, 303);
    return models::group_checksum(bundle, "reg");
  };

  CHECK(run_task1_merge(false) == run_task1_merge(true));
}

TEST_CASE("no_fd never evaluates the distillation term") {
  const tasks::TaskStream stream = tiny_stream();
  models::ModelBundle bundle(8, 31);
  LiqaConfig cfg = tiny_liqa_config();
  cfg.ablation = Ablation::no_fd;
  LiqaTrainer trainer(bundle, cfg);
  AuditedStream astream(stream, nullptr);
  metrics::EvalLedger ledger;
  trainer.run_task(astream, 0, 400, ledger);

  // poison the frozen extractor snapshot: any distillation pass would now
  // contaminate training with NaNs
  for (nn::Tensor* t : bundle.prev.extractor.params())
    t->value.setConstant(std::numeric_limits<Scalar>::quiet_NaN());
  trainer.run_task(astream, 1, 401, ledger);
  const Vector preds = bundle.reg.predict(inputs_of(stream.tasks[1].test));
  CHECK(preds.allFinite());
}

TEST_CASE("no_pr skips the split stage entirely") {
  const tasks::TaskStream stream = tiny_stream();
  models::ModelBundle bundle(8, 41);
  LiqaConfig cfg = tiny_liqa_config();
  cfg.ablation = Ablation::no_pr;
  LiqaTrainer trainer(bundle, cfg);
  AuditedStream astream(stream, nullptr);
  metrics::EvalLedger ledger;

  const std::uint64_t gen_before = models::group_checksum(bundle, "gen/embed");
  trainer.run_task(astream, 0, 500, ledger);
  trainer.run_task(astream, 1, 501, ledger);

  const std::vector<std::string> expected = {"merge", "eval", "merge", "eval"};
  CHECK(trainer.stage_log() == expected);
  CHECK(models::group_checksum(bundle, "gen/embed") == gen_before);
}

TEST_CASE("no_split_merge distills from the previous single head") {
  const tasks::TaskStream stream = tiny_stream();
  models::ModelBundle bundle(8, 51);
  LiqaConfig cfg = tiny_liqa_config();
  cfg.ablation = Ablation::no_split_merge;
  LiqaTrainer trainer(bundle, cfg);
  AuditedStream astream(stream, nullptr);
  metrics::EvalLedger ledger;
  trainer.run_task(astream, 0, 600, ledger);

  // the multi-head stage never runs, so poisoning the aux heads is harmless
  for (auto& [j, head] : bundle.aux.heads)
    head.l2.W.value.setConstant(std::numeric_limits<Scalar>::quiet_NaN());
  trainer.run_task(astream, 1, 601, ledger);

  const std::vector<std::string> expected = {"merge", "gan", "eval", "merge", "gan", "eval"};
  CHECK(trainer.stage_log() == expected);
  const Vector preds = bundle.reg.predict(inputs_of(stream.tasks[1].test));
  CHECK(preds.allFinite());
}

TEST_CASE("base task touches no replay or distillation machinery") {
  // A fresh bundle with no snapshot must train its base task cleanly.
  const tasks::TaskStream stream = tiny_stream();
  models::ModelBundle bundle(8, 61);
  LiqaTrainer trainer(bundle, tiny_liqa_config());
  AuditedStream astream(stream, nullptr);
  metrics::EvalLedger ledger;
  CHECK_FALSE(bundle.prev.valid);
  trainer.run_task(astream, 0, 700, ledger);
  CHECK(bundle.prev.valid);
  CHECK(ledger.has(0, 0));
}

TEST_CASE("best epoch honors the early-stopping floor") {
  const tasks::TaskStream stream = tiny_stream();
  models::ModelBundle bundle(8, 71);
  LiqaConfig cfg = tiny_liqa_config();
  LiqaTrainer trainer(bundle, cfg);
  const Matrix x = inputs_of(stream.tasks[0].train);
  const Vector s = scores_of(stream.tasks[0].train);
  const Matrix vx = inputs_of(stream.tasks[0].val);
  const Vector vs = scores_of(stream.tasks[0].val);
  const StageOutcome out = trainer.train_single_head(x, s, vx, vs, true, ReplayPlan{}, 800);
  CHECK(out.best_epoch >= cfg.schedule.early_stop_min_epoch);
  CHECK(out.val_trace.size() == static_cast<std::size_t>(cfg.schedule.epochs_single));
}

TEST_CASE("quality-loss gradient routing flips with the printed assignment") {
  // Builds one G-step situation and inspects where the quality loss sends
  // gradients: under the text reading the generator's prior receives a
  // nonzero quality gradient; under the printed reading it receives none
  // (the real-feature quality loss does not depend on the generator).
  const tasks::TaskStream stream = tiny_stream();

  auto prior_grad_norm = [&](bool printed) {
    models::ModelBundle bundle(8, 81);
    LiqaConfig cfg = tiny_liqa_config();
    cfg.eq_mode.printed_quality_assignment = printed;
    cfg.schedule.epochs_gan = 1;
    LiqaTrainer trainer(bundle, cfg);
    AuditedStream astream(stream, nullptr);
    metrics::EvalLedger ledger;
    trainer.run_task(astream, 0, 900, ledger);

    // one isolated generator quality pass against the trained discriminator
    const int j = 0;
    Rng rng(1);
    const Matrix z = rng.normal_matrix(16, models::kNoiseDim);
    Vector s(16);
    for (Eigen::Index i = 0; i < 16; ++i) s(i) = rng.uniform();
    for (nn::Tensor* t : bundle.gen.params()) t->zero_grad();
    for (nn::Tensor* t : bundle.disc.params()) t->zero_grad();
    const Matrix h = bundle.gen.generate(j, z, s);
    auto [q, v] = bundle.disc.discriminate(j, h);
    if (!printed) {
      // text reading: the fake-feature quality loss trains the generator
      const Vector dq = 2.0 / 16.0 * (q - s);
      const Matrix dh = bundle.disc.backward(j, dq, Vector::Zero(16));
      bundle.gen.backward(j, dh);
    }
    // printed reading: the generator's quality term is the real-feature
    // loss, which has no generator dependence; no gradient flows
    return bundle.gen.priors.at(j).mu.grad.norm();
  };

  CHECK(prior_grad_norm(false) > 0.0);
  CHECK(prior_grad_norm(true) == doctest::Approx(0.0));
}

TEST_CASE("baseline trainer runs every method and fills the ledger") {
  const tasks::TaskStream stream = tiny_stream();
  for (const baselines::Method m : {baselines::Method::ft, baselines::Method::ewc,
                                    baselines::Method::online_ewc, baselines::Method::si,
                                    baselines::Method::jt}) {
    models::ModelBundle bundle(8, 91);
    BaselineConfig cfg;
    cfg.method = m;
    cfg.schedule = tiny_schedule();
    BaselineTrainer trainer(bundle, cfg);
    DataAccessAudit audit;
    AuditedStream astream(stream, &audit);
    metrics::EvalLedger ledger;
    trainer.run_task(astream, 0, 1000, ledger);
    trainer.run_task(astream, 1, 1001, ledger);
    CHECK(ledger.distortions_at(1).size() == 5);

    if (m == baselines::Method::jt) {
      bool touched_previous = false;
      for (const auto& [current, touched] : audit.train_accesses)
        if (current == 1 && touched == 0) touched_previous = true;
      CHECK(touched_previous);
    } else {
      for (const auto& [current, touched] : audit.train_accesses) CHECK(current == touched);
    }
  }
}

TEST_CASE("baseline method state survives a blob round trip") {
  const tasks::TaskStream stream = tiny_stream();
  models::ModelBundle bundle(8, 95);
  BaselineConfig cfg;
  cfg.method = baselines::Method::ewc;
  cfg.schedule = tiny_schedule();
  BaselineTrainer trainer(bundle, cfg);
  AuditedStream astream(stream, nullptr);
  metrics::EvalLedger ledger;
  trainer.run_task(astream, 0, 1100, ledger);
  CHECK(trainer.fisher_state().fisher.size() == 1);

  models::ModelBundle bundle2(8, 95);
  BaselineTrainer trainer2(bundle2, cfg);
  trainer2.restore_method_state(trainer.method_state_blob());
  CHECK(trainer2.fisher_state().fisher.size() == 1);
  CHECK(trainer2.fisher_state().running_sum == trainer.fisher_state().running_sum);
}

TEST_CASE("liqa and jt_pr are rejected by the baseline trainer") {
  models::ModelBundle bundle(8, 99);
  BaselineConfig cfg;
  cfg.method = baselines::Method::liqa;
  cfg.schedule = tiny_schedule();
  CHECK_THROWS(BaselineTrainer(bundle, cfg));
}
