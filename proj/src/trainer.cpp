#include "liqa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace liqa::train {

// ---- replay planning ---------------------------------------------------------

ReplayStrategy parse_replay_strategy(const std::string& name) {
  if (name == "random") return ReplayStrategy::random;
  if (name == "qua") return ReplayStrategy::qua;
  if (name == "dist") return ReplayStrategy::dist;
  if (name == "qua_and_dist") return ReplayStrategy::qua_and_dist;
  throw std::invalid_argument("unknown replay strategy '" + name +
                              "' (expected random, qua, dist or qua_and_dist)");
}

std::string replay_strategy_name(ReplayStrategy s) {
  switch (s) {
    case ReplayStrategy::random: return "random";
    case ReplayStrategy::qua: return "qua";
    case ReplayStrategy::dist: return "dist";
    case ReplayStrategy::qua_and_dist: return "qua_and_dist";
  }
  throw std::logic_error("replay_strategy_name: unreachable");
}

ReplayPlan plan_replay(ReplayStrategy strategy, int n_buf, const std::vector<int>& seen,
                       std::uint64_t seed) {
  require(!seen.empty(), "plan_replay: no previously seen distortions");
  require(n_buf >= 1, "plan_replay: buffer size must be positive");
  const int m_pre = static_cast<int>(seen.size());
  Rng rng(seed);
  ReplayPlan plan;
  plan.strategy = strategy;
  plan.n_buf = n_buf;

  switch (strategy) {
    case ReplayStrategy::random:
      for (int k = 0; k < n_buf; ++k)
        plan.conditions.emplace_back(seen[static_cast<std::size_t>(rng.index(m_pre))],
                                     rng.uniform());
      break;
    case ReplayStrategy::qua: {
      const int per_bin = n_buf / 5;
      for (const auto& [lo, hi] : kQualityBins)
        for (int k = 0; k < per_bin; ++k)
          plan.conditions.emplace_back(seen[static_cast<std::size_t>(rng.index(m_pre))],
                                       rng.uniform(lo, hi));
      break;
    }
    case ReplayStrategy::dist: {
      const int per_dist = n_buf / m_pre;
      for (int j : seen)
        for (int k = 0; k < per_dist; ++k) plan.conditions.emplace_back(j, rng.uniform());
      break;
    }
    case ReplayStrategy::qua_and_dist: {
      const int per_cell = n_buf / m_pre / 5;
      for (int j : seen)
        for (const auto& [lo, hi] : kQualityBins)
          for (int k = 0; k < per_cell; ++k) plan.conditions.emplace_back(j, rng.uniform(lo, hi));
      break;
    }
  }
  require(static_cast<int>(plan.conditions.size()) <= n_buf, "plan_replay: overfilled buffer");
  return plan;
}

// ---- schedule ------------------------------------------------------------------

void TrainSchedule::validate() const {
  require(epochs_single > 0 && epochs_gan > 0 && epochs_multi > 0,
          "TrainSchedule: epoch counts must be positive");
  require(batch_regression > 0 && batch_gan > 0, "TrainSchedule: batch sizes must be positive");
  require(lr_base > 0 && lr_extractor_novel > 0 && lr_gan > 0,
          "TrainSchedule: learning rates must be positive");
  require(early_stop_min_epoch > 0 && early_stop_min_epoch < epochs_single,
          "TrainSchedule: early_stop_min_epoch must be positive and below epochs_single");
  require(gan_augmentation_factor >= 1, "TrainSchedule: augmentation factor must be >= 1");
  require(jitter_spread >= 0, "TrainSchedule: jitter_spread must be non-negative");
}

Ablation parse_ablation(const std::string& name) {
  if (name == "full") return Ablation::full;
  if (name == "no_split_merge") return Ablation::no_split_merge;
  if (name == "no_fd") return Ablation::no_fd;
  if (name == "no_pr") return Ablation::no_pr;
  throw std::invalid_argument("unknown ablation variant '" + name +
                              "' (expected full, no_split_merge, no_fd or no_pr)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_split_merge: return "no_split_merge";
    case Ablation::no_fd: return "no_fd";
    case Ablation::no_pr: return "no_pr";
  }
  throw std::logic_error("ablation_name: unreachable");
}

LiqaConfig ablation_variant(LiqaConfig base, const std::string& name) {
  base.ablation = parse_ablation(name);
  return base;
}

// ---- audited stream ---------------------------------------------------------------

const std::vector<tasks::LabeledSample>& AuditedStream::train(int t) const {
  if (audit_) audit_->train_accesses.emplace_back(current_task_, t);
  return stream_->tasks.at(static_cast<std::size_t>(t)).train;
}
const std::vector<tasks::LabeledSample>& AuditedStream::val(int t) const {
  return stream_->tasks.at(static_cast<std::size_t>(t)).val;
}
const std::vector<tasks::LabeledSample>& AuditedStream::test(int t) const {
  return stream_->tasks.at(static_cast<std::size_t>(t)).test;
}

Matrix inputs_of(const std::vector<tasks::LabeledSample>& samples) {
  require(!samples.empty(), "inputs_of: empty sample set");
  for (const tasks::LabeledSample& s : samples)
    require(!s.input.is_image(),
            "inputs_of: image-backed samples require the image backbone; this build trains on "
            "feature-source vectors");
  const Eigen::Index d = samples.front().input.vec.size();
  Matrix x(static_cast<Eigen::Index>(samples.size()), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require(samples[i].input.vec.size() == d, "inputs_of: inconsistent input dims");
    x.row(static_cast<Eigen::Index>(i)) = samples[i].input.vec.transpose();
  }
  return x;
}

Vector scores_of(const std::vector<tasks::LabeledSample>& samples) {
  Vector s(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) s(static_cast<Eigen::Index>(i)) = samples[i].score;
  return s;
}

std::vector<int> distortions_of(const std::vector<tasks::LabeledSample>& samples) {
  std::vector<int> j(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) j[i] = samples[i].distortion_id;
  return j;
}

// ---- shared helpers ------------------------------------------------------------------

namespace {

std::string fmt(Scalar v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

Matrix gather_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Vector gather_elems(const Vector& v, const std::vector<Eigen::Index>& rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(rows[i]);
  return out;
}

std::map<int, std::vector<Eigen::Index>> group_by_distortion(const std::vector<int>& j,
                                                             const std::vector<Eigen::Index>& rows) {
  std::map<int, std::vector<Eigen::Index>> groups;
  for (Eigen::Index r : rows) groups[j[static_cast<std::size_t>(r)]].push_back(r);
  return groups;
}

std::vector<Matrix> save_values(const std::vector<nn::Tensor*>& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const nn::Tensor* t : params) out.push_back(t->value);
  return out;
}

void restore_values(const std::vector<Matrix>& saved, std::vector<nn::Tensor*>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
}

void zero_all(const std::vector<nn::Tensor*>& params) {
  for (nn::Tensor* t : params) t->zero_grad();
}


std::vector<Eigen::Index> all_rows(Eigen::Index n) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

std::vector<std::vector<Eigen::Index>> make_batches(Eigen::Index n, int batch, Rng& rng) {
  std::vector<Eigen::Index> order = all_rows(n);
  rng.shuffle(order);
  std::vector<std::vector<Eigen::Index>> batches;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace

// ---- LiqaTrainer ------------------------------------------------------------------------

LiqaTrainer::LiqaTrainer(models::ModelBundle& bundle, LiqaConfig config, std::ostream* progress)
    : bundle_(&bundle), config_(std::move(config)), progress_(progress) {
  config_.schedule.validate();
  config_.weights.validate();
}

void LiqaTrainer::emit(const std::string& line) {
  if (progress_) (*progress_) << line << '\n';
}

void LiqaTrainer::begin_freeze(const std::string& stage, const std::vector<std::string>& selectors) {
  for (const std::string& sel : selectors) {
    bundle_->freeze(sel);
    FreezeRecord rec;
    rec.stage = stage;
    rec.selector = sel;
    rec.checksum_before = models::group_checksum(*bundle_, sel);
    freeze_log_.push_back(std::move(rec));
  }
}

void LiqaTrainer::end_freeze(std::size_t first_record) {
  for (std::size_t i = first_record; i < freeze_log_.size(); ++i)
    freeze_log_[i].checksum_after = models::group_checksum(*bundle_, freeze_log_[i].selector);
}

Scalar LiqaTrainer::validation_srcc(const Matrix& val_x, const Vector& val_s) const {
  return metrics::srcc(bundle_->reg.predict(val_x), val_s);
}

StageOutcome LiqaTrainer::train_single_head(const Matrix& x, const Vector& s, const Matrix& val_x,
                                            const Vector& val_s, bool is_base_task,
                                            const ReplayPlan& plan, std::uint64_t seed) {
  require(x.rows() > 0, "train_single_head: empty training set");
  const TrainSchedule& sched = config_.schedule;
  const losses::LossWeights& w = config_.weights;
  const bool use_fd = !is_base_task && config_.ablation != Ablation::no_fd && !config_.pool_all_tasks;
  const bool use_pr = !is_base_task && config_.ablation != Ablation::no_pr;
  if (use_fd || use_pr)
    require(bundle_->prev.valid, "train_single_head: novel task without a previous-task snapshot");

  models::SingleHeadRegressor& reg = bundle_->reg;
  nn::Adam opt_extractor(bundle_->trainable(reg.extractor.params()),
                         is_base_task ? sched.lr_base : sched.lr_extractor_novel);
  nn::Adam opt_head(bundle_->trainable(reg.head.params()), sched.lr_base);

  // Plan conditions grouped once; z is redrawn fresh for every batch.
  std::map<int, std::vector<std::size_t>> plan_groups;
  for (std::size_t k = 0; k < plan.conditions.size(); ++k)
    plan_groups[plan.conditions[k].first].push_back(k);
  const Scalar n_replay = static_cast<Scalar>(plan.conditions.size());

  Rng replay_rng(mix_seed(seed, 2));
  StageOutcome outcome;
  Scalar best = -2.0;
  std::vector<Matrix> best_params;
  std::vector<nn::Tensor*> reg_params = reg.params();

  for (int epoch = 1; epoch <= sched.epochs_single; ++epoch) {
    Rng epoch_rng(mix_seed(seed, 100 + static_cast<std::uint64_t>(epoch)));
    Scalar mse_sum = 0.0, fd_sum = 0.0, pr_sum = 0.0;
    int batches = 0;
    for (const std::vector<Eigen::Index>& rows : make_batches(x.rows(), sched.batch_regression, epoch_rng)) {
      zero_all(reg_params);
      const Matrix xb = gather_rows(x, rows);
      const Vector sb = gather_elems(s, rows);

      const Matrix feats = reg.extractor.forward(xb);
      const Vector preds = reg.head.forward(feats);
      const Scalar mse_cur = losses::mse_current_loss(preds, sb);
      const Vector dpreds = (is_base_task ? 1.0 : w.lambda_mse) * losses::mse_grad(preds, sb);
      Matrix dfeats = reg.head.backward(dpreds);

      Scalar fd = 0.0;
      if (use_fd) {
        const Matrix feats_prev = bundle_->prev.extractor.apply(xb);
        fd = losses::feature_distillation_loss(feats, feats_prev);
        dfeats += w.lambda_fd * losses::mse_grad(feats, feats_prev);
      }
      reg.extractor.backward(dfeats);

      Scalar pr = 0.0;
      if (use_pr) {
        for (const auto& [j, ks] : plan_groups) {
          Vector cond_s(static_cast<Eigen::Index>(ks.size()));
          for (std::size_t i = 0; i < ks.size(); ++i)
            cond_s(static_cast<Eigen::Index>(i)) = plan.conditions[ks[i]].second;
          const Matrix z = replay_rng.normal_matrix(static_cast<Eigen::Index>(ks.size()),
                                                    models::kNoiseDim);
          const Matrix pseudo = bundle_->prev.generator.generate_const(j, z, cond_s);
          const Vector target = (config_.ablation == Ablation::no_split_merge)
                                    ? bundle_->prev.head.apply(pseudo)
                                    : models::predict_multi(bundle_->aux, pseudo, j);
          const Vector replay_preds = reg.head.forward(pseudo);
          pr += (replay_preds - target).squaredNorm() / n_replay;
          const Vector dreplay = w.lambda_pr * 2.0 / n_replay * (replay_preds - target);
          reg.head.backward(dreplay);  // pseudo features carry no upstream gradient
        }
      }

      opt_extractor.step();
      opt_head.step();
      mse_sum += mse_cur;
      fd_sum += fd;
      pr_sum += pr;
      ++batches;
    }

    const Scalar val = validation_srcc(val_x, val_s);
    outcome.val_trace.push_back(val);
    const Scalar total = losses::single_head_total(fd_sum / batches, pr_sum / batches,
                                                   mse_sum / batches, w, is_base_task);
    emit("stage=merge epoch=" + std::to_string(epoch) + " mse=" + fmt(mse_sum / batches) +
         " fd=" + fmt(fd_sum / batches) + " pr=" + fmt(pr_sum / batches) + " total=" + fmt(total) +
         " val_srcc=" + fmt(val));

    if (epoch >= sched.early_stop_min_epoch && val > best) {
      best = val;
      outcome.best_epoch = epoch;
      best_params = save_values(reg_params);
    }
  }

  if (!best_params.empty()) restore_values(best_params, reg_params);
  return outcome;
}

void LiqaTrainer::train_gan(const Matrix& x, const Vector& s, const std::vector<int>& j,
                            const std::vector<int>& current_ids, const std::vector<int>& prev_ids,
                            bool is_base_task, std::uint64_t seed) {
  require(x.rows() > 0, "train_gan: empty training set");
  if (!is_base_task)
    require(bundle_->prev.valid, "train_gan: novel task without a previous-task snapshot");
  for (int jj : j)
    require(std::find(current_ids.begin(), current_ids.end(), jj) != current_ids.end(),
            "train_gan: sample distortion " + std::to_string(jj) + " outside the current task");
  const TrainSchedule& sched = config_.schedule;
  const losses::LossWeights& w = config_.weights;
  const EqModeConfig& eq = config_.eq_mode;

  // U_T is frozen for the whole stage: features are computed once.
  const Matrix h_real = bundle_->reg.extractor.apply(x);

  models::ConditionalGenerator& gen = bundle_->gen;
  models::ConditionalDiscriminator& disc = bundle_->disc;

  // Start each fresh generation head on the current task's feature
  // statistics, matched ahead of the bounding activation: rows rescaled to
  // the per-dimension std, bias moved to the mean. Without this the
  // discriminator separates the two populations on scale alone and the game
  // saturates immediately.
  {
    const Matrix pre_real = bundle_->reg.extractor.pre_activation(x);
    Rng probe_rng(mix_seed(seed, 17));
    for (int gj : current_ids) {
      std::vector<Eigen::Index> rows;
      for (std::size_t i = 0; i < j.size(); ++i)
        if (j[i] == gj) rows.push_back(static_cast<Eigen::Index>(i));
      if (rows.empty()) continue;
      const Matrix h_j = gather_rows(pre_real, rows);
      const Vector mean_r = h_j.colwise().mean();
      const Vector std_r =
          ((h_j.rowwise() - mean_r.transpose()).array().square().colwise().sum() /
           std::max<Scalar>(1.0, static_cast<Scalar>(h_j.rows() - 1)))
              .sqrt()
              .matrix()
              .transpose();

      const Eigen::Index n_probe = 256;
      const Matrix zp = probe_rng.normal_matrix(n_probe, models::kNoiseDim);
      Vector sp(n_probe);
      for (Eigen::Index i = 0; i < n_probe; ++i) sp(i) = probe_rng.uniform();
      const Matrix pre_gen = gen.generate_pre_activation(gj, zp, sp);
      const Vector mean_o = pre_gen.colwise().mean();
      const Vector std_o =
          ((pre_gen.rowwise() - mean_o.transpose()).array().square().colwise().sum() /
           static_cast<Scalar>(n_probe - 1))
              .sqrt()
              .matrix()
              .transpose();

      nn::Dense& head = gen.heads.at(gj);
      for (Eigen::Index d = 0; d < models::kFeatureDim; ++d) {
        const Scalar scale = std_r(d) / std::max<Scalar>(std_o(d), 1e-8);
        head.W.value.row(d) *= scale;
        const Scalar shifted = scale * (mean_o(d) - head.b.value(d, 0));
        head.b.value(d, 0) = mean_r(d) - shifted;
      }

      // The moment match above holds ahead of the bounding activation; a few
      // damped bias corrections line the post-activation means up as well.
      const Scalar inv_temp = gen.out.inv_temp;
      const Matrix h_post = nn::Tanh::apply(h_j, inv_temp);
      const Vector target = h_post.colwise().mean();
      for (int pass = 0; pass < 8; ++pass) {
        const Matrix probe = gen.generate_const(gj, zp, sp);
        const Vector got = probe.colwise().mean();
        const Matrix pre = gen.generate_pre_activation(gj, zp, sp);
        for (Eigen::Index d = 0; d < models::kFeatureDim; ++d) {
          const Scalar slope = std::max<Scalar>(
              0.01,
              ((1.0 - (pre.col(d).array() * inv_temp).tanh().square()) * inv_temp).mean());
          const Scalar step = (target(d) - got(d)) / slope;
          head.b.value(d, 0) += std::clamp(step, -2.0, 2.0);
        }
      }
    }
  }

  nn::Adam opt_gen(bundle_->trainable(gen.params()), sched.lr_gan, 0.9, 0.999, sched.gan_adam_eps);
  nn::Adam opt_disc(bundle_->trainable(disc.params()), sched.lr_gan, 0.9, 0.999,
                    sched.gan_adam_eps);
  std::vector<nn::Tensor*> gan_params = gen.params();
  for (nn::Tensor* t : disc.params()) gan_params.push_back(t);

  Rng gan_rng(mix_seed(seed, 3));
  const Scalar align_n = static_cast<Scalar>(sched.batch_gan);

  auto draw_alignment = [&]() {
    std::map<int, std::vector<Scalar>> conds;
    for (int k = 0; k < sched.batch_gan; ++k) {
      const int pj = prev_ids[static_cast<std::size_t>(gan_rng.index(
          static_cast<std::int64_t>(prev_ids.size())))];
      conds[pj].push_back(gan_rng.uniform());
    }
    return conds;
  };

  for (int epoch = 1; epoch <= sched.epochs_gan; ++epoch) {
    Rng epoch_rng(mix_seed(seed, 5000 + static_cast<std::uint64_t>(epoch)));
    Scalar adv_sum = 0.0, qua_r_sum = 0.0, qua_f_sum = 0.0, ga_sum = 0.0, da_sum = 0.0;
    int batches = 0;
    for (const std::vector<Eigen::Index>& rows : make_batches(x.rows(), sched.batch_gan, epoch_rng)) {
      const Scalar nb = static_cast<Scalar>(rows.size());
      const auto groups = group_by_distortion(j, rows);

      // ---- discriminator step -------------------------------------------------
      // Adversarial gradients are taken against the pre-logistic output,
      // where the log-loss derivative stays bounded: -(1-v)/n on real rows
      // and +v/n on fake rows.
      zero_all(gan_params);
      Scalar log_real = 0.0, log_one_minus_fake = 0.0, qua_r = 0.0, qua_f = 0.0, da = 0.0;
      for (const auto& [gj, grows] : groups) {
        const Matrix hb = gather_rows(h_real, grows);
        const Vector sb = gather_elems(s, grows);
        auto [q_r, v_r] = disc.discriminate(gj, hb);
        const Vector da_r = -(1.0 - v_r.array()) / nb;
        Vector dq = Vector::Zero(q_r.size());
        if (!eq.printed_quality_assignment) {
          qua_r += (q_r - sb).squaredNorm() / nb;
          dq = w.lambda_qua * 2.0 / nb * (q_r - sb);
        }
        disc.backward(gj, dq, da_r);
        log_real += v_r.array().max(losses::kLogEps).min(1.0 - losses::kLogEps).log().sum() / nb;

        // R1 penalty: gamma/2 * mean ||d logit / d h||^2 over the real rows.
        // For this stack the logit is wq . relu(We h + be) + bq, so with the
        // relu mask M treated as locally constant,
        //   d/dWe = (gamma/n) U^T Grad  and  d/dwq = (gamma/n) colsum(M . (Grad We^T))
        // where rows of U are m_i . wq and rows of Grad are We^T u_i.
        if (sched.gan_r1_gamma > 0.0) {
          const Matrix relu_out = nn::Relu::apply(disc.embed.apply(hb));
          const Matrix mask = (relu_out.array() > 0.0).cast<Scalar>();
          const Eigen::RowVectorXd wq = disc.rf_heads.at(gj).W.value.row(0);
          const Matrix u = mask.array().rowwise() * wq.array();  // n x 256
          const Matrix grad_h = u * disc.embed.W.value;           // n x 512
          const Scalar gamma_n = sched.gan_r1_gamma / static_cast<Scalar>(grows.size());
          disc.embed.W.grad.noalias() += gamma_n * u.transpose() * grad_h;
          disc.rf_heads.at(gj).W.grad.row(0).noalias() +=
              gamma_n *
              (mask.cwiseProduct(grad_h * disc.embed.W.value.transpose())).colwise().sum();
        }
      }
      for (const auto& [gj, grows] : groups) {
        const Vector sb = gather_elems(s, grows);
        const Matrix z = gan_rng.normal_matrix(static_cast<Eigen::Index>(grows.size()),
                                               models::kNoiseDim);
        const Matrix h_fake = gen.generate_const(gj, z, sb);
        auto [q_f, v_f] = disc.discriminate(gj, h_fake);
        const Vector da_f = v_f / nb;
        Vector dq = Vector::Zero(q_f.size());
        if (eq.printed_quality_assignment) {
          qua_f += (q_f - sb).squaredNorm() / nb;
          dq = w.lambda_qua * 2.0 / nb * (q_f - sb);
        }
        disc.backward(gj, dq, da_f);
        log_one_minus_fake +=
            (1.0 - v_f.array()).max(losses::kLogEps).min(1.0 - losses::kLogEps).log().sum() / nb;
      }
      if (!is_base_task) {
        for (const auto& [pj, svals] : draw_alignment()) {
          const Vector sa = Eigen::Map<const Vector>(svals.data(), static_cast<Eigen::Index>(svals.size()));
          const Matrix z = gan_rng.normal_matrix(sa.size(), models::kNoiseDim);
          const Matrix h_prev = bundle_->prev.generator.generate_const(pj, z, sa);
          auto [q_now, v_now] = disc.discriminate(pj, h_prev);
          auto [q_prev, v_prev] = bundle_->prev.discriminator.discriminate_const(pj, h_prev);
          da += ((q_now - q_prev).squaredNorm() + (v_now - v_prev).squaredNorm()) / align_n;
          const Vector dq = w.lambda_align * 2.0 / align_n * (q_now - q_prev);
          // alignment acts on the probability itself; chain through the logistic
          const Vector dv_logit = (w.lambda_align * 2.0 / align_n * (v_now - v_prev).array() *
                                   v_now.array() * (1.0 - v_now.array()))
                                      .matrix();
          disc.backward(pj, dq, dv_logit);
        }
      }
      opt_disc.step();

      // ---- generator step ------------------------------------------------------
      zero_all(gan_params);
      for (const auto& [gj, grows] : groups) {
        const Vector sb = gather_elems(s, grows);
        const Matrix z = gan_rng.normal_matrix(static_cast<Eigen::Index>(grows.size()),
                                               models::kNoiseDim);
        const Matrix h_fake = gen.generate(gj, z, sb);
        auto [q_f, v_f] = disc.discriminate(gj, h_fake);
        Vector da_f(v_f.size());
        if (eq.printed_adversarial) {
          // Literal printed objective: the generator ascends the GAN value.
          da_f = v_f / nb;
        } else {
          da_f = -(1.0 - v_f.array()) / nb;
        }
        Vector dq = Vector::Zero(q_f.size());
        if (!eq.printed_quality_assignment) {
          qua_f += (q_f - sb).squaredNorm() / nb;
          dq = w.lambda_qua * 2.0 / nb * (q_f - sb);
        }
        Matrix dh = disc.backward(gj, dq, da_f);
        if (sched.gan_feature_matching > 0.0) {
          const Eigen::RowVectorXd diff =
              h_fake.colwise().mean() - gather_rows(h_real, grows).colwise().mean();
          const Scalar scale = sched.gan_feature_matching * 2.0 /
                               (static_cast<Scalar>(models::kFeatureDim) *
                                static_cast<Scalar>(grows.size()));
          dh.rowwise() += scale * diff;
        }
        gen.backward(gj, dh);
      }
      if (!is_base_task) {
        const Scalar ga_elems = align_n * static_cast<Scalar>(models::kFeatureDim);
        for (const auto& [pj, svals] : draw_alignment()) {
          const Vector sa = Eigen::Map<const Vector>(svals.data(), static_cast<Eigen::Index>(svals.size()));
          const Matrix z = gan_rng.normal_matrix(sa.size(), models::kNoiseDim);
          const Matrix gen_now = gen.generate(pj, z, sa);
          const Matrix gen_prev = bundle_->prev.generator.generate_const(pj, z, sa);
          ga_sum += (gen_now - gen_prev).squaredNorm() / ga_elems;
          const Matrix dg = w.lambda_align * 2.0 / ga_elems * (gen_now - gen_prev);
          gen.backward(pj, dg);
        }
      }
      opt_gen.step();

      adv_sum += log_real + log_one_minus_fake;
      qua_r_sum += qua_r;
      qua_f_sum += qua_f;
      da_sum += da;
      ++batches;
    }
    emit("stage=gan epoch=" + std::to_string(epoch) + " adv=" + fmt(adv_sum / batches) +
         " qua_r=" + fmt(qua_r_sum / batches) + " qua_f=" + fmt(qua_f_sum / batches) +
         " ga=" + fmt(ga_sum / batches) + " da=" + fmt(da_sum / batches));
  }
}

StageOutcome LiqaTrainer::train_multihead(const Matrix& x, const Vector& s, const std::vector<int>& j,
                                          const Matrix& val_x, const Vector& val_s,
                                          const std::vector<int>& val_j,
                                          const std::vector<int>& current_ids, std::uint64_t seed) {
  require(x.rows() > 0, "train_multihead: current task is empty");
  const TrainSchedule& sched = config_.schedule;
  models::MultiHeadRegressor& aux = bundle_->aux;

  // Features are fixed for the whole stage (the extractor copy is frozen).
  const Matrix feats = aux.extractor.apply(x);
  const Matrix val_feats = aux.extractor.apply(val_x);

  std::vector<nn::Tensor*> head_params;
  for (int id : current_ids)
    for (nn::Tensor* t : aux.heads.at(id).params()) head_params.push_back(t);
  nn::Adam opt(bundle_->trainable(head_params), sched.lr_base);

  auto val_predictions = [&]() {
    Vector preds(val_feats.rows());
    const auto groups = group_by_distortion(val_j, all_rows(val_feats.rows()));
    for (const auto& [gj, grows] : groups) {
      const Vector p = models::predict_multi(aux, gather_rows(val_feats, grows), gj);
      for (std::size_t i = 0; i < grows.size(); ++i) preds(grows[i]) = p(static_cast<Eigen::Index>(i));
    }
    return preds;
  };

  StageOutcome outcome;
  Scalar best = -2.0;
  std::vector<Matrix> best_params;
  const int min_epoch = std::min(sched.early_stop_min_epoch, sched.epochs_multi);
  for (int epoch = 1; epoch <= sched.epochs_multi; ++epoch) {
    Rng epoch_rng(mix_seed(seed, 900 + static_cast<std::uint64_t>(epoch)));
    Scalar loss_sum = 0.0;
    int batches = 0;
    for (const std::vector<Eigen::Index>& rows : make_batches(x.rows(), sched.batch_regression, epoch_rng)) {
      zero_all(head_params);
      const Scalar nb = static_cast<Scalar>(rows.size());
      for (const auto& [gj, grows] : group_by_distortion(j, rows)) {
        require(std::find(current_ids.begin(), current_ids.end(), gj) != current_ids.end(),
                "train_multihead: sample distortion outside the current task");
        const Vector sb = gather_elems(s, grows);
        const Vector preds = aux.heads.at(gj).forward(gather_rows(feats, grows));
        loss_sum += (preds - sb).squaredNorm() / nb;
        aux.heads.at(gj).backward(2.0 / nb * (preds - sb));
      }
      opt.step();
      ++batches;
    }
    const Scalar val = metrics::srcc(val_predictions(), val_s);
    outcome.val_trace.push_back(val);
    emit("stage=multihead epoch=" + std::to_string(epoch) + " mse=" + fmt(loss_sum / batches) +
         " val_srcc=" + fmt(val));
    if (epoch >= min_epoch && val > best) {
      best = val;
      outcome.best_epoch = epoch;
      best_params = save_values(head_params);
    }
  }
  if (!best_params.empty()) restore_values(best_params, head_params);
  return outcome;
}

void evaluate_task(const models::ModelBundle& bundle, const AuditedStream& stream, int t,
                   metrics::EvalLedger& ledger) {
  const tasks::TaskStream& s = stream.stream();
  for (int j = 0; j < s.m_cur(t); ++j) {
    const auto test_ptrs = s.test_of_distortion(j);
    std::vector<tasks::LabeledSample> samples;
    samples.reserve(test_ptrs.size());
    for (const tasks::LabeledSample* p : test_ptrs) samples.push_back(*p);
    const Vector preds = bundle.reg.predict(inputs_of(samples));
    ledger.add(t, j, metrics::srcc(preds, scores_of(samples)), s.intro_task_of(j));
  }
}

void LiqaTrainer::run_task(AuditedStream& stream, int t, std::uint64_t task_seed,
                           metrics::EvalLedger& ledger) {
  require(t == bundle_->last_completed_task + 1,
          "run_task: tasks must be executed in stream order (expected " +
              std::to_string(bundle_->last_completed_task + 1) + ", got " + std::to_string(t) + ")");
  stream.set_current_task(t);
  const tasks::TaskSpec& spec = stream.stream().tasks.at(static_cast<std::size_t>(t));
  const bool is_base = (t == 0);
  const bool run_split_stage = config_.ablation != Ablation::no_pr;
  const bool run_multihead_stage = run_split_stage && config_.ablation != Ablation::no_split_merge;

  std::vector<int> prev_ids;
  for (int id : bundle_->registered_heads()) prev_ids.push_back(id);
  bundle_->register_task_heads(spec.distortion_ids, mix_seed(task_seed, 77));

  // Snapshot stability across the whole task.
  const std::size_t snapshot_record = freeze_log_.size();
  if (bundle_->prev.valid) {
    FreezeRecord rec;
    rec.stage = "task" + std::to_string(t);
    rec.selector = "snapshot";
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto& prev = bundle_->prev;
    auto absorb = [&h](std::vector<nn::Tensor*> ts) {
      for (nn::Tensor* p : ts) {
        h ^= p->checksum();
        h *= 0x100000001b3ull;
      }
    };
    absorb(prev.extractor.params());
    absorb(prev.head.params());
    absorb(prev.generator.params());
    absorb(prev.discriminator.params());
    rec.checksum_before = h;
    freeze_log_.push_back(std::move(rec));
  }

  // Current-task tensors; jt_pr pools every stored task instead.
  std::vector<tasks::LabeledSample> train_samples;
  if (config_.pool_all_tasks) {
    for (int tt = 0; tt <= t; ++tt)
      for (const tasks::LabeledSample& smp : stream.train(tt)) train_samples.push_back(smp);
  } else {
    train_samples = stream.train(t);
  }
  std::vector<tasks::LabeledSample> val_samples = stream.val(t);
  if (config_.validation == ValidationScheme::pooled_seen) {
    val_samples.clear();
    for (int tt = 0; tt <= t; ++tt)
      for (const tasks::LabeledSample& smp : stream.val(tt)) val_samples.push_back(smp);
  }
  const Matrix x = inputs_of(train_samples);
  const Vector s = scores_of(train_samples);
  const Matrix val_x = inputs_of(val_samples);
  const Vector val_s = scores_of(val_samples);

  ReplayPlan plan;
  if (!is_base && config_.ablation != Ablation::no_pr) {
    plan = plan_replay(config_.replay_strategy, config_.n_buf, prev_ids, mix_seed(task_seed, 11));
    require(!plan.conditions.empty(), "run_task: replay plan produced no conditions");
  }

  models::FrozenSnapshot pending;
  pending.valid = true;

  // ---- merge stage: single head with replay --------------------------------
  bundle_->unfreeze_all();
  stage_log_.push_back("merge");
  const StageOutcome merge = train_single_head(x, s, val_x, val_s, is_base, plan,
                                               mix_seed(task_seed, 21));
  emit("stage=merge done best_epoch=" + std::to_string(merge.best_epoch));
  pending.extractor = bundle_->reg.extractor;
  pending.head = bundle_->reg.head;

  // ---- split stage: generator and discriminator ----------------------------
  if (run_split_stage) {
    bundle_->unfreeze_all();
    std::vector<std::string> selectors = {"reg"};
    for (int pj : prev_ids) {
      selectors.push_back("gen/prior/" + std::to_string(pj) + "/");
      selectors.push_back("gen/head/" + std::to_string(pj) + "/");
      selectors.push_back("disc/qual/" + std::to_string(pj) + "/");
      selectors.push_back("disc/rf/" + std::to_string(pj) + "/");
    }
    const std::size_t first = freeze_log_.size();
    begin_freeze("gan", selectors);
    stage_log_.push_back("gan");

    // The generator continues from the current task's data only, even when
    // the merge stage pooled every stored task.
    const std::vector<tasks::LabeledSample>& gan_samples = stream.train(t);
    const Matrix gan_x = inputs_of(gan_samples);
    const Vector gan_s = scores_of(gan_samples);
    const std::vector<int> gan_j = distortions_of(gan_samples);

    // Tenfold offline augmentation: originals plus jittered resamples with a
    // per-dimension std scaled by jitter_spread.
    Matrix aug_x;
    Vector aug_s;
    std::vector<int> aug_j;
    {
      const int factor = config_.schedule.gan_augmentation_factor;
      Rng aug_rng(mix_seed(task_seed, 31));
      Vector dim_std = Vector::Zero(gan_x.cols());
      if (gan_x.rows() > 1) {
        const Matrix centered = gan_x.rowwise() - gan_x.colwise().mean();
        dim_std = (centered.array().square().colwise().sum() / static_cast<Scalar>(gan_x.rows() - 1))
                      .sqrt()
                      .matrix()
                      .transpose();
      }
      aug_x.resize(gan_x.rows() * factor, gan_x.cols());
      aug_s.resize(gan_x.rows() * factor);
      aug_j.reserve(static_cast<std::size_t>(gan_x.rows()) * static_cast<std::size_t>(factor));
      Eigen::Index at = 0;
      for (Eigen::Index i = 0; i < gan_x.rows(); ++i) {
        for (int k = 0; k < factor; ++k) {
          Vector row = gan_x.row(i).transpose();
          if (k > 0)
            row += (config_.schedule.jitter_spread *
                    aug_rng.normal_vector(gan_x.cols()).array() * dim_std.array())
                       .matrix();
          aug_x.row(at) = row.transpose();
          aug_s(at) = gan_s(i);
          aug_j.push_back(gan_j[static_cast<std::size_t>(i)]);
          ++at;
        }
      }
    }

    train_gan(aug_x, aug_s, aug_j, spec.distortion_ids, prev_ids, is_base, mix_seed(task_seed, 41));
    end_freeze(first);
  }
  pending.generator = bundle_->gen;
  pending.discriminator = bundle_->disc;

  // ---- split stage: auxiliary multi-head ------------------------------------
  if (run_multihead_stage) {
    bundle_->unfreeze_all();
    // U-hat is re-initialized from the single head's extractor, bitwise.
    {
      std::vector<nn::Tensor*> src = bundle_->reg.extractor.params();
      std::vector<nn::Tensor*> dst = bundle_->aux.extractor.params();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
    }
    std::vector<std::string> selectors = {"aux/U", "reg"};
    for (int pj : prev_ids) selectors.push_back("aux/head/" + std::to_string(pj) + "/");
    const std::size_t first = freeze_log_.size();
    begin_freeze("multihead", selectors);
    stage_log_.push_back("multihead");

    const Matrix cur_x = inputs_of(stream.train(t));
    const Vector cur_s = scores_of(stream.train(t));
    const std::vector<int> cur_j = distortions_of(stream.train(t));
    const std::vector<tasks::LabeledSample>& cur_val = stream.val(t);
    const StageOutcome aux_out =
        train_multihead(cur_x, cur_s, cur_j, inputs_of(cur_val), scores_of(cur_val),
                        distortions_of(cur_val), spec.distortion_ids, mix_seed(task_seed, 51));
    emit("stage=multihead done best_epoch=" + std::to_string(aux_out.best_epoch));
    end_freeze(first);
  }

  // ---- evaluation -------------------------------------------------------------
  stage_log_.push_back("eval");
  evaluate_task(*bundle_, stream, t, ledger);

  if (bundle_->prev.valid) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto& prev = bundle_->prev;
    auto absorb = [&h](std::vector<nn::Tensor*> ts) {
      for (nn::Tensor* p : ts) {
        h ^= p->checksum();
        h *= 0x100000001b3ull;
      }
    };
    absorb(prev.extractor.params());
    absorb(prev.head.params());
    absorb(prev.generator.params());
    absorb(prev.discriminator.params());
    freeze_log_[snapshot_record].checksum_after = h;
  }

  bundle_->prev = std::move(pending);
  bundle_->last_completed_task = t;
}

// ---- BaselineTrainer -----------------------------------------------------------------

BaselineTrainer::BaselineTrainer(models::ModelBundle& bundle, BaselineConfig config,
                                 std::ostream* progress)
    : bundle_(&bundle), config_(std::move(config)), progress_(progress) {
  config_.schedule.validate();
  require(config_.method != baselines::Method::liqa && config_.method != baselines::Method::jt_pr,
          "BaselineTrainer: liqa and jt_pr run through LiqaTrainer");
  fisher_.gamma = config_.hyper.gamma;
  si_.xi = config_.hyper.xi;
}

void BaselineTrainer::emit(const std::string& line) {
  if (progress_) (*progress_) << line << '\n';
}

std::string BaselineTrainer::method_state_blob() const {
  switch (config_.method) {
    case baselines::Method::ewc:
    case baselines::Method::online_ewc:
      return fisher_.to_blob();
    case baselines::Method::si:
      return si_.to_blob();
    default:
      return {};
  }
}

void BaselineTrainer::restore_method_state(const std::string& blob) {
  if (blob.empty()) return;
  switch (config_.method) {
    case baselines::Method::ewc:
    case baselines::Method::online_ewc:
      fisher_ = baselines::FisherState::from_blob(blob);
      break;
    case baselines::Method::si:
      si_ = baselines::SIState::from_blob(blob);
      break;
    default:
      break;
  }
}

void BaselineTrainer::run_task(AuditedStream& stream, int t, std::uint64_t task_seed,
                               metrics::EvalLedger& ledger) {
  require(t == bundle_->last_completed_task + 1, "run_task: tasks must be executed in stream order");
  stream.set_current_task(t);
  const TrainSchedule& sched = config_.schedule;
  const baselines::Method method = config_.method;
  const baselines::BaselineHyperparams& hp = config_.hyper;

  std::vector<tasks::LabeledSample> train_samples;
  if (baselines::stores_previous_data(method)) {
    for (int tt = 0; tt <= t; ++tt)
      for (const tasks::LabeledSample& smp : stream.train(tt)) train_samples.push_back(smp);
  } else {
    train_samples = stream.train(t);
  }
  std::vector<tasks::LabeledSample> val_samples = stream.val(t);
  if (config_.validation == ValidationScheme::pooled_seen) {
    val_samples.clear();
    for (int tt = 0; tt <= t; ++tt)
      for (const tasks::LabeledSample& smp : stream.val(tt)) val_samples.push_back(smp);
  }
  const Matrix x = inputs_of(train_samples);
  const Vector s = scores_of(train_samples);
  const Matrix val_x = inputs_of(val_samples);
  const Vector val_s = scores_of(val_samples);
  require(x.rows() > 0, "baseline run_task: empty training set");

  models::SingleHeadRegressor& reg = bundle_->reg;
  std::vector<nn::Tensor*> params = reg.params();
  nn::Adam opt(params, sched.lr_base);

  if (method == baselines::Method::si) si_.begin_task(nn::flatten_values(params));

  Scalar best = -2.0;
  int best_epoch = -1;
  std::vector<Matrix> best_params;

  for (int epoch = 1; epoch <= sched.epochs_single; ++epoch) {
    Rng epoch_rng(mix_seed(task_seed, 100 + static_cast<std::uint64_t>(epoch)));
    Scalar loss_sum = 0.0, penalty_sum = 0.0;
    int batches = 0;
    for (const std::vector<Eigen::Index>& rows : make_batches(x.rows(), sched.batch_regression, epoch_rng)) {
      zero_all(params);
      const Matrix xb = gather_rows(x, rows);
      const Vector sb = gather_elems(s, rows);
      const Matrix feats = reg.extractor.forward(xb);
      const Vector preds = reg.head.forward(feats);
      loss_sum += baselines::ft_loss(preds, sb);
      reg.extractor.backward(reg.head.backward(losses::mse_grad(preds, sb)));

      const Vector theta_before = nn::flatten_values(params);
      if (t > 0) {
        Vector g_pen;
        switch (method) {
          case baselines::Method::ewc:
            g_pen = hp.lambda_ewc * baselines::ewc_penalty_grad(theta_before, fisher_);
            penalty_sum += hp.lambda_ewc * baselines::ewc_penalty(theta_before, fisher_);
            break;
          case baselines::Method::online_ewc:
            g_pen = hp.lambda_online_ewc * baselines::online_ewc_penalty_grad(theta_before, fisher_);
            penalty_sum += hp.lambda_online_ewc * baselines::online_ewc_penalty(theta_before, fisher_);
            break;
          case baselines::Method::si:
            g_pen = hp.lambda_si * si_.penalty_grad(theta_before);
            penalty_sum += hp.lambda_si * si_.penalty(theta_before);
            break;
          default:
            break;
        }
        if (g_pen.size() > 0) nn::add_flat_to_grads(g_pen, params);
      }

      Vector grad_total;
      if (method == baselines::Method::si) grad_total = nn::flatten_grads(params);
      opt.step();
      if (method == baselines::Method::si)
        si_.accumulate(theta_before, nn::flatten_values(params), grad_total);
      ++batches;
    }

    const Scalar val = metrics::srcc(reg.predict(val_x), val_s);
    emit("stage=" + baselines::method_name(method) + " epoch=" + std::to_string(epoch) +
         " mse=" + fmt(loss_sum / batches) + " penalty=" + fmt(penalty_sum / batches) +
         " val_srcc=" + fmt(val));
    if (epoch >= sched.early_stop_min_epoch && val > best) {
      best = val;
      best_epoch = epoch;
      best_params = save_values(params);
    }
  }
  if (!best_params.empty()) restore_values(best_params, params);
  emit("stage=" + baselines::method_name(method) + " done best_epoch=" + std::to_string(best_epoch));

  // Post-task consolidation at the selected parameters.
  if (method == baselines::Method::ewc || method == baselines::Method::online_ewc) {
    const Matrix cur_x = inputs_of(stream.train(t));
    const Vector cur_s = scores_of(stream.train(t));
    auto per_sample_grad = [&](std::size_t i) {
      zero_all(params);
      const Matrix feats = reg.extractor.forward(cur_x.row(static_cast<Eigen::Index>(i)));
      const Vector pred = reg.head.forward(feats);
      Vector dpred(1);
      dpred(0) = 2.0 * (pred(0) - cur_s(static_cast<Eigen::Index>(i)));
      reg.extractor.backward(reg.head.backward(dpred));
      return nn::flatten_grads(params);
    };
    fisher_.add_task(baselines::fisher_diagonal(per_sample_grad, static_cast<std::size_t>(cur_x.rows())),
                     nn::flatten_values(params));
  }
  if (method == baselines::Method::si) si_.consolidate(nn::flatten_values(params));

  evaluate_task(*bundle_, stream, t, ledger);
  bundle_->last_completed_task = t;
}

}  // namespace liqa::train
