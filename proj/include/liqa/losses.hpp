#ifndef LIQA_LOSSES_HPP
#define LIQA_LOSSES_HPP

#include <cmath>
#include <string>

#include "liqa/core.hpp"

// Training objectives as differentiable scalar functions of model outputs.
// Every squared-norm term is the mean squared error over all elements of the
// batch, so loss scales are stable across batch sizes.
namespace liqa::losses {

struct LossWeights {
  Scalar lambda_fd = 0.001;
  Scalar lambda_pr = 10.0;
  Scalar lambda_mse = 1.0;
  Scalar lambda_qua = 1.0;
  Scalar lambda_align = 3.0;

  void validate() const {
    require(lambda_fd > 0 && lambda_pr > 0 && lambda_mse > 0 && lambda_qua > 0 && lambda_align > 0,
            "LossWeights: all weights must be positive");
  }
};

// Probabilities are clamped away from {0,1} before taking logs.
inline constexpr Scalar kLogEps = 1e-7;

template <class A, class B>
Scalar mse(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mse: shape mismatch (" +
          std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
          std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  require(a.size() > 0, "mse: empty input");
  return (a.derived() - b.derived()).squaredNorm() / static_cast<Scalar>(a.size());
}

// d mse(a,b) / d a
template <class A, class B>
Matrix mse_grad(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  return 2.0 * (a.derived() - b.derived()) / static_cast<Scalar>(a.size());
}

// ---- single-head objectives ------------------------------------------------

template <class A, class B>
Scalar feature_distillation_loss(const Eigen::MatrixBase<A>& feats_now,
                                 const Eigen::MatrixBase<B>& feats_prev) {
  return mse(feats_now, feats_prev);
}

template <class A, class B>
Scalar pseudo_replay_loss(const Eigen::MatrixBase<A>& single_head_preds,
                          const Eigen::MatrixBase<B>& multihead_preds) {
  return mse(single_head_preds, multihead_preds);
}

template <class A, class B>
Scalar mse_current_loss(const Eigen::MatrixBase<A>& preds, const Eigen::MatrixBase<B>& scores) {
  return mse(preds, scores);
}

inline Scalar single_head_total(Scalar fd, Scalar pr, Scalar mse_cur, const LossWeights& w,
                                bool is_base_task) {
  if (is_base_task) return mse_cur;
  return w.lambda_fd * fd + w.lambda_pr * pr + w.lambda_mse * mse_cur;
}

// ---- adversarial terms -----------------------------------------------------

// GAN value: mean log v_real + mean log(1 - v_fake). The discriminator ascends
// this value; the generator ascends mean log v_fake (non-saturating form).
inline Scalar adversarial_value(const Vector& v_real, const Vector& v_fake) {
  require(v_real.size() > 0 && v_fake.size() > 0, "adversarial_value: empty batch");
  const auto r = v_real.array().max(kLogEps).min(1.0 - kLogEps);
  const auto f = v_fake.array().max(kLogEps).min(1.0 - kLogEps);
  return r.log().mean() + (1.0 - f).log().mean();
}

// d value / d v_real and d value / d v_fake; zero where the clamp is active.
inline Vector adversarial_value_grad_real(const Vector& v_real) {
  Vector g = Vector::Zero(v_real.size());
  const Scalar n = static_cast<Scalar>(v_real.size());
  for (Eigen::Index i = 0; i < v_real.size(); ++i)
    if (v_real(i) > kLogEps && v_real(i) < 1.0 - kLogEps) g(i) = 1.0 / (n * v_real(i));
  return g;
}

inline Vector adversarial_value_grad_fake(const Vector& v_fake) {
  Vector g = Vector::Zero(v_fake.size());
  const Scalar n = static_cast<Scalar>(v_fake.size());
  for (Eigen::Index i = 0; i < v_fake.size(); ++i)
    if (v_fake(i) > kLogEps && v_fake(i) < 1.0 - kLogEps) g(i) = -1.0 / (n * (1.0 - v_fake(i)));
  return g;
}

// Non-saturating generator surrogate: -mean log v_fake.
inline Scalar generator_adversarial_loss(const Vector& v_fake) {
  require(v_fake.size() > 0, "generator_adversarial_loss: empty batch");
  return -v_fake.array().max(kLogEps).min(1.0 - kLogEps).log().mean();
}

inline Vector generator_adversarial_loss_grad(const Vector& v_fake) {
  Vector g = Vector::Zero(v_fake.size());
  const Scalar n = static_cast<Scalar>(v_fake.size());
  for (Eigen::Index i = 0; i < v_fake.size(); ++i)
    if (v_fake(i) > kLogEps && v_fake(i) < 1.0 - kLogEps) g(i) = -1.0 / (n * v_fake(i));
  return g;
}

// ---- quality and alignment terms -------------------------------------------

template <class A, class B>
Scalar quality_real_loss(const Eigen::MatrixBase<A>& qua_preds, const Eigen::MatrixBase<B>& scores) {
  return mse(qua_preds, scores);
}

template <class A, class B>
Scalar quality_fake_loss(const Eigen::MatrixBase<A>& qua_preds, const Eigen::MatrixBase<B>& scores) {
  return mse(qua_preds, scores);
}

template <class A, class B>
Scalar generator_alignment_loss(const Eigen::MatrixBase<A>& gen_now,
                                const Eigen::MatrixBase<B>& gen_prev) {
  return mse(gen_now, gen_prev);
}

// Sum of the quality-output and real/fake-output discrepancies between the
// current and the previous discriminator on a pseudo batch.
inline Scalar discriminator_alignment_loss(const Vector& qua_now, const Vector& qua_prev,
                                           const Vector& rf_now, const Vector& rf_prev) {
  return mse(qua_now, qua_prev) + mse(rf_now, rf_prev);
}

// ---- assembled stage objectives ---------------------------------------------

// adv_term: the generator's adversarial surrogate already oriented so that
// smaller is better for the generator. quality_term is the fake-feature
// quality loss under the text-resolved assignment.
inline Scalar generator_objective(Scalar adv_term, Scalar quality_term, Scalar align_term,
                                  const LossWeights& w, bool is_base_task) {
  Scalar total = adv_term + w.lambda_qua * quality_term;
  if (!is_base_task) total += w.lambda_align * align_term;
  return total;
}

inline Scalar discriminator_objective(Scalar adv_term, Scalar quality_term, Scalar align_term,
                                      const LossWeights& w, bool is_base_task) {
  Scalar total = adv_term + w.lambda_qua * quality_term;
  if (!is_base_task) total += w.lambda_align * align_term;
  return total;
}

// ---- auxiliary multi-head objective -----------------------------------------

template <class A, class B>
Scalar multihead_mse(const Eigen::MatrixBase<A>& preds, const Eigen::MatrixBase<B>& scores) {
  return mse(preds, scores);
}

}  // namespace liqa::losses

#endif  // LIQA_LOSSES_HPP
