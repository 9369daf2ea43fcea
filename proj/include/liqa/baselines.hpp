#ifndef LIQA_BASELINES_HPP
#define LIQA_BASELINES_HPP

#include <functional>
#include <string>
#include <vector>

#include "liqa/core.hpp"
#include "liqa/losses.hpp"

// The comparison methods sharing the single-head regressor: fine-tuning,
// EWC, online EWC, SI and joint training (with optional pseudo replay).
namespace liqa::baselines {

enum class Method { ft, ewc, online_ewc, si, liqa, jt, jt_pr };

Method parse_method(const std::string& name);
std::string method_name(Method m);
// Does the method keep previous tasks' raw training data? Only joint training may.
bool stores_previous_data(Method m);

struct BaselineHyperparams {
  Scalar lambda_ewc = 5000.0;
  Scalar lambda_online_ewc = 5000.0;
  Scalar gamma = 1.0;  // online EWC running-sum decay
  Scalar lambda_si = 100.0;
  Scalar xi = 0.1;  // SI damping
};

inline Scalar ft_loss(const Vector& preds, const Vector& scores) {
  return losses::mse(preds, scores);
}

// Diagonal Fisher estimate: mean over the dataset of the squared per-sample
// gradient of the L2 loss. per_sample_grad(i) must run a batch-of-one pass.
Vector fisher_diagonal(const std::function<Vector(std::size_t)>& per_sample_grad, std::size_t n);

// Per-task Fisher diagonals and anchors, plus the online running sum.
struct FisherState {
  std::vector<Vector> fisher;  // F^t
  std::vector<Vector> anchor;  // theta-hat^t
  Vector running_sum;          // gamma-decayed sum of per-task diagonals
  Scalar gamma = 1.0;

  bool empty() const { return fisher.empty(); }
  void add_task(const Vector& F, const Vector& theta_hat);

  std::string to_blob() const;
  static FisherState from_blob(const std::string& blob);
};

// 1/2 sum_t sum_i F^t_i (theta_i - anchor^t_i)^2
Scalar ewc_penalty(const Vector& theta, const FisherState& state);
Vector ewc_penalty_grad(const Vector& theta, const FisherState& state);

// sum_i runsum_i (theta_i - anchor^{T-1}_i)^2; note there is no 1/2 factor.
Scalar online_ewc_penalty(const Vector& theta, const FisherState& state);
Vector online_ewc_penalty_grad(const Vector& theta, const FisherState& state);

// Path-integral importance; accumulate() must observe every optimizer
// iteration of a task in order.
struct SIState {
  Vector omega;        // within-task contribution, reset at task end
  Vector task_start;   // theta right before the task's first iteration
  Vector omega_total;  // accumulated importance Omega
  Vector anchor;       // theta-hat^{T-1}
  Scalar xi = 0.1;
  bool started = false;

  void begin_task(const Vector& theta0);
  // omega_i += (theta_after_i - theta_before_i) * (-grad_total_i)
  void accumulate(const Vector& theta_before, const Vector& theta_after, const Vector& grad_total);
  // Omega_i += omega_i / (Delta_i^2 + xi), then omega and Delta reset.
  void consolidate(const Vector& theta_end);

  bool has_anchor() const { return anchor.size() > 0; }
  Scalar penalty(const Vector& theta) const;
  Vector penalty_grad(const Vector& theta) const;

  std::string to_blob() const;
  static SIState from_blob(const std::string& blob);
};

inline Scalar jt_loss(const Vector& preds_over_pool, const Vector& scores) {
  return losses::mse(preds_over_pool, scores);
}

inline Scalar jt_pr_loss(Scalar jt, Scalar replay, Scalar lambda_pr) {
  return jt + lambda_pr * replay;
}

}  // namespace liqa::baselines

#endif  // LIQA_BASELINES_HPP
