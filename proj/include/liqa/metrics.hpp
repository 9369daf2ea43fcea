#ifndef LIQA_METRICS_HPP
#define LIQA_METRICS_HPP

#include <map>
#include <ostream>
#include <utility>
#include <vector>

#include "liqa/core.hpp"

// Rank-correlation evaluation and the lifelong-learning indices derived from
// per-task SRCC tables.
namespace liqa::metrics {

// Average ranks (1-based); tied values receive the mean of their positions.
Vector average_ranks(const Vector& values);

// Spearman rank-order correlation: Pearson correlation of average ranks.
// Requires length >= 3 and non-constant inputs on both sides.
Scalar srcc(const Vector& preds, const Vector& targets);

// SRCC_{t,j} table over (task index, distortion id), defined exactly for the
// distortions seen by each task.
class EvalLedger {
 public:
  void add(int task, int distortion, Scalar srcc_value, int intro_task);

  bool has(int task, int distortion) const;
  Scalar at(int task, int distortion) const;
  int intro_task(int distortion) const;
  int max_task() const { return max_task_; }
  bool empty() const { return values_.empty(); }

  // Mean absolute SRCC over every distortion seen by task T.
  Scalar correlation_index(int task) const;
  // Best historical |SRCC| of distortion j minus its current |SRCC|.
  Scalar forgetting_of(int task, int distortion) const;
  // Mean forgetting over all distortions seen before task T.
  Scalar forgetting_index(int task) const;
  // (mean C_T over all tasks, mean F_T over tasks T >= 1)
  std::pair<Scalar, Scalar> averaged_indices() const;

  std::vector<int> distortions_at(int task) const;

  // Columns: task_index,distortion_id,srcc,abs_srcc
  void write_csv(std::ostream& os) const;
  static EvalLedger read_csv(std::istream& is);

  const std::map<std::pair<int, int>, Scalar>& values() const { return values_; }

 private:
  std::map<std::pair<int, int>, Scalar> values_;
  std::map<int, int> intro_task_;
  int max_task_ = -1;
};

}  // namespace liqa::metrics

#endif  // LIQA_METRICS_HPP
