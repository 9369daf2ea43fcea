#include "liqa/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <sstream>
#include <string>

namespace liqa::metrics {

Vector average_ranks(const Vector& values) {
  const Eigen::Index n = values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return values(a) < values(b); });

  Vector ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && values(order[j + 1]) == values(order[i])) ++j;
    const Scalar avg = static_cast<Scalar>(i + j + 2) / 2.0;  // 1-based positions i+1..j+1
    for (Eigen::Index k = i; k <= j; ++k) ranks(order[k]) = avg;
    i = j + 1;
  }
  return ranks;
}

namespace {

Scalar pearson(const Vector& a, const Vector& b) {
  const Scalar ma = a.mean(), mb = b.mean();
  const Vector da = a.array() - ma, db = b.array() - mb;
  const Scalar denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  require(denom > 0.0, "srcc: constant input has no defined rank correlation");
  return da.dot(db) / denom;
}

}  // namespace

Scalar srcc(const Vector& preds, const Vector& targets) {
  require(preds.size() == targets.size(), "srcc: length mismatch");
  require(preds.size() >= 3, "srcc: need at least 3 observations");
  require(preds.minCoeff() != preds.maxCoeff(), "srcc: constant predictions");
  require(targets.minCoeff() != targets.maxCoeff(), "srcc: constant targets");
  return pearson(average_ranks(preds), average_ranks(targets));
}

void EvalLedger::add(int task, int distortion, Scalar srcc_value, int intro) {
  require(srcc_value >= -1.0 && srcc_value <= 1.0, "EvalLedger: srcc out of [-1,1]");
  values_[{task, distortion}] = srcc_value;
  auto it = intro_task_.find(distortion);
  if (it == intro_task_.end())
    intro_task_[distortion] = intro;
  else
    require(it->second == intro, "EvalLedger: conflicting intro task for distortion " +
                                     std::to_string(distortion));
  max_task_ = std::max(max_task_, task);
}

bool EvalLedger::has(int task, int distortion) const {
  return values_.count({task, distortion}) > 0;
}

Scalar EvalLedger::at(int task, int distortion) const {
  auto it = values_.find({task, distortion});
  require(it != values_.end(), "EvalLedger: no entry for task " + std::to_string(task) +
                                   ", distortion " + std::to_string(distortion));
  return it->second;
}

int EvalLedger::intro_task(int distortion) const {
  auto it = intro_task_.find(distortion);
  require(it != intro_task_.end(), "EvalLedger: unknown distortion " + std::to_string(distortion));
  return it->second;
}

std::vector<int> EvalLedger::distortions_at(int task) const {
  std::vector<int> out;
  for (const auto& [key, _] : values_)
    if (key.first == task) out.push_back(key.second);
  return out;
}

Scalar EvalLedger::correlation_index(int task) const {
  const std::vector<int> js = distortions_at(task);
  require(!js.empty(), "correlation_index: no entries for task " + std::to_string(task));
  Scalar sum = 0.0;
  for (int j : js) sum += std::abs(at(task, j));
  return sum / static_cast<Scalar>(js.size());
}

Scalar EvalLedger::forgetting_of(int task, int distortion) const {
  require(task > 0, "forgetting_of: undefined for the base task");
  const int intro = intro_task(distortion);
  require(intro < task, "forgetting_of: distortion " + std::to_string(distortion) +
                            " has no evaluation before task " + std::to_string(task));
  Scalar best = 0.0;
  bool any = false;
  for (int t = intro; t < task; ++t) {
    if (!has(t, distortion)) continue;
    best = any ? std::max(best, std::abs(at(t, distortion))) : std::abs(at(t, distortion));
    any = true;
  }
  require(any, "forgetting_of: no prior evaluation of distortion " + std::to_string(distortion));
  return best - std::abs(at(task, distortion));
}

Scalar EvalLedger::forgetting_index(int task) const {
  require(task > 0, "forgetting_index: undefined for the base task");
  Scalar sum = 0.0;
  int count = 0;
  for (const auto& [j, intro] : intro_task_) {
    if (intro >= task) continue;
    sum += forgetting_of(task, j);
    ++count;
  }
  require(count > 0, "forgetting_index: no previously seen distortions");
  return sum / static_cast<Scalar>(count);
}

std::pair<Scalar, Scalar> EvalLedger::averaged_indices() const {
  require(max_task_ >= 1, "averaged_indices: need at least 2 tasks");
  Scalar csum = 0.0, fsum = 0.0;
  for (int t = 0; t <= max_task_; ++t) csum += correlation_index(t);
  for (int t = 1; t <= max_task_; ++t) fsum += forgetting_index(t);
  return {csum / static_cast<Scalar>(max_task_ + 1), fsum / static_cast<Scalar>(max_task_)};
}

void EvalLedger::write_csv(std::ostream& os) const {
  os << "task_index,distortion_id,srcc,abs_srcc\n";
  char buf[64];
  for (const auto& [key, v] : values_) {
    os << key.first << ',' << key.second << ',';
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", std::abs(v));
    os << buf << '\n';
  }
}

EvalLedger EvalLedger::read_csv(std::istream& is) {
  EvalLedger ledger;
  std::string line;
  std::getline(is, line);  // header
  // intro task is recovered as the first task at which a distortion appears
  std::map<int, int> first_seen;
  std::vector<std::tuple<int, int, Scalar>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    const int t = std::stoi(field);
    std::getline(ss, field, ',');
    const int j = std::stoi(field);
    std::getline(ss, field, ',');
    const Scalar v = std::stod(field);
    rows.emplace_back(t, j, v);
    auto it = first_seen.find(j);
    if (it == first_seen.end() || t < it->second) first_seen[j] = t;
  }
  for (const auto& [t, j, v] : rows) ledger.add(t, j, v, first_seen[j]);
  return ledger;
}

}  // namespace liqa::metrics
