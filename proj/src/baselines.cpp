#include "liqa/baselines.hpp"

#include <cstring>
#include <sstream>

namespace liqa::baselines {

Method parse_method(const std::string& name) {
  if (name == "ft") return Method::ft;
  if (name == "ewc") return Method::ewc;
  if (name == "online_ewc") return Method::online_ewc;
  if (name == "si") return Method::si;
  if (name == "liqa") return Method::liqa;
  if (name == "jt") return Method::jt;
  if (name == "jt_pr") return Method::jt_pr;
  throw std::invalid_argument("unknown method '" + name +
                              "' (expected ft, ewc, online_ewc, si, liqa, jt or jt_pr)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::ft: return "ft";
    case Method::ewc: return "ewc";
    case Method::online_ewc: return "online_ewc";
    case Method::si: return "si";
    case Method::liqa: return "liqa";
    case Method::jt: return "jt";
    case Method::jt_pr: return "jt_pr";
  }
  throw std::logic_error("method_name: unreachable");
}

bool stores_previous_data(Method m) { return m == Method::jt || m == Method::jt_pr; }

Vector fisher_diagonal(const std::function<Vector(std::size_t)>& per_sample_grad, std::size_t n) {
  require(n > 0, "fisher_diagonal: empty dataset");
  Vector sum;
  for (std::size_t i = 0; i < n; ++i) {
    const Vector g = per_sample_grad(i);
    if (sum.size() == 0) sum = Vector::Zero(g.size());
    require(g.size() == sum.size(), "fisher_diagonal: inconsistent gradient sizes");
    sum.array() += g.array().square();
  }
  return sum / static_cast<Scalar>(n);
}

void FisherState::add_task(const Vector& F, const Vector& theta_hat) {
  require(F.size() == theta_hat.size(), "FisherState: size mismatch");
  require(F.minCoeff() >= 0.0, "FisherState: Fisher diagonal must be non-negative");
  if (running_sum.size() == 0)
    running_sum = F;
  else
    running_sum = gamma * running_sum + F;
  fisher.push_back(F);
  anchor.push_back(theta_hat);
}

Scalar ewc_penalty(const Vector& theta, const FisherState& state) {
  Scalar total = 0.0;
  for (std::size_t t = 0; t < state.fisher.size(); ++t) {
    require(state.anchor[t].size() == theta.size(), "ewc_penalty: anchor size mismatch");
    total += 0.5 * (state.fisher[t].array() * (theta - state.anchor[t]).array().square()).sum();
  }
  return total;
}

Vector ewc_penalty_grad(const Vector& theta, const FisherState& state) {
  Vector g = Vector::Zero(theta.size());
  for (std::size_t t = 0; t < state.fisher.size(); ++t)
    g.array() += state.fisher[t].array() * (theta - state.anchor[t]).array();
  return g;
}

Scalar online_ewc_penalty(const Vector& theta, const FisherState& state) {
  if (state.empty()) return 0.0;
  const Vector& anchor = state.anchor.back();
  require(anchor.size() == theta.size(), "online_ewc_penalty: anchor size mismatch");
  return (state.running_sum.array() * (theta - anchor).array().square()).sum();
}

Vector online_ewc_penalty_grad(const Vector& theta, const FisherState& state) {
  if (state.empty()) return Vector::Zero(theta.size());
  return (2.0 * state.running_sum.array() * (theta - state.anchor.back()).array()).matrix();
}

void SIState::begin_task(const Vector& theta0) {
  task_start = theta0;
  if (omega.size() != theta0.size()) omega = Vector::Zero(theta0.size());
  if (omega_total.size() != theta0.size()) omega_total = Vector::Zero(theta0.size());
  started = true;
}

void SIState::accumulate(const Vector& theta_before, const Vector& theta_after,
                         const Vector& grad_total) {
  require(started, "SIState: begin_task before accumulating");
  require(theta_before.size() == omega.size() && theta_after.size() == omega.size() &&
              grad_total.size() == omega.size(),
          "SIState: mismatched parameter sets");
  omega.array() += (theta_after - theta_before).array() * (-grad_total).array();
}

void SIState::consolidate(const Vector& theta_end) {
  require(started, "SIState: begin_task before consolidating");
  const Vector delta = theta_end - task_start;
  omega_total.array() += omega.array() / (delta.array().square() + xi);
  omega.setZero();
  anchor = theta_end;
  task_start = theta_end;
}

Scalar SIState::penalty(const Vector& theta) const {
  if (!has_anchor()) return 0.0;
  return (omega_total.array() * (theta - anchor).array().square()).sum();
}

Vector SIState::penalty_grad(const Vector& theta) const {
  if (!has_anchor()) return Vector::Zero(theta.size());
  return (2.0 * omega_total.array() * (theta - anchor).array()).matrix();
}

// ---- blobs -------------------------------------------------------------------

namespace {

void put_vector(std::string& out, const Vector& v) {
  const std::uint64_t n = static_cast<std::uint64_t>(v.size());
  out.append(reinterpret_cast<const char*>(&n), 8);
  out.append(reinterpret_cast<const char*>(v.data()), sizeof(Scalar) * n);
}

Vector take_vector(const std::string& in, std::size_t& at) {
  std::uint64_t n;
  std::memcpy(&n, in.data() + at, 8);
  at += 8;
  Vector v(static_cast<Eigen::Index>(n));
  std::memcpy(v.data(), in.data() + at, sizeof(Scalar) * n);
  at += sizeof(Scalar) * n;
  return v;
}

}  // namespace

std::string FisherState::to_blob() const {
  std::string out;
  const std::uint64_t n = fisher.size();
  out.append(reinterpret_cast<const char*>(&n), 8);
  for (std::size_t t = 0; t < fisher.size(); ++t) {
    put_vector(out, fisher[t]);
    put_vector(out, anchor[t]);
  }
  put_vector(out, running_sum);
  out.append(reinterpret_cast<const char*>(&gamma), sizeof(Scalar));
  return out;
}

FisherState FisherState::from_blob(const std::string& blob) {
  FisherState s;
  std::size_t at = 0;
  std::uint64_t n;
  std::memcpy(&n, blob.data(), 8);
  at += 8;
  for (std::uint64_t t = 0; t < n; ++t) {
    s.fisher.push_back(take_vector(blob, at));
    s.anchor.push_back(take_vector(blob, at));
  }
  s.running_sum = take_vector(blob, at);
  std::memcpy(&s.gamma, blob.data() + at, sizeof(Scalar));
  return s;
}

std::string SIState::to_blob() const {
  std::string out;
  put_vector(out, omega);
  put_vector(out, task_start);
  put_vector(out, omega_total);
  put_vector(out, anchor);
  out.append(reinterpret_cast<const char*>(&xi), sizeof(Scalar));
  out.push_back(started ? 1 : 0);
  return out;
}

SIState SIState::from_blob(const std::string& blob) {
  SIState s;
  std::size_t at = 0;
  s.omega = take_vector(blob, at);
  s.task_start = take_vector(blob, at);
  s.omega_total = take_vector(blob, at);
  s.anchor = take_vector(blob, at);
  std::memcpy(&s.xi, blob.data() + at, sizeof(Scalar));
  at += sizeof(Scalar);
  s.started = blob[at] != 0;
  return s;
}

}  // namespace liqa::baselines
