#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "liqa/baselines.hpp"

using namespace liqa;
using namespace liqa::baselines;

namespace {

Vector vec(std::initializer_list<Scalar> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (Scalar x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("method parsing") {
  CHECK(parse_method("ft") == Method::ft);
  CHECK(parse_method("online_ewc") == Method::online_ewc);
  CHECK(method_name(Method::jt_pr) == "jt_pr");
  CHECK_THROWS(parse_method("icarl"));
  CHECK(stores_previous_data(Method::jt));
  CHECK(stores_previous_data(Method::jt_pr));
  CHECK_FALSE(stores_previous_data(Method::liqa));
}

TEST_CASE("ft loss equals the plain mse") {
  CHECK(ft_loss(vec({0.2, 0.8}), vec({0.2, 0.8})) == doctest::Approx(0.0));
  CHECK(ft_loss(vec({0.5}), vec({1.0})) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(ft_loss(vec({0.1, 0.9}), vec({0.3, 0.5})) ==
        doctest::Approx(losses::mse(vec({0.1, 0.9}), vec({0.3, 0.5}))));
}

TEST_CASE("fisher diagonal of the scalar model") {
  // R(x) = theta * x with theta = 1 and one sample (x = 1, s = 0):
  // L = (theta x - s)^2, dL/dtheta = 2, so F = 4.
  auto grad = [](std::size_t) { return vec({2.0}); };
  const Vector f = fisher_diagonal(grad, 1);
  CHECK(f(0) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("fisher diagonal vanishes for a perfectly fit model") {
  auto grad = [](std::size_t) { return vec({0.0, 0.0, 0.0}); };
  const Vector f = fisher_diagonal(grad, 5);
  CHECK(f.norm() == doctest::Approx(0.0));
}

TEST_CASE("fisher diagonal matches the analytic per-sample oracle on 20 params") {
  // Linear model R(x) = theta^T x, per-sample loss (theta^T x - s)^2. The
  // implementation path estimates per-sample gradients by central finite
  // differences; the oracle loops samples with the analytic gradient.
  const Eigen::Index n_params = 20;
  const std::size_t n_samples = 16;
  Rng rng(5);
  const Vector theta = rng.normal_vector(n_params);
  std::vector<Vector> xs;
  std::vector<Scalar> ss;
  for (std::size_t i = 0; i < n_samples; ++i) {
    xs.push_back(rng.normal_vector(n_params));
    ss.push_back(rng.uniform());
  }

  auto loss_at = [&](const Vector& th, std::size_t i) {
    const Scalar r = th.dot(xs[i]) - ss[i];
    return r * r;
  };
  auto fd_grad = [&](std::size_t i) {
    Vector g(n_params);
    const Scalar h = 1e-6;
    for (Eigen::Index d = 0; d < n_params; ++d) {
      Vector hi = theta, lo = theta;
      hi(d) += h;
      lo(d) -= h;
      g(d) = (loss_at(hi, i) - loss_at(lo, i)) / (2.0 * h);
    }
    return g;
  };
  const Vector impl = fisher_diagonal(fd_grad, n_samples);

  Vector oracle = Vector::Zero(n_params);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Vector g = 2.0 * (theta.dot(xs[i]) - ss[i]) * xs[i];
    oracle.array() += g.array().square();
  }
  oracle /= static_cast<Scalar>(n_samples);

  for (Eigen::Index d = 0; d < n_params; ++d)
    CHECK(std::abs(impl(d) - oracle(d)) / std::max(std::abs(oracle(d)), 1e-12) < 1e-6);
}

TEST_CASE("ewc penalty") {
  FisherState state;
  state.add_task(vec({4.0}), vec({0.5}));

  CHECK(ewc_penalty(vec({0.5}), state) == doctest::Approx(0.0));
  CHECK(ewc_penalty(vec({1.0}), state) == doctest::Approx(0.5).epsilon(1e-12));

  // monotone non-decreasing in the displacement
  Scalar prev = 0.0;
  for (Scalar d = 0.0; d < 2.0; d += 0.1) {
    const Scalar p = ewc_penalty(vec({0.5 + d}), state);
    CHECK(p >= prev);
    prev = p;
  }

  // one anchor per task, summed over tasks
  state.add_task(vec({2.0}), vec({1.0}));
  CHECK(ewc_penalty(vec({2.0}), state) ==
        doctest::Approx(0.5 * 4.0 * 2.25 + 0.5 * 2.0 * 1.0).epsilon(1e-12));
  CHECK_THROWS(ewc_penalty(vec({1.0, 2.0}), state));
}

TEST_CASE("online ewc running sum with gamma = 1") {
  FisherState state;
  state.gamma = 1.0;
  state.add_task(vec({1.0}), vec({0.0}));
  state.add_task(vec({2.0}), vec({0.25}));
  CHECK(state.running_sum(0) == doctest::Approx(3.0));

  CHECK(online_ewc_penalty(vec({0.25}), state) == doctest::Approx(0.0));
  CHECK(online_ewc_penalty(vec({1.25}), state) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("online ewc equals twice the ewc penalty after one task") {
  FisherState state;
  state.gamma = 1.0;
  state.add_task(vec({4.0, 1.5}), vec({0.1, -0.2}));
  const Vector theta = vec({0.6, 0.3});
  CHECK(online_ewc_penalty(theta, state) ==
        doctest::Approx(2.0 * ewc_penalty(theta, state)).epsilon(1e-12));
}

TEST_CASE("online ewc decay discounts older tasks") {
  FisherState state;
  state.gamma = 0.5;
  state.add_task(vec({4.0}), vec({0.0}));
  state.add_task(vec({2.0}), vec({0.0}));
  CHECK(state.running_sum(0) == doctest::Approx(4.0 * 0.5 + 2.0));
}

TEST_CASE("si path integral accumulation") {
  SIState si;
  si.begin_task(vec({0.0}));
  // one step with delta theta = 0.1 against gradient -2 contributes 0.2
  si.accumulate(vec({0.0}), vec({0.1}), vec({-2.0}));
  CHECK(si.omega(0) == doctest::Approx(0.2).epsilon(1e-12));

  SIState empty;
  empty.begin_task(vec({1.0}));
  empty.consolidate(vec({1.0}));
  CHECK(empty.omega_total(0) == doctest::Approx(0.0));
}

TEST_CASE("si contributions are non-negative under plain gradient descent") {
  // L = theta^2 from theta = 1: the step is -eta * g, so each contribution is
  // (-eta g)(-g) = eta g^2 >= 0.
  SIState si;
  Scalar theta = 1.0;
  const Scalar eta = 0.05;
  si.begin_task(vec({theta}));
  for (int n = 0; n < 50; ++n) {
    const Scalar g = 2.0 * theta;
    const Scalar theta_new = theta - eta * g;
    const Scalar before = si.omega(0);
    si.accumulate(vec({theta}), vec({theta_new}), vec({g}));
    CHECK(si.omega(0) >= before);
    theta = theta_new;
  }
}

TEST_CASE("si consolidation") {
  SIState si;
  si.xi = 0.1;
  si.begin_task(vec({0.0}));
  si.accumulate(vec({0.0}), vec({0.1}), vec({-2.0}));  // omega = 0.2, delta = 0.1
  si.consolidate(vec({0.1}));
  CHECK(si.omega_total(0) == doctest::Approx(0.2 / 0.11).epsilon(1e-9));
  CHECK(si.omega(0) == doctest::Approx(0.0));

  // two identical tasks double the accumulated importance
  SIState twice;
  twice.xi = 0.1;
  twice.begin_task(vec({0.0}));
  twice.accumulate(vec({0.0}), vec({0.1}), vec({-2.0}));
  twice.consolidate(vec({0.1}));
  const Scalar after_one = twice.omega_total(0);
  twice.begin_task(vec({0.0}));
  twice.accumulate(vec({0.0}), vec({0.1}), vec({-2.0}));
  twice.consolidate(vec({0.1}));
  CHECK(twice.omega_total(0) == doctest::Approx(2.0 * after_one).epsilon(1e-12));
}

TEST_CASE("si penalty quadratic form") {
  SIState si;
  si.xi = 0.1;
  si.begin_task(vec({0.0}));
  si.accumulate(vec({0.0}), vec({0.1}), vec({-2.0}));
  si.consolidate(vec({0.1}));  // anchor = 0.1, omega_total ~ 1.8182

  CHECK(si.penalty(vec({0.1})) == doctest::Approx(0.0));
  CHECK(si.penalty(vec({0.3})) == doctest::Approx((0.2 / 0.11) * 0.04).epsilon(1e-9));
  CHECK(si.penalty(vec({0.5})) ==
        doctest::Approx(4.0 * si.penalty(vec({0.3}))).epsilon(1e-9));
}

TEST_CASE("si path integral matches the closed form on a 1-d quadratic") {
  // L = k/2 (theta - a)^2 under gradient descent theta <- theta - eta k (theta - a).
  // omega = sum_n eta k^2 (theta_{n-1} - a)^2 with theta_n - a = (theta_0 - a) r^n,
  // r = 1 - eta k, a geometric series with the closed form below.
  const Scalar k = 3.0, a = 0.7, eta = 0.01, theta0 = 2.0;
  const int n_steps = 100;

  SIState si;
  Scalar theta = theta0;
  si.begin_task(vec({theta}));
  for (int n = 0; n < n_steps; ++n) {
    const Scalar g = k * (theta - a);
    const Scalar theta_new = theta - eta * g;
    si.accumulate(vec({theta}), vec({theta_new}), vec({g}));
    theta = theta_new;
  }

  const Scalar r = 1.0 - eta * k;
  const Scalar closed_form = eta * k * k * (theta0 - a) * (theta0 - a) *
                             (1.0 - std::pow(r, 2.0 * n_steps)) / (1.0 - r * r);
  CHECK(std::abs(si.omega(0) - closed_form) < 1e-8);
}

TEST_CASE("jt loss over the pooled data") {
  // a degenerate pool equals the ft loss
  CHECK(jt_loss(vec({0.2, 0.4}), vec({0.1, 0.5})) ==
        doctest::Approx(ft_loss(vec({0.2, 0.4}), vec({0.1, 0.5}))));

  // pools of sizes 10 and 30 weight every sample equally
  Vector preds(40), scores(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    scores(i) = 0.0;
    preds(i) = (i < 10) ? 1.0 : 0.5;  // first pool err 1, second err 0.25
  }
  CHECK(jt_loss(preds, scores) ==
        doctest::Approx((10.0 * 1.0 + 30.0 * 0.25) / 40.0).epsilon(1e-12));
  CHECK(jt_loss(vec({0.3, 0.7}), vec({0.3, 0.7})) == doctest::Approx(0.0));
}

TEST_CASE("jt_pr adds the weighted replay term") {
  CHECK(jt_pr_loss(0.4, 0.0, 10.0) == doctest::Approx(0.4));
  CHECK(jt_pr_loss(0.4, 0.02, 10.0) == doctest::Approx(0.6).epsilon(1e-12));
  const losses::LossWeights defaults;
  CHECK(defaults.lambda_pr == doctest::Approx(10.0));
}

TEST_CASE("state blobs round trip") {
  FisherState fs;
  fs.gamma = 0.75;
  fs.add_task(vec({1.0, 2.0}), vec({0.1, 0.2}));
  fs.add_task(vec({0.5, 0.25}), vec({-0.1, 0.4}));
  const FisherState fs2 = FisherState::from_blob(fs.to_blob());
  CHECK(fs2.gamma == fs.gamma);
  CHECK(fs2.fisher.size() == 2);
  CHECK(fs2.running_sum == fs.running_sum);
  CHECK(fs2.anchor[1] == fs.anchor[1]);

  SIState si;
  si.xi = 0.1;
  si.begin_task(vec({0.0, 1.0}));
  si.accumulate(vec({0.0, 1.0}), vec({0.1, 0.9}), vec({-1.0, 1.0}));
  si.consolidate(vec({0.1, 0.9}));
  const SIState si2 = SIState::from_blob(si.to_blob());
  CHECK(si2.omega_total == si.omega_total);
  CHECK(si2.anchor == si.anchor);
  CHECK(si2.started == si.started);
}
