#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "liqa/metrics.hpp"

using namespace liqa;
using metrics::EvalLedger;
using metrics::srcc;

namespace {

Vector vec(std::initializer_list<Scalar> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (Scalar x : v) out(i++) = x;
  return out;
}

// Independent O(n^2) oracle: counting-based average ranks, then Pearson.
Scalar srcc_oracle(const Vector& a, const Vector& b) {
  auto ranks = [](const Vector& v) {
    Vector r(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      Scalar less = 0.0, equal = 0.0;
      for (Eigen::Index j = 0; j < v.size(); ++j) {
        if (v(j) < v(i)) less += 1.0;
        if (j != i && v(j) == v(i)) equal += 1.0;
      }
      r(i) = 1.0 + less + equal / 2.0;
    }
    return r;
  };
  const Vector ra = ranks(a), rb = ranks(b);
  const Scalar ma = ra.mean(), mb = rb.mean();
  Scalar num = 0.0, da = 0.0, db = 0.0;
  for (Eigen::Index i = 0; i < ra.size(); ++i) {
    num += (ra(i) - ma) * (rb(i) - mb);
    da += (ra(i) - ma) * (ra(i) - ma);
    db += (rb(i) - mb) * (rb(i) - mb);
  }
  return num / std::sqrt(da * db);
}

}  // namespace

TEST_CASE("average ranks with ties") {
  const Vector r = metrics::average_ranks(vec({10, 20, 20, 30}));
  CHECK(r(0) == doctest::Approx(1.0));
  CHECK(r(1) == doctest::Approx(2.5));
  CHECK(r(2) == doctest::Approx(2.5));
  CHECK(r(3) == doctest::Approx(4.0));
}

TEST_CASE("srcc on monotone sequences") {
  CHECK(srcc(vec({1, 2, 3}), vec({10, 20, 30})) == doctest::Approx(1.0));
  CHECK(srcc(vec({1, 2, 3}), vec({30, 20, 10})) == doctest::Approx(-1.0));
  CHECK(srcc(vec({1, 2, 3, 4}), vec({1, 3, 2, 4})) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("srcc rejects degenerate inputs") {
  CHECK_THROWS(srcc(vec({1, 2}), vec({1, 2})));
  CHECK_THROWS(srcc(vec({1, 1, 1}), vec({1, 2, 3})));
  CHECK_THROWS(srcc(vec({1, 2, 3}), vec({5, 5, 5})));
  CHECK_THROWS(srcc(vec({1, 2, 3}), vec({1, 2})));
}

TEST_CASE("srcc matches the counting oracle on random inputs with ties") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> coarse(0, 6);
  std::uniform_real_distribution<double> fine(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng() % 40);
    Vector a(n), b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      // Quantized draws force ties in roughly half the trials.
      a(i) = (trial % 2 == 0) ? coarse(rng) / 4.0 : fine(rng);
      b(i) = (trial % 3 == 0) ? coarse(rng) / 4.0 : fine(rng);
    }
    if (a.minCoeff() == a.maxCoeff() || b.minCoeff() == b.maxCoeff()) continue;
    CHECK(srcc(a, b) == doctest::Approx(srcc_oracle(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("srcc invariance under monotone transforms") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector a(12), b(12);
    for (Eigen::Index i = 0; i < 12; ++i) {
      a(i) = unif(rng);
      b(i) = unif(rng);
    }
    const Scalar base = srcc(a, b);
    const Vector a_cubed = a.array().cube();
    CHECK(srcc(a_cubed, b) == doctest::Approx(base).epsilon(1e-12));
    const Vector a_neg = -a;
    CHECK(srcc(a_neg, b) == doctest::Approx(-base).epsilon(1e-12));
  }
}

TEST_CASE("correlation index") {
  EvalLedger ledger;
  ledger.add(0, 0, 0.5, 0);
  ledger.add(0, 1, -0.5, 0);
  CHECK(ledger.correlation_index(0) == doctest::Approx(0.5));

  EvalLedger ones;
  ones.add(0, 0, 1.0, 0);
  ones.add(0, 1, 1.0, 0);
  CHECK(ones.correlation_index(0) == doctest::Approx(1.0));

  EvalLedger zeros;
  zeros.add(0, 0, 0.0, 0);
  CHECK(zeros.correlation_index(0) == doctest::Approx(0.0));
  CHECK_THROWS(zeros.correlation_index(3));
}

TEST_CASE("forgetting of a single distortion") {
  EvalLedger ledger;
  ledger.add(0, 0, 0.8, 0);
  ledger.add(1, 0, 0.7, 0);
  ledger.add(2, 0, 0.6, 0);
  CHECK(ledger.forgetting_of(2, 0) == doctest::Approx(0.2).epsilon(1e-12));

  EvalLedger stable;
  stable.add(0, 0, 0.8, 0);
  stable.add(1, 0, 0.8, 0);
  CHECK(stable.forgetting_of(1, 0) == doctest::Approx(0.0));

  EvalLedger backward;
  backward.add(0, 0, 0.8, 0);
  backward.add(1, 0, 0.9, 0);
  CHECK(backward.forgetting_of(1, 0) == doctest::Approx(-0.1).epsilon(1e-12));

  // A distortion introduced at the current task has no prior measurement.
  EvalLedger fresh;
  fresh.add(0, 0, 0.5, 0);
  fresh.add(1, 0, 0.5, 0);
  fresh.add(1, 1, 0.5, 1);
  CHECK_THROWS(fresh.forgetting_of(1, 1));
  CHECK_THROWS(fresh.forgetting_of(0, 0));
}

TEST_CASE("forgetting uses the absolute-value maximum over the history") {
  EvalLedger ledger;
  ledger.add(0, 0, -0.9, 0);  // |SRCC| = 0.9 is the historical best
  ledger.add(1, 0, 0.3, 0);
  CHECK(ledger.forgetting_of(1, 0) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("forgetting index averages over previously seen distortions") {
  EvalLedger ledger;
  for (int j = 0; j < 3; ++j) ledger.add(0, j, 0.8, 0);
  ledger.add(1, 0, 0.6, 0);   // f = 0.2
  ledger.add(1, 1, 0.9, 0);   // f = -0.1
  ledger.add(1, 2, 0.6, 0);   // f = 0.2
  ledger.add(1, 3, 0.5, 1);   // introduced now, excluded
  CHECK(ledger.forgetting_index(1) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS(ledger.forgetting_index(0));
}

TEST_CASE("averaged indices") {
  EvalLedger ledger;
  ledger.add(0, 0, 0.6, 0);
  ledger.add(1, 0, 0.8, 0);
  const auto [c_bar, f_bar] = ledger.averaged_indices();
  CHECK(c_bar == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(f_bar == doctest::Approx(-0.2).epsilon(1e-12));

  EvalLedger single;
  single.add(0, 0, 0.5, 0);
  CHECK_THROWS(single.averaged_indices());
}

TEST_CASE("ledger csv round trip") {
  EvalLedger ledger;
  ledger.add(0, 0, 0.123456789012345, 0);
  ledger.add(1, 0, -0.5, 0);
  ledger.add(1, 1, 0.25, 1);
  std::stringstream ss;
  ledger.write_csv(ss);
  const EvalLedger loaded = EvalLedger::read_csv(ss);
  CHECK(loaded.values() == ledger.values());
  CHECK(loaded.intro_task(1) == 1);
}
