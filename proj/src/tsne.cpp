#include "liqa/tsne.hpp"

#include <algorithm>
#include <cmath>

namespace liqa::tsne {

namespace {

// Conditional distribution row with entropy matched to log(perplexity) by
// binary search over the Gaussian precision.
Vector conditional_row(const Vector& sqdist, Eigen::Index self, Scalar perplexity) {
  const Scalar target_entropy = std::log(perplexity);
  Scalar beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<Scalar>::infinity();
  const Eigen::Index n = sqdist.size();
  Vector p(n);
  for (int iter = 0; iter < 64; ++iter) {
    Scalar sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      p(j) = (j == self) ? 0.0 : std::exp(-beta * sqdist(j));
      sum += p(j);
    }
    if (sum <= 0.0) sum = 1e-300;
    Scalar entropy = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      p(j) /= sum;
      if (p(j) > 1e-300) entropy -= p(j) * std::log(p(j));
    }
    const Scalar diff = entropy - target_entropy;
    if (std::abs(diff) < 1e-7) break;
    if (diff > 0) {  // too flat, sharpen
      beta_lo = beta;
      beta = std::isinf(beta_hi) ? beta * 2.0 : (beta + beta_hi) / 2.0;
    } else {
      beta_hi = beta;
      beta = (beta + beta_lo) / 2.0;
    }
  }
  return p;
}

}  // namespace

Matrix embed(const Matrix& points, const TsneOptions& opts) {
  const Eigen::Index n = points.rows();
  require(n >= 5, "tsne: need at least 5 points");
  const Scalar perplexity = std::min(opts.perplexity, static_cast<Scalar>(n - 1) / 3.0);

  // Pairwise squared distances.
  const Vector sq = points.rowwise().squaredNorm();
  Matrix dist = (-2.0 * points * points.transpose());
  dist.colwise() += sq;
  dist.rowwise() += sq.transpose();
  dist = dist.cwiseMax(0.0);

  Matrix P(n, n);
  for (Eigen::Index i = 0; i < n; ++i) P.row(i) = conditional_row(dist.row(i), i, perplexity);
  const Matrix Pt = P.transpose();
  P = (P + Pt) / (2.0 * static_cast<Scalar>(n));
  P = P.cwiseMax(1e-12);

  Rng rng(opts.seed);
  Matrix Y = rng.normal_matrix(n, 2, 1e-2);
  Matrix velocity = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);

  for (int iter = 0; iter < opts.iters; ++iter) {
    const Scalar exaggeration = (iter < opts.exaggeration_iters) ? opts.early_exaggeration : 1.0;

    // Student-t affinities in the embedding.
    const Vector ysq = Y.rowwise().squaredNorm();
    Matrix num = (-2.0 * Y * Y.transpose());
    num.colwise() += ysq;
    num.rowwise() += ysq.transpose();
    num = (1.0 + num.array()).inverse().matrix();
    num.diagonal().setZero();
    const Scalar qsum = std::max(num.sum(), 1e-12);

    Matrix grad = Matrix::Zero(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const Scalar coeff =
            4.0 * (exaggeration * P(i, j) - num(i, j) / qsum) * num(i, j);
        grad.row(i) += coeff * (Y.row(i) - Y.row(j));
      }
    }

    const Scalar momentum = (iter < 250) ? 0.5 : 0.8;
    for (Eigen::Index i = 0; i < n; ++i)
      for (int d = 0; d < 2; ++d) {
        const bool same_sign = (grad(i, d) > 0) == (velocity(i, d) > 0);
        gains(i, d) = std::max(0.01, same_sign ? gains(i, d) * 0.8 : gains(i, d) + 0.2);
        velocity(i, d) = momentum * velocity(i, d) - opts.learning_rate * gains(i, d) * grad(i, d);
        Y(i, d) += velocity(i, d);
      }
    const Eigen::RowVector2d center = Y.colwise().mean();  // eval before the aliasing subtract
    Y.rowwise() -= center;
  }
  return Y;
}

Scalar silhouette(const Matrix& embedding, const std::vector<int>& labels) {
  const Eigen::Index n = embedding.rows();
  require(static_cast<Eigen::Index>(labels.size()) == n, "silhouette: label count mismatch");
  std::vector<int> unique_labels(labels);
  std::sort(unique_labels.begin(), unique_labels.end());
  unique_labels.erase(std::unique(unique_labels.begin(), unique_labels.end()),
                      unique_labels.end());
  require(unique_labels.size() >= 2, "silhouette: need at least two classes");

  Scalar total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar a = 0.0;
    int a_count = 0;
    Scalar b = std::numeric_limits<Scalar>::infinity();
    for (int lbl : unique_labels) {
      if (lbl == labels[static_cast<std::size_t>(i)]) continue;
      Scalar mean_d = 0.0;
      int count = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (labels[static_cast<std::size_t>(j)] != lbl) continue;
        mean_d += (embedding.row(i) - embedding.row(j)).norm();
        ++count;
      }
      if (count > 0) b = std::min(b, mean_d / count);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i || labels[static_cast<std::size_t>(j)] != labels[static_cast<std::size_t>(i)])
        continue;
      a += (embedding.row(i) - embedding.row(j)).norm();
      ++a_count;
    }
    if (a_count == 0) continue;  // singleton cluster contributes 0
    a /= a_count;
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<Scalar>(n);
}

}  // namespace liqa::tsne
