#ifndef LIQA_TSNE_HPP
#define LIQA_TSNE_HPP

#include <vector>

#include "liqa/core.hpp"

// Exact (quadratic) t-SNE; adequate for the few hundred points produced by
// feature projections.
namespace liqa::tsne {

struct TsneOptions {
  Scalar perplexity = 30.0;
  int iters = 500;
  Scalar learning_rate = 200.0;
  Scalar early_exaggeration = 4.0;
  int exaggeration_iters = 100;
  std::uint64_t seed = 0;
};

// points: n x d. Returns an n x 2 embedding, deterministic under the seed.
Matrix embed(const Matrix& points, const TsneOptions& opts);

// Mean silhouette coefficient of a labeled embedding.
Scalar silhouette(const Matrix& embedding, const std::vector<int>& labels);

}  // namespace liqa::tsne

#endif  // LIQA_TSNE_HPP
