#ifndef LIQA_CORE_HPP
#define LIQA_CORE_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace liqa {

using Scalar = double;
using Matrix = Eigen::MatrixXd;  // rows are batch samples unless noted
using Vector = Eigen::VectorXd;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// splitmix64; used to derive independent seeds from (seed, tag) pairs so that
// every stage of a run owns its own stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Scalar uniform(Scalar lo = 0.0, Scalar hi = 1.0) {
    return std::uniform_real_distribution<Scalar>(lo, hi)(engine_);
  }
  Scalar normal(Scalar mean = 0.0, Scalar stddev = 1.0) {
    return std::normal_distribution<Scalar>(mean, stddev)(engine_);
  }
  // uniform integer in [0, n)
  std::int64_t index(std::int64_t n) {
    return std::uniform_int_distribution<std::int64_t>(0, n - 1)(engine_);
  }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Scalar stddev = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(0.0, stddev);
    return m;
  }
  Vector normal_vector(Eigen::Index n, Scalar stddev = 1.0) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(0.0, stddev);
    return v;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(index(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a over the raw bytes of a matrix; used by the freezing ledger and tests.
inline std::uint64_t checksum_bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t checksum(const Matrix& m) {
  return checksum_bytes(m.data(), sizeof(Scalar) * static_cast<std::size_t>(m.size()));
}

}  // namespace liqa

#endif  // LIQA_CORE_HPP
