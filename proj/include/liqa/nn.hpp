#ifndef LIQA_NN_HPP
#define LIQA_NN_HPP

#include <string>
#include <utility>
#include <vector>

#include "liqa/core.hpp"

// Minimal dense-layer substrate with explicit forward caches and hand-written
// backward passes. Every trainable matrix lives in a named Tensor so that
// optimizers, freezing and checkpointing can address parameter groups by name.
namespace liqa::nn {

struct Tensor {
  std::string name;
  Matrix value;  // vectors are stored as n x 1
  Matrix grad;

  Tensor() = default;
  Tensor(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  std::uint64_t checksum() const { return liqa::checksum(value); }
};

// Affine layer y = x W^T + b^T operating on row-major batches (batch x in).
struct Dense {
  Tensor W;  // out x in
  Tensor b;  // out x 1
  Matrix cached_input;

  Dense() = default;
  Dense(const std::string& name, Eigen::Index in, Eigen::Index out)
      : W(name + "/W", out, in), b(name + "/b", out, 1) {}

  Eigen::Index in_dim() const { return W.value.cols(); }
  Eigen::Index out_dim() const { return W.value.rows(); }

  // He-style fan-in initialization; biases start at zero.
  void init(Rng& rng) {
    const Scalar stddev = std::sqrt(2.0 / static_cast<Scalar>(in_dim()));
    W.value = rng.normal_matrix(out_dim(), in_dim(), stddev);
    b.value.setZero();
    W.grad.setZero();
    b.grad.setZero();
  }

  Matrix forward(const Matrix& x) {
    cached_input = x;
    return apply(x);
  }
  // Inference path; leaves the training cache untouched.
  Matrix apply(const Matrix& x) const {
    require(x.cols() == in_dim(), "Dense " + W.name + ": expected input dim " +
                                      std::to_string(in_dim()) + ", got " + std::to_string(x.cols()));
    return (x * W.value.transpose()).rowwise() + b.value.col(0).transpose();
  }

  // Accumulates parameter gradients and returns dL/dx.
  Matrix backward(const Matrix& dy) {
    W.grad.noalias() += dy.transpose() * cached_input;
    b.grad.noalias() += dy.colwise().sum().transpose();
    return dy * W.value;
  }

  std::vector<Tensor*> params() { return {&W, &b}; }
};

struct Relu {
  Matrix cached_output;
  Matrix forward(const Matrix& x) {
    cached_output = x.cwiseMax(0.0);
    return cached_output;
  }
  static Matrix apply(const Matrix& x) { return x.cwiseMax(0.0); }
  Matrix backward(const Matrix& dy) const {
    return dy.cwiseProduct((cached_output.array() > 0.0).cast<Scalar>().matrix());
  }
};

struct Sigmoid {
  Matrix cached_output;
  Matrix forward(const Matrix& x) {
    cached_output = apply(x);
    return cached_output;
  }
  static Matrix apply(const Matrix& x) {
    return (1.0 / (1.0 + (-x.array()).exp())).matrix();
  }
  Matrix backward(const Matrix& dy) const {
    return dy.cwiseProduct(
        cached_output.cwiseProduct((Matrix::Ones(cached_output.rows(), cached_output.cols()) - cached_output)));
  }
};

// tanh(x / temperature); temperatures above 1 keep typical pre-activations in
// the near-linear region while preserving the hard bound.
struct Tanh {
  Scalar inv_temp = 1.0;
  Matrix cached_output;

  Tanh() = default;
  explicit Tanh(Scalar temperature) : inv_temp(1.0 / temperature) {}

  Matrix forward(const Matrix& x) {
    cached_output = apply(x, inv_temp);
    return cached_output;
  }
  static Matrix apply(const Matrix& x, Scalar inv_temp = 1.0) {
    return (x.array() * inv_temp).tanh().matrix();
  }
  Matrix backward(const Matrix& dy) const {
    return (dy.array() * (1.0 - cached_output.array().square()) * inv_temp).matrix();
  }
};

// Adam over an explicit tensor list. Freezing is realized by never registering
// a frozen tensor with any optimizer; a registered tensor is always stepped.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor*> params, Scalar lr, Scalar beta1 = 0.9, Scalar beta2 = 0.999,
       Scalar eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (Tensor* t : params_) {
      m_.push_back(Matrix::Zero(t->value.rows(), t->value.cols()));
      v_.push_back(Matrix::Zero(t->value.rows(), t->value.cols()));
    }
  }

  void step() {
    ++t_;
    const Scalar bc1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
    const Scalar bc2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Matrix& g = params_[i]->grad;
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
      const Matrix mhat = m_[i] / bc1;
      const Matrix vhat = v_[i] / bc2;
      params_[i]->value.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
    }
  }

  void zero_grad() {
    for (Tensor* t : params_) t->zero_grad();
  }

  Scalar lr() const { return lr_; }
  std::size_t size() const { return params_.size(); }

 private:
  std::vector<Tensor*> params_;
  std::vector<Matrix> m_, v_;
  Scalar lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

// Flat-vector helpers used by the regularization baselines, which treat the
// whole regressor as one parameter vector.
inline Eigen::Index flat_size(const std::vector<Tensor*>& params) {
  Eigen::Index n = 0;
  for (const Tensor* t : params) n += t->value.size();
  return n;
}

inline Vector flatten_values(const std::vector<Tensor*>& params) {
  Vector out(flat_size(params));
  Eigen::Index at = 0;
  for (const Tensor* t : params) {
    out.segment(at, t->value.size()) = Eigen::Map<const Vector>(t->value.data(), t->value.size());
    at += t->value.size();
  }
  return out;
}

inline Vector flatten_grads(const std::vector<Tensor*>& params) {
  Vector out(flat_size(params));
  Eigen::Index at = 0;
  for (const Tensor* t : params) {
    out.segment(at, t->grad.size()) = Eigen::Map<const Vector>(t->grad.data(), t->grad.size());
    at += t->grad.size();
  }
  return out;
}

inline void unflatten_values(const Vector& flat, std::vector<Tensor*>& params) {
  require(flat.size() == flat_size(params), "unflatten_values: size mismatch");
  Eigen::Index at = 0;
  for (Tensor* t : params) {
    Eigen::Map<Vector>(t->value.data(), t->value.size()) = flat.segment(at, t->value.size());
    at += t->value.size();
  }
}

inline void add_flat_to_grads(const Vector& flat, std::vector<Tensor*>& params) {
  require(flat.size() == flat_size(params), "add_flat_to_grads: size mismatch");
  Eigen::Index at = 0;
  for (Tensor* t : params) {
    Eigen::Map<Vector>(t->grad.data(), t->grad.size()) += flat.segment(at, t->grad.size());
    at += t->grad.size();
  }
}

}  // namespace liqa::nn

#endif  // LIQA_NN_HPP
