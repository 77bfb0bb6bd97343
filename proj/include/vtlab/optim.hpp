#pragma once

#include <string>
#include <vector>

#include "vtlab/matrix.hpp"

namespace vtlab {

// A named trainable tensor. Gradients accumulate across graph backward
// passes until zero_grad().
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() {
    if (grad.same_shape(value))
      grad.set_zero();
    else
      grad = Matrix(value.rows(), value.cols());
  }
};

class Adam {
 public:
  explicit Adam(std::vector<Param*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (Param* p : params_) slots_.push_back({Matrix(p->value.rows(), p->value.cols()),
                                               Matrix(p->value.rows(), p->value.cols())});
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (Param* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Param& p = *params_[i];
      if (p.grad.empty()) p.zero_grad();
      Matrix& m = slots_[i].m;
      Matrix& v = slots_[i].v;
      double* pm = m.data();
      double* pv = v.data();
      double* pw = p.value.data();
      const double* pg = p.grad.data();
      for (size_t j = 0; j < p.value.size(); ++j) {
        pm[j] = b1_ * pm[j] + (1.0 - b1_) * pg[j];
        pv[j] = b2_ * pv[j] + (1.0 - b2_) * pg[j] * pg[j];
        pw[j] -= lr_ * (pm[j] / bc1) / (std::sqrt(pv[j] / bc2) + eps_);
      }
    }
  }

 private:
  struct Slot {
    Matrix m, v;
  };
  std::vector<Param*> params_;
  std::vector<Slot> slots_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

inline uint64_t params_checksum(const std::vector<Param*>& params) {
  uint64_t h = 1469598103934665603ull;
  for (const Param* p : params) {
    h = fnv1a64(p->name.data(), p->name.size(), h);
    h = matrix_checksum(p->value, h);
  }
  return h;
}

}  // namespace vtlab
