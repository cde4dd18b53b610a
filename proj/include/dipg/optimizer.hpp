#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace dipg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive moment estimation, applied as gradient *ascent*.
class Adam {
 public:
  Adam(Eigen::Index dim, double learning_rate, AdamConfig cfg = {})
      : lr_(learning_rate), cfg_(cfg), m_(Eigen::VectorXd::Zero(dim)), v_(Eigen::VectorXd::Zero(dim)) {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  }

  void ascend(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    if (grad.size() != params.size() || grad.size() != m_.size())
      throw std::invalid_argument("Adam: gradient dimension mismatch");
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    params.array() += lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
  }

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_;
  AdamConfig cfg_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

}  // namespace dipg
