#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "dipg/env.hpp"

namespace dipg {

enum class Selector { states_only, actions_only, states_and_actions };

inline std::string_view to_string(Selector s) {
  switch (s) {
    case Selector::states_only: return "states_only";
    case Selector::actions_only: return "actions_only";
    case Selector::states_and_actions: return "states_and_actions";
  }
  return "?";
}

inline Selector parse_selector(std::string_view s) {
  if (s == "states_only") return Selector::states_only;
  if (s == "actions_only") return Selector::actions_only;
  if (s == "states_and_actions") return Selector::states_and_actions;
  throw std::invalid_argument("unknown kernel selector '" + std::string(s) + "'");
}

struct KernelConfig {
  double bandwidth = 1.0;
  Selector selector = Selector::states_and_actions;
  std::optional<std::size_t> max_steps;  // nullopt: unlimited
  bool normalize = true;                 // divide squared distance by feature dimension

  void validate() const {
    if (!(bandwidth > 0.0)) throw std::invalid_argument("kernel bandwidth must be > 0");
    if (max_steps && *max_steps < 1) throw std::invalid_argument("kernel max_steps must be >= 1");
  }
};

namespace detail {

inline std::size_t shared_steps(const Trajectory& a, const Trajectory& b, const KernelConfig& cfg) {
  if (a.empty() || b.empty()) throw std::invalid_argument("trajectory kernel on an empty trajectory");
  std::size_t n = std::min(a.size(), b.size());
  if (cfg.max_steps) n = std::min(n, *cfg.max_steps);
  return n;
}

inline bool use_states(Selector s) { return s != Selector::actions_only; }
inline bool use_actions(Selector s) { return s != Selector::states_only; }

}  // namespace detail

// Stacks the selected components of the first N shared steps of each
// trajectory, N = min(|a|, |b|, max_steps).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> featurize(const Trajectory& a, const Trajectory& b,
                                                             const KernelConfig& cfg) {
  const std::size_t n = detail::shared_steps(a, b, cfg);
  auto stack = [&](const Trajectory& t) {
    const auto& s0 = t.steps.front();
    Eigen::Index per = 0;
    if (detail::use_states(cfg.selector)) per += s0.state.size();
    if (detail::use_actions(cfg.selector)) per += s0.action.size();
    Eigen::VectorXd x(per * static_cast<Eigen::Index>(n));
    Eigen::Index k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& st = t.steps[i];
      if (detail::use_states(cfg.selector)) {
        x.segment(k, st.state.size()) = st.state;
        k += st.state.size();
      }
      if (detail::use_actions(cfg.selector)) {
        x.segment(k, st.action.size()) = st.action.values();
        k += st.action.size();
      }
    }
    return x;
  };
  auto xa = stack(a);
  auto xb = stack(b);
  if (xa.size() != xb.size())
    throw std::invalid_argument("trajectories have different state/action dimensions");
  return {std::move(xa), std::move(xb)};
}

// Gaussian kernel on featurized vectors.
inline double gaussian_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, double bandwidth,
                              bool normalize) {
  const double d2 = (x - y).squaredNorm();
  const double dn = normalize ? static_cast<double>(std::max<Eigen::Index>(x.size(), 1)) : 1.0;
  return std::exp(-d2 / (2.0 * bandwidth * bandwidth * dn));
}

// k(τ, τ') evaluated without materializing the stacked feature vectors.
inline double traj_kernel(const Trajectory& a, const Trajectory& b, const KernelConfig& cfg) {
  const std::size_t n = detail::shared_steps(a, b, cfg);
  double d2 = 0.0;
  Eigen::Index dim = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& sa = a.steps[i];
    const auto& sb = b.steps[i];
    if (detail::use_states(cfg.selector)) {
      if (sa.state.size() != sb.state.size())
        throw std::invalid_argument("trajectories have different state dimensions");
      d2 += (sa.state - sb.state).squaredNorm();
      dim += sa.state.size();
    }
    if (detail::use_actions(cfg.selector)) {
      if (sa.action.size() != sb.action.size())
        throw std::invalid_argument("trajectories have different action dimensions");
      d2 += (sa.action.values() - sb.action.values()).squaredNorm();
      dim += sa.action.size();
    }
  }
  const double dn = cfg.normalize ? static_cast<double>(std::max<Eigen::Index>(dim, 1)) : 1.0;
  return std::exp(-d2 / (2.0 * cfg.bandwidth * cfg.bandwidth * dn));
}

// K[i][j] = k(A_i, B_j).
inline Eigen::MatrixXd cross_gram(const TrajectorySet& A, const TrajectorySet& B, const KernelConfig& cfg) {
  Eigen::MatrixXd K(static_cast<Eigen::Index>(A.size()), static_cast<Eigen::Index>(B.size()));
  for (std::size_t i = 0; i < A.size(); ++i)
    for (std::size_t j = 0; j < B.size(); ++j)
      K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = traj_kernel(A[i], B[j], cfg);
  return K;
}

inline Eigen::MatrixXd gram(const TrajectorySet& A, const KernelConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(A.size());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = traj_kernel(A[static_cast<std::size_t>(i)], A[static_cast<std::size_t>(i)], cfg);
    for (Eigen::Index j = i + 1; j < n; ++j)
      K(i, j) = K(j, i) =
          traj_kernel(A[static_cast<std::size_t>(i)], A[static_cast<std::size_t>(j)], cfg);
  }
  return K;
}

}  // namespace dipg
