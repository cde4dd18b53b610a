#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dipg/kernel.hpp"
#include "dipg/policy.hpp"

namespace dipg {

enum class MmdEstimator { biased, unbiased };

// Squared MMD between two trajectory samples. The biased (V-statistic) form
// keeps the i = j terms and is never negative; the unbiased (U-statistic)
// form drops them from the within-set sums.
inline double mmd2(const TrajectorySet& A, const TrajectorySet& B, const KernelConfig& cfg,
                   MmdEstimator estimator = MmdEstimator::biased) {
  const std::size_t min_size = estimator == MmdEstimator::biased ? 1 : 2;
  if (A.size() < min_size || B.size() < min_size)
    throw std::invalid_argument("mmd2: sample set too small for the chosen estimator");

  auto within = [&](const TrajectorySet& S) {
    double sum = 0.0;
    for (std::size_t i = 0; i < S.size(); ++i) {
      if (estimator == MmdEstimator::biased) sum += traj_kernel(S[i], S[i], cfg);
      for (std::size_t j = i + 1; j < S.size(); ++j) sum += 2.0 * traj_kernel(S[i], S[j], cfg);
    }
    const double n = static_cast<double>(S.size());
    return estimator == MmdEstimator::biased ? sum / (n * n) : sum / (n * (n - 1.0));
  };
  double cross = 0.0;
  for (const auto& a : A)
    for (const auto& b : B) cross += traj_kernel(a, b, cfg);
  cross /= static_cast<double>(A.size()) * static_cast<double>(B.size());
  return within(A) - 2.0 * cross + within(B);
}

// Q: one stored sample set per known policy.
using DiversitySet = std::vector<TrajectorySet>;

struct DiversityValue {
  double value = 0.0;
  std::size_t argmin = 0;
};

// min over known sample sets of the biased MMD²; ties go to the lowest index.
inline DiversityValue d_mmd(const TrajectorySet& P, const DiversitySet& Q, const KernelConfig& cfg) {
  if (Q.empty()) throw std::invalid_argument("d_mmd: empty diversity set (no diversity constraint)");
  DiversityValue best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t m = 0; m < Q.size(); ++m) {
    if (Q[m].empty()) throw std::invalid_argument("d_mmd: known policy has no stored trajectories");
    const double v = mmd2(P, Q[m], cfg, MmdEstimator::biased);
    if (v < best.value) best = {v, m};
  }
  return best;
}

// Per-trajectory coefficients of the likelihood-ratio estimate of
// ∇θ D_MMD against the nearest known set q*:
//   ∇D ≈ Σ_i w_i s(τ_i),
//   w_i = 2/(m(m-1)) Σ_{j≠i} k(τ_i, τ_j)  -  2/(m n) Σ_j k(τ_i, τq_j)
// which expands 1/(m(m-1)) Σ_{i≠j} k(τi,τj)[s(τi)+s(τj)] - 2/(mn) Σ k(τi,τq_j) s(τi).
// The q*-only term has no θ dependence and drops out.
struct DiversityWeights {
  std::vector<double> weights;
  double value = 0.0;
  std::size_t argmin = 0;
};

inline DiversityWeights diversity_weights(const TrajectorySet& P, const DiversitySet& Q,
                                          const KernelConfig& cfg) {
  if (P.size() < 2) throw std::invalid_argument("grad_d_mmd: need at least two policy samples");
  const DiversityValue dv = d_mmd(P, Q, cfg);
  const TrajectorySet& Qs = Q[dv.argmin];
  const double m = static_cast<double>(P.size());
  const double n = static_cast<double>(Qs.size());
  const Eigen::MatrixXd Kpp = gram(P, cfg);
  const Eigen::MatrixXd Kpq = cross_gram(P, Qs, cfg);

  DiversityWeights out{std::vector<double>(P.size()), dv.value, dv.argmin};
  for (std::size_t i = 0; i < P.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double within = Kpp.row(ii).sum() - Kpp(ii, ii);
    out.weights[i] = 2.0 * within / (m * (m - 1.0)) - 2.0 * Kpq.row(ii).sum() / (m * n);
  }
  return out;
}

struct DiversityGradient {
  GradientVector gradient;
  double value = 0.0;
  std::size_t argmin = 0;
};

inline DiversityGradient diversity_gradient(const PolicyNet& net, const PolicyParams& params,
                                            const TrajectorySet& P, const DiversitySet& Q,
                                            const KernelConfig& cfg) {
  const DiversityWeights dw = diversity_weights(P, Q, cfg);
  DiversityGradient out{GradientVector::Zero(params.size()), dw.value, dw.argmin};
  for (std::size_t i = 0; i < P.size(); ++i)
    for (const auto& st : P[i].steps)
      net.accumulate_grad_log_prob(params, st.state, st.action, dw.weights[i], out.gradient);
  return out;
}

inline GradientVector grad_d_mmd(const PolicyNet& net, const PolicyParams& params,
                                 const TrajectorySet& P, const DiversitySet& Q,
                                 const KernelConfig& cfg) {
  return diversity_gradient(net, params, P, Q, cfg).gradient;
}

}  // namespace dipg
