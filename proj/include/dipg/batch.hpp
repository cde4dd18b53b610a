#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dipg/env.hpp"
#include "dipg/kernel.hpp"
#include "dipg/optimizer.hpp"
#include "dipg/policy.hpp"
#include "dipg/rng.hpp"

namespace dipg {

// A fixed set of trajectories collected by a behavior policy whose action
// probabilities were recorded at collection time. Actions are discrete.
struct BatchDataset {
  TrajectorySet trajectories;
  double gamma = 1.0;

  std::size_t size() const { return trajectories.size(); }
  Eigen::Index state_dim() const { return trajectories.front().steps.front().state.size(); }

  void validate() const {
    if (trajectories.empty()) throw std::invalid_argument("batch dataset is empty");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("batch gamma must lie in (0, 1]");
    const Eigen::Index d = trajectories.front().empty() ? 0 : state_dim();
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
      const auto& tr = trajectories[i];
      if (tr.empty()) throw std::invalid_argument("batch trajectory " + std::to_string(i) + " is empty");
      for (std::size_t t = 0; t < tr.size(); ++t) {
        const auto& st = tr.steps[t];
        const std::string where = "trajectory " + std::to_string(i) + " step " + std::to_string(t);
        if (st.state.size() != d) throw std::invalid_argument(where + ": state dimension mismatch");
        if (!st.action.is_discrete()) throw std::invalid_argument(where + ": batch actions must be discrete");
        if (!st.behavior_prob || !(*st.behavior_prob > 0.0 && *st.behavior_prob <= 1.0))
          throw std::invalid_argument(where + ": behavior probability must lie in (0, 1]");
      }
    }
  }
};

enum class LikelihoodMode { raw_product, geometric_mean };

inline std::string_view to_string(LikelihoodMode m) {
  return m == LikelihoodMode::raw_product ? "raw_product" : "geometric_mean";
}

inline LikelihoodMode parse_likelihood_mode(std::string_view s) {
  if (s == "raw_product") return LikelihoodMode::raw_product;
  if (s == "geometric_mean") return LikelihoodMode::geometric_mean;
  throw std::invalid_argument("unknown likelihood mode '" + std::string(s) + "'");
}

inline constexpr double kLikelihoodFloor = 1e-300;

struct TrajLikelihood {
  double value = 0.0;
  bool floored = false;  // underflowed (or zero probability) and clamped to 1e-300
};

// Policy factors only; the dynamics terms do not depend on θ.
inline TrajLikelihood traj_likelihood(const PolicyNet& net, const PolicyParams& params, const Trajectory& traj,
                                      LikelihoodMode mode) {
  if (traj.empty()) throw std::invalid_argument("traj_likelihood on an empty trajectory");
  double lp = traj_log_prob(net, params, traj);
  if (mode == LikelihoodMode::geometric_mean) lp /= static_cast<double>(traj.size());
  const double v = std::exp(lp);
  if (!(v >= kLikelihoodFloor)) return {kLikelihoodFloor, true};
  return {v, false};
}

struct LikelihoodVector {
  Eigen::VectorXd values;
  LikelihoodMode mode = LikelihoodMode::geometric_mean;
  std::vector<std::size_t> floored;  // indices clamped to the floor
};

inline LikelihoodVector likelihood_vector(const PolicyNet& net, const PolicyParams& params,
                                          const BatchDataset& data, LikelihoodMode mode) {
  LikelihoodVector out{Eigen::VectorXd(static_cast<Eigen::Index>(data.size())), mode, {}};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto l = traj_likelihood(net, params, data.trajectories[i], mode);
    out.values[static_cast<Eigen::Index>(i)] = l.value;
    if (l.floored) out.floored.push_back(i);
  }
  return out;
}

// Row i: ∇θ p(τ_i|θ) = p_i s(τ_i), times 1/T_i for the geometric mean.
// Floored entries are constants and get a zero row.
inline Eigen::MatrixXd likelihood_jacobian(const PolicyNet& net, const PolicyParams& params,
                                           const BatchDataset& data, const LikelihoodVector& L) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.size()), params.size());
  std::size_t next_floored = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (next_floored < L.floored.size() && L.floored[next_floored] == i) {
      ++next_floored;
      continue;
    }
    const auto& tr = data.trajectories[i];
    double scale = L.values[static_cast<Eigen::Index>(i)];
    if (L.mode == LikelihoodMode::geometric_mean) scale /= static_cast<double>(tr.size());
    GradientVector g = GradientVector::Zero(params.size());
    for (const auto& st : tr.steps) net.accumulate_grad_log_prob(params, st.state, st.action, scale, g);
    J.row(static_cast<Eigen::Index>(i)) = g.transpose();
  }
  return J;
}

struct ObjectiveValue {
  double value = 0.0;
  GradientVector gradient;
};

// J_Surrogate = Σ_i p(τ_i|θ).
inline ObjectiveValue surrogate(const PolicyNet& net, const PolicyParams& params, const BatchDataset& data,
                                LikelihoodMode mode) {
  const auto L = likelihood_vector(net, params, data, mode);
  const Eigen::MatrixXd J = likelihood_jacobian(net, params, data, L);
  return {L.values.sum(), J.colwise().sum().transpose()};
}

// Gaussian kernel between two likelihood vectors (dimension-normalized when
// cfg.normalize is set).
inline double likelihood_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const KernelConfig& cfg) {
  if (x.size() != y.size()) throw std::invalid_argument("likelihood vectors differ in length");
  return gaussian_kernel(x, y, cfg.bandwidth, cfg.normalize);
}

struct BatchSimilarity {
  double value = 0.0;  // s* = max_m k(p(T|θ), p(T|q_m))
  std::size_t argmax = 0;
};

// Similarity to the nearest known policy; ties go to the lowest index.
inline BatchSimilarity d_batch(const Eigen::VectorXd& likelihoods, const std::vector<Eigen::VectorXd>& known,
                               const KernelConfig& cfg) {
  if (known.empty()) throw std::invalid_argument("d_batch: empty known set (no diversity constraint)");
  BatchSimilarity best{-std::numeric_limits<double>::infinity(), 0};
  for (std::size_t m = 0; m < known.size(); ++m) {
    const double k = likelihood_kernel(likelihoods, known[m], cfg);
    if (k > best.value) best = {k, m};
  }
  return best;
}

inline BatchSimilarity d_batch(const PolicyNet& net, const PolicyParams& params, const std::vector<Policy>& known,
                               const BatchDataset& data, const KernelConfig& cfg, LikelihoodMode mode) {
  std::vector<Eigen::VectorXd> K;
  K.reserve(known.size());
  for (const auto& q : known) K.push_back(likelihood_vector(q.net, q.params, data, mode).values);
  return d_batch(likelihood_vector(net, params, data, mode).values, K, cfg);
}

struct BatchConfig {
  LikelihoodMode mode = LikelihoodMode::geometric_mean;
  double learning_rate = 1e-2;
  std::size_t iterations = 200;
  // Diversity weight per policy index; the last entry repeats.
  std::vector<double> alphas{1.0};
  AdamConfig adam;
  std::uint64_t seed = 0;

  double alpha_for(std::size_t policy_index) const {
    if (alphas.empty()) return 0.0;
    return alphas[std::min(policy_index, alphas.size() - 1)];
  }

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("batch learning_rate must be > 0");
    if (iterations < 1) throw std::invalid_argument("batch iterations must be >= 1");
    for (double a : alphas)
      if (!std::isfinite(a) || a < 0.0) throw std::invalid_argument("batch alphas must be finite and >= 0");
  }
};

// J_BATCH(θ) = J_Surrogate(θ) - α s*(θ). The similarity enters with a minus
// sign so that ascent moves away from the most similar known policy.
inline ObjectiveValue batch_objective(const PolicyNet& net, const PolicyParams& params, const BatchDataset& data,
                                      const std::vector<Eigen::VectorXd>& known, const KernelConfig& kernel,
                                      LikelihoodMode mode, double alpha) {
  const auto L = likelihood_vector(net, params, data, mode);
  const Eigen::MatrixXd J = likelihood_jacobian(net, params, data, L);
  ObjectiveValue out{L.values.sum(), J.colwise().sum().transpose()};
  if (known.empty() || alpha == 0.0) return out;
  const BatchSimilarity s = d_batch(L.values, known, kernel);
  // ∂k/∂x = -k (x - y) / (h² D), D = I when normalized.
  const double D = kernel.normalize ? static_cast<double>(L.values.size()) : 1.0;
  const Eigen::VectorXd dk =
      -s.value * (L.values - known[s.argmax]) / (kernel.bandwidth * kernel.bandwidth * D);
  out.value -= alpha * s.value;
  out.gradient -= alpha * (J.transpose() * dk);
  return out;
}

struct BatchTrainResult {
  Policy policy;
  std::vector<double> objective;  // per iteration, before the step
};

inline BatchTrainResult batch_train(const BatchDataset& data, const std::vector<Policy>& known,
                                    const PolicySpec& spec, const BatchConfig& cfg, const KernelConfig& kernel,
                                    double alpha, std::uint64_t run_seed) {
  data.validate();
  cfg.validate();
  kernel.validate();
  if (spec.head != HeadKind::categorical) throw std::invalid_argument("batch training needs a categorical policy");
  if (static_cast<Eigen::Index>(spec.input_dim) != data.state_dim())
    throw std::invalid_argument("policy input_dim does not match the dataset");

  PolicyNet net(spec);
  PolicyParams params = net.init_params(run_seed);
  Adam opt(params.size(), cfg.learning_rate, cfg.adam);
  std::vector<Eigen::VectorXd> K;
  for (const auto& q : known) K.push_back(likelihood_vector(q.net, q.params, data, cfg.mode).values);

  BatchTrainResult result{Policy(net, params), {}};
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto obj = batch_objective(net, params, data, K, kernel, cfg.mode, alpha);
    result.objective.push_back(obj.value);
    opt.ascend(params, obj.gradient);
    if (!params.allFinite()) throw std::runtime_error("batch training produced non-finite parameters");
  }
  result.policy.params = params;
  return result;
}

// Sequential batch DIPG: policy n is trained against policies 0..n-1.
inline std::vector<Policy> batch_dipg(const BatchDataset& data, std::size_t n_policies, const PolicySpec& spec,
                                      const BatchConfig& cfg, const KernelConfig& kernel) {
  if (n_policies < 1) throw std::invalid_argument("batch_dipg: number of policies must be >= 1");
  std::vector<Policy> known;
  for (std::size_t n = 0; n < n_policies; ++n) {
    const double alpha = n == 0 ? 0.0 : cfg.alpha_for(n);
    const std::uint64_t seed = derive_seed(cfg.seed, {0x6261746368000000ULL, n});
    known.push_back(batch_train(data, known, spec, cfg, kernel, alpha, seed).policy);
  }
  return known;
}

struct OpeEstimate {
  double value = 0.0;
  std::vector<double> ess;                      // per timestep, in (0, I]
  std::vector<std::size_t> zero_weight_steps;  // timesteps whose weights all vanished
};

// Consistent weighted per-decision importance sampling:
//   V = Σ_t γ^t Σ_i ρ_{i,0:t} r_{i,t} / Σ_i ρ_{i,0:t}
// A trajectory that has ended keeps its final cumulative ratio and
// contributes reward 0, so with π = π_b the estimate is exactly the mean
// discounted return.
inline OpeEstimate cwpdis(const PolicyNet& net, const PolicyParams& params, const BatchDataset& data) {
  data.validate();
  std::size_t T = 0;
  for (const auto& tr : data.trajectories) T = std::max(T, tr.size());
  const std::size_t I = data.size();

  std::vector<double> log_rho(I, 0.0);
  OpeEstimate out;
  out.ess.reserve(T);
  double discount = 1.0;
  std::vector<double> w(I);
  for (std::size_t t = 0; t < T; ++t) {
    double max_lr = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < I; ++i) {
      const auto& tr = data.trajectories[i];
      if (t < tr.size()) {
        const auto& st = tr.steps[t];
        log_rho[i] += net.log_prob(params, st.state, st.action) - std::log(*st.behavior_prob);
      }
      max_lr = std::max(max_lr, log_rho[i]);
    }
    if (!std::isfinite(max_lr)) {
      out.zero_weight_steps.push_back(t);
      out.ess.push_back(0.0);
      discount *= data.gamma;
      continue;
    }
    // Weights relative to the largest one; the common factor cancels.
    double sw = 0.0, sw2 = 0.0, swr = 0.0;
    for (std::size_t i = 0; i < I; ++i) {
      w[i] = std::exp(log_rho[i] - max_lr);
      const auto& tr = data.trajectories[i];
      const double r = t < tr.size() ? tr.steps[t].reward : 0.0;
      sw += w[i];
      sw2 += w[i] * w[i];
      swr += w[i] * r;
    }
    out.value += discount * swr / sw;
    out.ess.push_back(sw * sw / sw2);
    discount *= data.gamma;
  }
  return out;
}

// Mixes ε uniform exploration into a categorical policy; the reported
// log-probability is that of the mixture.
struct EpsilonMixture {
  const Policy* policy;
  double epsilon;

  ActionSample act(const State& s, Rng& rng) const {
    const Eigen::VectorXd p = mixture(s);
    std::discrete_distribution<int> dist(p.data(), p.data() + p.size());
    const int a = dist(rng);
    return {Action::discrete(static_cast<std::size_t>(a)), std::log(p[a])};
  }

  Eigen::VectorXd mixture(const State& s) const {
    const Eigen::VectorXd p = policy->net.probabilities(policy->params, s);
    return (1.0 - epsilon) * p.array() + epsilon / static_cast<double>(p.size());
  }
};

inline BatchDataset generate_batch(const Environment& env, const Policy& behavior, double epsilon,
                                   std::size_t episodes, std::uint64_t seed) {
  if (behavior.spec().head != HeadKind::categorical)
    throw std::invalid_argument("batch generation needs a categorical behavior policy");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("exploration epsilon must lie in [0, 1]");
  if (episodes < 1) throw std::invalid_argument("batch generation needs at least one episode");
  Rng rng = make_rng(seed, Stream::batch_generate);
  const EpsilonMixture mix{&behavior, epsilon};
  BatchDataset data;
  data.gamma = env.gamma();
  data.trajectories = rollouts(env, mix, rng, episodes);
  return data;
}

}  // namespace dipg
