#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dipg/diversity.hpp"
#include "dipg/env.hpp"
#include "dipg/optimizer.hpp"
#include "dipg/policy.hpp"
#include "dipg/rng.hpp"

namespace dipg {

enum class Algo { reinforce, ppo };

inline std::string_view to_string(Algo a) { return a == Algo::ppo ? "ppo" : "reinforce"; }

inline Algo parse_algo(std::string_view s) {
  if (s == "ppo") return Algo::ppo;
  if (s == "reinforce") return Algo::reinforce;
  throw std::invalid_argument("unknown algorithm '" + std::string(s) + "'");
}

enum class LrSchedule { constant, linear };
enum class Baseline { batch_mean, per_timestep };
enum class DiversityPlacement { gradient, advantage };

inline std::string_view to_string(LrSchedule s) { return s == LrSchedule::linear ? "linear" : "constant"; }
inline std::string_view to_string(Baseline b) { return b == Baseline::per_timestep ? "per_timestep" : "batch_mean"; }
inline std::string_view to_string(DiversityPlacement d) {
  return d == DiversityPlacement::advantage ? "advantage" : "gradient";
}

inline LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "linear") return LrSchedule::linear;
  throw std::invalid_argument("unknown lr_schedule '" + std::string(s) + "'");
}

inline Baseline parse_baseline(std::string_view s) {
  if (s == "batch_mean") return Baseline::batch_mean;
  if (s == "per_timestep") return Baseline::per_timestep;
  throw std::invalid_argument("unknown baseline '" + std::string(s) + "'");
}

inline DiversityPlacement parse_diversity_placement(std::string_view s) {
  if (s == "gradient") return DiversityPlacement::gradient;
  if (s == "advantage") return DiversityPlacement::advantage;
  throw std::invalid_argument("unknown diversity_placement '" + std::string(s) + "'");
}

struct TrainConfig {
  Algo algo = Algo::ppo;
  double learning_rate = 3e-4;
  // Diversity weight per policy index; the last entry repeats.
  std::vector<double> alphas{1.0};
  std::size_t steps_per_policy = 30000;
  std::size_t rollouts_per_update = 8;
  double clip_epsilon = 0.2;
  std::size_t epochs = 4;
  std::size_t minibatch_size = 64;
  std::size_t stored_trajectories = 16;
  AdamConfig adam;
  std::uint64_t seed = 0;

  // linear: η·max(0.05, 1 - used/budget)
  LrSchedule lr_schedule = LrSchedule::constant;
  Baseline baseline = Baseline::batch_mean;
  // gradient: α∇D added to every PPO minibatch gradient.
  // advantage: α·m·w_i (the same quantity in per-trajectory return units)
  // added to the returns of trajectory i before normalization.
  DiversityPlacement diversity_placement = DiversityPlacement::gradient;
  // When set, α fades linearly to 0 once this fraction of the budget is used.
  std::optional<double> alpha_decay_fraction;

  double alpha_for(std::size_t policy_index) const {
    if (alphas.empty()) return 0.0;
    return alphas[std::min(policy_index, alphas.size() - 1)];
  }

  double learning_rate_at(std::size_t env_steps) const {
    if (lr_schedule == LrSchedule::constant) return learning_rate;
    const double used = static_cast<double>(env_steps) / static_cast<double>(steps_per_policy);
    return learning_rate * std::max(0.05, 1.0 - used);
  }

  double alpha_scale_at(std::size_t env_steps) const {
    if (!alpha_decay_fraction) return 1.0;
    const double used = static_cast<double>(env_steps) / static_cast<double>(steps_per_policy);
    return std::max(0.0, 1.0 - used / *alpha_decay_fraction);
  }

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
      throw std::invalid_argument("clip_epsilon must lie in (0, 1)");
    if (rollouts_per_update < 2) throw std::invalid_argument("rollouts_per_update must be >= 2");
    if (steps_per_policy < 1) throw std::invalid_argument("steps_per_policy must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (minibatch_size < 1) throw std::invalid_argument("minibatch_size must be >= 1");
    if (stored_trajectories < 1) throw std::invalid_argument("stored_trajectories must be >= 1");
    for (double a : alphas)
      if (!std::isfinite(a) || a < 0.0) throw std::invalid_argument("alphas must be finite and >= 0");
    if (alpha_decay_fraction && !(*alpha_decay_fraction > 0.0 && *alpha_decay_fraction <= 1.0))
      throw std::invalid_argument("alpha_decay_fraction must lie in (0, 1]");
  }
};

struct UpdateMetrics {
  std::size_t update = 0;
  std::size_t env_steps = 0;
  double mean_return = 0.0;
  std::optional<double> d_mmd;
  std::optional<std::size_t> argmin_q;
  double grad_norm = 0.0;
};

struct PolicyRecord {
  Policy policy;
  TrajectorySet stored;
  std::vector<UpdateMetrics> metrics;
};

using PolicyCollection = std::vector<PolicyRecord>;

// g_t = Σ_{t' >= t} γ^{t'-t} r_{t'}
inline std::vector<double> returns_to_go(const Trajectory& traj, double gamma) {
  if (traj.empty()) throw std::invalid_argument("returns_to_go on an empty trajectory");
  std::vector<double> g(traj.size());
  double acc = 0.0;
  for (std::size_t t = traj.size(); t-- > 0;) {
    acc = traj.steps[t].reward + gamma * acc;
    g[t] = acc;
  }
  return g;
}

// g_t - b per step. batch_mean: b is the mean of g over every step in the
// batch. per_timestep: b_t is the mean of g_t over the rollouts that are
// still running at t.
inline std::vector<std::vector<double>> centered_returns(const TrajectorySet& rollouts, double gamma,
                                                         Baseline baseline) {
  if (rollouts.empty()) throw std::invalid_argument("empty rollout set");
  std::vector<std::vector<double>> G;
  G.reserve(rollouts.size());
  std::vector<double> tsum, tcount;
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& tr : rollouts) {
    G.push_back(returns_to_go(tr, gamma));
    if (tsum.size() < tr.size()) {
      tsum.resize(tr.size(), 0.0);
      tcount.resize(tr.size(), 0.0);
    }
    for (std::size_t t = 0; t < tr.size(); ++t) {
      tsum[t] += G.back()[t];
      tcount[t] += 1.0;
      sum += G.back()[t];
    }
    count += tr.size();
  }
  const double mean = sum / static_cast<double>(count);
  for (auto& g : G)
    for (std::size_t t = 0; t < g.size(); ++t)
      g[t] -= baseline == Baseline::per_timestep ? tsum[t] / tcount[t] : mean;
  return G;
}

// (1/m) Σ_i Σ_t ∇log π(a_t|s_t) A_it
inline GradientVector score_weighted_gradient(const PolicyNet& net, const PolicyParams& params,
                                              const TrajectorySet& rollouts,
                                              const std::vector<std::vector<double>>& advantages) {
  GradientVector g = GradientVector::Zero(params.size());
  const double inv_m = 1.0 / static_cast<double>(rollouts.size());
  for (std::size_t i = 0; i < rollouts.size(); ++i)
    for (std::size_t t = 0; t < rollouts[i].size(); ++t) {
      const auto& st = rollouts[i].steps[t];
      net.accumulate_grad_log_prob(params, st.state, st.action, inv_m * advantages[i][t], g);
    }
  return g;
}

// Mean over rollouts of Σ_t ∇log π(a_t|s_t) (g_t - b), with b the mean
// return-to-go over every step in the batch unless given explicitly.
inline GradientVector pg_gradient(const PolicyNet& net, const PolicyParams& params,
                                  const TrajectorySet& rollouts, double gamma,
                                  std::optional<double> baseline = std::nullopt) {
  if (rollouts.empty()) throw std::invalid_argument("pg_gradient: empty rollout set");
  std::vector<std::vector<double>> A;
  if (baseline) {
    for (const auto& tr : rollouts) {
      A.push_back(returns_to_go(tr, gamma));
      for (double& a : A.back()) a -= *baseline;
    }
  } else {
    A = centered_returns(rollouts, gamma, Baseline::batch_mean);
  }
  return score_weighted_gradient(net, params, rollouts, A);
}

// Flattened per-step view of a rollout batch for the clipped surrogate.
struct PpoBatch {
  std::vector<const Step*> steps;
  std::vector<double> old_log_prob;
  std::vector<double> advantage;
};

// Advantages: centered returns-to-go (plus the optional per-trajectory
// bonus), normalized to mean 0 / std 1 over the batch. Normalization is
// skipped when the std is below 1e-8.
inline PpoBatch make_ppo_batch(const PolicyNet& net, const PolicyParams& params,
                               const TrajectorySet& rollouts, double gamma,
                               Baseline baseline = Baseline::batch_mean,
                               const std::vector<double>* bonus = nullptr) {
  const auto A = centered_returns(rollouts, gamma, baseline);
  PpoBatch b;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const auto& tr = rollouts[i];
    for (std::size_t t = 0; t < tr.size(); ++t) {
      b.steps.push_back(&tr.steps[t]);
      b.old_log_prob.push_back(net.log_prob(params, tr.steps[t].state, tr.steps[t].action));
      b.advantage.push_back(A[i][t] + (bonus ? (*bonus)[i] : 0.0));
    }
  }
  const double n = static_cast<double>(b.advantage.size());
  const double mean = std::accumulate(b.advantage.begin(), b.advantage.end(), 0.0) / n;
  double var = 0.0;
  for (double a : b.advantage) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  if (sd >= 1e-8)
    for (double& a : b.advantage) a = (a - mean) / sd;
  return b;
}

struct SurrogateValue {
  double value = 0.0;
  GradientVector gradient;
};

// mean_t min(r_t Â_t, clip(r_t, 1-ε, 1+ε) Â_t) over the selected steps, and
// its gradient.
inline SurrogateValue ppo_surrogate(const PolicyNet& net, const PolicyParams& params, const PpoBatch& batch,
                                    std::span<const std::size_t> indices, double clip_epsilon) {
  SurrogateValue out{0.0, GradientVector::Zero(params.size())};
  if (indices.empty()) return out;
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (std::size_t k : indices) {
    const Step& st = *batch.steps[k];
    const double adv = batch.advantage[k];
    const double lp = net.log_prob(params, st.state, st.action);
    const double ratio = std::exp(lp - batch.old_log_prob[k]);
    const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    const double unclipped_obj = ratio * adv;
    const double clipped_obj = clipped * adv;
    out.value += inv * std::min(unclipped_obj, clipped_obj);
    // The gradient flows only where the unclipped branch is the minimum.
    if (unclipped_obj <= clipped_obj && adv != 0.0)
      net.accumulate_grad_log_prob(params, st.state, st.action, inv * ratio * adv, out.gradient);
  }
  return out;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

// cfg.epochs passes of shuffled minibatch ascent on the clipped surrogate.
// `extra_gradient` (the weighted diversity gradient at the pre-update
// parameters) is added to every minibatch gradient.
inline void ppo_update(const PolicyNet& net, PolicyParams& params, Adam& opt, const PpoBatch& batch,
                       const TrainConfig& cfg, Rng& rng, const GradientVector* extra_gradient = nullptr) {
  auto idx = iota_indices(batch.steps.size());
  const std::size_t mb = cfg.minibatch_size;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t start = 0; start < idx.size(); start += mb) {
      const std::size_t len = std::min(mb, idx.size() - start);
      auto g = ppo_surrogate(net, params, batch, std::span<const std::size_t>(idx.data() + start, len),
                             cfg.clip_epsilon)
                   .gradient;
      if (extra_gradient) g += *extra_gradient;
      opt.ascend(params, g);
      if (!params.allFinite()) throw std::runtime_error("ppo_update produced non-finite parameters");
    }
  }
}

inline void ppo_update(const PolicyNet& net, PolicyParams& params, Adam& opt, const TrajectorySet& rollouts,
                       double gamma, const TrainConfig& cfg, Rng& rng,
                       const GradientVector* extra_gradient = nullptr) {
  ppo_update(net, params, opt, make_ppo_batch(net, params, rollouts, gamma, cfg.baseline), cfg, rng,
             extra_gradient);
}

// Builds Q from the known policies' stored trajectories, sampling fresh
// ones for any record that has none.
inline DiversitySet build_diversity_set(const PolicyCollection& known, const Environment& env,
                                        std::size_t samples, Rng& rng) {
  DiversitySet Q;
  Q.reserve(known.size());
  for (const auto& rec : known)
    Q.push_back(rec.stored.empty() ? rollouts(env, rec.policy, rng, samples) : rec.stored);
  return Q;
}

struct TrainResult {
  Policy policy;
  std::vector<UpdateMetrics> metrics;
};

using MetricsSink = std::function<void(const UpdateMetrics&)>;

// One diversity-regularized training run: ascend J_PG + α D_MMD(π_θ, Q)
// from a fresh initialization until the environment-step budget is spent.
inline TrainResult train_diverse_policy(const PolicyCollection& known, const Environment& env,
                                        const PolicySpec& spec, const TrainConfig& cfg,
                                        const KernelConfig& kernel, double alpha, std::uint64_t run_seed,
                                        const MetricsSink& sink = {}) {
  cfg.validate();
  kernel.validate();
  if (!spec.compatible_with(env)) throw std::invalid_argument("policy spec does not match environment");

  PolicyNet net(spec);
  PolicyParams params = net.init_params(run_seed);
  Adam opt(params.size(), cfg.learning_rate, cfg.adam);
  Rng rollout_rng = make_rng(run_seed, Stream::rollout);
  Rng minibatch_rng = make_rng(run_seed, Stream::minibatch);
  Rng known_rng = make_rng(run_seed, Stream::known_samples);

  const DiversitySet Q = build_diversity_set(known, env, cfg.stored_trajectories, known_rng);

  TrainResult result{Policy(net, params), {}};
  std::size_t env_steps = 0;
  for (std::size_t update = 0; env_steps < cfg.steps_per_policy; ++update) {
    opt.set_learning_rate(cfg.learning_rate_at(env_steps));
    const double a = Q.empty() ? 0.0 : alpha * cfg.alpha_scale_at(env_steps);

    TrajectorySet batch;
    batch.reserve(cfg.rollouts_per_update);
    const Policy current(net, params);
    double ret = 0.0;
    for (std::size_t i = 0; i < cfg.rollouts_per_update; ++i) {
      batch.push_back(rollout(env, current, rollout_rng));
      env_steps += batch.back().size();
      ret += batch.back().total_reward();
    }

    UpdateMetrics um;
    um.update = update;
    um.env_steps = env_steps;
    um.mean_return = ret / static_cast<double>(batch.size());

    // Per-trajectory diversity weights, scaled so that Σ_i bonus_i s(τ_i)/m
    // equals α ∇D_MMD.
    std::vector<double> bonus;
    if (!Q.empty()) {
      if (a != 0.0) {
        const DiversityWeights dw = diversity_weights(batch, Q, kernel);
        um.d_mmd = dw.value;
        um.argmin_q = dw.argmin;
        for (double w : dw.weights) bonus.push_back(a * static_cast<double>(batch.size()) * w);
      } else {
        const DiversityValue dv = d_mmd(batch, Q, kernel);
        um.d_mmd = dv.value;
        um.argmin_q = dv.argmin;
      }
    }
    const std::vector<double>* bonus_ptr = bonus.empty() ? nullptr : &bonus;

    if (cfg.algo == Algo::reinforce) {
      // Without normalization both placements give the same estimate.
      auto A = centered_returns(batch, env.gamma(), cfg.baseline);
      if (bonus_ptr)
        for (std::size_t i = 0; i < A.size(); ++i)
          for (double& x : A[i]) x += bonus[i];
      const GradientVector g = score_weighted_gradient(net, params, batch, A);
      um.grad_norm = g.norm();
      opt.ascend(params, g);
    } else {
      const bool fold = bonus_ptr && cfg.diversity_placement == DiversityPlacement::advantage;
      std::optional<GradientVector> div;
      if (bonus_ptr && !fold) {
        std::vector<std::vector<double>> W;
        for (std::size_t i = 0; i < batch.size(); ++i) W.emplace_back(batch[i].size(), bonus[i]);
        div = score_weighted_gradient(net, params, batch, W);
      }
      const PpoBatch pb = make_ppo_batch(net, params, batch, env.gamma(), cfg.baseline, fold ? bonus_ptr : nullptr);
      const auto all = iota_indices(pb.steps.size());
      GradientVector g = ppo_surrogate(net, params, pb, all, cfg.clip_epsilon).gradient;
      if (div) g += *div;
      um.grad_norm = g.norm();
      ppo_update(net, params, opt, pb, cfg, minibatch_rng, div ? &*div : nullptr);
    }
    if (!params.allFinite()) throw std::runtime_error("training produced non-finite parameters");
    if (sink) sink(um);
    result.metrics.push_back(um);
  }
  result.policy.params = params;
  return result;
}

// Plain policy-gradient training (no known policies).
inline TrainResult train_policy(const Environment& env, const PolicySpec& spec, const TrainConfig& cfg,
                                std::uint64_t run_seed, const MetricsSink& sink = {}) {
  return train_diverse_policy({}, env, spec, cfg, KernelConfig{}, 0.0, run_seed, sink);
}

inline std::uint64_t policy_seed(std::uint64_t experiment_seed, std::size_t policy_index) {
  return derive_seed(experiment_seed, {0x706f6c6963790000ULL, policy_index});
}

inline TrajectorySet sample_stored(const Environment& env, const Policy& policy, std::uint64_t run_seed,
                                   std::size_t count) {
  Rng rng = make_rng(run_seed, Stream::stored);
  return rollouts(env, policy, rng, count);
}

using PolicySink = std::function<void(std::size_t, const PolicyRecord&)>;

// Sequentially trains N policies, each against the stored trajectories of
// all earlier ones. The first has no diversity term.
inline PolicyCollection dipg(const Environment& env, std::size_t n_policies, const PolicySpec& spec,
                             const TrainConfig& cfg, const KernelConfig& kernel,
                             const std::function<void(std::size_t, const UpdateMetrics&)>& metrics_sink = {},
                             const PolicySink& policy_sink = {}) {
  if (n_policies < 1) throw std::invalid_argument("dipg: number of policies must be >= 1");
  PolicyCollection known;
  for (std::size_t n = 0; n < n_policies; ++n) {
    const std::uint64_t run_seed = policy_seed(cfg.seed, n);
    const double alpha = n == 0 ? 0.0 : cfg.alpha_for(n);
    MetricsSink sink;
    if (metrics_sink) sink = [&, n](const UpdateMetrics& m) { metrics_sink(n, m); };
    TrainResult r = train_diverse_policy(known, env, spec, cfg, kernel, alpha, run_seed, sink);
    TrajectorySet stored = sample_stored(env, r.policy, run_seed, cfg.stored_trajectories);
    known.push_back(PolicyRecord{std::move(r.policy), std::move(stored), std::move(r.metrics)});
    if (policy_sink) policy_sink(n, known.back());
  }
  return known;
}

// Random-restart baseline: N independent runs without the diversity term.
inline PolicyCollection random_restarts(const Environment& env, std::size_t n_policies, const PolicySpec& spec,
                                        TrainConfig cfg, const KernelConfig& kernel) {
  cfg.alphas = {0.0};
  return dipg(env, n_policies, spec, cfg, kernel);
}

}  // namespace dipg
