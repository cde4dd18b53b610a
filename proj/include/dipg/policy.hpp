#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dipg/env.hpp"
#include "dipg/rng.hpp"

namespace dipg {

using PolicyParams = Eigen::VectorXd;
using GradientVector = Eigen::VectorXd;

enum class HeadKind { categorical, gaussian };

struct PolicySpec {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_sizes{32};
  HeadKind head = HeadKind::gaussian;
  // categorical: number of actions; gaussian: action dimension
  std::size_t output_dim = 2;
  // Gaussian-head action bounds (applied by the environment, recorded here
  // so a policy file fully describes its action space).
  double action_low = -1.0, action_high = 1.0;
  double initial_log_std = std::log(0.5);
  // Gaussian head: mean = center + half_range * tanh(output), keeping the
  // mean inside the action bounds.
  bool bounded_mean = false;

  static PolicySpec for_env(const Environment& env,
                            std::vector<std::size_t> hidden = {32}) {
    PolicySpec s;
    s.input_dim = env.state_dim();
    s.hidden_sizes = std::move(hidden);
    auto space = env.action_space();
    s.head = space.discrete ? HeadKind::categorical : HeadKind::gaussian;
    s.output_dim = space.count;
    s.action_low = space.low;
    s.action_high = space.high;
    return s;
  }

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("policy input_dim must be >= 1");
    for (auto h : hidden_sizes)
      if (h < 1) throw std::invalid_argument("hidden layer sizes must be >= 1");
    if (head == HeadKind::categorical && output_dim < 2)
      throw std::invalid_argument("categorical head needs at least 2 actions");
    if (head == HeadKind::gaussian && output_dim < 1)
      throw std::invalid_argument("gaussian head needs action_dim >= 1");
  }

  bool compatible_with(const Environment& env) const {
    auto space = env.action_space();
    return input_dim == env.state_dim() && (head == HeadKind::categorical) == space.discrete &&
           output_dim == space.count;
  }

  friend bool operator==(const PolicySpec&, const PolicySpec&) = default;
};

// Multilayer perceptron with tanh hidden units and either a softmax or a
// diagonal-Gaussian output head. Parameters live in one flat vector laid out
// layer by layer as [W (out x in, row-major), b (out)], followed by the
// per-dimension log-std values for the Gaussian head.
class PolicyNet {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit PolicyNet(PolicySpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    std::size_t in = spec_.input_dim;
    std::size_t offset = 0;
    auto add = [&](std::size_t out) {
      layers_.push_back({in, out, offset, offset + in * out});
      offset += in * out + out;
      in = out;
    };
    for (auto h : spec_.hidden_sizes) add(h);
    add(spec_.output_dim);
    log_std_offset_ = offset;
    num_params_ = offset + (spec_.head == HeadKind::gaussian ? spec_.output_dim : 0);
  }

  const PolicySpec& spec() const { return spec_; }
  std::size_t num_params() const { return num_params_; }

  PolicyParams init_params(std::uint64_t seed) const {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(Stream::init)}));
    std::normal_distribution<double> normal(0.0, 1.0);
    PolicyParams p = PolicyParams::Zero(static_cast<Eigen::Index>(num_params_));
    for (const auto& L : layers_) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(L.in));
      for (std::size_t i = 0; i < L.in * L.out; ++i)
        p[static_cast<Eigen::Index>(L.w_offset + i)] = scale * normal(rng);
    }
    if (spec_.head == HeadKind::gaussian)
      p.segment(static_cast<Eigen::Index>(log_std_offset_), static_cast<Eigen::Index>(spec_.output_dim))
          .setConstant(spec_.initial_log_std);
    return p;
  }

  // Network output: logits (categorical) or mean (gaussian).
  Eigen::VectorXd forward(const PolicyParams& params, const State& state) const {
    check(params, state);
    Eigen::VectorXd x = state;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      x = affine(params, layers_[l], x);
      if (l + 1 < layers_.size()) x = x.array().tanh().matrix();
    }
    if (!x.allFinite()) throw std::domain_error("policy network produced a non-finite output");
    if (squashed()) x = squash(x);
    return x;
  }

  Eigen::VectorXd log_std(const PolicyParams& params) const {
    if (spec_.head != HeadKind::gaussian) return {};
    return params.segment(static_cast<Eigen::Index>(log_std_offset_),
                          static_cast<Eigen::Index>(spec_.output_dim));
  }

  ActionSample act(const PolicyParams& params, const State& state, Rng& rng) const {
    Eigen::VectorXd out = forward(params, state);
    if (spec_.head == HeadKind::categorical) {
      Eigen::VectorXd logp = log_softmax(out);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double r = u(rng);
      double acc = 0.0;
      std::size_t a = static_cast<std::size_t>(out.size()) - 1;
      for (Eigen::Index i = 0; i < out.size(); ++i) {
        acc += std::exp(logp[i]);
        if (r < acc) {
          a = static_cast<std::size_t>(i);
          break;
        }
      }
      return {Action::discrete(a), logp[static_cast<Eigen::Index>(a)]};
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd ls = log_std(params);
    Eigen::VectorXd a(out.size());
    for (Eigen::Index d = 0; d < out.size(); ++d) a[d] = out[d] + std::exp(ls[d]) * normal(rng);
    double lp = gaussian_log_density(a, out, ls);
    return {Action::continuous(std::move(a)), lp};
  }

  double log_prob(const PolicyParams& params, const State& state, const Action& action) const {
    Eigen::VectorXd out = forward(params, state);
    if (spec_.head == HeadKind::categorical) {
      check_discrete(action);
      return log_softmax(out)[static_cast<Eigen::Index>(action.index())];
    }
    check_continuous(action);
    return gaussian_log_density(action.values(), out, log_std(params));
  }

  // Action probabilities of a categorical head.
  Eigen::VectorXd probabilities(const PolicyParams& params, const State& state) const {
    if (spec_.head != HeadKind::categorical)
      throw std::logic_error("probabilities() requires a categorical head");
    return log_softmax(forward(params, state)).array().exp().matrix();
  }

  GradientVector grad_log_prob(const PolicyParams& params, const State& state,
                               const Action& action) const {
    GradientVector g = GradientVector::Zero(params.size());
    accumulate_grad_log_prob(params, state, action, 1.0, g);
    return g;
  }

  // g += weight * d/dθ log π(action | state); returns log π(action | state).
  double accumulate_grad_log_prob(const PolicyParams& params, const State& state,
                                  const Action& action, double weight, GradientVector& g) const {
    check(params, state);
    // Forward pass keeping the activations of every layer input.
    std::vector<Eigen::VectorXd> inputs;
    inputs.reserve(layers_.size());
    Eigen::VectorXd x = state;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      inputs.push_back(x);
      x = affine(params, layers_[l], x);
      if (l + 1 < layers_.size()) x = x.array().tanh().matrix();
    }
    if (!x.allFinite()) throw std::domain_error("policy network produced a non-finite output");
    Eigen::VectorXd raw;
    if (squashed()) {
      raw = x;
      x = squash(x);
    }

    Eigen::VectorXd delta;  // d log π / d (output pre-activation)
    double lp = 0.0;
    if (spec_.head == HeadKind::categorical) {
      check_discrete(action);
      Eigen::VectorXd logp = log_softmax(x);
      const auto a = static_cast<Eigen::Index>(action.index());
      lp = logp[a];
      delta = -logp.array().exp().matrix();
      delta[a] += 1.0;
    } else {
      check_continuous(action);
      Eigen::VectorXd ls = log_std(params);
      Eigen::ArrayXd inv_var = (-2.0 * ls.array()).exp();
      Eigen::ArrayXd diff = action.values().array() - x.array();
      lp = gaussian_log_density(action.values(), x, ls);
      delta = (diff * inv_var).matrix();
      g.segment(static_cast<Eigen::Index>(log_std_offset_), ls.size()) +=
          weight * (diff.square() * inv_var - 1.0).matrix();
      if (squashed()) delta.array() *= half_range() * (1.0 - raw.array().tanh().square());
    }

    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& L = layers_[l];
      const Eigen::VectorXd& in = inputs[l];
      Eigen::Map<RowMatrix> gw(g.data() + L.w_offset, static_cast<Eigen::Index>(L.out),
                               static_cast<Eigen::Index>(L.in));
      gw.noalias() += weight * delta * in.transpose();
      g.segment(static_cast<Eigen::Index>(L.b_offset), static_cast<Eigen::Index>(L.out)) +=
          weight * delta;
      if (l == 0) break;
      Eigen::VectorXd back = weights(params, L).transpose() * delta;
      // `in` is tanh output of the previous layer: d tanh = 1 - tanh^2.
      delta = back.array() * (1.0 - in.array().square());
    }
    return lp;
  }

  static Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return (logits.array() - lse).matrix();
  }

  static double gaussian_log_density(const Eigen::VectorXd& a, const Eigen::VectorXd& mean,
                                     const Eigen::VectorXd& log_std) {
    static const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double lp = 0.0;
    for (Eigen::Index d = 0; d < a.size(); ++d) {
      const double z = (a[d] - mean[d]) * std::exp(-log_std[d]);
      lp += -0.5 * z * z - log_std[d] - half_log_2pi;
    }
    return lp;
  }

 private:
  bool squashed() const { return spec_.head == HeadKind::gaussian && spec_.bounded_mean; }
  double half_range() const { return 0.5 * (spec_.action_high - spec_.action_low); }
  Eigen::VectorXd squash(const Eigen::VectorXd& raw) const {
    const double center = 0.5 * (spec_.action_high + spec_.action_low);
    return (center + half_range() * raw.array().tanh()).matrix();
  }

  struct Layer {
    std::size_t in, out, w_offset, b_offset;
  };

  Eigen::Map<const RowMatrix> weights(const PolicyParams& p, const Layer& L) const {
    return {p.data() + L.w_offset, static_cast<Eigen::Index>(L.out), static_cast<Eigen::Index>(L.in)};
  }

  Eigen::VectorXd affine(const PolicyParams& p, const Layer& L, const Eigen::VectorXd& x) const {
    return weights(p, L) * x +
           p.segment(static_cast<Eigen::Index>(L.b_offset), static_cast<Eigen::Index>(L.out));
  }

  void check(const PolicyParams& params, const State& state) const {
    if (static_cast<std::size_t>(params.size()) != num_params_)
      throw std::invalid_argument("parameter vector has length " + std::to_string(params.size()) +
                                  ", expected " + std::to_string(num_params_));
    if (static_cast<std::size_t>(state.size()) != spec_.input_dim)
      throw std::invalid_argument("state dimension " + std::to_string(state.size()) +
                                  " does not match policy input_dim " +
                                  std::to_string(spec_.input_dim));
  }

  void check_discrete(const Action& a) const {
    if (!a.is_discrete() || a.index() >= spec_.output_dim)
      throw std::invalid_argument("action is not a valid discrete index for this policy");
  }
  void check_continuous(const Action& a) const {
    if (a.is_discrete() || static_cast<std::size_t>(a.size()) != spec_.output_dim)
      throw std::invalid_argument("action dimension does not match gaussian head");
  }

  PolicySpec spec_;
  std::vector<Layer> layers_;
  std::size_t log_std_offset_ = 0;
  std::size_t num_params_ = 0;
};

// A network together with concrete parameters; satisfies ActingPolicy.
struct Policy {
  PolicyNet net;
  PolicyParams params;

  Policy(PolicyNet n, PolicyParams p) : net(std::move(n)), params(std::move(p)) {
    if (static_cast<std::size_t>(params.size()) != net.num_params())
      throw std::invalid_argument("parameter vector does not match policy spec");
  }

  static Policy initialized(const PolicySpec& spec, std::uint64_t seed) {
    PolicyNet net(spec);
    auto p = net.init_params(seed);
    return {std::move(net), std::move(p)};
  }

  const PolicySpec& spec() const { return net.spec(); }
  ActionSample act(const State& s, Rng& rng) const { return net.act(params, s, rng); }
  double log_prob(const State& s, const Action& a) const { return net.log_prob(params, s, a); }
};

// Score of a whole trajectory: sum of per-step action log-prob gradients.
// Dynamics terms do not depend on the parameters and drop out.
inline GradientVector traj_score(const PolicyNet& net, const PolicyParams& params,
                                 const Trajectory& traj) {
  GradientVector g = GradientVector::Zero(params.size());
  for (const auto& st : traj.steps) net.accumulate_grad_log_prob(params, st.state, st.action, 1.0, g);
  return g;
}

inline double traj_log_prob(const PolicyNet& net, const PolicyParams& params,
                            const Trajectory& traj) {
  double lp = 0.0;
  for (const auto& st : traj.steps) lp += net.log_prob(params, st.state, st.action);
  return lp;
}

}  // namespace dipg
