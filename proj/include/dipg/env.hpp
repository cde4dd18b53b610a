#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dipg/rng.hpp"

namespace dipg {

using State = Eigen::VectorXd;

// An action is either a discrete index or a real vector. Discrete actions
// expose their index as a one-element value vector so kernels and file
// formats can treat both uniformly.
class Action {
 public:
  Action() = default;

  static Action discrete(std::size_t index) {
    Action a;
    a.discrete_ = true;
    a.values_ = Eigen::VectorXd::Constant(1, static_cast<double>(index));
    return a;
  }

  static Action continuous(Eigen::VectorXd values) {
    Action a;
    a.discrete_ = false;
    a.values_ = std::move(values);
    return a;
  }

  bool is_discrete() const { return discrete_; }
  std::size_t index() const {
    if (!discrete_) throw std::logic_error("Action::index on continuous action");
    return static_cast<std::size_t>(values_[0]);
  }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::Index size() const { return values_.size(); }

  friend bool operator==(const Action& a, const Action& b) {
    return a.discrete_ == b.discrete_ && a.values_.size() == b.values_.size() &&
           a.values_ == b.values_;
  }

 private:
  bool discrete_ = true;
  Eigen::VectorXd values_;
};

struct Step {
  State state;
  Action action;
  double reward = 0.0;
  // Probability (or density) the generating policy assigned to `action`.
  std::optional<double> behavior_prob;

  friend bool operator==(const Step& a, const Step& b) {
    return a.state.size() == b.state.size() && a.state == b.state &&
           a.action == b.action && a.reward == b.reward &&
           a.behavior_prob == b.behavior_prob;
  }
};

struct Trajectory {
  std::vector<Step> steps;
  // True when the last step triggered the environment's termination
  // predicate (goal reached, pole fell); false on horizon truncation.
  bool terminated = false;

  std::size_t size() const { return steps.size(); }
  bool empty() const { return steps.empty(); }

  double total_reward() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.reward;
    return s;
  }

  double discounted_return(double gamma) const {
    double s = 0.0, w = 1.0;
    for (const auto& st : steps) {
      s += w * st.reward;
      w *= gamma;
    }
    return s;
  }

  friend bool operator==(const Trajectory& a, const Trajectory& b) {
    return a.terminated == b.terminated && a.steps == b.steps;
  }
};

using TrajectorySet = std::vector<Trajectory>;

enum class EnvKind { multi_goal, asymmetric_goals, obstacle, cartpole };

inline std::string_view to_string(EnvKind k) {
  switch (k) {
    case EnvKind::multi_goal: return "multi_goal";
    case EnvKind::asymmetric_goals: return "asymmetric_goals";
    case EnvKind::obstacle: return "obstacle";
    case EnvKind::cartpole: return "cartpole";
  }
  return "?";
}

inline EnvKind parse_env_kind(std::string_view s) {
  if (s == "multi_goal") return EnvKind::multi_goal;
  if (s == "asymmetric_goals") return EnvKind::asymmetric_goals;
  if (s == "obstacle") return EnvKind::obstacle;
  if (s == "cartpole") return EnvKind::cartpole;
  throw std::invalid_argument("unknown environment kind '" + std::string(s) + "'");
}

struct Rect {
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;

  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  bool strictly_contains(double x, double y) const {
    return x > x_min && x < x_max && y > y_min && y < y_max;
  }
};

struct NavigationGeometry {
  Eigen::Vector2d start = Eigen::Vector2d::Zero();
  std::vector<Eigen::Vector2d> goals;
  double goal_radius = 0.5;
  std::optional<Rect> barrier;
  double action_bound = 0.5;
  double start_noise = 0.1;
  double transition_noise = 0.01;
  double distance_scale = 0.1;
  double goal_bonus = 10.0;
  double barrier_penalty = 1.0;
};

struct CartpoleConstants {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double force = 10.0;
  double dt = 0.02;
  double x_limit = 2.4;
  double angle_limit = 12.0 * std::numbers::pi / 180.0;
  double start_range = 0.05;
};

struct EnvSpec {
  EnvKind kind = EnvKind::multi_goal;
  int horizon = 50;
  double gamma = 0.99;
  NavigationGeometry nav;
  CartpoleConstants cartpole;

  static EnvSpec defaults(EnvKind kind) {
    EnvSpec s;
    s.kind = kind;
    switch (kind) {
      case EnvKind::multi_goal:
        s.horizon = 50;
        s.nav.goals = {{5, 0}, {-5, 0}, {0, 5}, {0, -5}};
        break;
      case EnvKind::asymmetric_goals:
        s.horizon = 60;
        s.nav.goals = {{2, 0}, {-6, 0}};
        break;
      case EnvKind::obstacle:
        s.horizon = 60;
        s.nav.start = {0, -4};
        s.nav.goals = {{0, 4}};
        s.nav.barrier = Rect{-2, 2, -0.5, 0.5};
        break;
      case EnvKind::cartpole:
        s.horizon = 200;
        s.gamma = 1.0;
        break;
    }
    return s;
  }

  bool is_navigation() const { return kind != EnvKind::cartpole; }

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0))
      throw std::invalid_argument("gamma must lie in (0, 1]");
    if (is_navigation()) {
      if (nav.goals.empty()) throw std::invalid_argument("navigation env needs at least one goal");
      if (!(nav.goal_radius > 0.0)) throw std::invalid_argument("goal radius must be > 0");
      if (!(nav.action_bound > 0.0)) throw std::invalid_argument("action bound must be > 0");
      if (nav.start_noise < 0.0 || nav.transition_noise < 0.0)
        throw std::invalid_argument("noise std must be >= 0");
      if (nav.barrier && (nav.barrier->x_min >= nav.barrier->x_max ||
                          nav.barrier->y_min >= nav.barrier->y_max))
        throw std::invalid_argument("barrier rectangle is empty");
    } else {
      const auto& c = cartpole;
      if (!(c.cart_mass > 0 && c.pole_mass > 0 && c.half_length > 0 && c.dt > 0))
        throw std::invalid_argument("cartpole constants must be positive");
    }
  }
};

struct StepResult {
  State next;
  double reward = 0.0;
  bool done = false;
};

// Action space description shared by environments and policy heads.
struct ActionSpace {
  bool discrete = true;
  std::size_t count = 0;  // discrete: number of actions; continuous: dimension
  double low = 0.0, high = 0.0;
};

class Environment {
 public:
  explicit Environment(EnvSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  const EnvSpec& spec() const { return spec_; }
  int horizon() const { return spec_.horizon; }
  double gamma() const { return spec_.gamma; }

  std::size_t state_dim() const { return spec_.is_navigation() ? 2 : 4; }

  ActionSpace action_space() const {
    if (spec_.is_navigation())
      return {false, 2, -spec_.nav.action_bound, spec_.nav.action_bound};
    return {true, 2, 0.0, 0.0};
  }

  State reset(Rng& rng) const {
    if (spec_.is_navigation()) {
      std::normal_distribution<double> noise(0.0, 1.0);
      State s = spec_.nav.start;
      if (spec_.nav.start_noise > 0.0) {
        for (Eigen::Index d = 0; d < s.size(); ++d) s[d] += spec_.nav.start_noise * noise(rng);
      }
      return s;
    }
    std::uniform_real_distribution<double> u(-spec_.cartpole.start_range,
                                             spec_.cartpole.start_range);
    State s(4);
    for (Eigen::Index d = 0; d < 4; ++d) s[d] = u(rng);
    return s;
  }

  StepResult step(const State& state, const Action& action, Rng& rng) const {
    if (!state.allFinite()) throw std::domain_error("non-finite state");
    if (!action.values().allFinite()) throw std::domain_error("non-finite action");
    return spec_.is_navigation() ? step_navigation(state, action, rng)
                                 : step_cartpole(state, action);
  }

  // Distance from `p` to the nearest goal, and that goal's index.
  std::pair<double, std::size_t> nearest_goal(const Eigen::Vector2d& p) const {
    double best = std::numeric_limits<double>::infinity();
    std::size_t idx = 0;
    for (std::size_t g = 0; g < spec_.nav.goals.size(); ++g) {
      double d = (p - spec_.nav.goals[g]).norm();
      if (d < best) {
        best = d;
        idx = g;
      }
    }
    return {best, idx};
  }

  // Index of the goal whose radius contains `p`, if any.
  std::optional<std::size_t> goal_at(const Eigen::Vector2d& p) const {
    auto [d, g] = nearest_goal(p);
    if (d <= spec_.nav.goal_radius) return g;
    return std::nullopt;
  }

 private:
  StepResult step_navigation(const State& state, const Action& action, Rng& rng) const {
    const auto& nav = spec_.nav;
    if (action.is_discrete() || action.size() != 2)
      throw std::invalid_argument("navigation expects a 2-D continuous action");
    Eigen::Vector2d move = action.values().cwiseMax(-nav.action_bound).cwiseMin(nav.action_bound);
    Eigen::Vector2d next = state.head<2>() + move;
    if (nav.transition_noise > 0.0) {
      std::normal_distribution<double> noise(0.0, 1.0);
      next[0] += nav.transition_noise * noise(rng);
      next[1] += nav.transition_noise * noise(rng);
    }
    double penalty = 0.0;
    if (nav.barrier && nav.barrier->contains(next[0], next[1])) {
      next = state.head<2>();
      penalty = nav.barrier_penalty;
    }
    auto [dist, goal] = nearest_goal(next);
    StepResult r;
    r.next = next;
    r.reward = -dist * nav.distance_scale - penalty;
    if (dist <= nav.goal_radius) {
      r.reward += nav.goal_bonus;
      r.done = true;
    }
    return r;
  }

  StepResult step_cartpole(const State& s, const Action& action) const {
    const auto& c = spec_.cartpole;
    if (!action.is_discrete() || action.index() > 1)
      throw std::invalid_argument("cartpole expects discrete action 0 or 1");
    const double force = action.index() == 1 ? c.force : -c.force;
    const double total_mass = c.cart_mass + c.pole_mass;
    const double pole_ml = c.pole_mass * c.half_length;
    const double x = s[0], x_dot = s[1], theta = s[2], theta_dot = s[3];
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    const double temp = (force + pole_ml * theta_dot * theta_dot * sin_t) / total_mass;
    const double theta_acc =
        (c.gravity * sin_t - cos_t * temp) /
        (c.half_length * (4.0 / 3.0 - c.pole_mass * cos_t * cos_t / total_mass));
    const double x_acc = temp - pole_ml * theta_acc * cos_t / total_mass;

    StepResult r;
    r.next = State(4);
    r.next << x + c.dt * x_dot, x_dot + c.dt * x_acc, theta + c.dt * theta_dot,
        theta_dot + c.dt * theta_acc;
    r.reward = 1.0;
    r.done = std::abs(r.next[0]) > c.x_limit || std::abs(r.next[2]) > c.angle_limit;
    return r;
  }

  EnvSpec spec_;
};

inline Environment make_env(const EnvSpec& spec) { return Environment(spec); }

struct ActionSample {
  Action action;
  double log_prob = 0.0;
};

template <typename P>
concept ActingPolicy = requires(const P& p, const State& s, Rng& rng) {
  { p.act(s, rng) } -> std::convertible_to<ActionSample>;
};

// Runs one episode until termination or `horizon` steps.
template <ActingPolicy P>
Trajectory rollout(const Environment& env, const P& policy, Rng& rng, int horizon) {
  if (horizon < 1) throw std::invalid_argument("rollout horizon must be >= 1");
  Trajectory traj;
  traj.steps.reserve(static_cast<std::size_t>(horizon));
  State s = env.reset(rng);
  for (int t = 0; t < horizon; ++t) {
    ActionSample sample = policy.act(s, rng);
    StepResult r = env.step(s, sample.action, rng);
    traj.steps.push_back(Step{s, std::move(sample.action), r.reward, std::exp(sample.log_prob)});
    s = std::move(r.next);
    if (r.done) {
      traj.terminated = true;
      break;
    }
  }
  return traj;
}

template <ActingPolicy P>
Trajectory rollout(const Environment& env, const P& policy, Rng& rng) {
  return rollout(env, policy, rng, env.horizon());
}

template <ActingPolicy P>
TrajectorySet rollouts(const Environment& env, const P& policy, Rng& rng, std::size_t count) {
  TrajectorySet out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(rollout(env, policy, rng));
  return out;
}

}  // namespace dipg
