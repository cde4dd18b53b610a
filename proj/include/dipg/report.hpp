#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "dipg/env.hpp"
#include "dipg/kernel.hpp"
#include "dipg/policy.hpp"
#include "dipg/rng.hpp"

namespace dipg {

enum class SimilarityAggregate { mean, min };

inline std::string_view to_string(SimilarityAggregate a) { return a == SimilarityAggregate::min ? "min" : "mean"; }

inline SimilarityAggregate parse_similarity_aggregate(std::string_view s) {
  if (s == "mean") return SimilarityAggregate::mean;
  if (s == "min") return SimilarityAggregate::min;
  throw std::invalid_argument("unknown similarity aggregate '" + std::string(s) + "'");
}

// E evaluation episodes of policy `index`, from its own evaluation stream.
inline TrajectorySet evaluate(const Environment& env, const Policy& policy, std::size_t episodes,
                              std::uint64_t seed, std::size_t index) {
  Rng rng = make_rng(seed, Stream::evaluation, index);
  return rollouts(env, policy, rng, episodes);
}

// Mean kernel over all cross pairs. For a set against itself the i = j
// pairs are skipped; a single trajectory is compared with itself.
inline double set_similarity(const TrajectorySet& A, const TrajectorySet& B, const KernelConfig& cfg,
                             bool same_set) {
  if (A.empty() || B.empty()) throw std::invalid_argument("similarity of an empty trajectory set");
  if (same_set && A.size() == 1) return traj_kernel(A[0], A[0], cfg);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < A.size(); ++i)
    for (std::size_t j = 0; j < B.size(); ++j) {
      if (same_set && i == j) continue;
      sum += traj_kernel(A[i], B[j], cfg);
      ++count;
    }
  return sum / static_cast<double>(count);
}

enum class BarrierSide { none, left, right };

inline std::string_view to_string(BarrierSide s) {
  switch (s) {
    case BarrierSide::left: return "left";
    case BarrierSide::right: return "right";
    case BarrierSide::none: return "none";
  }
  return "none";
}

struct PolicySummary {
  double mean_return = 0.0;
  double std_return = 0.0;
  // Navigation only: episodes ending in each goal, and the goal reached in
  // at least half of the episodes.
  std::vector<std::size_t> goal_counts;
  std::optional<std::size_t> majority_goal;
  // Obstacle only: the side on which passing episodes cross the barrier row.
  BarrierSide side = BarrierSide::none;
  std::size_t passing_episodes = 0;
};

struct ComparisonReport {
  std::vector<PolicySummary> policies;
  Eigen::MatrixXd similarity;
  SimilarityAggregate aggregate = SimilarityAggregate::mean;
  // Aggregate over i != j entries; the diagonal entry when there is one policy.
  double cross_similarity = 0.0;
  std::optional<std::size_t> distinct_goals;

  double mean_return() const {
    double s = 0.0;
    for (const auto& p : policies) s += p.mean_return;
    return s / static_cast<double>(policies.size());
  }

  double best_return() const {
    double b = -std::numeric_limits<double>::infinity();
    for (const auto& p : policies) b = std::max(b, p.mean_return);
    return b;
  }
};

// Side of an obstacle crossing. Episodes that never get above the barrier
// do not count; a policy has a side only when at least half of its episodes
// pass, and the side is the sign of the mean x at the first state inside
// the barrier's y band.
inline std::pair<BarrierSide, std::size_t> barrier_side(const Environment& env, const TrajectorySet& episodes) {
  const auto& barrier = env.spec().nav.barrier;
  if (!barrier) return {BarrierSide::none, 0};
  double xsum = 0.0;
  std::size_t passing = 0;
  for (const auto& tr : episodes) {
    bool passed = false;
    for (const auto& st : tr.steps) passed = passed || st.state[1] > barrier->y_max;
    if (!passed) continue;
    for (const auto& st : tr.steps)
      if (st.state[1] >= barrier->y_min && st.state[1] <= barrier->y_max) {
        xsum += st.state[0];
        ++passing;
        break;
      }
  }
  if (passing == 0 || 2 * passing < episodes.size()) return {BarrierSide::none, passing};
  const double x = xsum / static_cast<double>(passing);
  return {x < 0.0 ? BarrierSide::left : (x > 0.0 ? BarrierSide::right : BarrierSide::none), passing};
}

inline PolicySummary summarize(const Environment& env, const TrajectorySet& episodes) {
  if (episodes.empty()) throw std::invalid_argument("summarize: no episodes");
  PolicySummary s;
  const double n = static_cast<double>(episodes.size());
  for (const auto& tr : episodes) s.mean_return += tr.total_reward();
  s.mean_return /= n;
  for (const auto& tr : episodes) s.std_return += std::pow(tr.total_reward() - s.mean_return, 2);
  s.std_return = std::sqrt(s.std_return / n);

  if (env.spec().kind != EnvKind::cartpole) {
    s.goal_counts.assign(env.spec().nav.goals.size(), 0);
    for (const auto& tr : episodes)
      if (tr.terminated) ++s.goal_counts[env.nearest_goal(tr.steps.back().state.head<2>()).second];
    for (std::size_t g = 0; g < s.goal_counts.size(); ++g)
      if (2 * s.goal_counts[g] >= episodes.size()) {
        s.majority_goal = g;
        break;
      }
    std::tie(s.side, s.passing_episodes) = barrier_side(env, episodes);
  }
  return s;
}

inline ComparisonReport compare_sets(const Environment& env, const std::vector<TrajectorySet>& episodes,
                                     const KernelConfig& kernel,
                                     SimilarityAggregate aggregate = SimilarityAggregate::mean) {
  if (episodes.empty()) throw std::invalid_argument("compare: no policies");
  const auto M = static_cast<Eigen::Index>(episodes.size());
  ComparisonReport r;
  r.aggregate = aggregate;
  for (const auto& e : episodes) r.policies.push_back(summarize(env, e));
  r.similarity = Eigen::MatrixXd(M, M);
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = i; j < M; ++j)
      r.similarity(i, j) = r.similarity(j, i) =
          set_similarity(episodes[static_cast<std::size_t>(i)], episodes[static_cast<std::size_t>(j)], kernel,
                         i == j);
  if (M == 1) {
    r.cross_similarity = r.similarity(0, 0);
  } else {
    double sum = 0.0, lo = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < M; ++i)
      for (Eigen::Index j = i + 1; j < M; ++j) {
        sum += r.similarity(i, j);
        lo = std::min(lo, r.similarity(i, j));
      }
    r.cross_similarity = aggregate == SimilarityAggregate::min ? lo : sum / static_cast<double>(M * (M - 1) / 2);
  }
  if (env.spec().kind != EnvKind::cartpole) {
    std::vector<bool> seen(env.spec().nav.goals.size(), false);
    for (const auto& p : r.policies)
      if (p.majority_goal) seen[*p.majority_goal] = true;
    r.distinct_goals = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
  }
  return r;
}

inline ComparisonReport compare_policies(const Environment& env, const std::vector<Policy>& policies,
                                         std::size_t episodes, std::uint64_t seed, const KernelConfig& kernel,
                                         SimilarityAggregate aggregate = SimilarityAggregate::mean) {
  std::vector<TrajectorySet> sets;
  for (std::size_t i = 0; i < policies.size(); ++i) sets.push_back(evaluate(env, policies[i], episodes, seed, i));
  return compare_sets(env, sets, kernel, aggregate);
}

inline nlohmann::json report_to_json(const ComparisonReport& r) {
  nlohmann::json j;
  j["policies"] = nlohmann::json::array();
  for (const auto& p : r.policies) {
    nlohmann::json e = {{"mean_return", p.mean_return}, {"std_return", p.std_return}};
    if (!p.goal_counts.empty()) {
      e["goal_counts"] = p.goal_counts;
      e["majority_goal"] = p.majority_goal ? nlohmann::json(*p.majority_goal) : nlohmann::json(nullptr);
      e["barrier_side"] = to_string(p.side);
      e["passing_episodes"] = p.passing_episodes;
    }
    j["policies"].push_back(e);
  }
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.similarity.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(r.similarity.cols()));
    for (Eigen::Index k = 0; k < r.similarity.cols(); ++k) row[static_cast<std::size_t>(k)] = r.similarity(i, k);
    rows.push_back(row);
  }
  j["similarity"] = rows;
  j["similarity_aggregate"] = to_string(r.aggregate);
  j["cross_similarity"] = r.cross_similarity;
  j["mean_return"] = r.mean_return();
  j["best_return"] = r.best_return();
  j["distinct_goals"] = r.distinct_goals ? nlohmann::json(*r.distinct_goals) : nlohmann::json(nullptr);
  return j;
}

}  // namespace dipg
