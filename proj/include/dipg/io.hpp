#pragma once

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dipg/env.hpp"
#include "dipg/pg.hpp"
#include "dipg/policy.hpp"

namespace dipg {

// Malformed input file; the message carries the offending line.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Trajectory CSV, one row per step:
//   traj_id,t,s0..s{d-1},a0..a{k-1},reward,behavior_prob,done
// A discrete action is its index in a single a0 column. behavior_prob is
// empty when absent; done is 1 on the final row of a terminated episode.
inline void write_trajectories_csv(std::ostream& os, const TrajectorySet& trajs) {
  Eigen::Index sd = 0, ad = 0;
  for (const auto& tr : trajs)
    if (!tr.empty()) {
      sd = tr.steps.front().state.size();
      ad = static_cast<Eigen::Index>(tr.steps.front().action.size());
      break;
    }
  os << "traj_id,t";
  for (Eigen::Index i = 0; i < sd; ++i) os << ",s" << i;
  for (Eigen::Index i = 0; i < ad; ++i) os << ",a" << i;
  os << ",reward,behavior_prob,done\n";
  for (std::size_t id = 0; id < trajs.size(); ++id) {
    const auto& tr = trajs[id];
    for (std::size_t t = 0; t < tr.size(); ++t) {
      const Step& st = tr.steps[t];
      if (st.state.size() != sd || static_cast<Eigen::Index>(st.action.size()) != ad)
        throw std::invalid_argument("trajectories in one file must share state and action dimensions");
      os << id << ',' << t;
      for (Eigen::Index i = 0; i < sd; ++i) os << ',' << format_double(st.state[i]);
      if (st.action.is_discrete()) {
        os << ',' << st.action.index();
      } else {
        for (Eigen::Index i = 0; i < ad; ++i) os << ',' << format_double(st.action.values()[i]);
      }
      os << ',' << format_double(st.reward) << ',';
      if (st.behavior_prob) os << format_double(*st.behavior_prob);
      os << ',' << ((tr.terminated && t + 1 == tr.size()) ? 1 : 0) << '\n';
    }
  }
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, std::size_t line, std::string_view column) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (s.empty() || r.ec != std::errc{} || r.ptr != end)
    throw FormatError("line " + std::to_string(line) + ": column '" + std::string(column) +
                      "': not a number: '" + std::string(s) + "'");
  return v;
}

inline std::size_t parse_index(std::string_view s, std::size_t line, std::string_view column) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (s.empty() || r.ec != std::errc{} || r.ptr != end)
    throw FormatError("line " + std::to_string(line) + ": column '" + std::string(column) +
                      "': not a non-negative integer: '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

// Parses the layout written above. Rows of one trajectory must be
// contiguous, with t counting up from 0; trajectory ids must count up from 0.
inline TrajectorySet read_trajectories_csv(std::istream& is, bool discrete_actions) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line)) throw FormatError("line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_commas(line);
  std::vector<std::string> cols(header.begin(), header.end());
  const std::size_t n = cols.size();
  if (n < 6 || cols[0] != "traj_id" || cols[1] != "t" || cols[n - 3] != "reward" ||
      cols[n - 2] != "behavior_prob" || cols[n - 1] != "done")
    throw FormatError("line 1: header must be traj_id,t,s0..,a0..,reward,behavior_prob,done");
  std::size_t sd = 0, ad = 0;
  std::size_t c = 2;
  while (c < n - 3 && cols[c] == "s" + std::to_string(sd)) ++sd, ++c;
  while (c < n - 3 && cols[c] == "a" + std::to_string(ad)) ++ad, ++c;
  if (c != n - 3 || sd == 0 || ad == 0)
    throw FormatError("line 1: expected state columns s0.. followed by action columns a0..");
  if (discrete_actions && ad != 1) throw FormatError("line 1: discrete actions take exactly one column");

  TrajectorySet out;
  bool closed = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_commas(line);
    const std::string at = "line " + std::to_string(lineno) + ": ";
    if (f.size() != n)
      throw FormatError(at + "expected " + std::to_string(n) + " fields, got " + std::to_string(f.size()));
    const std::size_t id = detail::parse_index(f[0], lineno, "traj_id");
    const std::size_t t = detail::parse_index(f[1], lineno, "t");
    if (id == out.size()) {
      if (t != 0) throw FormatError(at + "trajectory " + std::to_string(id) + " must start at t=0");
      out.emplace_back();
      closed = false;
    } else if (id + 1 != out.size()) {
      throw FormatError(at + "trajectory ids must be contiguous and increasing");
    } else if (t != out.back().size()) {
      throw FormatError(at + "expected t=" + std::to_string(out.back().size()));
    } else if (closed) {
      throw FormatError(at + "row after the terminal step of trajectory " + std::to_string(id));
    }
    Step st;
    st.state = State(static_cast<Eigen::Index>(sd));
    for (std::size_t i = 0; i < sd; ++i)
      st.state[static_cast<Eigen::Index>(i)] = detail::parse_double(f[2 + i], lineno, cols[2 + i]);
    if (discrete_actions) {
      st.action = Action::discrete(detail::parse_index(f[2 + sd], lineno, cols[2 + sd]));
    } else {
      Eigen::VectorXd a(static_cast<Eigen::Index>(ad));
      for (std::size_t i = 0; i < ad; ++i)
        a[static_cast<Eigen::Index>(i)] = detail::parse_double(f[2 + sd + i], lineno, cols[2 + sd + i]);
      st.action = Action::continuous(std::move(a));
    }
    st.reward = detail::parse_double(f[n - 3], lineno, "reward");
    if (!f[n - 2].empty()) st.behavior_prob = detail::parse_double(f[n - 2], lineno, "behavior_prob");
    if (f[n - 1] != "0" && f[n - 1] != "1") throw FormatError(at + "column 'done' must be 0 or 1");
    closed = f[n - 1] == "1";
    out.back().steps.push_back(std::move(st));
    out.back().terminated = closed;
  }
  return out;
}

// Policy files: the spec plus the flat parameter vector.
inline nlohmann::json spec_to_json(const PolicySpec& s) {
  return {{"input_dim", s.input_dim},
          {"hidden_sizes", s.hidden_sizes},
          {"head", s.head == HeadKind::categorical ? "categorical" : "gaussian"},
          {"output_dim", s.output_dim},
          {"action_low", s.action_low},
          {"action_high", s.action_high},
          {"initial_log_std", s.initial_log_std},
          {"bounded_mean", s.bounded_mean}};
}

inline PolicySpec spec_from_json(const nlohmann::json& j) {
  PolicySpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden_sizes = j.at("hidden_sizes").get<std::vector<std::size_t>>();
  const auto head = j.at("head").get<std::string>();
  if (head == "categorical") s.head = HeadKind::categorical;
  else if (head == "gaussian") s.head = HeadKind::gaussian;
  else throw FormatError("policy file: unknown head '" + head + "'");
  s.output_dim = j.at("output_dim").get<std::size_t>();
  s.action_low = j.at("action_low").get<double>();
  s.action_high = j.at("action_high").get<double>();
  s.initial_log_std = j.at("initial_log_std").get<double>();
  s.bounded_mean = j.at("bounded_mean").get<bool>();
  s.validate();
  return s;
}

inline nlohmann::json policy_to_json(const Policy& p) {
  return {{"format", "dipg-policy"},
          {"version", 1},
          {"spec", spec_to_json(p.spec())},
          {"params", std::vector<double>(p.params.data(), p.params.data() + p.params.size())}};
}

inline Policy policy_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "dipg-policy") throw FormatError("policy file: wrong format tag");
    if (j.at("version").get<int>() != 1) throw FormatError("policy file: unsupported version");
    const PolicySpec spec = spec_from_json(j.at("spec"));
    const auto v = j.at("params").get<std::vector<double>>();
    PolicyParams params = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    return Policy(PolicyNet(spec), std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("policy file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("policy file: ") + e.what());
  }
}

inline void write_policy(std::ostream& os, const Policy& p) { os << policy_to_json(p).dump(2) << '\n'; }

inline Policy read_policy(std::istream& is) {
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("policy file: ") + e.what());
  }
  return policy_from_json(j);
}

inline nlohmann::json metrics_to_json(const UpdateMetrics& m) {
  nlohmann::json j = {{"update", m.update},
                      {"env_steps", m.env_steps},
                      {"mean_return", m.mean_return},
                      {"d_mmd", nullptr},
                      {"argmin_q", nullptr},
                      {"grad_norm", m.grad_norm}};
  if (m.d_mmd) j["d_mmd"] = *m.d_mmd;
  if (m.argmin_q) j["argmin_q"] = *m.argmin_q;
  return j;
}

// One JSON object per line.
inline void write_metrics_line(std::ostream& os, const UpdateMetrics& m) { os << metrics_to_json(m).dump() << '\n'; }

}  // namespace dipg
