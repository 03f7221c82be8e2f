// Copyright 2026 The riskdiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "riskdiff/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace riskdiff::sim {

using nlohmann::json;

void EpisodeConfig::validate() const {
  recipe.validate();
  if (!(tolerance > 0.0)) throw std::invalid_argument("episode: tolerance must be > 0");
  if (max_cycles < 1) throw std::invalid_argument("episode: max_cycles must be >= 1");
  if (replan_horizon < 1 || replan_horizon > diffusion::kWaypoints)
    throw std::invalid_argument("episode: replan_horizon must be in [1, " + std::to_string(diffusion::kWaypoints) + "]");
  if (!std::isfinite(start.x) || !std::isfinite(start.y) || !std::isfinite(start.heading) ||
      !std::isfinite(goal.x()) || !std::isfinite(goal.y()))
    throw std::invalid_argument("episode: non-finite start or goal");
}

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::kGoalSuccess: return "goal_success";
    case Outcome::kSafetyFailure: return "safety_failure";
    case Outcome::kTimeout: return "timeout";
  }
  return "?";
}

Method Method::parse(const std::string& text, int steps) {
  Method m;
  m.name = text;
  m.projection = guidance::Projection::defaults_for(steps);
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  if (head == "vanilla" || head == "none") {
    m.kind = MethodKind::kVanilla;
  } else if (head == "classifier") {
    m.kind = MethodKind::kClassifier;
    if (colon != std::string::npos) {
      try {
        m.eta = parse_double(text.substr(colon + 1));
      } catch (const FormatError&) {
        throw std::invalid_argument("method '" + text + "': bad eta");
      }
      if (!(m.eta >= 0.0)) throw std::invalid_argument("method '" + text + "': eta must be >= 0");
    }
    return m;
  } else if (head == "filter") {
    m.kind = MethodKind::kFilter;
  } else if (head == "projection") {
    m.kind = MethodKind::kProjection;
  } else {
    throw std::invalid_argument("unknown method '" + text + "'");
  }
  if (colon != std::string::npos) throw std::invalid_argument("method '" + text + "' takes no parameter");
  return m;
}

risk::RiskMap episode_risk_map(const EpisodeConfig& config, const SimConfig& sim, int workers) {
  const auto belief = terrain::generate_terrain(config.recipe);
  risk::RiskConfig rc = sim.risk;
  rc.seed = derive_seed(config.recipe.seed, 1);
  return risk::build_risk_map(belief, sim.cost, rc, workers);
}

EpisodeResult run_episode(const EpisodeConfig& config, const diffusion::Policy& policy, const Method& method,
                          const risk::RiskMap& map, const SimConfig& sim) {
  config.validate();
  if (sim.batch < 1) throw std::invalid_argument("sim: batch must be >= 1");
  const risk::SafeSet safe(map, sim.risk.gamma);
  const risk::RiskSurrogate surrogate(map, sim.risk.gamma, sim.surrogate_margin);
  if (!safe.safe(config.start.position())) throw std::invalid_argument("episode: start pose is unsafe");

  guidance::GuidanceMode mode = guidance::Unguided{};
  if (method.kind == MethodKind::kClassifier) mode = guidance::Classifier{method.eta};
  if (method.kind == MethodKind::kProjection) mode = method.projection;
  const bool needs_safe = method.kind == MethodKind::kFilter || method.kind == MethodKind::kProjection;
  const double res = map.spec.resolution;

  EpisodeResult r;
  Pose pose = config.start;
  r.trajectory.push_back(pose);
  if ((pose.position() - config.goal).norm() <= config.tolerance) {
    r.outcome = Outcome::kGoalSuccess;
    return r;
  }

  for (int cycle = 0; cycle < config.max_cycles; ++cycle) {
    ++r.cycles;
    const diffusion::Context ctx = diffusion::make_context(map, pose, config.goal);
    const guidance::GuidanceEnv env{&safe, &surrogate, pose};
    std::vector<ActionSequence> cands =
        diffusion::sample(policy, ctx, mode, env, derive_seed(config.seed, static_cast<std::uint64_t>(cycle)), sim.batch);
    if (method.kind == MethodKind::kFilter)
      for (auto& c : cands) c = guidance::safety_filter(c, safe, pose);

    std::optional<std::size_t> best;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const ActionSequence& c = cands[i];
      if (c.cols() == 0) continue;
      if (needs_safe && !risk::is_safe(safe, c, pose)) continue;
      const Eigen::Matrix2Xd w = to_world(pose, c);
      const double d = (Vec2(w.col(w.cols() - 1)) - config.goal).norm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    if (!best) {
      r.actions.emplace_back(2, 0);  // nothing usable: stand still this cycle
      continue;
    }
    const ActionSequence& chosen = cands[*best];
    r.actions.push_back(chosen);
    const Eigen::Index h = std::min<Eigen::Index>(config.replan_horizon, chosen.cols());
    const std::vector<Vec2> pts = check_points(pose, chosen.leftCols(h), res);
    Vec2 prev = pose.position();
    double heading = pose.heading;
    for (std::size_t k = 1; k < pts.size(); ++k) {
      const Vec2 d = pts[k] - prev;
      if (d.norm() > 1e-12) heading = std::atan2(d.y(), d.x());
      r.path_length += d.norm();
      prev = pts[k];
      r.trajectory.push_back(Pose{prev.x(), prev.y(), heading});
      if (!safe.safe(prev)) {
        r.outcome = Outcome::kSafetyFailure;
        return r;
      }
      if ((prev - config.goal).norm() <= config.tolerance) {
        r.outcome = Outcome::kGoalSuccess;
        return r;
      }
    }
    pose = Pose{prev.x(), prev.y(), heading};
  }
  r.outcome = Outcome::kTimeout;
  return r;
}

Outcome replay_outcome(const EpisodeResult& result, const EpisodeConfig& config, const risk::SafeSet& safe) {
  for (const Pose& p : result.trajectory) {
    if (!safe.safe(p.position())) return Outcome::kSafetyFailure;
    if ((p.position() - config.goal).norm() <= config.tolerance) return Outcome::kGoalSuccess;
  }
  return Outcome::kTimeout;
}

const MethodMetrics& MetricsReport::at(const std::string& method) const {
  for (const auto& m : methods)
    if (m.method == method) return m;
  throw std::out_of_range("no metrics for method '" + method + "'");
}

namespace {

template <class F>
void parallel_for(int n, int workers, F&& f) {
  const int w = std::clamp(workers, 1, 64);
  if (w == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < w; ++t)
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += w) f(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

MetricsReport evaluate(const diffusion::Policy& policy, const std::vector<Method>& methods,
                       const std::vector<EpisodeConfig>& suite, const SimConfig& sim, int workers) {
  if (suite.empty()) throw std::invalid_argument("evaluate: empty suite");
  if (methods.empty()) throw std::invalid_argument("evaluate: no methods");
  for (const auto& e : suite) e.validate();

  const std::size_t nm = methods.size();
  std::vector<EpisodeRecord> records(suite.size() * nm);
  std::vector<std::string> errors(suite.size());
  parallel_for(static_cast<int>(suite.size()), workers, [&](int e) {
    try {
      const risk::RiskMap map = episode_risk_map(suite[static_cast<std::size_t>(e)], sim);
      for (std::size_t m = 0; m < nm; ++m) {
        const EpisodeResult r = run_episode(suite[static_cast<std::size_t>(e)], policy, methods[m], map, sim);
        records[static_cast<std::size_t>(e) * nm + m] = {e, methods[m].name, r.outcome, r.cycles, r.path_length};
      }
    } catch (const std::exception& ex) {
      errors[static_cast<std::size_t>(e)] = "episode " + std::to_string(e) + ": " + ex.what();
    }
  });
  for (const auto& err : errors)
    if (!err.empty()) throw std::invalid_argument(err);

  MetricsReport report;
  for (const Method& m : methods) report.methods.push_back({m.name, 0, 0, 0, 0});
  for (std::size_t i = 0; i < records.size(); ++i) {
    MethodMetrics& mm = report.methods[i % nm];
    ++mm.episodes;
    switch (records[i].outcome) {
      case Outcome::kGoalSuccess: ++mm.goal_success; break;
      case Outcome::kSafetyFailure: ++mm.safety_failure; break;
      case Outcome::kTimeout: ++mm.timeout; break;
    }
  }
  report.episodes = std::move(records);
  return report;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
  std::string out = "method,episodes,gs_percent,sf_percent,timeout_percent,goal_success,safety_failure,timeout\n";
  for (const auto& m : report.methods) {
    out += m.method + "," + std::to_string(m.episodes) + "," + fixed(m.gs_rate(), 2) + "," + fixed(m.sf_rate(), 2) +
           "," + fixed(m.timeout_rate(), 2) + "," + std::to_string(m.goal_success) + "," +
           std::to_string(m.safety_failure) + "," + std::to_string(m.timeout) + "\n";
  }
  return out;
}

std::string episodes_csv(const MetricsReport& report) {
  std::string out = "episode,method,outcome,cycles,path_length\n";
  for (const auto& r : report.episodes)
    out += std::to_string(r.episode) + "," + r.method + "," + to_string(r.outcome) + "," + std::to_string(r.cycles) +
           "," + fixed(r.path_length, 6) + "\n";
  return out;
}

std::string format_table(const MetricsReport& report) {
  std::size_t w = 6;
  for (const auto& m : report.methods) w = std::max(w, m.method.size());
  std::ostringstream os;
  auto pad = [](std::string s, std::size_t n) {
    s.resize(std::max(n, s.size()), ' ');
    return s;
  };
  os << pad("method", w) << "  episodes     GS %     SF %  timeout %\n";
  for (const auto& m : report.methods) {
    char line[128];
    std::snprintf(line, sizeof(line), "  %8d  %7.2f  %7.2f  %9.2f\n", m.episodes, m.gs_rate(), m.sf_rate(),
                  m.timeout_rate());
    os << pad(m.method, w) << line;
  }
  return os.str();
}

std::vector<EpisodeConfig> make_suite(const expert::RecipeFamily& family, int count, std::uint64_t seed,
                                      const SimConfig& sim, int workers) {
  if (count < 1) throw std::invalid_argument("suite: count must be >= 1");
  std::vector<std::optional<EpisodeConfig>> slots(static_cast<std::size_t>(count));
  parallel_for(count, workers, [&](int i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    for (int attempt = 0; attempt < 100; ++attempt) {
      const expert::Task task = expert::draw_task(family, rng);
      EpisodeConfig e;
      e.recipe = task.recipe;
      e.start = task.start;
      e.goal = task.goal;
      e.seed = rng.next();
      const risk::RiskMap map = episode_risk_map(e, sim);
      const risk::SafeSet safe(map, sim.risk.gamma);
      if (!safe.safe(e.start.position()) || !safe.safe(e.goal)) continue;
      try {
        expert::plan_path(map, sim.risk.gamma, e.start.position(), e.goal);
      } catch (const expert::NoPath&) {
        continue;
      }
      slots[static_cast<std::size_t>(i)] = std::move(e);
      return;
    }
  });
  std::vector<EpisodeConfig> out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]) throw std::invalid_argument("suite: no feasible task for episode " + std::to_string(i));
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

namespace {

void reject_unknown(const json& j, const std::vector<std::string>& keys, const std::string& what) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw std::invalid_argument(what + ": unknown key '" + it.key() + "'");
}

}  // namespace

std::vector<EpisodeConfig> suite_from_json_text(const std::string& text, const SimConfig& sim, int workers) {
  const json j = json::parse(text);
  reject_unknown(j, {"schema_version", "episodes", "family", "count", "seed"}, "suite");
  if (j.value("schema_version", 0) != 1) throw std::invalid_argument("suite: schema_version must be 1");
  if (j.contains("episodes")) {
    if (j.contains("family")) throw std::invalid_argument("suite: give either episodes or family, not both");
    std::vector<EpisodeConfig> out;
    for (const json& e : j.at("episodes")) {
      reject_unknown(e, {"recipe", "start", "goal", "tolerance", "max_cycles", "replan_horizon", "seed"}, "suite episode");
      EpisodeConfig c;
      c.recipe = terrain::recipe_from_json_text(e.at("recipe").dump());
      c.start = Pose{e.at("start").at(0).get<double>(), e.at("start").at(1).get<double>(),
                     e.at("start").at(2).get<double>()};
      c.goal = Vec2(e.at("goal").at(0).get<double>(), e.at("goal").at(1).get<double>());
      c.tolerance = e.value("tolerance", c.tolerance);
      c.max_cycles = e.value("max_cycles", c.max_cycles);
      c.replan_horizon = e.value("replan_horizon", c.replan_horizon);
      c.seed = e.value("seed", std::uint64_t{0});
      c.validate();
      out.push_back(std::move(c));
    }
    if (out.empty()) throw std::invalid_argument("suite: no episodes");
    return out;
  }
  expert::RecipeFamily family;
  const json& f = j.at("family");
  if (f.is_string()) {
    const std::string name = f.get<std::string>();
    if (name == "pit_suite")
      family = expert::RecipeFamily::pit_suite();
    else if (name == "training")
      family = expert::RecipeFamily::training();
    else
      throw std::invalid_argument("suite: unknown family '" + name + "'");
  } else {
    family = expert::family_from_json_text(f.dump());
  }
  return make_suite(family, j.at("count").get<int>(), j.value("seed", std::uint64_t{0}), sim, workers);
}

std::string suite_to_json_text(const std::vector<EpisodeConfig>& suite) {
  json j;
  j["schema_version"] = 1;
  j["episodes"] = json::array();
  for (const auto& e : suite) {
    j["episodes"].push_back({{"recipe", json::parse(terrain::recipe_to_json_text(e.recipe))},
                             {"start", {e.start.x, e.start.y, e.start.heading}},
                             {"goal", {e.goal.x(), e.goal.y()}},
                             {"tolerance", e.tolerance},
                             {"max_cycles", e.max_cycles},
                             {"replan_horizon", e.replan_horizon},
                             {"seed", e.seed}});
  }
  return j.dump(2);
}

std::vector<EpisodeConfig> load_suite(const std::string& path, const SimConfig& sim, int workers) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open suite file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return suite_from_json_text(ss.str(), sim, workers);
}

}  // namespace riskdiff::sim
