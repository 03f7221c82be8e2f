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

#include "riskdiff/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace riskdiff::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_manifest(const std::string& dir, const RunInfo& info, const std::string& extra_json) {
  fs::create_directories(dir);
  json m;
  m["schema_version"] = 1;
  m["tool"] = "riskdiff";
  m["version"] = kVersion;
  m["command"] = info.command;
  m["seed"] = info.seed;
  m["config_hash"] = config_hash(info.config_text);
  m["config_file"] = "config.ini";
  m["rerun"] = "riskdiff --config config.ini";
  m["outputs"] = json::parse(extra_json);
  write_text((fs::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
  write_text((fs::path(dir) / "config.ini").string(), info.config_text);
}

expert::RecipeFamily load_family(const std::string& name_or_path) {
  if (name_or_path == "training") return expert::RecipeFamily::training();
  if (name_or_path == "pit_suite") return expert::RecipeFamily::pit_suite();
  return expert::family_from_json_text(read_text(name_or_path));
}

GenDataSummary gen_data(const GenDataOptions& options, const RunInfo& info) {
  if (options.out.empty()) throw std::invalid_argument("gen-data: output directory required");
  if (options.gen.episodes < 1) throw std::invalid_argument("gen-data: episodes must be >= 1");
  const auto episodes = expert::generate_episodes(options.gen);
  if (episodes.empty()) throw std::runtime_error("gen-data: no feasible episode could be generated");
  const expert::DatasetBuild build = expert::make_dataset(episodes, diffusion::kWaypoints, options.stride);
  json gen;
  gen["requested_episodes"] = options.gen.episodes;
  gen["generated_episodes"] = episodes.size();
  gen["family"] = json::parse(expert::family_to_json_text(options.gen.family));
  gen["seed"] = options.gen.seed;
  // The dataset manifest doubles as the run manifest.
  gen["tool"] = "riskdiff";
  gen["version"] = kVersion;
  gen["command"] = info.command;
  gen["config_hash"] = config_hash(info.config_text);
  gen["config_file"] = "config.ini";
  expert::save_dataset(options.out, episodes, diffusion::kWaypoints, options.stride, gen.dump());
  write_text((fs::path(options.out) / "config.ini").string(), info.config_text);
  return {static_cast<int>(episodes.size()), build.dataset.size(), build.skipped};
}

std::string checkpoint_path(const std::string& path_or_dir) {
  if (fs::is_directory(path_or_dir)) return (fs::path(path_or_dir) / "policy.ckpt").string();
  return path_or_dir;
}

TrainSummary train(const TrainOptions& options, const RunInfo& info) {
  if (options.out.empty()) throw std::invalid_argument("train: output directory required");
  const diffusion::Dataset data = expert::load_dataset(options.data);
  const auto schedule = diffusion::make_linear_schedule(options.steps);
  const diffusion::TrainResult r = diffusion::train(data, schedule, options.train);
  fs::create_directories(options.out);
  diffusion::save_checkpoint(r.policy, (fs::path(options.out) / "policy.ckpt").string());
  std::string loss = "epoch,loss\n";
  for (std::size_t i = 0; i < r.loss_trace.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu,%.8f\n", i + 1, r.loss_trace[i]);
    loss += buf;
  }
  write_text((fs::path(options.out) / "loss.csv").string(), loss);
  write_manifest(options.out, info, json{{"checkpoint", "policy.ckpt"}, {"loss", "loss.csv"}}.dump());
  return {data.size(), r.loss_trace.front(), r.loss_trace.back()};
}

std::vector<sim::Method> make_methods(const std::vector<std::string>& names, int steps, double eta, int t1, int t2,
                                      double beta_mix) {
  if (names.empty()) throw std::invalid_argument("eval: no methods given");
  std::vector<sim::Method> out;
  for (const std::string& n : names) {
    sim::Method m = sim::Method::parse(n, steps);
    if (m.kind == sim::MethodKind::kClassifier && n.find(':') == std::string::npos) m.eta = eta;
    if (t1 >= 0) m.projection.t1 = t1;
    if (t2 >= 0) m.projection.t2 = t2;
    m.projection.beta_mix = beta_mix;
    if (m.kind == sim::MethodKind::kProjection) m.projection.validate(steps);
    for (const auto& prev : out)
      if (prev.name == m.name) throw std::invalid_argument("eval: duplicate method '" + n + "'");
    out.push_back(std::move(m));
  }
  return out;
}

sim::MetricsReport eval(const EvalOptions& options, const RunInfo& info) {
  if (options.out.empty()) throw std::invalid_argument("eval: output directory required");
  const diffusion::Policy policy = diffusion::load_checkpoint(checkpoint_path(options.checkpoint));
  const auto methods = make_methods(options.methods, policy.schedule.steps, options.eta, options.t1, options.t2,
                                    options.beta_mix);
  // A generated suite without its own seed follows the master seed.
  json suite_json = json::parse(read_text(options.suite));
  if (suite_json.is_object() && suite_json.contains("family") && !suite_json.contains("seed"))
    suite_json["seed"] = info.seed;
  const auto suite = sim::suite_from_json_text(suite_json.dump(), options.sim, options.workers);
  const sim::MetricsReport report = sim::evaluate(policy, methods, suite, options.sim, options.workers);
  fs::create_directories(options.out);
  write_text((fs::path(options.out) / "metrics.csv").string(), sim::metrics_csv(report));
  write_text((fs::path(options.out) / "episodes.csv").string(), sim::episodes_csv(report));
  write_text((fs::path(options.out) / "table.txt").string(), sim::format_table(report));
  write_text((fs::path(options.out) / "suite.json").string(), sim::suite_to_json_text(suite) + "\n");
  write_manifest(options.out, info,
                 json{{"metrics", "metrics.csv"}, {"episodes", "episodes.csv"}, {"table", "table.txt"},
                      {"suite", "suite.json"}}
                     .dump());
  return report;
}

risk::RiskMap riskmap(const RiskMapOptions& options, const RunInfo& info) {
  if (options.out.empty()) throw std::invalid_argument("riskmap: output directory required");
  const auto belief = terrain::load_terrain(options.terrain);
  const risk::RiskMap map = risk::build_risk_map(belief, options.cost, options.risk, options.workers);
  fs::create_directories(options.out);
  risk::save_risk_map(map, (fs::path(options.out) / "risk.grid").string());
  write_manifest(options.out, info, json{{"risk_map", "risk.grid"}}.dump());
  return map;
}

std::vector<ActionSequence> sample(const SampleOptions& options, const RunInfo& info) {
  if (options.out.empty()) throw std::invalid_argument("sample: output directory required");
  const diffusion::Policy policy = diffusion::load_checkpoint(checkpoint_path(options.checkpoint));
  const auto belief = terrain::load_terrain(options.terrain);
  const risk::RiskMap map = risk::build_risk_map(belief, options.cost, options.risk, options.workers);
  const risk::SafeSet safe(map, options.risk.gamma);
  const risk::RiskSurrogate surrogate(map, options.risk.gamma);
  if (!safe.safe(options.pose.position())) throw std::invalid_argument("sample: pose is not in a safe cell");

  const std::string& g = options.guidance;
  std::vector<std::string> names;
  if (g == "none" || g == "filter")
    names = {"vanilla"};
  else if (g == "classifier" || g == "projection")
    names = {g};
  else
    throw std::invalid_argument("sample: unknown guidance '" + g + "'");
  const sim::Method m =
      make_methods(names, policy.schedule.steps, options.eta, options.t1, options.t2, options.beta_mix).front();
  guidance::GuidanceMode mode = guidance::Unguided{};
  if (m.kind == sim::MethodKind::kClassifier) mode = guidance::Classifier{m.eta};
  if (m.kind == sim::MethodKind::kProjection) mode = m.projection;

  const diffusion::Context ctx = diffusion::make_context(map, options.pose, options.goal);
  const guidance::GuidanceEnv env{&safe, &surrogate, options.pose};
  auto out = diffusion::sample(policy, ctx, mode, env, info.seed, options.batch);
  if (g == "filter")
    for (auto& u : out) u = guidance::safety_filter(u, safe, options.pose);

  std::string csv = "sample,waypoint,x_robot,y_robot,x_world,y_world,sequence_safe\n";
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Eigen::Matrix2Xd w = to_world(options.pose, out[i]);
    const bool ok = risk::is_safe(safe, out[i], options.pose);
    for (Eigen::Index k = 0; k < out[i].cols(); ++k) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%zu,%ld,%.6f,%.6f,%.6f,%.6f,%d\n", i, static_cast<long>(k), out[i](0, k),
                    out[i](1, k), w(0, k), w(1, k), ok ? 1 : 0);
      csv += buf;
    }
  }
  fs::create_directories(options.out);
  write_text((fs::path(options.out) / "samples.csv").string(), csv);
  write_manifest(options.out, info, json{{"samples", "samples.csv"}}.dump());
  return out;
}

std::vector<oned::DemoRun> demo1d(const Demo1dOptions& options, const RunInfo& info) {
  if (options.out.empty()) throw std::invalid_argument("demo1d: output directory required");
  auto runs = oned::run_demo(options.target, options.langevin, options.etas);
  oned::emit_demo_report(options.target, options.langevin, runs, options.out);
  write_manifest(options.out, info,
                 json{{"runs", "runs.csv"}, {"histograms", "histograms.csv"}, {"figure", "histograms.svg"}}.dump());
  return runs;
}

}  // namespace riskdiff::pipeline
