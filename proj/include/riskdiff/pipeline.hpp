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

#ifndef RISKDIFF_PIPELINE_HPP_
#define RISKDIFF_PIPELINE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "riskdiff/diffusion.hpp"
#include "riskdiff/expert.hpp"
#include "riskdiff/oned.hpp"
#include "riskdiff/sim.hpp"

// File-level steps behind the command-line tool. Each step writes its
// outputs plus manifest.json and config.ini into one directory.
namespace riskdiff::pipeline {

inline constexpr const char* kVersion = "0.1.0";

// Provenance of a run: the subcommand, the fully resolved configuration in
// the tool's config-file syntax, and the master seed.
struct RunInfo {
  std::string command;
  std::string config_text;
  std::uint64_t seed = 0;
};

// 64-bit FNV-1a, hex.
std::string config_hash(const std::string& text);
void write_manifest(const std::string& dir, const RunInfo& info, const std::string& extra_json = "{}");
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

struct GenDataOptions {
  expert::DataGenConfig gen;
  int stride = 1;
  std::string out;
};
struct GenDataSummary {
  int episodes = 0;
  std::size_t pairs = 0;
  int skipped = 0;
};
GenDataSummary gen_data(const GenDataOptions& options, const RunInfo& info);

// Family given by name ("training", "pit_suite") or a JSON file path.
expert::RecipeFamily load_family(const std::string& name_or_path);

struct TrainOptions {
  std::string data;
  std::string out;  // directory; holds policy.ckpt and loss.csv
  diffusion::TrainConfig train;
  int steps = 50;
};
struct TrainSummary {
  std::size_t pairs = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
};
TrainSummary train(const TrainOptions& options, const RunInfo& info);
// A checkpoint path or a directory containing policy.ckpt.
std::string checkpoint_path(const std::string& path_or_dir);

struct EvalOptions {
  std::string checkpoint;
  std::string suite;  // JSON suite file
  std::vector<std::string> methods = {"vanilla", "classifier", "filter", "projection"};
  double eta = 10.0;   // classifier entries without an explicit ":eta"
  int t1 = -1;         // projection phase boundaries; -1 = scaled default
  int t2 = -1;
  double beta_mix = 0.5;
  sim::SimConfig sim;
  std::string out;
  int workers = 1;
};
sim::MetricsReport eval(const EvalOptions& options, const RunInfo& info);
std::vector<sim::Method> make_methods(const std::vector<std::string>& names, int steps, double eta, int t1, int t2,
                                      double beta_mix);

struct RiskMapOptions {
  std::string terrain;  // recipe JSON or elevation .grid
  risk::CostParams cost;
  risk::RiskConfig risk;
  std::string out;  // directory; holds risk.grid
  int workers = 1;
};
risk::RiskMap riskmap(const RiskMapOptions& options, const RunInfo& info);

struct SampleOptions {
  std::string checkpoint;
  std::string terrain;
  Pose pose;
  Vec2 goal = Vec2::Zero();
  std::string guidance = "none";  // none | classifier | projection | filter
  double eta = 10.0;
  int t1 = -1;
  int t2 = -1;
  double beta_mix = 0.5;
  int batch = 16;
  risk::CostParams cost;
  risk::RiskConfig risk;
  std::string out;
  int workers = 1;
};
std::vector<ActionSequence> sample(const SampleOptions& options, const RunInfo& info);

struct Demo1dOptions {
  oned::OneDTarget target;
  oned::LangevinConfig langevin;
  std::vector<double> etas = {0.0, 1.0, 10.0, 100.0};
  std::string out;
};
std::vector<oned::DemoRun> demo1d(const Demo1dOptions& options, const RunInfo& info);

}  // namespace riskdiff::pipeline

#endif  // RISKDIFF_PIPELINE_HPP_
