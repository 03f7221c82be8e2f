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

// riskdiff: command-line front end.
//
//   riskdiff [--seed N] [--workers N] [--config FILE] <command> [options]
//
// Every run writes manifest.json and config.ini next to its outputs;
// `riskdiff --config <dir>/config.ini` repeats it.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "riskdiff/pipeline.hpp"

namespace {

using namespace riskdiff;

struct RiskFlags {
  risk::CostParams cost;
  risk::RiskConfig risk;

  void add(CLI::App* app) {
    app->add_option("--alpha", risk.alpha, "CVaR probability level in (0, 1]")->capture_default_str();
    app->add_option("--gamma", risk.gamma, "risk tolerance")->capture_default_str();
    app->add_option("--mc-samples", risk.mc_samples, "elevation draws per cell")->capture_default_str();
    app->add_option("--slope-critical", cost.slope_critical, "radians")->capture_default_str();
    app->add_option("--step-critical", cost.step_critical, "meters")->capture_default_str();
    app->add_option("--footprint-radius", cost.footprint_radius, "meters")->capture_default_str();
  }
};

struct GuidanceFlags {
  double eta = 10.0;
  int t1 = -1;
  int t2 = -1;
  double beta_mix = 0.5;

  void add(CLI::App* app) {
    app->add_option("--eta", eta, "classifier guidance weight")->capture_default_str();
    app->add_option("--t1", t1, "small-action phase starts at t <= t1 (-1: 0.2 T)")->capture_default_str();
    app->add_option("--t2", t2, "rejection phase for t > t2 (-1: 0.6 T)")->capture_default_str();
    app->add_option("--beta-mix", beta_mix, "projection mixing coefficient in (0, 1)")->capture_default_str();
  }
};

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(parse_double(item));
    } catch (const FormatError&) {
      throw CLI::ValidationError(what, "not a number list: '" + text + "'");
    }
  }
  return out;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// One line on stderr, key=value fields, message last.
int fail(const std::string& code, const std::string& message) {
  std::string flat = message;
  for (char& c : flat)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "riskdiff: error code=" << code << " message=" << flat << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk-guided diffusion navigation toolkit", "riskdiff"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "read options from an INI file written by a previous run");

  std::uint64_t seed = 0;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  int schema_version = 1;
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--workers", workers, "cap on worker threads")->capture_default_str()->check(CLI::Range(1, 1024));
  app.add_option("--schema_version", schema_version, "config schema version")->capture_default_str()->group("");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate expert demonstrations");
  gen->configurable();
  pipeline::GenDataOptions gen_opt;
  std::string gen_family = "training";
  double gen_angle_deg = 30.0;
  RiskFlags gen_risk;
  gen->add_option("--recipes", gen_family, "terrain family: training, pit_suite or a JSON file")->capture_default_str();
  gen->add_option("--episodes", gen_opt.gen.episodes, "episodes to generate")->capture_default_str();
  gen->add_option("--stride", gen_opt.stride, "window stride")->capture_default_str();
  gen->add_option("--angle-threshold", gen_angle_deg, "resampling heading threshold, degrees")->capture_default_str();
  gen->add_option("--max-attempts", gen_opt.gen.max_attempts_per_episode, "task draws per episode")->capture_default_str();
  gen->add_option("--out", gen_opt.out, "dataset directory")->required();
  gen_risk.add(gen);

  // train
  auto* tr = app.add_subcommand("train", "train the diffusion policy");
  tr->configurable();
  pipeline::TrainOptions tr_opt;
  std::string tr_hidden = "128,128,128";
  tr->add_option("--data", tr_opt.data, "dataset directory")->required();
  tr->add_option("--out", tr_opt.out, "checkpoint directory")->required();
  tr->add_option("--epochs", tr_opt.train.epochs)->capture_default_str();
  tr->add_option("--batch-size", tr_opt.train.batch_size)->capture_default_str();
  tr->add_option("--lr", tr_opt.train.learning_rate)->capture_default_str();
  tr->add_option("--steps", tr_opt.steps, "diffusion steps T")->capture_default_str();
  tr->add_option("--hidden", tr_hidden, "hidden layer widths")->capture_default_str();

  // sample
  auto* sa = app.add_subcommand("sample", "sample action sequences at one pose");
  sa->configurable();
  pipeline::SampleOptions sa_opt;
  std::vector<double> sa_pose, sa_goal;
  GuidanceFlags sa_g;
  RiskFlags sa_risk;
  sa->add_option("--ckpt", sa_opt.checkpoint, "checkpoint file or directory")->required();
  sa->add_option("--terrain", sa_opt.terrain, "terrain recipe (.json) or elevation grid (.grid)")->required();
  sa->add_option("--pose", sa_pose, "x,y,heading")->delimiter(',')->expected(3)->required();
  sa->add_option("--goal", sa_goal, "x,y")->delimiter(',')->expected(2)->required();
  sa->add_option("--guidance", sa_opt.guidance, "none, classifier, projection or filter")
      ->capture_default_str()
      ->check(CLI::IsMember({"none", "classifier", "projection", "filter"}));
  sa->add_option("--batch", sa_opt.batch)->capture_default_str();
  sa->add_option("--out", sa_opt.out, "output directory")->required();
  sa_g.add(sa);
  sa_risk.add(sa);

  // eval
  auto* ev = app.add_subcommand("eval", "closed-loop evaluation on a suite");
  ev->configurable();
  pipeline::EvalOptions ev_opt;
  std::string ev_methods = "vanilla,classifier,filter,projection";
  GuidanceFlags ev_g;
  RiskFlags ev_risk;
  ev->add_option("--ckpt", ev_opt.checkpoint, "checkpoint file or directory")->required();
  ev->add_option("--suite", ev_opt.suite, "suite JSON file")->required();
  ev->add_option("--methods", ev_methods, "comma-separated; classifier:<eta> allowed")->capture_default_str();
  ev->add_option("--batch", ev_opt.sim.batch, "candidates per cycle")->capture_default_str();
  ev->add_option("--out", ev_opt.out, "output directory")->required();
  ev_g.add(ev);
  ev_risk.add(ev);

  // demo1d
  auto* d1 = app.add_subcommand("demo1d", "1-D Langevin guidance demo");
  d1->configurable();
  pipeline::Demo1dOptions d1_opt;
  std::string d1_etas = "0,1,10,100";
  std::vector<double> d1_forbidden = {d1_opt.target.a, d1_opt.target.b};
  double d1_sigma_max = 1.0, d1_sigma_min = 0.01;
  int d1_levels = 10;
  d1->add_option("--eta-sweep", d1_etas, "classifier weights")->capture_default_str();
  d1->add_option("--samples", d1_opt.langevin.samples)->capture_default_str();
  d1->add_option("--step-size", d1_opt.langevin.step_size, "step at the last noise level")->capture_default_str();
  d1->add_option("--steps-per-level", d1_opt.langevin.steps_per_level)->capture_default_str();
  d1->add_option("--levels", d1_levels, "noise levels")->capture_default_str();
  d1->add_option("--sigma-max", d1_sigma_max)->capture_default_str();
  d1->add_option("--sigma-min", d1_sigma_min)->capture_default_str();
  d1->add_option("--forbidden", d1_forbidden, "a,b")->delimiter(',')->expected(2)->capture_default_str();
  d1->add_option("--out", d1_opt.out, "output directory")->required();

  // riskmap
  auto* rm = app.add_subcommand("riskmap", "CVaR risk map of a terrain");
  rm->configurable();
  pipeline::RiskMapOptions rm_opt;
  RiskFlags rm_risk;
  rm->add_option("--terrain", rm_opt.terrain, "terrain recipe (.json) or elevation grid (.grid)")->required();
  rm->add_option("--out", rm_opt.out, "output directory")->required();
  rm_risk.add(rm);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    // ExtrasError carries the app name instead of its own.
    const std::string code = dynamic_cast<const CLI::ExtrasError*>(&e) ? "UnknownArgument" : e.get_name();
    const int rc = fail(code, e.what());
    std::cerr << app.help();
    return rc;
  }

  try {
    if (schema_version != 1)
      return fail("SchemaMismatch", "schema_version " + std::to_string(schema_version) + " is not supported (expected 1)");
    const CLI::App* used = app.get_subcommands().front();
    // Globals plus the section of the command that ran; nothing else, so the
    // file triggers exactly this command when read back.
    std::ostringstream resolved;
    resolved << "schema_version=1\nseed=" << seed << "\nworkers=" << workers << "\n[" << used->get_name() << "]\n"
             << used->config_to_str(true, false);
    pipeline::RunInfo info{used->get_name(), resolved.str(), seed};

    if (used == gen) {
      gen_opt.gen.family = pipeline::load_family(gen_family);
      gen_opt.gen.cost = gen_risk.cost;
      gen_opt.gen.risk = gen_risk.risk;
      gen_opt.gen.angle_threshold = gen_angle_deg * std::numbers::pi / 180.0;
      gen_opt.gen.seed = seed;
      gen_opt.gen.workers = workers;
      const auto s = pipeline::gen_data(gen_opt, info);
      std::cout << "episodes=" << s.episodes << " pairs=" << s.pairs << " skipped_short=" << s.skipped << "\n";
    } else if (used == tr) {
      tr_opt.train.seed = seed;
      tr_opt.train.hidden.clear();
      for (double h : parse_list(tr_hidden, "--hidden")) {
        if (!(h >= 1.0) || h != std::floor(h)) return fail("ValidationError", "--hidden: widths must be positive integers");
        tr_opt.train.hidden.push_back(static_cast<int>(h));
      }
      const auto s = pipeline::train(tr_opt, info);
      std::cout << "pairs=" << s.pairs << " first_loss=" << s.first_loss << " final_loss=" << s.final_loss << "\n";
    } else if (used == sa) {
      sa_opt.pose = Pose{sa_pose[0], sa_pose[1], sa_pose[2]};
      sa_opt.goal = Vec2(sa_goal[0], sa_goal[1]);
      sa_opt.eta = sa_g.eta;
      sa_opt.t1 = sa_g.t1;
      sa_opt.t2 = sa_g.t2;
      sa_opt.beta_mix = sa_g.beta_mix;
      sa_opt.cost = sa_risk.cost;
      sa_opt.risk = sa_risk.risk;
      sa_opt.risk.seed = seed;
      sa_opt.workers = workers;
      const auto out = pipeline::sample(sa_opt, info);
      std::cout << "samples=" << out.size() << "\n";
    } else if (used == ev) {
      ev_opt.methods = split(ev_methods);
      ev_opt.eta = ev_g.eta;
      ev_opt.t1 = ev_g.t1;
      ev_opt.t2 = ev_g.t2;
      ev_opt.beta_mix = ev_g.beta_mix;
      ev_opt.sim.cost = ev_risk.cost;
      ev_opt.sim.risk = ev_risk.risk;
      ev_opt.workers = workers;
      const auto report = pipeline::eval(ev_opt, info);
      std::cout << sim::format_table(report);
    } else if (used == d1) {
      d1_opt.etas = parse_list(d1_etas, "--eta-sweep");
      d1_opt.target.a = d1_forbidden[0];
      d1_opt.target.b = d1_forbidden[1];
      d1_opt.langevin.noise_levels = oned::geometric_levels(d1_sigma_max, d1_sigma_min, d1_levels);
      d1_opt.langevin.seed = seed;
      d1_opt.langevin.workers = workers;
      const auto runs = pipeline::demo1d(d1_opt, info);
      for (const auto& r : runs) {
        const auto s = oned::summarize(d1_opt.target, r.label, r.samples, 2.0 * d1_opt.langevin.noise_levels.back());
        std::cout << r.label << " violation=" << s.violation_fraction << " dominant_mode=" << s.dominant_mass << "\n";
      }
    } else if (used == rm) {
      rm_opt.cost = rm_risk.cost;
      rm_opt.risk = rm_risk.risk;
      rm_opt.risk.seed = seed;
      rm_opt.workers = workers;
      pipeline::riskmap(rm_opt, info);
      std::cout << "wrote " << rm_opt.out << "/risk.grid\n";
    }
  } catch (const FormatError& e) {
    return fail("FormatError", e.what());
  } catch (const std::invalid_argument& e) {
    return fail("InvalidArgument", e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("FormatError", e.what());
  } catch (const std::exception& e) {
    return fail("RuntimeError", e.what());
  }
  return 0;
}
