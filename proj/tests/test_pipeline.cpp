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

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "riskdiff/expert.hpp"
#include "riskdiff/terrain.hpp"
#include "support.hpp"

using namespace riskdiff;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run cli(const testing::TempDir& dir, const std::string& args) {
  const std::string o = dir.file("stdout.txt"), e = dir.file("stderr.txt");
  const std::string cmd = std::string("\"") + RISKDIFF_CLI + "\" " + args + " >" + o + " 2>" + e;
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

TEST_CASE("end-to-end pipeline through the command line") {
  testing::TempDir dir("cli");
  const std::string d = dir.str();
  const std::string fast_risk = " --mc-samples 8";

  Run r = cli(dir, "--seed 3 gen-data --episodes 3 --out " + d + "/data" + fast_risk);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(std::filesystem::exists(d + "/data/manifest.json"));
  CHECK(std::filesystem::exists(d + "/data/config.ini"));

  r = cli(dir, "--seed 4 train --data " + d + "/data --out " + d + "/model --epochs 2 --hidden 16,16 --steps 10");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(std::filesystem::exists(d + "/model/policy.ckpt"));
  CHECK(std::filesystem::exists(d + "/model/loss.csv"));

  std::ofstream(d + "/suite.json") << R"({"schema_version": 1, "family": "pit_suite", "count": 2, "seed": 9})";
  r = cli(dir, "--seed 5 --workers 2 eval --ckpt " + d + "/model --suite " + d + "/suite.json --batch 4 --out " + d +
                   "/eval" + fast_risk);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::string metrics = slurp(d + "/eval/metrics.csv");
  CHECK(first_line(metrics) ==
        "method,episodes,gs_percent,sf_percent,timeout_percent,goal_success,safety_failure,timeout");
  for (const char* f : {"episodes.csv", "table.txt", "suite.json", "manifest.json", "config.ini"})
    CHECK(std::filesystem::exists(d + "/eval/" + f));
  const auto manifest = nlohmann::json::parse(slurp(d + "/eval/manifest.json"));
  CHECK(manifest.contains("config_hash"));
  CHECK(manifest.at("seed") == 5);

  // The resolved config reruns the same command and reproduces the outputs.
  const std::string config = slurp(d + "/eval/config.ini");
  std::filesystem::rename(d + "/eval", d + "/eval_first");
  std::ofstream(d + "/rerun.ini") << config;
  r = cli(dir, "--config " + d + "/rerun.ini");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(slurp(d + "/eval/metrics.csv") == metrics);
  CHECK(slurp(d + "/eval/episodes.csv") == slurp(d + "/eval_first/episodes.csv"));
  CHECK(slurp(d + "/eval/config.ini") == config);

  // riskmap and sample on a terrain recipe.
  terrain::TerrainRecipe recipe;
  recipe.grid = GridSpec{30, 30, 0.1, 0.0, 0.0};
  recipe.hazards.push_back({terrain::HazardShape::kPit, 2.0, 1.5, 0.6, 0.6, 0.3});
  std::ofstream(d + "/terrain.json") << terrain::recipe_to_json_text(recipe);
  r = cli(dir, "riskmap --terrain " + d + "/terrain.json --out " + d + "/rm" + fast_risk);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(std::filesystem::exists(d + "/rm/risk.grid"));

  r = cli(dir, "sample --ckpt " + d + "/model/policy.ckpt --terrain " + d + "/terrain.json --pose 0.5 1.5 0 --goal 2.5 1.5 " +
                   "--guidance projection --batch 3 --out " + d + "/s" + fast_risk);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(std::filesystem::exists(d + "/s/samples.csv"));

  r = cli(dir, "demo1d --samples 50 --steps-per-level 10 --eta-sweep 0,5 --out " + d + "/d1");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"runs.csv", "histograms.csv", "histograms.svg", "manifest.json"})
    CHECK(std::filesystem::exists(d + "/d1/" + f));
}

TEST_CASE("command line errors are one machine-readable line and exit 2") {
  testing::TempDir dir("clierr");
  Run r = cli(dir, "demo1d --out " + dir.str() + "/x --bogus 1");
  CHECK(r.code == 2);
  CHECK(first_line(r.err).rfind("riskdiff: error code=UnknownArgument message=", 0) == 0);

  r = cli(dir, "--schema_version 2 demo1d --out " + dir.str() + "/x");
  CHECK(r.code == 2);
  CHECK(first_line(r.err).rfind("riskdiff: error code=SchemaMismatch ", 0) == 0);

  r = cli(dir, "riskmap --terrain " + dir.str() + "/missing.json --out " + dir.str() + "/x");
  CHECK(r.code == 2);
  CHECK(r.err.rfind("riskdiff: error code=", 0) == 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);

  std::ofstream(dir.file("bad.ini")) << "seed=1\n[demo1d]\nout=" << dir.str() << "/x\nnot_an_option=3\n";
  r = cli(dir, "--config " + dir.file("bad.ini"));
  CHECK(r.code == 2);
  CHECK(r.err.rfind("riskdiff: error code=", 0) == 0);

  r = cli(dir, "train --data " + dir.str() + " --out " + dir.str() + "/m --hidden 0,3");
  CHECK(r.code == 2);
}
