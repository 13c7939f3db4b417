// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <json.hpp>
#include <sstream>

#include "cli.hpp"
#include "helpers.hpp"
#include "shiftadd/binary_io.hpp"
#include "shiftadd/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int status = 0;
  json doc;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.status = shiftadd::cli::run_command(args, out, err);
  r.err = err.str();
  if (r.status == 0 && !out.str().empty() && out.str()[0] == '{') r.doc = json::parse(out.str());
  return r;
}

// gen-data -> train -> teacher-logits -> distill -> quantize -> encode -> infer.
void pipeline(const fs::path &dir) {
  const std::string d = dir.string();
  REQUIRE(run({"--out-dir", d, "--seed", "3", "gen-data", "--per-class", "6"}).status == 0);
  const std::string base = d + "/data/base";
  REQUIRE(run({"--out-dir", d, "--seed", "3", "train", "--data", base, "--folds", "2",
               "--folds-file", d + "/folds.json", "--epochs", "2", "--weights", d + "/teacher.sacw"})
              .status == 0);
  REQUIRE(run({"--out-dir", d, "teacher-logits", "--weights", d + "/teacher.sacw", "--data", base})
              .status == 0);
  REQUIRE(run({"--out-dir", d, "--seed", "3", "distill", "--data", base, "--teacher-logits",
               d + "/teacher_logits.csv", "--folds", "1", "--epochs", "2", "--weights",
               d + "/student.sacw"})
              .status == 0);
  REQUIRE(run({"--out-dir", d, "--n", "3", "quantize", "--weights", d + "/student.sacw", "--data",
               base, "--max-n", "2"})
              .status == 0);
  REQUIRE(run({"--out-dir", d, "--bits", "3", "encode", "--model", d + "/model.saqm", "--data", base,
               "--max-bits", "2", "--output", d + "/encoded.saqm"})
              .status == 0);
  REQUIRE(run({"--out-dir", d, "infer", "--model", d + "/encoded.saqm", "--data", base}).status == 0);
}

}  // namespace

TEST_CASE("report reproduces the reference throughput arithmetic") {
  const Run r = run({"report", "--n", "3", "--bits", "3", "--cycles", "25112", "--clock-mhz", "303",
                     "--rounding", "paper"});
  REQUIRE(r.status == 0);
  CHECK(r.doc["command"] == "report");
  CHECK(r.doc["tool_version"] == "0.1.0");
  CHECK(r.doc["config"]["quant"]["terms"] == 3);
  CHECK(r.doc["result"]["compression"]["ratio_percent"] == 28.125);
  CHECK(r.doc["result"]["summary"] == "0.083 ms, 3084 frames, 38550 m");
  CHECK(r.doc["result"]["counts"]["params"] == 30771);
}

TEST_CASE("usage errors exit with status 2") {
  CHECK(run({}).status == 2);
  CHECK(run({"frobnicate"}).status == 2);
  CHECK(run({"report", "--no-such-flag"}).status == 2);
  CHECK(run({"report", "--rounding", "sideways"}).status == 2);
  CHECK(run({"train"}).status == 2);
}

TEST_CASE("failures exit with status 1 and a structured error") {
  const Run r = run({"infer", "--model", "/nonexistent/model.sacw", "--frame", "x.dvsf"});
  CHECK(r.status == 1);
  const json e = json::parse(r.err);
  CHECK(e["error"]["kind"] == "ingestion");
  CHECK(run({"report", "--n", "0"}).status == 1);
  const Run bad_cfg = run({"--config", "/nonexistent/config.json", "report"});
  CHECK(bad_cfg.status == 1);
}

TEST_CASE("thread cap must be a positive integer") {
  ::setenv("SHIFTADD_DVS_THREADS", "zero", 1);
  const Run r = run({"report"});
  ::unsetenv("SHIFTADD_DVS_THREADS");
  CHECK(r.status == 1);
  CHECK(json::parse(r.err)["error"]["kind"] == "configuration");
  ::setenv("SHIFTADD_DVS_THREADS", "2", 1);
  const Run ok = run({"report"});
  ::unsetenv("SHIFTADD_DVS_THREADS");
  CHECK(ok.doc["threads"] == 2);
}

TEST_CASE("config file is honoured and flags override it") {
  const fs::path dir = testing::scratch_dir("cli-config");
  shiftadd::write_file_atomic(dir / "run.json",
                              std::string(R"({"seed": 9, "quant": {"terms": 2, "bits": 4}})"));
  const Run r = run({"--config", (dir / "run.json").string(), "--bits", "3", "report"});
  REQUIRE(r.status == 0);
  CHECK(r.doc["config"]["seed"] == 9);
  CHECK(r.doc["config"]["quant"]["terms"] == 2);
  CHECK(r.doc["config"]["quant"]["bits"] == 3);
  CHECK(r.doc["result"]["compression"]["ratio_percent"] == 18.75);
}

TEST_CASE("infer and simulate agree on every frame") {
  const fs::path dir = testing::scratch_dir("cli-agree");
  pipeline(dir);
  const std::string d = dir.string();
  for (const char *engine : {"shift", "float"}) {
    const std::string model = std::string(engine) == "shift" ? d + "/encoded.saqm" : d + "/student.sacw";
    const Run inf = run({"--out-dir", d, "infer", "--model", model, "--data", d + "/data/shifted",
                         "--engine", engine});
    const Run sim = run({"--out-dir", d, "simulate", "--model", model, "--data", d + "/data/shifted",
                         "--engine", engine});
    REQUIRE(inf.status == 0);
    REQUIRE(sim.status == 0);
    const auto &preds = inf.doc["result"]["predictions"];
    const auto &frames = sim.doc["result"]["frames"];
    REQUIRE(preds.size() == frames.size());
    for (std::size_t i = 0; i < preds.size(); ++i) CHECK(preds[i]["argmax"] == frames[i]["argmax"]);
    CHECK(sim.doc["result"]["stages"][0]["first_output_at"] == 13);
    CHECK(sim.doc["result"]["buffers"][0]["paper_formula"] == 14);
  }
}

TEST_CASE("pipeline artifacts are byte-reproducible") {
  const fs::path a = testing::scratch_dir("cli-repro-a");
  const fs::path b = testing::scratch_dir("cli-repro-b");
  pipeline(a);
  pipeline(b);
  std::size_t compared = 0;
  for (const auto &e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path other = b / fs::relative(e.path(), a);
    REQUIRE(fs::exists(other));
    CHECK_MESSAGE(shiftadd::read_file_bytes(e.path()) == shiftadd::read_file_bytes(other),
                  e.path().string());
    ++compared;
  }
  CHECK(compared > 10);
}

TEST_CASE("export-features writes one row per sample") {
  const fs::path dir = testing::scratch_dir("cli-export");
  const std::string d = dir.string();
  REQUIRE(run({"--out-dir", d, "gen-data", "--per-class", "1"}).status == 0);
  REQUIRE(run({"--out-dir", d, "train", "--data", d + "/data/base", "--folds", "1", "--epochs", "1"})
              .status == 0);
  const Run r = run({"--out-dir", d, "export-features", "--model", d + "/model.sacw", "--data",
                     d + "/data/base"});
  REQUIRE(r.status == 0);
  CHECK(r.doc["result"]["width"] == 2048);
  const std::string text = shiftadd::read_file_text(dir / "features.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  const std::string first = text.substr(0, text.find('\n'));
  CHECK(std::count(first.begin(), first.end(), ',') == 2 + 2048 - 1);
  const Run again = run({"--out-dir", d, "export-features", "--model", d + "/model.sacw", "--data",
                         d + "/data/base", "--output", d + "/again.csv"});
  REQUIRE(again.status == 0);
  CHECK(shiftadd::read_file_text(dir / "again.csv") == text);
  const Run bad = run({"--out-dir", d, "export-features", "--model", d + "/model.sacw", "--data",
                       d + "/data/base", "--layer", "conv9"});
  CHECK(bad.status == 1);
  CHECK(json::parse(bad.err)["error"]["kind"] == "configuration");
}

TEST_CASE("export_features of a zero-weight model is all zeros") {
  using namespace shiftadd;
  const ModelSpec spec = ModelSpec::student();
  ModelParams<double> params = testing::random_params(spec, 3);
  for (auto &l : params.layers) {
    if (l.conv) l.conv->kernel.setZero(), l.conv->bias.setZero();
    if (l.bn) l.bn->beta.setZero(), l.bn->mean.setZero();
    if (l.dense) l.dense->weights.setZero(), l.dense->bias.setZero();
  }
  const auto samples = synth_samples(4, 2, SynthVariant::Base);
  const Normalization norm = compute_normalization(samples, std::vector<std::size_t>{0, 1, 2});
  const std::string csv = export_features(spec, params, samples, norm, "flatten");
  std::istringstream in(csv);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::istringstream fields(line);
    std::string field;
    std::getline(fields, field, ',');
    std::getline(fields, field, ',');
    std::size_t values = 0;
    while (std::getline(fields, field, ',')) {
      CHECK(std::stod(field) == 0.0);
      ++values;
    }
    CHECK(values == 2048);
  }
  CHECK(rows == samples.size());
  CHECK_THROWS_AS(export_features(spec, params, samples, norm, "conv9"), ConfigError);
}
