// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "shiftadd/engine.hpp"
#include "shiftadd/kd.hpp"
#include "shiftadd/model.hpp"
#include "shiftadd/quant.hpp"

namespace shiftadd {

inline constexpr const char *kToolVersion = "0.1.0";

nlohmann::json spec_to_json(const ModelSpec &spec);
ModelSpec spec_from_json(const nlohmann::json &j);

/// "student", "student-nobn", "wide", "wide-nobn", "reduced", or a path to
/// a JSON spec file.
ModelSpec resolve_spec(const std::string &name_or_path);

struct QuantConfig {
  int terms = 3;  // N
  int bits = 3;
  FixedFrame frame;
};

/// Everything needed to replay a command.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string model_spec = "student";
  KDConfig kd;
  QuantConfig quant;
  EngineConfig engine;
  std::string output_dir = ".";
};

nlohmann::json to_json(const RunConfig &c);
RunConfig run_config_from_json(const nlohmann::json &j);
RunConfig load_run_config(const std::filesystem::path &path);

}  // namespace shiftadd
