// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/config.hpp"

#include "shiftadd/binary_io.hpp"

namespace shiftadd {

using nlohmann::json;

namespace {

LayerKind kind_from_string(const std::string &s) {
  for (auto k : {LayerKind::Conv, LayerKind::MaxPool, LayerKind::AvgPool, LayerKind::Flatten,
                 LayerKind::Dense})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown layer kind '" + s + "'");
}

}  // namespace

json spec_to_json(const ModelSpec &spec) {
  json layers = json::array();
  for (const auto &l : spec.layers) {
    json j{{"kind", to_string(l.kind)}, {"name", l.name}};
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::Dense) j["out"] = l.out_channels;
    if (l.kind == LayerKind::Conv || l.is_pool()) {
      j["kernel"] = {l.kernel_h, l.kernel_w};
      j["stride"] = l.stride;
    }
    if (l.kind == LayerKind::Conv) {
      j["padding"] = l.padding;
      j["batchnorm"] = l.batchnorm;
    }
    if (l.has_params()) j["relu"] = l.relu;
    layers.push_back(std::move(j));
  }
  return {{"input", {spec.input.channels, spec.input.rows, spec.input.cols}},
          {"class_count", spec.class_count},
          {"layers", std::move(layers)}};
}

ModelSpec spec_from_json(const json &j) {
  try {
    ModelSpec spec;
    const auto &in = j.at("input");
    spec.input = Shape{in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
    spec.class_count = j.value("class_count", 3);
    for (const auto &lj : j.at("layers")) {
      LayerSpec l;
      l.kind = kind_from_string(lj.at("kind").get<std::string>());
      l.name = lj.value("name", "");
      l.out_channels = lj.value("out", 0);
      if (lj.contains("kernel")) {
        l.kernel_h = lj["kernel"].at(0).get<int>();
        l.kernel_w = lj["kernel"].at(1).get<int>();
      }
      l.stride = lj.value("stride", 1);
      l.padding = lj.value("padding", 0);
      l.relu = lj.value("relu", false);
      l.batchnorm = lj.value("batchnorm", false);
      spec.layers.push_back(std::move(l));
    }
    spec.shapes();
    return spec;
  } catch (const json::exception &e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
}

ModelSpec resolve_spec(const std::string &s) {
  if (s == "student") return ModelSpec::student(true);
  if (s == "student-nobn") return ModelSpec::student(false);
  if (s == "wide") return ModelSpec::wide_student(true);
  if (s == "wide-nobn") return ModelSpec::wide_student(false);
  if (s == "reduced") return ModelSpec::reduced();
  try {
    return spec_from_json(json::parse(read_file_text(s)));
  } catch (const json::parse_error &e) {
    throw ConfigError(s + ": " + e.what());
  }
}

json to_json(const RunConfig &c) {
  return {{"seed", c.seed},
          {"model_spec", c.model_spec},
          {"kd",
           {{"alpha", c.kd.alpha},
            {"temperature", c.kd.temperature},
            {"scale_kl_by_t2", c.kd.scale_kl_by_t2}}},
          {"quant",
           {{"terms", c.quant.terms},
            {"bits", c.quant.bits},
            {"fraction_bits", c.quant.frame.fraction_bits},
            {"integer_bits", c.quant.frame.integer_bits}}},
          {"engine",
           {{"activation_bits", c.engine.activation_bits}, {"diagnostic", c.engine.diagnostic}}},
          {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const json &j) {
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.model_spec = j.value("model_spec", c.model_spec);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("kd")) {
      const auto &k = j["kd"];
      c.kd.alpha = k.value("alpha", c.kd.alpha);
      c.kd.temperature = k.value("temperature", c.kd.temperature);
      c.kd.scale_kl_by_t2 = k.value("scale_kl_by_t2", c.kd.scale_kl_by_t2);
    }
    if (j.contains("quant")) {
      const auto &q = j["quant"];
      c.quant.terms = q.value("terms", c.quant.terms);
      c.quant.bits = q.value("bits", c.quant.bits);
      c.quant.frame.fraction_bits = q.value("fraction_bits", c.quant.frame.fraction_bits);
      c.quant.frame.integer_bits = q.value("integer_bits", c.quant.frame.integer_bits);
    }
    if (j.contains("engine")) {
      const auto &e = j["engine"];
      c.engine.activation_bits = e.value("activation_bits", c.engine.activation_bits);
      c.engine.diagnostic = e.value("diagnostic", c.engine.diagnostic);
    }
  } catch (const json::exception &e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.kd.validate();
  c.quant.frame.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path &path) {
  try {
    return run_config_from_json(json::parse(read_file_text(path)));
  } catch (const json::parse_error &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace shiftadd
