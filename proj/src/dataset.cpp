// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "shiftadd/binary_io.hpp"
#include "shiftadd/rng.hpp"

namespace shiftadd {

namespace fs = std::filesystem;
using nlohmann::json;

int class_index(const std::string &s) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i)
    if (s == kClassNames[i]) return static_cast<int>(i);
  int v = -1;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc() && ptr == s.data() + s.size() && v >= 0 &&
      v < static_cast<int>(kClassNames.size()))
    return v;
  throw IngestError("unknown label '" + s + "'");
}

void DatasetManifest::recount() {
  counts = {};
  for (const auto &e : samples) {
    if (e.label < 0 || e.label >= static_cast<int>(counts.size()))
      throw IngestError("sample '" + e.id + "' has label " + std::to_string(e.label) +
                        " outside the class table");
    ++counts[static_cast<std::size_t>(e.label)];
  }
}

std::vector<int> Dataset::labels() const {
  std::vector<int> v;
  v.reserve(samples.size());
  for (const auto &s : samples) v.push_back(s.label);
  return v;
}

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> v;
  v.reserve(samples.size());
  for (const auto &s : samples) v.push_back(s.id);
  return v;
}

std::vector<std::uint8_t> encode_dvsf(const TensorF &frame, int label) {
  if (frame.channels() != 1) throw ConfigError("DVSF frames have one channel");
  if (label < 0 || label > 255) throw ConfigError("DVSF label must fit u8");
  ByteWriter w;
  w.bytes("DVSF");
  w.u16(1);
  w.u16(static_cast<std::uint16_t>(frame.rows()));
  w.u16(static_cast<std::uint16_t>(frame.cols()));
  w.u8(static_cast<std::uint8_t>(label));
  for (float v : frame.flat()) w.f32(v);
  return w.data();
}

LabeledSample decode_dvsf(std::span<const std::uint8_t> bytes, const std::string &id) {
  ByteReader r({bytes.begin(), bytes.end()}, id);
  try {
    r.expect_magic("DVSF");
    const auto version = r.u16();
    if (version != 1)
      throw IngestError(id + ": unsupported DVSF version " + std::to_string(version));
    const int rows = r.u16();
    const int cols = r.u16();
    const int label = r.u8();
    if (rows != kFrameRows || cols != kFrameCols)
      throw IngestError(id + ": frame is " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", expected 256x11");
    if (label >= static_cast<int>(kClassNames.size()))
      throw IngestError(id + ": unknown label " + std::to_string(label));
    LabeledSample s;
    s.id = id;
    s.label = label;
    for (float &v : s.frame.flat()) v = r.f32();
    if (!r.at_end()) throw IngestError(id + ": trailing bytes after frame data");
    return s;
  } catch (const FormatError &e) {
    throw IngestError(e.what());
  }
}

void write_dvsf(const fs::path &path, const TensorF &frame, int label) {
  write_file_atomic(path, encode_dvsf(frame, label));
}

LabeledSample read_dvsf(const fs::path &path, const std::string &id) {
  const auto bytes = read_file_bytes(path);
  LabeledSample s = decode_dvsf(bytes, path.string());
  s.id = id.empty() ? path.stem().string() : id;
  return s;
}

DatasetManifest read_manifest(const fs::path &path) {
  json j;
  try {
    j = json::parse(read_file_text(path));
  } catch (const json::exception &e) {
    throw IngestError(path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.name = j.value("name", path.parent_path().filename().string());
    for (const auto &e : j.at("samples")) {
      ManifestEntry me;
      me.id = e.at("id").get<std::string>();
      me.file = e.value("file", "");
      const auto &lab = e.at("label");
      me.label = lab.is_number_integer() ? lab.get<int>() : class_index(lab.get<std::string>());
      if (me.label < 0 || me.label >= static_cast<int>(kClassNames.size()))
        throw IngestError(path.string() + ": sample '" + me.id + "' has unknown label");
      m.samples.push_back(std::move(me));
    }
  } catch (const json::exception &e) {
    throw IngestError(path.string() + ": " + e.what());
  }
  std::sort(m.samples.begin(), m.samples.end(),
            [](const ManifestEntry &a, const ManifestEntry &b) { return a.id < b.id; });
  for (std::size_t i = 1; i < m.samples.size(); ++i)
    if (m.samples[i].id == m.samples[i - 1].id)
      throw IngestError(path.string() + ": duplicate sample id '" + m.samples[i].id + "'");
  m.recount();
  if (j.contains("counts")) {
    for (std::size_t c = 0; c < kClassNames.size(); ++c) {
      const auto stated = j["counts"].value(kClassNames[c], std::size_t{0});
      if (stated != m.counts[c])
        throw IngestError(path.string() + ": counts for '" + kClassNames[c] +
                          "' do not match the sample list");
    }
  }
  return m;
}

void write_manifest(const fs::path &path, const DatasetManifest &m) {
  json j;
  j["name"] = m.name;
  j["version"] = 1;
  j["class_names"] = kClassNames;
  json counts = json::object();
  for (std::size_t c = 0; c < kClassNames.size(); ++c) counts[kClassNames[c]] = m.counts[c];
  j["counts"] = counts;
  json samples = json::array();
  for (const auto &e : m.samples)
    samples.push_back({{"id", e.id}, {"file", e.file}, {"label", e.label}});
  j["samples"] = std::move(samples);
  write_file_atomic(path, j.dump(1) + "\n");
}

namespace {

Dataset load_manifest_dataset(const fs::path &manifest_path) {
  Dataset d;
  d.manifest = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  d.samples.reserve(d.manifest.samples.size());
  for (const auto &e : d.manifest.samples) {
    LabeledSample s = read_dvsf(base / e.file, e.id);
    if (s.label != e.label)
      throw IngestError((base / e.file).string() + ": label " + std::to_string(s.label) +
                        " disagrees with manifest label " + std::to_string(e.label));
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace

Dataset read_csv_dataset(const fs::path &path) {
  std::istringstream in(read_file_text(path));
  std::string line;
  if (!std::getline(in, line)) throw IngestError(path.string() + ": empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::size_t expected = static_cast<std::size_t>(kFrameRows) * kFrameCols;
  {
    std::size_t fields = 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    if (line.rfind("label,", 0) != 0 || fields != expected + 1)
      throw IngestError(path.string() + ": header must be label,r0c0,...,r255c10");
  }
  Dataset d;
  d.manifest.name = path.stem().string();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    LabeledSample s;
    std::size_t pos = line.find(',');
    if (pos == std::string::npos) throw IngestError(where + ": missing values");
    s.label = class_index(line.substr(0, pos));
    std::size_t k = 0;
    auto flat = s.frame.flat();
    const char *p = line.data() + pos + 1;
    const char *end = line.data() + line.size();
    while (p <= end && k < expected + 1) {
      const char *comma = std::find(p, end, ',');
      float v = 0;
      const auto [ptr, ec] = std::from_chars(p, comma, v);
      if (ec != std::errc() || ptr != comma)
        throw ParseError(where + ": bad value in column " + std::to_string(k + 2));
      if (k < expected) flat[k] = v;
      ++k;
      p = comma + 1;
      if (comma == end) break;
    }
    if (k != expected)
      throw IngestError(where + ": row has " + std::to_string(k) + " values, expected " +
                        std::to_string(expected));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06zu", d.samples.size());
    s.id = d.manifest.name + "-" + buf;
    d.manifest.samples.push_back({s.id, "", s.label});
    d.samples.push_back(std::move(s));
  }
  d.manifest.recount();
  return d;
}

Dataset dataset_ingest(const fs::path &path) {
  if (fs::is_directory(path)) {
    const fs::path m = path / "manifest.json";
    if (!fs::exists(m)) throw IngestError(path.string() + ": no manifest.json");
    return load_manifest_dataset(m);
  }
  if (!fs::exists(path)) throw IngestError(path.string() + ": no such file or directory");
  if (path.extension() == ".csv") return read_csv_dataset(path);
  return load_manifest_dataset(path);
}

DatasetManifest write_dataset(const fs::path &dir, const std::string &name,
                              const std::vector<LabeledSample> &samples) {
  fs::create_directories(dir);
  DatasetManifest m;
  m.name = name;
  for (const auto &s : samples) {
    const std::string file = s.id + ".dvsf";
    write_dvsf(dir / file, s.frame, s.label);
    m.samples.push_back({s.id, file, s.label});
  }
  std::sort(m.samples.begin(), m.samples.end(),
            [](const ManifestEntry &a, const ManifestEntry &b) { return a.id < b.id; });
  m.recount();
  write_manifest(dir / "manifest.json", m);
  return m;
}

DatasetManifest convert_csv(const fs::path &csv, const fs::path &out_dir) {
  const Dataset d = read_csv_dataset(csv);
  return write_dataset(out_dir, d.manifest.name, d.samples);
}

namespace {

struct Textures {
  // Ranges are [lo, hi) for uniform draws.
  double hammer_tau[2], hammer_amp[2];
  double pick_period[2], pick_len[2];
  double band_freq[2], band_width[2];
  double clutter;  // amplitude of a slow background drift shared by all classes
  double mix;      // weight of a faint event of another class
};

constexpr Textures kBaseTextures{{2, 5}, {1.5, 3.0}, {18, 30}, {6, 10},
                                 {0.01, 0.04}, {2.0, 4.0}, 0.0, 0.0};
constexpr Textures kShiftedTextures{{2.5, 6}, {1.3, 2.8}, {20, 34}, {6, 11},
                                    {0.015, 0.045}, {1.8, 3.5}, 0.2, 0.2};

double uniform(std::mt19937_64 &rng, const double (&r)[2]) {
  return r[0] + (r[1] - r[0]) * uniform01(rng);
}

double spatial(double s, double center, double sigma) {
  const double d = s - center;
  return std::exp(-d * d / (2 * sigma * sigma));
}

void add_event(TensorF &f, int cls, const Textures &tx, double weight,
               std::mt19937_64 &rng) {
  constexpr double kTwoPi = 6.283185307179586;
  const double center = 2 + 6 * uniform01(rng);
  switch (cls) {
    case 0: {  // impulsive bursts
      const int hits = 3 + static_cast<int>(uniform_index(rng, 6));
      for (int h = 0; h < hits; ++h) {
        const double t0 = 250 * uniform01(rng);
        const double tau = uniform(rng, tx.hammer_tau);
        const double amp = uniform(rng, tx.hammer_amp) * weight;
        const double freq = 0.2 + 0.15 * uniform01(rng);
        const double sigma = 0.8 + 0.7 * uniform01(rng);
        for (int t = static_cast<int>(std::ceil(t0)); t < kFrameRows; ++t) {
          const double dt = t - t0;
          if (dt > 8 * tau) break;
          const double v = amp * std::exp(-dt / tau) * std::sin(kTwoPi * freq * dt);
          for (int s = 0; s < kFrameCols; ++s)
            f(0, t, s) += static_cast<float>(v * spatial(s, center, sigma));
        }
      }
      break;
    }
    case 1: {  // periodic bursts
      const double period = uniform(rng, tx.pick_period);
      const double len = uniform(rng, tx.pick_len);
      const double freq = 0.15 + 0.15 * uniform01(rng);
      const double amp = (1.0 + uniform01(rng)) * weight;
      const double sigma = 0.8 + 0.7 * uniform01(rng);
      const double phase = period * uniform01(rng);
      for (int t = 0; t < kFrameRows; ++t) {
        const double u = std::fmod(t + phase, period);
        if (u >= len) continue;
        const double env = std::sin(kTwoPi * 0.5 * u / len);
        const double v = amp * env * env * std::sin(kTwoPi * freq * t);
        for (int s = 0; s < kFrameCols; ++s)
          f(0, t, s) += static_cast<float>(v * spatial(s, center, sigma));
      }
      break;
    }
    default: {  // low-frequency sustained band
      const double f1 = uniform(rng, tx.band_freq);
      const double f2 = uniform(rng, tx.band_freq);
      const double p1 = kTwoPi * uniform01(rng);
      const double p2 = kTwoPi * uniform01(rng);
      const double amp = (0.8 + 0.7 * uniform01(rng)) * weight;
      const double sigma = uniform(rng, tx.band_width);
      const double mod = 0.005 + 0.01 * uniform01(rng);
      for (int t = 0; t < kFrameRows; ++t) {
        const double env = 0.75 + 0.25 * std::sin(kTwoPi * mod * t);
        const double v = amp * env *
                         (std::sin(kTwoPi * f1 * t + p1) + 0.6 * std::sin(kTwoPi * f2 * t + p2));
        for (int s = 0; s < kFrameCols; ++s)
          f(0, t, s) += static_cast<float>(v * spatial(s, center, sigma));
      }
      break;
    }
  }
}

}  // namespace

std::vector<LabeledSample> synth_samples(std::uint64_t seed, std::size_t per_class,
                                         SynthVariant variant, const SynthConfig &cfg) {
  if (per_class < 1) throw ConfigError("per-class count must be >= 1");
  const bool shifted = variant == SynthVariant::Shifted;
  const Textures &tx = shifted ? kShiftedTextures : kBaseTextures;
  const double noise = shifted ? cfg.shifted_noise : cfg.noise;
  auto rng = named_stream(seed, shifted ? "synth-shifted" : "synth");
  std::vector<LabeledSample> out;
  out.reserve(per_class * 3);
  const char *tag = shifted ? "shifted" : "base";
  for (int cls = 0; cls < 3; ++cls) {
    for (std::size_t i = 0; i < per_class; ++i) {
      LabeledSample s;
      s.label = cls;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s-%d-%06zu", tag, cls, i);
      s.id = buf;
      for (float &v : s.frame.flat()) v = static_cast<float>(noise * standard_normal(rng));
      add_event(s.frame, cls, tx, 1.0, rng);
      if (tx.mix > 0) {
        const int other = (cls + 1 + static_cast<int>(uniform_index(rng, 2))) % 3;
        add_event(s.frame, other, tx, tx.mix, rng);
      }
      if (tx.clutter > 0) {
        const double freq = 0.002 + 0.006 * uniform01(rng);
        const double phase = 6.283185307179586 * uniform01(rng);
        for (int t = 0; t < kFrameRows; ++t) {
          const float v = static_cast<float>(
              tx.clutter * std::sin(6.283185307179586 * freq * t + phase));
          for (int c = 0; c < kFrameCols; ++c) s.frame(0, t, c) += v;
        }
      }
      out.push_back(std::move(s));
    }
  }
  std::sort(out.begin(), out.end(),
            [](const LabeledSample &a, const LabeledSample &b) { return a.id < b.id; });
  return out;
}

SynthOutput synth_dataset_generate(std::uint64_t seed, std::size_t per_class,
                                   const fs::path &dir, const SynthConfig &cfg) {
  SynthOutput o;
  o.base = write_dataset(dir / "base", "synthetic-base",
                         synth_samples(seed, per_class, SynthVariant::Base, cfg));
  o.shifted = write_dataset(dir / "shifted", "synthetic-shifted",
                            synth_samples(seed, per_class, SynthVariant::Shifted, cfg));
  return o;
}

TensorF Normalization::apply(const TensorF &frame) const {
  TensorF out(frame.shape());
  const float m = static_cast<float>(mean);
  const float inv = static_cast<float>(1.0 / stddev);
  out.matrix() = ((frame.matrix().array() - m) * inv).matrix();
  return out;
}

TensorD Normalization::apply_double(const TensorF &frame) const {
  return apply(frame).cast<double>();
}

Normalization compute_normalization(const std::vector<LabeledSample> &samples,
                                    std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("normalization needs at least one sample");
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (std::size_t i : indices) {
    for (float v : samples.at(i).frame.flat()) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
    n += samples[i].frame.size();
  }
  Normalization r;
  r.mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - r.mean * r.mean);
  r.stddev = var > 0 ? std::sqrt(var) : 1.0;
  return r;
}

void write_normalization(const fs::path &path, const Normalization &n) {
  json j{{"mean", n.mean}, {"std", n.stddev}};
  write_file_atomic(path, j.dump(1) + "\n");
}

Normalization read_normalization(const fs::path &path) {
  try {
    const json j = json::parse(read_file_text(path));
    Normalization n{j.at("mean").get<double>(), j.at("std").get<double>()};
    if (!(n.stddev > 0)) throw IngestError(path.string() + ": std must be > 0");
    return n;
  } catch (const json::exception &e) {
    throw IngestError(path.string() + ": " + e.what());
  }
}

fs::path normalization_path(const fs::path &weights) {
  return fs::path(weights.string() + ".norm.json");
}

}  // namespace shiftadd
