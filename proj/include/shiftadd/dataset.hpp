// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sample files, manifests and the synthetic vibration-event generator.
//
// DVSF sample file (little-endian):
//   "DVSF"  u16 version (1)  u16 rows  u16 cols  u8 label
//   rows*cols f32 values, row-major (row = time, col = space)
//
// Manifest (manifest.json): {"name", "version", "class_names", "counts",
// "samples": [{"id", "file", "label"}]} with files relative to the manifest.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "shiftadd/tensor.hpp"

namespace shiftadd {

inline constexpr std::array<const char *, 3> kClassNames = {"Hammer", "Air Pick",
                                                            "Excavator"};
inline constexpr int kFrameRows = 256;
inline constexpr int kFrameCols = 11;

/// Class index for a name or decimal index; IngestError otherwise.
int class_index(const std::string &name_or_index);

struct LabeledSample {
  std::string id;
  int label = 0;
  TensorF frame{1, kFrameRows, kFrameCols};
};

struct ManifestEntry {
  std::string id;
  std::string file;
  int label = 0;
};

struct DatasetManifest {
  std::string name;
  std::vector<ManifestEntry> samples;
  std::array<std::size_t, 3> counts{};

  void recount();
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<LabeledSample> samples;  // sorted by id

  std::vector<int> labels() const;
  std::vector<std::string> ids() const;
};

std::vector<std::uint8_t> encode_dvsf(const TensorF &frame, int label);
LabeledSample decode_dvsf(std::span<const std::uint8_t> bytes, const std::string &id);
void write_dvsf(const std::filesystem::path &path, const TensorF &frame, int label);
LabeledSample read_dvsf(const std::filesystem::path &path, const std::string &id = "");

/// Reads and validates a manifest without loading sample files.
DatasetManifest read_manifest(const std::filesystem::path &path);
void write_manifest(const std::filesystem::path &path, const DatasetManifest &m);

/// Loads a dataset from a directory holding manifest.json, a manifest file,
/// or a CSV file (header label,r0c0,...,r255c10). Frames must be 1x256x11.
Dataset dataset_ingest(const std::filesystem::path &path);

/// Parses the CSV form; sample ids are "<stem>-<row>" with a zero-padded
/// row number.
Dataset read_csv_dataset(const std::filesystem::path &path);
/// Writes a CSV file as DVSF samples plus a manifest into `out_dir`.
DatasetManifest convert_csv(const std::filesystem::path &csv,
                            const std::filesystem::path &out_dir);
/// Writes every sample as DVSF plus a manifest into `dir`.
DatasetManifest write_dataset(const std::filesystem::path &dir, const std::string &name,
                              const std::vector<LabeledSample> &samples);

enum class SynthVariant { Base, Shifted };

struct SynthConfig {
  double noise = 0.35;  // base noise standard deviation
  double shifted_noise = 0.42;
};

/// Deterministic synthetic frames, per_class samples of each class, ids
/// "<variant>-<class>-<index>".
std::vector<LabeledSample> synth_samples(std::uint64_t seed, std::size_t per_class,
                                         SynthVariant variant, const SynthConfig &cfg = {});

struct SynthOutput {
  DatasetManifest base;
  DatasetManifest shifted;
};

/// Writes `dir`/base and `dir`/shifted, each with a manifest.
SynthOutput synth_dataset_generate(std::uint64_t seed, std::size_t per_class,
                                   const std::filesystem::path &dir,
                                   const SynthConfig &cfg = {});

/// Global standardization statistics.
struct Normalization {
  double mean = 0.0;
  double stddev = 1.0;

  TensorF apply(const TensorF &frame) const;
  TensorD apply_double(const TensorF &frame) const;
  bool operator==(const Normalization &) const = default;
};

Normalization compute_normalization(const std::vector<LabeledSample> &samples,
                                    std::span<const std::size_t> indices);
void write_normalization(const std::filesystem::path &path, const Normalization &n);
Normalization read_normalization(const std::filesystem::path &path);
/// Sidecar path for a weight file: "<weights>.norm.json".
std::filesystem::path normalization_path(const std::filesystem::path &weights);

}  // namespace shiftadd
