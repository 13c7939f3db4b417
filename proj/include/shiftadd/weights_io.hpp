// SPDX-License-Identifier: Apache-2.0
#pragma once

// "SACW" float weight files.
//
//   magic "SACW" | u16 version (=1) | u16 layer count
//   per layer: u8 kind tag | u16 M, N, P, Q, S, pad | payload
//
// Layer 0 is the input pseudo-layer (M = channels, P = rows, Q = cols). The
// kind tag's low nibble is the LayerKind, bit 4 flags ReLU and bit 5 flags
// batchnorm. Conv payload: kernel f32 in [m][n][p][q] order, then bias[M];
// when the batchnorm bit is set, gamma[M], beta[M], mean[M], var[M] and one
// f32 epsilon follow. Dense payload: weights [out][in] then bias[out]. Pools
// and flatten carry no payload. All values are little-endian IEEE-754.

#include <filesystem>
#include <vector>

#include "shiftadd/binary_io.hpp"
#include "shiftadd/model.hpp"

namespace shiftadd {

inline constexpr std::uint16_t kSacwVersion = 1;

struct LayerHeader {
  std::uint8_t tag = 0;
  std::uint16_t m = 0, n = 0, p = 0, q = 0, s = 0, pad = 0;
};

/// Headers for the input pseudo-layer followed by every spec layer.
std::vector<LayerHeader> layer_headers(const ModelSpec &spec);
void write_layer_header(ByteWriter &w, const LayerHeader &h);
LayerHeader read_layer_header(ByteReader &r);
/// Rebuilds a spec (with conventional layer names) from headers.
ModelSpec spec_from_headers(const std::vector<LayerHeader> &headers);

struct WeightFile {
  ModelSpec spec;
  ModelParams<double> params;
};

std::vector<std::uint8_t> encode_sacw(const ModelSpec &spec,
                                      const ModelParams<double> &params);
WeightFile decode_sacw(const std::vector<std::uint8_t> &bytes,
                       const std::string &source = "<memory>");

void write_sacw(const std::filesystem::path &path, const ModelSpec &spec,
                const ModelParams<double> &params);
WeightFile read_sacw(const std::filesystem::path &path);

}  // namespace shiftadd
