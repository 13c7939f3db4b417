// SPDX-License-Identifier: Apache-2.0
#pragma once

// "SAQM" quantized model files.
//
//   magic "SAQM" | u16 version (=1) | u8 N | u8 bits | u8 F | u8 I
//   | u16 layer count
//   per layer: SACW layer header | i16 encoding bias | packed weights
//
// Layer records mirror SACW, including the input pseudo-layer. Layers
// without parameters carry bias 0 and no packed data. Packed weights are a
// little-endian bit stream (bit 0 of byte 0 first), byte-aligned at the end
// of each layer. Per parameter, in kernel-then-bias order:
//
//   sign (2 bits: 00 zero, 01 positive, 11 negative)
//   term count (4 bits)
//   term count codes of `bits` bits each; shift magnitude = code + bias
//
// The file stores the already-encoded model, so shifts read back equal the
// post-encoding shifts of the writer.

#include <filesystem>
#include <vector>

#include "shiftadd/quant.hpp"

namespace shiftadd {

inline constexpr std::uint16_t kSaqmVersion = 1;

std::vector<std::uint8_t> encode_saqm(const QuantizedModel &q);
QuantizedModel decode_saqm(const std::vector<std::uint8_t> &bytes,
                           const std::string &source = "<memory>");

void write_saqm(const std::filesystem::path &path, const QuantizedModel &q);
QuantizedModel read_saqm(const std::filesystem::path &path);

}  // namespace shiftadd
