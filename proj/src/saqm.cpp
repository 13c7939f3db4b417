// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/saqm.hpp"

#include "shiftadd/binary_io.hpp"
#include "shiftadd/weights_io.hpp"

namespace shiftadd {

namespace {

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t> &out) : out_(out) {}
  void put(unsigned value, int width) {
    for (int i = 0; i < width; ++i) {
      if (fill_ == 0) out_.push_back(0);
      if ((value >> i) & 1u) out_.back() |= static_cast<std::uint8_t>(1u << fill_);
      fill_ = (fill_ + 1) % 8;
    }
  }
  void align() { fill_ = 0; }

 private:
  std::vector<std::uint8_t> &out_;
  int fill_ = 0;
};

class BitReader {
 public:
  explicit BitReader(ByteReader &in) : in_(in) {}
  unsigned get(int width) {
    unsigned v = 0;
    for (int i = 0; i < width; ++i) {
      if (fill_ == 0) byte_ = in_.u8();
      v |= static_cast<unsigned>((byte_ >> fill_) & 1u) << i;
      fill_ = (fill_ + 1) % 8;
    }
    return v;
  }
  void align() { fill_ = 0; }

 private:
  ByteReader &in_;
  std::uint8_t byte_ = 0;
  int fill_ = 0;
};

std::size_t param_count_of(const LayerHeader &h) {
  const auto kind = static_cast<LayerKind>(h.tag & 0x0f);
  if (kind == LayerKind::Conv)
    return static_cast<std::size_t>(h.m) * h.n * h.p * h.q + h.m;
  if (kind == LayerKind::Dense) return static_cast<std::size_t>(h.m) * h.n + h.m;
  return 0;
}

std::size_t weight_count_of(const LayerHeader &h) {
  return param_count_of(h) - ((h.tag & 0x0f) == 0 ? 0 : h.m);
}

}  // namespace

std::vector<std::uint8_t> encode_saqm(const QuantizedModel &q) {
  if (q.bits < 1 || q.bits > 8)
    throw FormatError("SAQM requires an encoded model (bits in [1, 8])");
  const auto headers = layer_headers(q.spec);
  ByteWriter w;
  w.bytes("SAQM");
  w.u16(kSaqmVersion);
  w.u8(static_cast<std::uint8_t>(q.terms));
  w.u8(static_cast<std::uint8_t>(q.bits));
  w.u8(static_cast<std::uint8_t>(q.frame.fraction_bits));
  w.u8(static_cast<std::uint8_t>(q.frame.integer_bits));
  w.u16(static_cast<std::uint16_t>(headers.size()));
  write_layer_header(w, headers[0]);
  w.i16(0);
  const unsigned max_code = (1u << q.bits) - 1u;
  for (std::size_t i = 0; i < q.spec.layers.size(); ++i) {
    write_layer_header(w, headers[i + 1]);
    const QuantizedLayer *ql = q.layer_for(i);
    if (!ql) {
      w.i16(0);
      continue;
    }
    if (ql->params.size() != param_count_of(headers[i + 1]))
      throw FormatError("layer '" + q.spec.layers[i].name +
                        "': parameter count does not match its header");
    w.i16(static_cast<std::int16_t>(ql->encoding_bias));
    BitWriter bits(w.data());
    for (const ShiftQuantParam &p : ql->params) {
      if (p.shifts.size() > 15)
        throw FormatError("layer '" + q.spec.layers[i].name +
                          "': more than 15 terms cannot be packed");
      bits.put(p.sign == 0 ? 0u : (p.sign > 0 ? 1u : 3u), 2);
      bits.put(static_cast<unsigned>(p.shifts.size()), 4);
      for (auto s : p.shifts) {
        const int code = static_cast<int>(s) - ql->encoding_bias;
        if (code < 0 || static_cast<unsigned>(code) > max_code)
          throw FormatError("layer '" + q.spec.layers[i].name +
                            "': shift outside encoded range (encode first)");
        bits.put(static_cast<unsigned>(code), q.bits);
      }
    }
    bits.align();
  }
  return std::move(w.data());
}

QuantizedModel decode_saqm(const std::vector<std::uint8_t> &bytes,
                           const std::string &source) {
  ByteReader r(bytes, source);
  r.expect_magic("SAQM");
  const auto version = r.u16();
  if (version != kSaqmVersion)
    throw FormatError(source + ": unsupported SAQM version " +
                      std::to_string(version));
  QuantizedModel q;
  q.terms = r.u8();
  q.bits = r.u8();
  q.frame.fraction_bits = r.u8();
  q.frame.integer_bits = r.u8();
  q.frame.validate();
  if (q.bits < 1 || q.bits > 8) throw FormatError(source + ": bad code width");
  const auto count = r.u16();
  if (count < 2) throw FormatError(source + ": too few layer records");
  std::vector<LayerHeader> headers;
  headers.push_back(read_layer_header(r));
  r.i16();
  for (std::uint16_t li = 1; li < count; ++li) {
    const LayerHeader h = read_layer_header(r);
    headers.push_back(h);
    const int bias = r.i16();
    const std::size_t n = param_count_of(h);
    if (n == 0) continue;
    QuantizedLayer ql;
    ql.layer_index = li - 1u;
    ql.weight_count = weight_count_of(h);
    ql.encoding_bias = bias;
    ql.params.resize(n);
    BitReader bits(r);
    for (ShiftQuantParam &p : ql.params) {
      const unsigned sign = bits.get(2);
      if (sign == 2) throw FormatError(source + ": invalid sign code");
      p.sign = sign == 0 ? 0 : (sign == 1 ? 1 : -1);
      const unsigned terms = bits.get(4);
      if ((terms == 0) != (p.sign == 0))
        throw FormatError(source + ": sign/term count disagree");
      for (unsigned t = 0; t < terms; ++t) {
        const unsigned code = bits.get(q.bits);
        const int shift = static_cast<int>(code) + bias;
        if (shift < 0 || shift > q.frame.max_shift())
          throw FormatError(source + ": decoded shift out of range");
        ql.codes.push_back(static_cast<std::uint8_t>(code));
        p.shifts.push_back(static_cast<std::uint8_t>(shift));
      }
    }
    bits.align();
    q.layers.push_back(std::move(ql));
  }
  if (!r.at_end()) throw FormatError(source + ": trailing bytes");
  q.spec = spec_from_headers(headers);
  for (const auto &l : q.spec.layers)
    if (l.batchnorm) throw FormatError(source + ": SAQM layers cannot carry batchnorm");
  return q;
}

void write_saqm(const std::filesystem::path &path, const QuantizedModel &q) {
  write_file_atomic(path, encode_saqm(q));
}

QuantizedModel read_saqm(const std::filesystem::path &path) {
  return decode_saqm(read_file_bytes(path), path.string());
}

}  // namespace shiftadd
