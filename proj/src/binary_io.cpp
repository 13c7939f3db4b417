// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/binary_io.hpp"

#include <fstream>
#include <iterator>
#include <system_error>

namespace shiftadd {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_file_text(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

void write_raw_atomic(const std::filesystem::path &path, const char *data,
                      std::size_t size) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + tmp.string());
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw Error("io", "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("io", "rename " + tmp.string() + ": " + ec.message());
}

}  // namespace

void write_file_atomic(const std::filesystem::path &path,
                       const std::vector<std::uint8_t> &bytes) {
  write_raw_atomic(path, reinterpret_cast<const char *>(bytes.data()),
                   bytes.size());
}

void write_file_atomic(const std::filesystem::path &path,
                       std::string_view text) {
  write_raw_atomic(path, text.data(), text.size());
}

}  // namespace shiftadd
