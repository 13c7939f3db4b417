// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <json.hpp>

#include "helpers.hpp"
#include "shiftadd/binary_io.hpp"
#include "shiftadd/dataset.hpp"

using namespace shiftadd;
namespace fs = std::filesystem;

namespace {

TensorF ramp_frame(float base) {
  TensorF f(1, kFrameRows, kFrameCols);
  float v = base;
  for (auto &x : f.flat()) x = v += 0.25f;
  return f;
}

std::string read_all(const fs::path &p) { return read_file_text(p); }

std::string csv_header() {
  std::string h = "label";
  for (int r = 0; r < kFrameRows; ++r)
    for (int c = 0; c < kFrameCols; ++c) h += ",r" + std::to_string(r) + "c" + std::to_string(c);
  return h + "\n";
}

std::string csv_row(const std::string &label, float value) {
  std::string row = label;
  for (int i = 0; i < kFrameRows * kFrameCols; ++i) row += "," + std::to_string(value);
  return row + "\n";
}

}  // namespace

TEST_CASE("class names map to fixed indices") {
  CHECK(class_index("Hammer") == 0);
  CHECK(class_index("Air Pick") == 1);
  CHECK(class_index("Excavator") == 2);
  CHECK(class_index("2") == 2);
  CHECK_THROWS_AS(class_index("Drill"), IngestError);
  CHECK_THROWS_AS(class_index("3"), IngestError);
}

TEST_CASE("DVSF round trip and validation") {
  const TensorF f = ramp_frame(0);
  const auto bytes = encode_dvsf(f, 2);
  CHECK(bytes.size() == 4 + 2 + 2 + 2 + 1 + 4 * 256 * 11);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DVSF");
  const LabeledSample s = decode_dvsf(bytes, "x");
  CHECK(s.label == 2);
  CHECK(s.frame == f);

  auto short_rows = bytes;
  short_rows[6] = 255;  // rows field = 255
  short_rows[7] = 0;
  short_rows.resize(short_rows.size() - 4 * 11);
  try {
    decode_dvsf(short_rows, "dir/bad.dvsf");
    FAIL("expected IngestError");
  } catch (const IngestError &e) {
    CHECK(std::string(e.what()).find("dir/bad.dvsf") != std::string::npos);
  }
  auto bad_label = bytes;
  bad_label[10] = 7;
  CHECK_THROWS_AS(decode_dvsf(bad_label, "x"), IngestError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_dvsf(trailing, "x"), IngestError);
  auto magic = bytes;
  magic[0] = 'Q';
  CHECK_THROWS_AS(decode_dvsf(magic, "x"), IngestError);
}

TEST_CASE("directory ingest sorts by id and counts classes") {
  const fs::path dir = testing::scratch_dir("ingest");
  std::vector<LabeledSample> samples(3);
  const char *ids[] = {"c", "a", "b"};
  for (int i = 0; i < 3; ++i) {
    samples[static_cast<std::size_t>(i)].id = ids[i];
    samples[static_cast<std::size_t>(i)].label = i;
    samples[static_cast<std::size_t>(i)].frame = ramp_frame(static_cast<float>(i));
  }
  write_dataset(dir, "three", samples);
  const Dataset d = dataset_ingest(dir);
  CHECK(d.manifest.counts == std::array<std::size_t, 3>{1, 1, 1});
  CHECK(d.ids() == std::vector<std::string>{"a", "b", "c"});
  CHECK(d.labels() == std::vector<int>{1, 2, 0});
  CHECK(d.samples[0].frame == ramp_frame(1));

  write_dvsf(dir / "b.dvsf", ramp_frame(0), 0);
  CHECK_THROWS_AS(dataset_ingest(dir), IngestError);
  CHECK_THROWS_AS(dataset_ingest(dir / "missing"), IngestError);
}

TEST_CASE("manifest of the full first dataset layout") {
  const fs::path dir = testing::scratch_dir("manifest");
  nlohmann::json samples = nlohmann::json::array();
  const std::size_t counts[] = {3332, 3558, 3359};
  std::size_t n = 0;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "s%05zu", n++);
      samples.push_back({{"id", id}, {"file", std::string(id) + ".dvsf"}, {"label", kClassNames[c]}});
    }
  nlohmann::json j{{"name", "dataset1"},
                   {"counts", {{"Hammer", 3332}, {"Air Pick", 3558}, {"Excavator", 3359}}},
                   {"samples", samples}};
  write_file_atomic(dir / "manifest.json", j.dump());
  const DatasetManifest m = read_manifest(dir / "manifest.json");
  CHECK(m.samples.size() == 10249);
  CHECK(m.counts == std::array<std::size_t, 3>{3332, 3558, 3359});

  j["counts"]["Hammer"] = 3331;
  write_file_atomic(dir / "manifest.json", j.dump());
  CHECK_THROWS_AS(read_manifest(dir / "manifest.json"), IngestError);
  j["counts"]["Hammer"] = 3332;
  j["samples"][1]["id"] = j["samples"][0]["id"];
  write_file_atomic(dir / "manifest.json", j.dump());
  CHECK_THROWS_AS(read_manifest(dir / "manifest.json"), IngestError);
  j["samples"][1]["id"] = "zz";
  j["samples"][1]["label"] = "Drill";
  write_file_atomic(dir / "manifest.json", j.dump());
  CHECK_THROWS_AS(read_manifest(dir / "manifest.json"), IngestError);
}

TEST_CASE("CSV datasets") {
  const fs::path dir = testing::scratch_dir("csv");
  {
    std::ofstream out(dir / "set.csv");
    out << csv_header() << csv_row("Hammer", 0.5f) << csv_row("2", -1.0f);
  }
  const Dataset d = read_csv_dataset(dir / "set.csv");
  REQUIRE(d.samples.size() == 2);
  CHECK(d.samples[0].id == "set-000000");
  CHECK(d.samples[1].label == 2);
  CHECK(d.samples[1].frame(0, 255, 10) == -1.0f);

  const DatasetManifest m = convert_csv(dir / "set.csv", dir / "out");
  CHECK(m.counts == std::array<std::size_t, 3>{1, 0, 1});
  CHECK(dataset_ingest(dir / "out").samples[0].frame == d.samples[0].frame);

  {
    std::ofstream out(dir / "bad.csv");
    std::string row = csv_row("Hammer", 0.5f);
    row.replace(row.find(",0.5"), 4, ",abc");
    out << csv_header() << csv_row("Hammer", 0.5f) << row;
  }
  try {
    read_csv_dataset(dir / "bad.csv");
    FAIL("expected ParseError");
  } catch (const ParseError &e) {
    CHECK(std::string(e.what()).find("bad.csv:3") != std::string::npos);
  }
  {
    std::ofstream out(dir / "short.csv");
    std::string row = csv_row("Hammer", 0.5f);
    row.erase(row.rfind(','));
    out << csv_header() << row << "\n";
  }
  CHECK_THROWS_AS(read_csv_dataset(dir / "short.csv"), IngestError);
  {
    std::ofstream out(dir / "label.csv");
    out << csv_header() << csv_row("Drill", 0.5f);
  }
  CHECK_THROWS_AS(read_csv_dataset(dir / "label.csv"), IngestError);
  {
    std::ofstream out(dir / "header.csv");
    out << "label,a,b\n";
  }
  CHECK_THROWS_AS(read_csv_dataset(dir / "header.csv"), IngestError);
}

TEST_CASE("synthetic data is deterministic and balanced") {
  const fs::path a = testing::scratch_dir("synth-a");
  const fs::path b = testing::scratch_dir("synth-b");
  const SynthOutput oa = synth_dataset_generate(42, 4, a);
  synth_dataset_generate(42, 4, b);
  CHECK(oa.base.counts == std::array<std::size_t, 3>{4, 4, 4});
  CHECK(oa.shifted.counts == std::array<std::size_t, 3>{4, 4, 4});
  std::size_t files = 0;
  for (const auto &e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = b / fs::relative(e.path(), a);
    REQUIRE(fs::exists(other));
    CHECK(read_all(e.path()) == read_all(other));
  }
  CHECK(files == 2 * (12 + 1));

  const auto s1 = synth_samples(1, 100, SynthVariant::Base);
  CHECK(s1.size() == 300);
  const auto s2 = synth_samples(2, 1, SynthVariant::Base);
  CHECK_FALSE(s1[0].frame == s2[0].frame);
  CHECK_THROWS_AS(synth_samples(1, 0, SynthVariant::Base), ConfigError);
}

TEST_CASE("normalization") {
  std::vector<LabeledSample> s(2);
  s[0].frame = TensorF::constant({1, kFrameRows, kFrameCols}, 1.0f);
  s[1].frame = TensorF::constant({1, kFrameRows, kFrameCols}, 3.0f);
  const std::vector<std::size_t> idx{0, 1};
  const Normalization n = compute_normalization(s, idx);
  CHECK(n.mean == doctest::Approx(2.0));
  CHECK(n.stddev == doctest::Approx(1.0));
  CHECK(n.apply(s[1].frame)(0, 0, 0) == doctest::Approx(1.0));
  const fs::path dir = testing::scratch_dir("norm");
  write_normalization(dir / "n.json", n);
  CHECK(read_normalization(dir / "n.json") == n);
  CHECK(normalization_path("a/model.sacw") == fs::path("a/model.sacw.norm.json"));
}
