// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <numeric>

#include "helpers.hpp"
#include "shiftadd/trainer.hpp"

using namespace shiftadd;

namespace {

std::vector<std::size_t> all(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_CASE("teacher logits parsing") {
  const std::vector<std::string> ids{"a", "b"};
  const TeacherLogits t = teacher_logits_parse("a,1,2,3\nb,-1,0.5,1e-3\n", "t.csv", ids);
  CHECK(t.size() == 2);
  CHECK(t.at("b")[1] == 0.5);
  CHECK_THROWS_AS(t.at("zz"), IngestError);
  try {
    teacher_logits_parse("a,1,2,3\nb,1,x,3\n", "t.csv", ids);
    FAIL("expected ParseError");
  } catch (const ParseError &e) {
    CHECK(std::string(e.what()).find("t.csv:2") != std::string::npos);
  }
  CHECK_THROWS_AS(teacher_logits_parse("a,1,2\nb,1,2,3\n", "t.csv", ids), ParseError);
  CHECK_THROWS_AS(teacher_logits_parse("a,1,2,3\na,1,2,3\n", "t.csv", ids), ParseError);
  CHECK_THROWS_AS(teacher_logits_parse("a,1,2,3\n", "t.csv", ids), IngestError);
  CHECK_THROWS_AS(teacher_logits_parse("a,1,2,3\nc,1,2,3\n", "t.csv", ids), IngestError);
  CHECK(teacher_logits_parse("", "t.csv", {}).size() == 0);

  const auto dir = testing::scratch_dir("teacher");
  teacher_logits_write(dir / "t.csv", ids, {{0.1, 0.2, 0.3}, {1.0 / 3, -2, 5}});
  const TeacherLogits back = teacher_logits_load(dir / "t.csv", ids);
  CHECK(back.at("b")[0] == 1.0 / 3);
}

TEST_CASE("stratified folds on a toy set") {
  const std::vector<int> labels{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const auto folds = assign_folds(labels, 5, 3);
  std::array<std::array<int, 2>, 5> per{};
  for (std::size_t i = 0; i < labels.size(); ++i)
    ++per[static_cast<std::size_t>(folds[i])][static_cast<std::size_t>(labels[i])];
  for (const auto &f : per) CHECK(f == std::array<int, 2>{1, 1});
  CHECK(assign_folds(labels, 5, 3) == folds);
  CHECK_THROWS_AS(assign_folds({0, 0, 0, 1, 1, 1, 1, 1}, 5, 1), StratificationError);
  CHECK_THROWS_AS(assign_folds(labels, 1, 1), ConfigError);
}

TEST_CASE("fold sizes stay balanced across classes") {
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 7 + c; ++i) labels.push_back(c);
  const auto folds = assign_folds(labels, 5, 9);
  std::array<int, 5> sizes{};
  for (int f : folds) ++sizes[static_cast<std::size_t>(f)];
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  CHECK(*hi - *lo <= 1);
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto samples = synth_samples(5, 20, SynthVariant::Base);
  const auto idx = all(samples.size());
  const Normalization norm = compute_normalization(samples, idx);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.batch_size = 16;
  const ModelSpec spec = ModelSpec::student();
  const TrainResult a = train_model(spec, samples, idx, norm, cfg, 7);
  const TrainResult b = train_model(spec, samples, idx, norm, cfg, 7);
  REQUIRE(a.history.size() == 4);
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    if (a.params.layers[l].conv) CHECK(a.params.layers[l].conv->kernel == b.params.layers[l].conv->kernel);
    if (a.params.layers[l].bn) CHECK(a.params.layers[l].bn->mean == b.params.layers[l].bn->mean);
  }
  CHECK(a.history.back().train_loss < a.initial_loss);
  CHECK(a.history.front().lr == cfg.lr);
}

TEST_CASE("distillation needs logits for every sample") {
  const auto samples = synth_samples(5, 2, SynthVariant::Base);
  const auto idx = all(samples.size());
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.use_teacher = true;
  TeacherLogits t;
  CHECK_THROWS_AS(train_model(ModelSpec::student(), samples, idx,
                              compute_normalization(samples, idx), cfg, 1, &t),
                  Error);
}

TEST_CASE("k-fold rejects an assignment with an empty fold") {
  const auto samples = synth_samples(5, 2, SynthVariant::Base);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  std::vector<int> a(samples.size(), 0);
  a[0] = 1;
  CHECK_THROWS_AS(kfold_train(samples, {}, ModelSpec::student(), cfg, 1, 3, nullptr, &a),
                  StratificationError);
  std::vector<int> short_a(2, 0);
  CHECK_THROWS_AS(kfold_train(samples, {}, ModelSpec::student(), cfg, 1, 2, nullptr, &short_a),
                  ConfigError);
}

TEST_CASE("shifted variant shows a generalization gap") {
  const auto train = synth_samples(21, 100, SynthVariant::Base);
  const auto held = synth_samples(22, 100, SynthVariant::Base);
  const auto shifted = synth_samples(23, 100, SynthVariant::Shifted);
  const auto idx = all(train.size());
  const Normalization norm = compute_normalization(train, idx);
  TrainConfig cfg;
  cfg.max_epochs = 10;
  const TrainResult r = train_model(ModelSpec::student(), train, idx, norm, cfg, 1);
  const double base_acc = evaluate(ModelSpec::student(), r.params, held, {}, norm).accuracy;
  const double shifted_acc = evaluate(ModelSpec::student(), r.params, shifted, {}, norm).accuracy;
  CAPTURE(base_acc);
  CAPTURE(shifted_acc);
  CHECK(shifted_acc < base_acc);
  CHECK(base_acc > 0.5);
}
