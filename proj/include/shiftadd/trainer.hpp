// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shiftadd/dataset.hpp"
#include "shiftadd/kd.hpp"
#include "shiftadd/model.hpp"

namespace shiftadd {

/// Teacher logits keyed by sample id.
struct TeacherLogits {
  std::map<std::string, std::vector<double>> table;

  const std::vector<double> &at(const std::string &id) const;
  std::size_t size() const { return table.size(); }
};

/// Parses `sample_id,l0,l1,l2` lines. ParseError carries the line number;
/// IngestError when the record count differs from `expected_ids` or an id
/// is missing. An empty `expected_ids` with an empty file is accepted.
TeacherLogits teacher_logits_load(const std::filesystem::path &path,
                                  const std::vector<std::string> &expected_ids);
TeacherLogits teacher_logits_parse(const std::string &text, const std::string &source,
                                   const std::vector<std::string> &expected_ids);
void teacher_logits_write(const std::filesystem::path &path,
                          const std::vector<std::string> &ids,
                          const std::vector<std::vector<double>> &logits);

struct TrainConfig {
  int batch_size = 64;
  int max_epochs = 100;
  double lr = 1e-3;
  double min_lr = 1e-6;  // stop once the schedule drops below
  int patience = 5;
  KDConfig kd;
  bool use_teacher = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double lr = 0;  // rate used during the epoch
};

struct TrainResult {
  ModelParams<float> params;  // batchnorm unfolded, running statistics set
  Normalization norm;
  std::vector<EpochRecord> history;
  double initial_loss = 0;
};

/// Trains from init_params(seed) on samples[indices]. Frames are
/// standardized with `norm`. When cfg.use_teacher is set, `teacher` must
/// hold logits for every training sample.
TrainResult train_model(const ModelSpec &spec, const std::vector<LabeledSample> &samples,
                        std::span<const std::size_t> indices, const Normalization &norm,
                        const TrainConfig &cfg, std::uint64_t seed,
                        const TeacherLogits *teacher = nullptr);

struct Evaluation {
  double accuracy = 0;
  double loss = 0;  // mean cross entropy
  std::vector<int> predictions;
  std::vector<std::vector<double>> logits;
};

/// Eval-mode float inference over samples[indices] (all samples if empty).
Evaluation evaluate(const ModelSpec &spec, const ModelParams<float> &params,
                    const std::vector<LabeledSample> &samples,
                    std::span<const std::size_t> indices, const Normalization &norm);

/// Stratified assignment: each class is shuffled with the "folds" stream,
/// then dealt round-robin over the k folds with one counter running across
/// classes. StratificationError if a present class has fewer than k
/// samples, since some fold would then lack it.
std::vector<int> assign_folds(const std::vector<int> &labels, int k, std::uint64_t seed);

struct FoldResult {
  int fold = 0;
  double val_accuracy = 0;
  double test_accuracy = 0;
  TrainResult train;
};

struct KFoldResult {
  std::vector<int> assignment;
  std::vector<FoldResult> folds;
  double mean_val_accuracy = 0;
  double mean_test_accuracy = 0;
};

/// k-fold protocol: train on k-1 folds of `dataset1`, validate on the held
/// out fold, test on `dataset2` (skipped when empty). Normalization is
/// computed on the training folds of each split. A supplied `assignment`
/// (fold per dataset1 sample) replaces the seeded one.
KFoldResult kfold_train(const std::vector<LabeledSample> &dataset1,
                        const std::vector<LabeledSample> &dataset2, const ModelSpec &spec,
                        const TrainConfig &cfg, std::uint64_t seed, int k = 5,
                        const TeacherLogits *teacher = nullptr,
                        const std::vector<int> *assignment = nullptr);

}  // namespace shiftadd
