// SPDX-License-Identifier: Apache-2.0
#include "shiftadd/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "shiftadd/binary_io.hpp"
#include "shiftadd/network.hpp"
#include "shiftadd/optim.hpp"
#include "shiftadd/rng.hpp"

namespace shiftadd {

const std::vector<double> &TeacherLogits::at(const std::string &id) const {
  const auto it = table.find(id);
  if (it == table.end()) throw IngestError("no teacher logits for sample '" + id + "'");
  return it->second;
}

TeacherLogits teacher_logits_parse(const std::string &text, const std::string &source,
                                   const std::vector<std::string> &expected_ids) {
  TeacherLogits t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto comma = line.find(',');
    if (comma == std::string::npos || comma == 0)
      throw ParseError(where + ": expected sample_id,logit0,logit1,logit2");
    std::string id = line.substr(0, comma);
    std::vector<double> logits;
    const char *p = line.data() + comma + 1;
    const char *end = line.data() + line.size();
    while (true) {
      const char *next = std::find(p, end, ',');
      double v = 0;
      const auto [ptr, ec] = std::from_chars(p, next, v);
      if (ec != std::errc() || ptr != next || !std::isfinite(v))
        throw ParseError(where + ": malformed logit value");
      logits.push_back(v);
      if (next == end) break;
      p = next + 1;
    }
    if (logits.size() != kClassNames.size())
      throw ParseError(where + ": expected " + std::to_string(kClassNames.size()) +
                       " logits, found " + std::to_string(logits.size()));
    if (!t.table.emplace(std::move(id), std::move(logits)).second)
      throw ParseError(where + ": duplicate sample id");
  }
  if (t.table.size() != expected_ids.size())
    throw IngestError(source + ": " + std::to_string(t.table.size()) +
                      " teacher records for " + std::to_string(expected_ids.size()) +
                      " samples");
  for (const auto &id : expected_ids)
    if (!t.table.count(id))
      throw IngestError(source + ": no teacher record for sample '" + id + "'");
  return t;
}

TeacherLogits teacher_logits_load(const std::filesystem::path &path,
                                  const std::vector<std::string> &expected_ids) {
  return teacher_logits_parse(read_file_text(path), path.string(), expected_ids);
}

void teacher_logits_write(const std::filesystem::path &path,
                          const std::vector<std::string> &ids,
                          const std::vector<std::vector<double>> &logits) {
  if (ids.size() != logits.size()) throw ConfigError("id and logit counts differ");
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out += ids[i];
    for (double v : logits[i]) {
      const auto r = std::to_chars(buf, buf + sizeof buf, v);
      out += ',';
      out.append(buf, r.ptr);
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

namespace {

MatrixX<float> pack_normalized(const std::vector<LabeledSample> &samples,
                               std::span<const std::size_t> idx, const Normalization &norm) {
  const auto plane = static_cast<Eigen::Index>(kFrameRows) * kFrameCols;
  MatrixX<float> out(1, plane * static_cast<Eigen::Index>(idx.size()));
  const float m = static_cast<float>(norm.mean);
  const float inv = static_cast<float>(1.0 / norm.stddev);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const TensorF &f = samples.at(idx[b]).frame;
    if (f.shape() != Shape{1, kFrameRows, kFrameCols})
      throw ConfigError("sample '" + samples[idx[b]].id + "' is not 1x256x11");
    out.middleCols(static_cast<Eigen::Index>(b) * plane, plane) =
        ((f.matrix().array() - m) * inv).matrix();
  }
  return out;
}

MatrixX<double> teacher_block(const TeacherLogits &t, const std::vector<LabeledSample> &samples,
                              std::span<const std::size_t> idx, int classes) {
  MatrixX<double> out(classes, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto &v = t.at(samples[idx[b]].id);
    if (static_cast<int>(v.size()) != classes)
      throw ConfigError("teacher logits have the wrong class count");
    for (int c = 0; c < classes; ++c) out(c, static_cast<Eigen::Index>(b)) = v[static_cast<std::size_t>(c)];
  }
  return out;
}

std::vector<std::string> ids_of(const std::vector<LabeledSample> &samples,
                                std::span<const std::size_t> idx) {
  std::vector<std::string> v;
  for (auto i : idx) v.push_back(samples[i].id);
  return v;
}

std::vector<int> labels_of(const std::vector<LabeledSample> &samples,
                           std::span<const std::size_t> idx) {
  std::vector<int> v;
  for (auto i : idx) {
    if (samples[i].label < 0 || samples[i].label >= 3)
      throw ConfigError("sample '" + samples[i].id + "' has an invalid label");
    v.push_back(samples[i].label);
  }
  return v;
}

constexpr std::size_t kEvalBatch = 128;

}  // namespace

TrainResult train_model(const ModelSpec &spec, const std::vector<LabeledSample> &samples,
                        std::span<const std::size_t> indices, const Normalization &norm,
                        const TrainConfig &cfg, std::uint64_t seed,
                        const TeacherLogits *teacher) {
  if (indices.empty()) throw ConfigError("training set is empty");
  if (cfg.batch_size < 1 || cfg.max_epochs < 0) throw ConfigError("invalid batch or epoch budget");
  if (spec.input != Shape{1, kFrameRows, kFrameCols})
    throw ConfigError("trainer expects a 1x256x11 model input");
  cfg.kd.validate();
  if (cfg.use_teacher && !teacher) throw ConfigError("distillation needs teacher logits");
  const TeacherLogits *t = cfg.use_teacher ? teacher : nullptr;

  Network<float> net(spec, init_params<float>(spec, seed));
  Adam adam(AdamConfig{cfg.lr});
  PlateauSchedule plateau;
  plateau.lr = cfg.lr;
  plateau.patience = cfg.patience;

  TrainResult result;
  result.norm = norm;
  std::vector<std::size_t> order(indices.begin(), indices.end());

  // Loss of the untrained model seeds the plateau reference.
  {
    double total = 0;
    for (std::size_t s = 0; s < order.size(); s += kEvalBatch) {
      const std::span<const std::size_t> idx(order.data() + s,
                                             std::min(kEvalBatch, order.size() - s));
      const MatrixX<double> logits =
          net.forward(pack_normalized(samples, idx, norm), static_cast<int>(idx.size()), false)
              .cast<double>();
      const std::vector<int> labels = labels_of(samples, idx);
      MatrixX<double> tb;
      if (t) tb = teacher_block(*t, samples, idx, spec.class_count);
      total += batch_kd_loss(logits, labels, t ? &tb : nullptr, cfg.kd, ids_of(samples, idx)).loss *
               static_cast<double>(idx.size());
    }
    result.initial_loss = total / static_cast<double>(order.size());
    plateau.best = result.initial_loss;
  }

  auto rng = named_stream(seed, "shuffle");
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    portable_shuffle(order.begin(), order.end(), rng);
    double total = 0;
    const double lr = adam.lr();
    for (std::size_t s = 0; s < order.size(); s += bs) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(bs, order.size() - s));
      const int batch = static_cast<int>(idx.size());
      const MatrixX<double> logits =
          net.forward(pack_normalized(samples, idx, norm), batch, true).cast<double>();
      const std::vector<int> labels = labels_of(samples, idx);
      MatrixX<double> tb;
      if (t) tb = teacher_block(*t, samples, idx, spec.class_count);
      const BatchLoss bl =
          batch_kd_loss(logits, labels, t ? &tb : nullptr, cfg.kd, ids_of(samples, idx));
      total += bl.loss * batch;
      net.backward(bl.dlogits.cast<float>());
      ModelParams<float> grads = net.grads();
      const auto pv = trainable_views(net.params());
      const auto gv = trainable_views(grads);
      adam.step<float>(pv, gv);
    }
    const double epoch_loss = total / static_cast<double>(order.size());
    result.history.push_back({epoch, epoch_loss, lr});
    plateau.update(epoch_loss);
    if (plateau.lr < cfg.min_lr) break;
    adam.set_lr(plateau.lr);
  }
  result.params = net.params();
  return result;
}

Evaluation evaluate(const ModelSpec &spec, const ModelParams<float> &params,
                    const std::vector<LabeledSample> &samples,
                    std::span<const std::size_t> indices, const Normalization &norm) {
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    indices = all;
  }
  Evaluation ev;
  if (indices.empty()) return ev;
  Network<float> net(spec, params);
  std::size_t correct = 0;
  double loss = 0;
  for (std::size_t s = 0; s < indices.size(); s += kEvalBatch) {
    const std::span<const std::size_t> idx(indices.data() + s,
                                           std::min(kEvalBatch, indices.size() - s));
    const MatrixX<double> logits =
        net.forward(pack_normalized(samples, idx, norm), static_cast<int>(idx.size()), false)
            .cast<double>();
    for (Eigen::Index b = 0; b < logits.cols(); ++b) {
      const VectorX<double> z = logits.col(b);
      int best = 0;
      for (Eigen::Index c = 1; c < z.size(); ++c)
        if (z(c) > z(best)) best = static_cast<int>(c);
      const int label = samples[idx[static_cast<std::size_t>(b)]].label;
      correct += best == label;
      loss += cross_entropy(z, label);
      ev.predictions.push_back(best);
      ev.logits.emplace_back(z.data(), z.data() + z.size());
    }
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  ev.loss = loss / static_cast<double>(indices.size());
  return ev;
}

std::vector<int> assign_folds(const std::vector<int> &labels, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  int classes = 0;
  for (int l : labels) {
    if (l < 0) throw ConfigError("negative label");
    classes = std::max(classes, l + 1);
  }
  std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i)
    per_class[static_cast<std::size_t>(labels[i])].push_back(i);
  for (int c = 0; c < classes; ++c) {
    const auto n = per_class[static_cast<std::size_t>(c)].size();
    if (n > 0 && n < static_cast<std::size_t>(k))
      throw StratificationError("class " + std::to_string(c) + " has " + std::to_string(n) +
                                " samples, fewer than k = " + std::to_string(k) +
                                "; some fold would lack it");
  }
  auto rng = named_stream(seed, "folds");
  std::vector<int> fold(labels.size(), -1);
  std::size_t counter = 0;
  for (auto &members : per_class) {
    portable_shuffle(members.begin(), members.end(), rng);
    for (std::size_t i : members) fold[i] = static_cast<int>(counter++ % static_cast<std::size_t>(k));
  }
  return fold;
}

KFoldResult kfold_train(const std::vector<LabeledSample> &dataset1,
                        const std::vector<LabeledSample> &dataset2, const ModelSpec &spec,
                        const TrainConfig &cfg, std::uint64_t seed, int k,
                        const TeacherLogits *teacher, const std::vector<int> *assignment) {
  std::vector<int> labels;
  for (const auto &s : dataset1) labels.push_back(s.label);
  KFoldResult r;
  if (assignment) {
    if (assignment->size() != dataset1.size())
      throw ConfigError("fold assignment does not cover the dataset");
    for (int f : *assignment)
      if (f < 0 || f >= k) throw ConfigError("fold index outside [0, k)");
    r.assignment = *assignment;
  } else {
    r.assignment = assign_folds(labels, k, seed);
  }
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> train, val;
    for (std::size_t i = 0; i < dataset1.size(); ++i)
      (r.assignment[i] == f ? val : train).push_back(i);
    if (val.empty() || train.empty())
      throw StratificationError("fold " + std::to_string(f) + " is empty");
    FoldResult fr;
    fr.fold = f;
    const Normalization norm = compute_normalization(dataset1, train);
    fr.train = train_model(spec, dataset1, train, norm, cfg,
                           splitmix64(seed + static_cast<std::uint64_t>(f)), teacher);
    fr.val_accuracy = evaluate(spec, fr.train.params, dataset1, val, norm).accuracy;
    if (!dataset2.empty())
      fr.test_accuracy = evaluate(spec, fr.train.params, dataset2, {}, norm).accuracy;
    r.mean_val_accuracy += fr.val_accuracy / k;
    r.mean_test_accuracy += fr.test_accuracy / k;
    r.folds.push_back(std::move(fr));
  }
  return r;
}

}  // namespace shiftadd
