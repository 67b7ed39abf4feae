#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "c2c/dataset.hpp"
#include "c2c/evaluation.hpp"
#include "c2c/labelspace.hpp"
#include "c2c/model.hpp"
#include "c2c/tensor.hpp"

namespace c2c {

struct ScoredPartition {
  ScoreMatrix matrix;
  ComponentScores components;
};

/// Scores every sample of `partition` against the feasible compositions
/// (train ∪ val ∪ test) under `mode`.
inline ScoredPartition score_partition(const C2CModel& model, const VideoDataset& data, const SplitSpec& split,
                                       Partition partition, InferenceMode mode, std::size_t batch_size = 64) {
  const LabelSpace& space = split.space;
  const auto feasible = composition_mask(space, split, MaskKind::kFeasible);
  const auto train = composition_mask(space, split, MaskKind::kTrain);
  std::vector<std::size_t> column_of(space.num_compositions(), space.num_compositions());
  std::vector<std::size_t> cells;

  ScoredPartition out;
  ScoreMatrix& m = out.matrix;
  ComponentScores& cs = out.components;
  cs.num_verbs = space.num_verbs();
  cs.num_objects = space.num_objects();
  for (std::size_t a = 0; a < space.num_compositions(); ++a) {
    if (!feasible[a]) continue;
    column_of[a] = m.cols++;
    const Composition& c = space.composition(a);
    cells.push_back(space.grid_index(c));
    m.seen.push_back(train[a]);
    cs.column_verb.push_back(c.verb);
    cs.column_object.push_back(c.object);
  }

  const auto indices = resolve_samples(split, data, partition);
  const auto& refs = split.samples(partition);
  NoGradGuard no_grad;
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                         indices.begin() + static_cast<std::ptrdiff_t>(end));
    const Encoded e = model.encode(data.batch(chunk));
    const ScoreParts parts = model.score_parts(e);
    const Tensor s = gather_cols(grid_scores(parts, mode), cells);
    m.scores.insert(m.scores.end(), s.values().begin(), s.values().end());
    cs.verb_scores.insert(cs.verb_scores.end(), parts.verb.values().begin(), parts.verb.values().end());
    cs.object_scores.insert(cs.object_scores.end(), parts.object.values().begin(), parts.object.values().end());
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const std::size_t col = column_of[refs[i].composition];
    if (col == space.num_compositions()) throw InvalidInput("score_partition: sample outside the feasible set");
    m.truth.push_back(col);
    const Composition& c = space.composition(refs[i].composition);
    cs.truth_verb.push_back(c.verb);
    cs.truth_object.push_back(c.object);
  }
  m.rows = refs.size();
  return out;
}

inline EvalReport evaluate_model(const C2CModel& model, const VideoDataset& data, const SplitSpec& split,
                                 Partition partition, InferenceMode mode, SweepCurve* curve_out = nullptr) {
  const ScoredPartition sp = score_partition(model, data, split, partition, mode);
  sp.matrix.validate();
  SweepCurve curve = bias_sweep(sp.matrix);
  EvalReport r = metrics(curve, sp.matrix, sp.components);
  if (curve_out) *curve_out = std::move(curve);
  return r;
}

}  // namespace c2c
