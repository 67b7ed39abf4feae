#pragma once

// Loss terms, CutMix composition imagination, and the training loop.
//
// Plain batches optimize
//   L_com + alpha L_comp + beta L_ind + gamma L_con
// and CutMix batches (taken with probability p) optimize
//   mixed L_com + alpha mixed L_comp + beta mixed L_ind + gamma L_new.
// The vanilla strategy keeps only L_com + alpha L_comp.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "c2c/dataset.hpp"
#include "c2c/error.hpp"
#include "c2c/hsic.hpp"
#include "c2c/labelspace.hpp"
#include "c2c/model.hpp"
#include "c2c/optim.hpp"
#include "c2c/rng.hpp"
#include "c2c/tensor.hpp"

namespace c2c {

struct TrainConfig {
  double tau = 0.05;
  double rho = 0.5;
  double alpha = 0.2;
  double beta = 0.1;
  double gamma = 0.1;
  double p = 0.7;  // CutMix probability per batch
  bool enhanced = true;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t hidden = 64;    // D
  std::size_t channels = 32;  // C
  bool share_reference = false;
  InferenceMode train_mode = InferenceMode::kFull;

  void validate() const {
    if (!(tau > 0.0)) throw InvalidConfig("tau must be > 0");
    if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidConfig("rho must lie in [0,1]");
    if (!(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0)) throw InvalidConfig("loss weights must be nonnegative");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidConfig("p must lie in [0,1]");
    if (epochs == 0) throw InvalidConfig("epochs must be positive");
    if (batch_size < 2) throw InvalidConfig("batch_size must be at least 2");
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be > 0");
    if (hidden == 0 || channels == 0) throw InvalidConfig("hidden and channels must be positive");
  }

  double effective_beta() const { return enhanced ? beta : 0.0; }
  double effective_gamma() const { return enhanced ? gamma : 0.0; }
  double effective_p() const { return enhanced ? p : 0.0; }
};

/// Observed conditional frequencies in the training set, laid out like the
/// model's conditional scores: obj_given_verb[l*N_o + k], verb_given_obj[k*N_v + l].
struct EmpiricalConditionals {
  std::size_t num_verbs = 0;
  std::size_t num_objects = 0;
  std::vector<double> obj_given_verb;
  std::vector<double> verb_given_obj;
};

inline EmpiricalConditionals empirical_conditionals(const LabelSpace& space, std::span<const SampleRef> train) {
  if (train.empty()) throw InvalidInput("empirical_conditionals: empty training set");
  const std::size_t nv = space.num_verbs(), no = space.num_objects();
  std::vector<double> counts(nv * no, 0.0), verb_total(nv, 0.0), obj_total(no, 0.0);
  for (const SampleRef& s : train) {
    const Composition& c = space.composition(s.composition);
    counts[c.verb * no + c.object] += 1.0;
    verb_total[c.verb] += 1.0;
    obj_total[c.object] += 1.0;
  }
  EmpiricalConditionals e{nv, no, std::vector<double>(nv * no, 0.0), std::vector<double>(no * nv, 0.0)};
  for (std::size_t l = 0; l < nv; ++l) {
    for (std::size_t k = 0; k < no; ++k) {
      const double n = counts[l * no + k];
      if (verb_total[l] > 0.0) e.obj_given_verb[l * no + k] = n / verb_total[l];
      if (obj_total[k] > 0.0) e.verb_given_obj[k * nv + l] = n / obj_total[k];
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Loss terms

struct ComponentLoss {
  Tensor verb;
  Tensor object;
  Tensor total() const { return add(verb, object); }
};

/// Temperature-scaled softmax cross-entropy over the cosine scores of each
/// component head, averaged over the batch.
inline ComponentLoss component_loss(const Tensor& verb_cos, const Tensor& obj_cos, std::span<const std::size_t> verbs,
                                    std::span<const std::size_t> objects, double tau,
                                    std::span<const double> weights = {}) {
  CrossEntropyOptions opt;
  opt.temperature = tau;
  opt.row_weights = weights;
  return {softmax_cross_entropy(verb_cos, verbs, opt), softmax_cross_entropy(obj_cos, objects, opt)};
}

/// -log softmax(s / tau) at the target, normalized over the candidate columns
/// (train compositions), plus any per-row extra candidates.
inline Tensor composition_loss(const Tensor& scores, std::span<const std::size_t> targets,
                               std::span<const std::uint8_t> train_mask, double tau,
                               std::span<const double> weights = {}, std::span<const std::uint8_t> extra = {}) {
  CrossEntropyOptions opt;
  opt.temperature = tau;
  opt.column_mask = train_mask;
  opt.row_mask = extra;
  opt.row_weights = weights;
  return softmax_cross_entropy(scores, targets, opt);
}

struct IndependenceLoss {
  Tensor sup_verb;  // h(f_x, f_v) - h(f_v, y_v)
  Tensor sup_obj;   // h(f_x, f_o) - h(f_o, y_o)
  Tensor specific;  // h(f_v[:rho C], f_o[:rho C])
  Tensor total() const { return add(add(sup_verb, sup_obj), specific); }
};

/// Label matrices y_v / y_o are one-hot or soft rows [B, N]. Features use a
/// Gaussian kernel with median bandwidth, labels a linear kernel.
inline IndependenceLoss independence_loss(const Tensor& f_x, const Tensor& f_v, const Tensor& f_o, const Tensor& y_v,
                                          const Tensor& y_o, double rho, BandwidthCache* bandwidths = nullptr) {
  if (f_x.dim(0) < 2) throw InvalidInput("independence_loss: batch must have at least 2 samples");
  HsicOptions feat;
  feat.bandwidths = bandwidths;
  HsicOptions lab = feat;
  lab.kernel_y = Kernel::kLinear;
  IndependenceLoss out;
  out.sup_verb = sub(hsic(f_x, f_v, feat), hsic(f_v, y_v, lab));
  out.sup_obj = sub(hsic(f_x, f_o, feat), hsic(f_o, y_o, lab));
  const std::size_t C = f_v.dim(1);
  const auto keep = static_cast<std::size_t>(std::floor(rho * static_cast<double>(C) + 1e-9));
  if (keep == 0) {
    out.specific = Tensor::scalar(0.0);
  } else {
    out.specific = hsic(slice_channels(f_v, 0, keep), slice_channels(f_o, 0, keep), feat);
  }
  return out;
}

/// Batch-averaged conditional scores, row-normalized, against the observed
/// conditionals: L_con = L_con,v + L_con,o.
inline Tensor condition_loss(const Tensor& obj_given_verb, const Tensor& verb_given_obj,
                             const EmpiricalConditionals& observed, double eps = 1e-8) {
  const std::size_t nv = observed.num_verbs, no = observed.num_objects;
  Tensor ov = reshape(mean_over_axis(obj_given_verb, 0), {nv, no});
  Tensor vo = reshape(mean_over_axis(verb_given_obj, 0), {no, nv});
  return add(conditional_cross_entropy(ov, observed.obj_given_verb, eps),
             conditional_cross_entropy(vo, observed.verb_given_obj, eps));
}

/// One-hot (or two-hot soft) label rows.
inline Tensor label_matrix(std::span<const std::size_t> first, std::span<const std::size_t> second,
                           std::span<const double> lambda, std::size_t classes) {
  const std::size_t B = first.size();
  std::vector<double> v(B * classes, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const double lam = lambda.empty() ? 0.0 : lambda[b];
    v[b * classes + first[b]] += 1.0 - lam;
    if (!second.empty()) v[b * classes + second[b]] += lam;
  }
  return Tensor({B, classes}, std::move(v));
}

// ---------------------------------------------------------------------------
// CutMix

struct CutMixRecord {
  std::size_t partner = 0;
  std::size_t y0 = 0, x0 = 0, h = 0, w = 0;
  double lambda = 0.0;  // pasted area / frame area
};

/// Pastes the rectangle of `source` into `target` at the same position in
/// every frame. Videos are T x H x W x C row-major.
template <typename T>
std::vector<T> paste_region(std::span<const T> target, std::span<const T> source, const VideoShape& shape,
                            const CutMixRecord& rect) {
  if (target.size() != shape.video_size() || source.size() != shape.video_size()) {
    throw ShapeError("cutmix: video sizes do not match the shape");
  }
  if (rect.y0 + rect.h > shape.height || rect.x0 + rect.w > shape.width) throw InvalidInput("cutmix: rectangle out of bounds");
  std::vector<T> out(target.begin(), target.end());
  const std::size_t C = shape.channels, W = shape.width;
  for (std::size_t t = 0; t < shape.frames; ++t) {
    for (std::size_t y = rect.y0; y < rect.y0 + rect.h; ++y) {
      const std::size_t base = ((t * shape.height + y) * W + rect.x0) * C;
      std::copy_n(source.begin() + static_cast<long>(base), rect.w * C, out.begin() + static_cast<long>(base));
    }
  }
  return out;
}

/// Draws a rectangle of random area fraction r ~ U(0,1) (side scale sqrt(r),
/// rounded) at a uniformly random in-bounds position.
inline CutMixRecord draw_cutmix_rect(const VideoShape& shape, Rng& rng) {
  const double r = rng.uniform();
  const double side = std::sqrt(r);
  CutMixRecord rec;
  rec.h = std::min(shape.height, static_cast<std::size_t>(std::llround(side * static_cast<double>(shape.height))));
  rec.w = std::min(shape.width, static_cast<std::size_t>(std::llround(side * static_cast<double>(shape.width))));
  rec.y0 = static_cast<std::size_t>(rng.below(shape.height - rec.h + 1));
  rec.x0 = static_cast<std::size_t>(rng.below(shape.width - rec.w + 1));
  rec.lambda = static_cast<double>(rec.h * rec.w) / static_cast<double>(shape.height * shape.width);
  return rec;
}

template <typename T>
std::pair<std::vector<T>, CutMixRecord> cutmix(std::span<const T> video_i, std::span<const T> video_j,
                                               const VideoShape& shape, Rng& rng) {
  CutMixRecord rec = draw_cutmix_rect(shape, rng);
  return {paste_region(video_i, video_j, shape, rec), rec};
}

// ---------------------------------------------------------------------------
// Forward pass and per-batch objectives

struct ForwardOutputs {
  Encoded encoded;
  ScoreParts parts;
  Tensor grid;  // composition scores over all N_v x N_o pairs
};

inline ForwardOutputs forward(const C2CModel& model, const Tensor& videos, InferenceMode mode) {
  ForwardOutputs out;
  out.encoded = model.encode(videos);
  out.parts = model.score_parts(out.encoded);
  out.grid = grid_scores(out.parts, mode);
  return out;
}

/// Loss terms of one batch; undefined tensors are inactive terms.
struct LossTerms {
  Tensor verb, object, comp;  // component losses (mixed in CutMix batches)
  Tensor com;                 // composition loss (mixed in CutMix batches)
  Tensor sup_verb, sup_obj, ind;
  Tensor con;
  Tensor novel;  // L_new
};

/// Per-term values for reporting; NaN marks an inactive term.
struct LossReport {
  double verb = NAN, object = NAN, comp = NAN, com = NAN;
  double sup_verb = NAN, sup_obj = NAN, ind = NAN, con = NAN, novel = NAN;
  double total = NAN;
  bool cutmix = false;
};

inline LossReport make_report(const LossTerms& t, const Tensor& total, bool cutmix) {
  auto val = [](const Tensor& x) { return x.defined() ? x.item() : NAN; };
  return {val(t.verb), val(t.object), val(t.comp), val(t.com), val(t.sup_verb), val(t.sup_obj),
          val(t.ind),  val(t.con),    val(t.novel), total.item(), cutmix};
}

/// Weighted objective of the active branch. A term whose weight is nonzero
/// must be present.
inline Tensor total_loss(const LossTerms& t, const TrainConfig& cfg, bool cutmix_applied) {
  auto need = [](const Tensor& x, const char* name) -> const Tensor& {
    if (!x.defined()) throw InvalidState(std::string("total_loss: missing term ") + name);
    return x;
  };
  Tensor total = need(t.com, "L_com");
  if (cfg.alpha != 0.0) total = add(total, scale(need(t.comp, "L_comp"), cfg.alpha));
  const double beta = cfg.effective_beta(), gamma = cfg.effective_gamma();
  if (beta != 0.0) total = add(total, scale(need(t.ind, "L_ind"), beta));
  if (gamma != 0.0) {
    total = cutmix_applied ? add(total, scale(need(t.novel, "L_new"), gamma))
                           : add(total, scale(need(t.con, "L_con"), gamma));
  }
  return total;
}

struct BatchLabels {
  std::vector<std::size_t> verbs;
  std::vector<std::size_t> objects;
};

/// Shared, per-run constants of the objective.
struct ObjectiveContext {
  const LabelSpace* space = nullptr;
  std::vector<std::uint8_t> train_grid_mask;  // over the N_v x N_o grid
  EmpiricalConditionals conditionals;
};

inline ObjectiveContext make_objective_context(const SplitSpec& split) {
  ObjectiveContext ctx;
  ctx.space = &split.space;
  ctx.train_grid_mask.assign(split.space.num_verbs() * split.space.num_objects(), 0);
  for (std::size_t c : split.train_compositions) ctx.train_grid_mask[split.space.grid_index(split.space.composition(c))] = 1;
  ctx.conditionals = empirical_conditionals(split.space, split.train_samples);
  return ctx;
}

inline std::vector<std::size_t> grid_targets(const LabelSpace& space, std::span<const std::size_t> verbs,
                                             std::span<const std::size_t> objects) {
  std::vector<std::size_t> out(verbs.size());
  for (std::size_t b = 0; b < verbs.size(); ++b) out[b] = space.grid_index({verbs[b], objects[b]});
  return out;
}

/// Objective terms of a plain (non-CutMix) batch.
inline LossTerms plain_losses(const ForwardOutputs& fw, const BatchLabels& labels, const ObjectiveContext& ctx,
                              const TrainConfig& cfg, BandwidthCache* bandwidths = nullptr) {
  const LabelSpace& space = *ctx.space;
  LossTerms t;
  ComponentLoss comp = component_loss(fw.parts.verb, fw.parts.object, labels.verbs, labels.objects, cfg.tau);
  t.verb = comp.verb;
  t.object = comp.object;
  t.comp = comp.total();
  t.com = composition_loss(fw.grid, grid_targets(space, labels.verbs, labels.objects), ctx.train_grid_mask, cfg.tau);
  if (cfg.effective_beta() != 0.0) {
    IndependenceLoss ind = independence_loss(
        fw.encoded.pooled, fw.encoded.dynamic, fw.encoded.stat, label_matrix(labels.verbs, {}, {}, space.num_verbs()),
        label_matrix(labels.objects, {}, {}, space.num_objects()), cfg.rho, bandwidths);
    t.sup_verb = ind.sup_verb;
    t.sup_obj = ind.sup_obj;
    t.ind = ind.total();
  }
  if (cfg.effective_gamma() != 0.0) {
    t.con = condition_loss(fw.parts.obj_given_verb, fw.parts.verb_given_obj, ctx.conditionals);
  }
  return t;
}

/// Objective terms of a CutMix batch: row b mixes its own label a_i = (v_l, o_k)
/// with its partner's a_j = (v_m, o_n) by lambda[b]; the imagined pairs
/// (v_l, o_n) and (v_m, o_k) are scored against the train compositions plus
/// themselves.
inline LossTerms mixed_losses(const ForwardOutputs& fw, const BatchLabels& own, const BatchLabels& partner,
                              std::span<const double> lambda, const ObjectiveContext& ctx, const TrainConfig& cfg,
                              BandwidthCache* bandwidths = nullptr) {
  const LabelSpace& space = *ctx.space;
  const std::size_t B = own.verbs.size();
  std::vector<double> keep(B), mix(lambda.begin(), lambda.end());
  for (std::size_t b = 0; b < B; ++b) keep[b] = 1.0 - lambda[b];

  LossTerms t;
  ComponentLoss ci = component_loss(fw.parts.verb, fw.parts.object, own.verbs, own.objects, cfg.tau, keep);
  ComponentLoss cj = component_loss(fw.parts.verb, fw.parts.object, partner.verbs, partner.objects, cfg.tau, mix);
  t.verb = add(ci.verb, cj.verb);
  t.object = add(ci.object, cj.object);
  t.comp = add(t.verb, t.object);
  t.com = add(composition_loss(fw.grid, grid_targets(space, own.verbs, own.objects), ctx.train_grid_mask, cfg.tau, keep),
              composition_loss(fw.grid, grid_targets(space, partner.verbs, partner.objects), ctx.train_grid_mask,
                               cfg.tau, mix));
  if (cfg.effective_beta() != 0.0) {
    IndependenceLoss ind = independence_loss(
        fw.encoded.pooled, fw.encoded.dynamic, fw.encoded.stat,
        label_matrix(own.verbs, partner.verbs, lambda, space.num_verbs()),
        label_matrix(own.objects, partner.objects, lambda, space.num_objects()), cfg.rho, bandwidths);
    t.sup_verb = ind.sup_verb;
    t.sup_obj = ind.sup_obj;
    t.ind = ind.total();
  }
  if (cfg.effective_gamma() != 0.0) {
    const std::size_t cells = space.num_verbs() * space.num_objects();
    std::vector<std::size_t> first = grid_targets(space, own.verbs, partner.objects);
    std::vector<std::size_t> second = grid_targets(space, partner.verbs, own.objects);
    std::vector<std::uint8_t> extra(B * cells, 0);
    for (std::size_t b = 0; b < B; ++b) {
      extra[b * cells + first[b]] = 1;
      extra[b * cells + second[b]] = 1;
    }
    t.novel = add(composition_loss(fw.grid, first, ctx.train_grid_mask, cfg.tau, {}, extra),
                  composition_loss(fw.grid, second, ctx.train_grid_mask, cfg.tau, {}, extra));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochReport {
  std::size_t epoch = 0;
  std::size_t batches = 0;
  std::size_t cutmix_batches = 0;
  LossReport mean;  // per-term mean over batches where the term was active
};

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, C2CModel last_good, std::vector<EpochReport> history)
      : NumericalError(what), last_good_(std::move(last_good)), history_(std::move(history)) {}
  const C2CModel& last_good() const { return last_good_; }
  const std::vector<EpochReport>& history() const { return history_; }

 private:
  C2CModel last_good_;
  std::vector<EpochReport> history_;
};

struct TrainResult {
  C2CModel model;
  std::vector<EpochReport> history;
};

namespace detail {

struct ReportAccumulator {
  std::array<double, 10> sum{};
  std::array<std::size_t, 10> count{};

  static std::array<double*, 10> fields(LossReport& r) {
    return {&r.verb, &r.object, &r.comp, &r.com, &r.sup_verb, &r.sup_obj, &r.ind, &r.con, &r.novel, &r.total};
  }
  void add(LossReport r) {
    auto f = fields(r);
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (!std::isnan(*f[i])) {
        sum[i] += *f[i];
        ++count[i];
      }
    }
  }
  LossReport mean() const {
    LossReport r;
    auto f = fields(r);
    for (std::size_t i = 0; i < f.size(); ++i) *f[i] = count[i] ? sum[i] / static_cast<double>(count[i]) : NAN;
    return r;
  }
};

}  // namespace detail

/// Splits a shuffled index list into batches; a trailing singleton joins the
/// previous batch because the independence terms need two samples.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(order.size(), i + batch_size)));
  }
  if (batches.size() > 1 && batches.back().size() < 2) {
    auto last = batches.back();
    batches.pop_back();
    batches.back().insert(batches.back().end(), last.begin(), last.end());
  }
  return batches;
}

/// Trains a fresh model on the split's training samples. The run is a pure
/// function of (data, split, config): initialization, shuffling and CutMix
/// draw from streams derived from config.seed. Optional word vectors, keyed
/// by label name, initialize the matching prototype rows.
inline TrainResult train(const VideoDataset& data, const SplitSpec& split, const TrainConfig& cfg,
                         const std::function<void(const EpochReport&)>& on_epoch = {},
                         const std::map<std::string, std::vector<double>>* word_vectors = nullptr) {
  cfg.validate();
  const std::vector<std::size_t> train_idx = resolve_samples(split, data, Partition::kTrain);
  if (train_idx.size() < 2) throw InvalidInput("train: need at least 2 training samples");
  ModelDims dims;
  dims.frame_size = data.shape.frame_size();
  dims.hidden = cfg.hidden;
  dims.channels = cfg.channels;
  dims.num_verbs = split.space.num_verbs();
  dims.num_objects = split.space.num_objects();
  dims.share_reference = cfg.share_reference;

  Rng seeder(cfg.seed);
  TrainResult result{C2CModel(dims, seeder.fork_seed()), {}};
  if (word_vectors) {
    seed_prototypes(result.model.verb_prototypes(), split.space.verbs(), *word_vectors, cfg.seed);
    seed_prototypes(result.model.object_prototypes(), split.space.objects(), *word_vectors, cfg.seed);
  }
  Rng rng(seeder.fork_seed());
  AdamOptimizer opt(result.model.parameter_tensors(), {.learning_rate = cfg.learning_rate});
  const ObjectiveContext ctx = make_objective_context(split);
  const double p = cfg.effective_p();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    C2CModel last_good = result.model.clone();
    std::vector<std::size_t> order = train_idx;
    rng.shuffle(order);
    detail::ReportAccumulator acc;
    EpochReport report{epoch + 1, 0, 0, {}};
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      const std::size_t B = batch.size();
      BatchLabels own;
      for (std::size_t i : batch) {
        own.verbs.push_back(data.verbs[i]);
        own.objects.push_back(data.objects[i]);
      }
      const bool use_cutmix = p > 0.0 && rng.bernoulli(p);
      LossTerms terms;
      Tensor total;
      try {
        if (use_cutmix) {
          const std::vector<std::size_t> partner = rng.permutation(B);
          const std::size_t n = data.shape.video_size();
          std::vector<double> mixed(B * n);
          std::vector<double> lambda(B);
          BatchLabels other;
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t j = batch[partner[b]];
            auto [video, rec] = cutmix(data.video(batch[b]), data.video(j), data.shape, rng);
            std::copy(video.begin(), video.end(), mixed.begin() + static_cast<long>(b * n));
            lambda[b] = rec.lambda;
            other.verbs.push_back(data.verbs[j]);
            other.objects.push_back(data.objects[j]);
          }
          Tensor videos({B, data.shape.frames, data.shape.frame_size()}, std::move(mixed));
          ForwardOutputs fw = forward(result.model, videos, cfg.train_mode);
          terms = mixed_losses(fw, own, other, lambda, ctx, cfg);
        } else {
          ForwardOutputs fw = forward(result.model, data.batch(batch), cfg.train_mode);
          terms = plain_losses(fw, own, ctx, cfg);
        }
        total = total_loss(terms, cfg, use_cutmix);
        if (!std::isfinite(total.item())) throw NumericalError("non-finite loss");
        opt.zero_grad();
        total.backward();
        opt.step();
      } catch (const NumericalError& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what(),
                               std::move(last_good), std::move(result.history));
      }
      acc.add(make_report(terms, total, use_cutmix));
      ++report.batches;
      report.cutmix_batches += use_cutmix;
    }
    report.mean = acc.mean();
    if (on_epoch) on_epoch(report);
    result.history.push_back(report);
  }
  return result;
}

}  // namespace c2c
