#pragma once

// The C2C scoring model: a per-frame general encoder, static and dynamic
// component encoders, learnable verb/object prototypes, and the two
// conditional paths that turn component scores into composition scores.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "c2c/error.hpp"
#include "c2c/gradcheck.hpp"
#include "c2c/labelspace.hpp"
#include "c2c/rng.hpp"
#include "c2c/tensor.hpp"

namespace c2c {

struct ModelDims {
  std::size_t frame_size = 0;  // H * W * C_in
  std::size_t hidden = 64;     // D
  std::size_t channels = 32;   // C
  std::size_t num_verbs = 0;
  std::size_t num_objects = 0;
  /// Reuse the component encoders as the visual references of the
  /// conditional paths instead of separate, identically shaped encoders.
  bool share_reference = false;
};

enum class InferenceMode { kIndependent, kKnowledgeAgnostic, kDynamicOnly, kStaticOnly, kFull };

inline constexpr InferenceMode kAllInferenceModes[] = {InferenceMode::kIndependent, InferenceMode::kKnowledgeAgnostic,
                                                      InferenceMode::kDynamicOnly, InferenceMode::kStaticOnly,
                                                      InferenceMode::kFull};

inline std::string_view to_string(InferenceMode m) {
  switch (m) {
    case InferenceMode::kIndependent: return "independent";
    case InferenceMode::kKnowledgeAgnostic: return "knowledge_agnostic";
    case InferenceMode::kDynamicOnly: return "dynamic_only";
    case InferenceMode::kStaticOnly: return "static_only";
    case InferenceMode::kFull: return "full";
  }
  return "?";
}

inline InferenceMode parse_inference_mode(std::string_view s) {
  for (InferenceMode m : kAllInferenceModes) {
    if (to_string(m) == s) return m;
  }
  throw InvalidConfig("unknown inference mode: " + std::string(s));
}

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
};

struct TemporalConv {
  Tensor weight;  // [3, in, out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const { return conv1d_temporal(x, weight, bias); }
};

/// Outputs of the encoders for a batch of B videos.
struct Encoded {
  Tensor frames;   // F_x  [B, T, D]
  Tensor pooled;   // f_x  [B, D]
  Tensor dynamic;  // f_v  [B, C]
  Tensor stat;     // f_o  [B, C]
};

/// Component and conditional scores for a batch.
///   verb         s_v     [B, N_v]       cosine to verb prototypes
///   object       s_o     [B, N_o]       cosine to object prototypes
///   obj_given_v  S_{o|v} [B, N_v*N_o]   entry (l,k) at l*N_o + k, in [0,1]
///   verb_given_o S_{v|o} [B, N_o*N_v]   entry (k,l) at k*N_v + l, in [0,1]
struct ScoreParts {
  Tensor verb;
  Tensor object;
  Tensor obj_given_verb;
  Tensor verb_given_obj;
};

class C2CModel {
 public:
  C2CModel() = default;

  C2CModel(const ModelDims& dims, std::uint64_t seed) : dims_(dims) {
    if (dims.frame_size == 0 || dims.hidden == 0 || dims.channels == 0 || dims.num_verbs == 0 ||
        dims.num_objects == 0) {
      throw InvalidConfig("model dimensions must be positive");
    }
    Rng rng(seed);
    const std::size_t P = dims.frame_size, D = dims.hidden, C = dims.channels;
    general_ = make_linear(rng, P, D);
    static_fc1_ = make_linear(rng, D, C);
    static_fc2_ = make_linear(rng, C, C);
    dyn_conv1_ = make_conv(rng, D, C);
    dyn_conv2_ = make_conv(rng, C, C);
    if (!dims.share_reference) {
      ref_static_fc1_ = make_linear(rng, D, C);
      ref_static_fc2_ = make_linear(rng, C, C);
      ref_dyn_conv1_ = make_conv(rng, D, C);
      ref_dyn_conv2_ = make_conv(rng, C, C);
    }
    dyn_path_fuser_ = make_linear(rng, 2 * C, C);
    static_path_fuser_ = make_linear(rng, 2 * C, C);
    verb_prototypes_ = make_prototypes(rng, dims.num_verbs, C);
    object_prototypes_ = make_prototypes(rng, dims.num_objects, C);
  }

  /// Rebuilds a model from named tensors (checkpoint loading). Dimensions
  /// are inferred from the tensor shapes.
  static C2CModel from_parameters(const std::map<std::string, Tensor>& named) {
    auto get = [&](const std::string& name) {
      auto it = named.find(name);
      if (it == named.end()) throw FormatError("checkpoint is missing parameter " + name);
      Tensor t = it->second.detach();
      t.set_requires_grad(true);
      return t;
    };
    C2CModel m;
    m.general_ = {get("general.weight"), get("general.bias")};
    m.static_fc1_ = {get("static.fc1.weight"), get("static.fc1.bias")};
    m.static_fc2_ = {get("static.fc2.weight"), get("static.fc2.bias")};
    m.dyn_conv1_ = {get("dynamic.conv1.weight"), get("dynamic.conv1.bias")};
    m.dyn_conv2_ = {get("dynamic.conv2.weight"), get("dynamic.conv2.bias")};
    m.dims_.share_reference = !named.count("reference.static.fc1.weight");
    if (!m.dims_.share_reference) {
      m.ref_static_fc1_ = {get("reference.static.fc1.weight"), get("reference.static.fc1.bias")};
      m.ref_static_fc2_ = {get("reference.static.fc2.weight"), get("reference.static.fc2.bias")};
      m.ref_dyn_conv1_ = {get("reference.dynamic.conv1.weight"), get("reference.dynamic.conv1.bias")};
      m.ref_dyn_conv2_ = {get("reference.dynamic.conv2.weight"), get("reference.dynamic.conv2.bias")};
    }
    m.dyn_path_fuser_ = {get("fuser.dynamics_path.weight"), get("fuser.dynamics_path.bias")};
    m.static_path_fuser_ = {get("fuser.static_path.weight"), get("fuser.static_path.bias")};
    m.verb_prototypes_ = get("prototypes.verb");
    m.object_prototypes_ = get("prototypes.object");
    m.dims_.frame_size = m.general_.weight.dim(0);
    m.dims_.hidden = m.general_.weight.dim(1);
    m.dims_.channels = m.static_fc2_.weight.dim(1);
    m.dims_.num_verbs = m.verb_prototypes_.dim(0);
    m.dims_.num_objects = m.object_prototypes_.dim(0);
    for (const auto& p : m.parameters()) {
      if (p.tensor.rank() == 0) throw FormatError("parameter " + p.name + " has rank 0");
    }
    m.check_shapes();
    return m;
  }

  const ModelDims& dims() const { return dims_; }

  /// Parameters in a fixed order with stable names.
  std::vector<NamedTensor> parameters() const {
    std::vector<NamedTensor> out;
    auto lin = [&](const std::string& n, const Linear& l) {
      out.push_back({n + ".weight", l.weight});
      out.push_back({n + ".bias", l.bias});
    };
    auto conv = [&](const std::string& n, const TemporalConv& c) {
      out.push_back({n + ".weight", c.weight});
      out.push_back({n + ".bias", c.bias});
    };
    lin("general", general_);
    lin("static.fc1", static_fc1_);
    lin("static.fc2", static_fc2_);
    conv("dynamic.conv1", dyn_conv1_);
    conv("dynamic.conv2", dyn_conv2_);
    if (!dims_.share_reference) {
      lin("reference.static.fc1", ref_static_fc1_);
      lin("reference.static.fc2", ref_static_fc2_);
      conv("reference.dynamic.conv1", ref_dyn_conv1_);
      conv("reference.dynamic.conv2", ref_dyn_conv2_);
    }
    lin("fuser.dynamics_path", dyn_path_fuser_);
    lin("fuser.static_path", static_path_fuser_);
    out.push_back({"prototypes.verb", verb_prototypes_});
    out.push_back({"prototypes.object", object_prototypes_});
    return out;
  }

  std::vector<Tensor> parameter_tensors() const {
    std::vector<Tensor> out;
    for (auto& p : parameters()) out.push_back(p.tensor);
    return out;
  }

  /// Deep copy of every parameter (the copy owns fresh leaves).
  C2CModel clone() const {
    std::map<std::string, Tensor> named;
    for (const auto& p : parameters()) named.emplace(p.name, p.tensor);
    return from_parameters(named);
  }

  Tensor& verb_prototypes() { return verb_prototypes_; }
  Tensor& object_prototypes() { return object_prototypes_; }
  const Tensor& verb_prototypes() const { return verb_prototypes_; }
  const Tensor& object_prototypes() const { return object_prototypes_; }
  const Linear& dynamics_path_fuser() const { return dyn_path_fuser_; }
  const Linear& static_path_fuser() const { return static_path_fuser_; }

  /// videos: [B, T, frame_size]. Requires T >= 2.
  Encoded encode(const Tensor& videos) const {
    detail::require_rank(videos, 3, "encode");
    const std::size_t B = videos.dim(0), T = videos.dim(1), P = videos.dim(2);
    if (T < 2) throw InvalidInput("encode: need at least 2 frames");
    if (P != dims_.frame_size) {
      throw ShapeError("encode: frame size " + std::to_string(P) + " != model frame size " +
                       std::to_string(dims_.frame_size));
    }
    Encoded e;
    Tensor flat = reshape(videos, {B * T, P});
    e.frames = reshape(relu(general_(flat)), {B, T, dims_.hidden});
    e.pooled = mean_over_axis(e.frames, 1);
    e.stat = static_encode(e.frames, static_fc1_, static_fc2_);
    e.dynamic = dynamic_encode(e.frames, dyn_conv1_, dyn_conv2_);
    return e;
  }

  /// Single video [T, H, W, C_in] (or [T, frame_size]).
  Encoded encode_video(const Tensor& video) const {
    if (video.rank() < 2) throw ShapeError("encode_video: expected [T, ...]");
    const std::size_t T = video.dim(0);
    return encode(reshape(video, {1, T, video.size() / std::max<std::size_t>(T, 1)}));
  }

  /// Cosine similarities of f_v / f_o against the prototype tables.
  std::pair<Tensor, Tensor> component_scores(const Tensor& f_v, const Tensor& f_o) const {
    return {cosine_similarity(f_v, verb_prototypes_), cosine_similarity(f_o, object_prototypes_)};
  }

  /// Conditional scores from the frame features. Dynamics path: a static
  /// reference of F_x fused with each verb prototype, compared to the object
  /// prototypes. Static path: the symmetric construction with a dynamic
  /// reference and object prototypes. Cosines are mapped to [0,1] by (c+1)/2.
  std::pair<Tensor, Tensor> conditional_scores(const Tensor& frames) const {
    const std::size_t B = frames.dim(0);
    const Tensor static_ref = dims_.share_reference ? static_encode(frames, static_fc1_, static_fc2_)
                                                    : static_encode(frames, ref_static_fc1_, ref_static_fc2_);
    const Tensor dynamic_ref = dims_.share_reference ? dynamic_encode(frames, dyn_conv1_, dyn_conv2_)
                                                     : dynamic_encode(frames, ref_dyn_conv1_, ref_dyn_conv2_);
    Tensor o_given_v = conditional_path(static_ref, verb_prototypes_, object_prototypes_, dyn_path_fuser_);
    Tensor v_given_o = conditional_path(dynamic_ref, object_prototypes_, verb_prototypes_, static_path_fuser_);
    return {reshape(o_given_v, {B, dims_.num_verbs * dims_.num_objects}),
            reshape(v_given_o, {B, dims_.num_objects * dims_.num_verbs})};
  }

  ScoreParts score_parts(const Encoded& e) const {
    auto [sv, so] = component_scores(e.dynamic, e.stat);
    auto [ov, vo] = conditional_scores(e.frames);
    return {sv, so, ov, vo};
  }

 private:
  static Linear make_linear(Rng& rng, std::size_t in, std::size_t out) {
    std::vector<double> w(in * out);
    const double std = std::sqrt(2.0 / static_cast<double>(in));
    for (double& x : w) x = rng.normal(0.0, std);
    return {Tensor({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
  }

  static TemporalConv make_conv(Rng& rng, std::size_t in, std::size_t out) {
    std::vector<double> w(3 * in * out);
    const double std = std::sqrt(2.0 / static_cast<double>(3 * in));
    for (double& x : w) x = rng.normal(0.0, std);
    return {Tensor({3, in, out}, std::move(w), true), Tensor::zeros({out}, true)};
  }

  static Tensor make_prototypes(Rng& rng, std::size_t rows, std::size_t c) {
    std::vector<double> v(rows * c);
    for (std::size_t r = 0; r < rows; ++r) {
      double n2 = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        v[r * c + j] = rng.normal();
        n2 += v[r * c + j] * v[r * c + j];
      }
      const double inv = 1.0 / std::sqrt(n2);
      for (std::size_t j = 0; j < c; ++j) v[r * c + j] *= inv;
    }
    return Tensor({rows, c}, std::move(v), true);
  }

  static Tensor static_encode(const Tensor& frames, const Linear& fc1, const Linear& fc2) {
    return fc2(relu(fc1(mean_over_axis(frames, 1))));
  }

  static Tensor dynamic_encode(const Tensor& frames, const TemporalConv& c1, const TemporalConv& c2) {
    return mean_over_axis(c2(relu(c1(frames))), 1);
  }

  /// reference [B,C], condition prototypes [N,C], target prototypes [M,C] -> [B*N, M]
  static Tensor conditional_path(const Tensor& reference, const Tensor& condition, const Tensor& target,
                                 const Linear& fuser) {
    const std::size_t B = reference.dim(0), N = condition.dim(0);
    std::vector<std::size_t> ref_rows(B * N), cond_rows(B * N);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t n = 0; n < N; ++n) {
        ref_rows[b * N + n] = b;
        cond_rows[b * N + n] = n;
      }
    }
    Tensor fused = fuser(concat(gather_rows(reference, std::move(ref_rows)), gather_rows(condition, std::move(cond_rows))));
    return affine(cosine_similarity(fused, target), 0.5, 0.5);
  }

  void check_shapes() const {
    const std::size_t P = dims_.frame_size, D = dims_.hidden, C = dims_.channels;
    auto expect = [](const Tensor& t, Shape s, const char* what) {
      if (t.shape() != s) throw FormatError(std::string("parameter ") + what + " has shape " + shape_str(t.shape()));
    };
    expect(general_.bias, {D}, "general.bias");
    expect(static_fc1_.weight, {D, C}, "static.fc1.weight");
    expect(static_fc1_.bias, {C}, "static.fc1.bias");
    expect(static_fc2_.weight, {C, C}, "static.fc2.weight");
    expect(static_fc2_.bias, {C}, "static.fc2.bias");
    expect(dyn_conv1_.weight, {3, D, C}, "dynamic.conv1.weight");
    expect(dyn_conv1_.bias, {C}, "dynamic.conv1.bias");
    expect(dyn_conv2_.weight, {3, C, C}, "dynamic.conv2.weight");
    expect(dyn_conv2_.bias, {C}, "dynamic.conv2.bias");
    if (!dims_.share_reference) {
      expect(ref_static_fc1_.weight, {D, C}, "reference.static.fc1.weight");
      expect(ref_static_fc1_.bias, {C}, "reference.static.fc1.bias");
      expect(ref_static_fc2_.weight, {C, C}, "reference.static.fc2.weight");
      expect(ref_static_fc2_.bias, {C}, "reference.static.fc2.bias");
      expect(ref_dyn_conv1_.weight, {3, D, C}, "reference.dynamic.conv1.weight");
      expect(ref_dyn_conv1_.bias, {C}, "reference.dynamic.conv1.bias");
      expect(ref_dyn_conv2_.weight, {3, C, C}, "reference.dynamic.conv2.weight");
      expect(ref_dyn_conv2_.bias, {C}, "reference.dynamic.conv2.bias");
    }
    expect(dyn_path_fuser_.weight, {2 * C, C}, "fuser.dynamics_path.weight");
    expect(dyn_path_fuser_.bias, {C}, "fuser.dynamics_path.bias");
    expect(static_path_fuser_.weight, {2 * C, C}, "fuser.static_path.weight");
    expect(static_path_fuser_.bias, {C}, "fuser.static_path.bias");
    expect(general_.weight, {P, D}, "general.weight");
    expect(verb_prototypes_, {dims_.num_verbs, C}, "prototypes.verb");
    expect(object_prototypes_, {dims_.num_objects, C}, "prototypes.object");
  }

  ModelDims dims_;
  Linear general_;
  Linear static_fc1_, static_fc2_;
  TemporalConv dyn_conv1_, dyn_conv2_;
  Linear ref_static_fc1_, ref_static_fc2_;
  TemporalConv ref_dyn_conv1_, ref_dyn_conv2_;
  Linear dyn_path_fuser_, static_path_fuser_;
  Tensor verb_prototypes_, object_prototypes_;
};

/// Composition scores over the dense N_v x N_o grid, cell (l,k) at l*N_o + k:
///   independent          s_v[l] * s_o[k]
///   knowledge_agnostic   s_v[l] + s_o[k]
///   dynamic_only         s_v[l] * S_{o|v}[l,k]
///   static_only          s_o[k] * S_{v|o}[k,l]
///   full                 mean of the two path scores
inline Tensor grid_scores(const ScoreParts& parts, InferenceMode mode) {
  const std::size_t nv = parts.verb.dim(1), no = parts.object.dim(1);
  std::vector<std::size_t> verb_of(nv * no), obj_of(nv * no), transposed(nv * no);
  for (std::size_t l = 0; l < nv; ++l) {
    for (std::size_t k = 0; k < no; ++k) {
      verb_of[l * no + k] = l;
      obj_of[l * no + k] = k;
      transposed[l * no + k] = k * nv + l;
    }
  }
  const Tensor sv = gather_cols(parts.verb, std::move(verb_of));
  const Tensor so = gather_cols(parts.object, std::move(obj_of));
  auto dynamic_path = [&] { return mul(sv, parts.obj_given_verb); };
  auto static_path = [&] { return mul(so, gather_cols(parts.verb_given_obj, transposed)); };
  switch (mode) {
    case InferenceMode::kIndependent: return mul(sv, so);
    case InferenceMode::kKnowledgeAgnostic: return add(sv, so);
    case InferenceMode::kDynamicOnly: return dynamic_path();
    case InferenceMode::kStaticOnly: return static_path();
    case InferenceMode::kFull: return scale(add(dynamic_path(), static_path()), 0.5);
  }
  throw InvalidConfig("unknown inference mode");
}

/// s_a [B, N_a]: grid scores restricted to the space's compositions.
inline Tensor compose_scores(const ScoreParts& parts, const LabelSpace& space, InferenceMode mode) {
  if (parts.verb.dim(1) != space.num_verbs() || parts.object.dim(1) != space.num_objects()) {
    throw ShapeError("compose_scores: score widths do not match the label space");
  }
  std::vector<std::size_t> cells;
  for (const auto& c : space.compositions()) cells.push_back(space.grid_index(c));
  return gather_cols(grid_scores(parts, mode), std::move(cells));
}

/// Seeds prototype rows from word vectors keyed by label name. Vectors whose
/// length differs from C are mapped through a fixed seeded Gaussian
/// projection. Rows are unit-normalized; labels without a vector keep their
/// current values. Returns the number of rows seeded.
inline std::size_t seed_prototypes(Tensor& prototypes, const std::vector<std::string>& names,
                                   const std::map<std::string, std::vector<double>>& vectors, std::uint64_t seed) {
  const std::size_t C = prototypes.dim(1);
  std::size_t seeded = 0;
  std::map<std::size_t, std::vector<double>> projections;
  auto values = prototypes.mutable_values();
  for (std::size_t r = 0; r < names.size(); ++r) {
    auto it = vectors.find(names[r]);
    if (it == vectors.end() || it->second.empty()) continue;
    const auto& src = it->second;
    std::vector<double> row(C, 0.0);
    if (src.size() == C) {
      row = src;
    } else {
      auto& proj = projections[src.size()];
      if (proj.empty()) {
        Rng rng(seed ^ src.size());
        proj.resize(src.size() * C);
        for (double& x : proj) x = rng.normal() / std::sqrt(static_cast<double>(src.size()));
      }
      for (std::size_t i = 0; i < src.size(); ++i) {
        for (std::size_t j = 0; j < C; ++j) row[j] += src[i] * proj[i * C + j];
      }
    }
    double n2 = 0.0;
    for (double x : row) n2 += x * x;
    if (!(n2 > 0.0)) continue;
    for (std::size_t j = 0; j < C; ++j) values[r * C + j] = row[j] / std::sqrt(n2);
    ++seeded;
  }
  return seeded;
}

}  // namespace c2c
