#include <gtest/gtest.h>

#include <cmath>

#include "c2c/model.hpp"
#include "helpers.hpp"

using namespace c2c;
using c2c::testing::random_tensor;

namespace {

ModelDims small_dims(std::size_t nv = 3, std::size_t no = 4, bool share = false) {
  ModelDims d;
  d.frame_size = 12;
  d.hidden = 8;
  d.channels = 6;
  d.num_verbs = nv;
  d.num_objects = no;
  d.share_reference = share;
  return d;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

ScoreParts toy_parts(double sv, double so, double ogv, double vgo) {
  return {Tensor({1, 1}, {sv}), Tensor({1, 1}, {so}), Tensor({1, 1}, {ogv}), Tensor({1, 1}, {vgo})};
}

}  // namespace

TEST(Model, EncoderShapes) {
  C2CModel m(small_dims(), 1);
  Rng rng(2);
  Encoded e = m.encode(random_tensor({2, 5, 12}, rng, false));
  EXPECT_EQ(e.frames.shape(), (Shape{2, 5, 8}));
  EXPECT_EQ(e.pooled.shape(), (Shape{2, 8}));
  EXPECT_EQ(e.dynamic.shape(), (Shape{2, 6}));
  EXPECT_EQ(e.stat.shape(), (Shape{2, 6}));
  Encoded single = m.encode_video(random_tensor({5, 2, 2, 3}, rng, false));
  EXPECT_EQ(single.frames.shape(), (Shape{1, 5, 8}));
}

TEST(Model, RejectsSingleFrame) {
  C2CModel m(small_dims(), 1);
  EXPECT_THROW(m.encode(Tensor::zeros({1, 1, 12})), InvalidInput);
  EXPECT_THROW(m.encode(Tensor::zeros({1, 3, 11})), ShapeError);
}

TEST(Model, FramePermutationChangesDynamicButNotStatic) {
  C2CModel m(small_dims(), 3);
  Rng rng(4);
  Tensor x = random_tensor({1, 6, 12}, rng, false);
  std::vector<double> rev(x.size());
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t p = 0; p < 12; ++p) rev[t * 12 + p] = x[(5 - t) * 12 + p];
  }
  Encoded a = m.encode(x);
  Encoded b = m.encode(Tensor({1, 6, 12}, rev));
  for (std::size_t i = 0; i < a.stat.size(); ++i) EXPECT_EQ(a.stat[i], b.stat[i]);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.dynamic.size(); ++i) diff = std::max(diff, std::abs(a.dynamic[i] - b.dynamic[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Model, IdenticalFramesGiveFrameInvariantDynamicResponse) {
  C2CModel m(small_dims(), 5);
  Rng rng(6);
  Tensor frame = random_tensor({12}, rng, false);
  std::vector<double> v;
  for (int t = 0; t < 4; ++t) v.insert(v.end(), frame.values().begin(), frame.values().end());
  std::vector<double> v5 = v;
  v5.insert(v5.end(), frame.values().begin(), frame.values().end());
  // A constant sequence yields the same per-frame response, so its length
  // does not change the pooled dynamic feature.
  Encoded a = m.encode(Tensor({1, 4, 12}, v));
  Encoded b = m.encode(Tensor({1, 5, 12}, v5));
  for (std::size_t i = 0; i < a.dynamic.size(); ++i) EXPECT_NEAR(a.dynamic[i], b.dynamic[i], 1e-14);
}

TEST(Model, ComponentScoresAgainstPrototypes) {
  C2CModel m(small_dims(), 7);
  const Tensor& protos = m.verb_prototypes();
  std::vector<double> row(protos.values().begin() + 6, protos.values().begin() + 12);  // row 1
  Tensor fv({1, 6}, row);
  Tensor fo({1, 6}, row);
  auto [sv, so] = m.component_scores(fv, fo);
  EXPECT_NEAR(sv[1], 1.0, 1e-15);
  // Make an orthogonal feature to row 0.
  std::vector<double> r0(protos.values().begin(), protos.values().begin() + 6);
  std::vector<double> ortho(6, 0.0);
  ortho[0] = r0[1];
  ortho[1] = -r0[0];
  auto [sv2, so2] = m.component_scores(Tensor({1, 6}, ortho), Tensor({1, 6}, ortho));
  EXPECT_NEAR(sv2[0], 0.0, 1e-15);
}

TEST(Model, ConditionalScoreShapesAndRange) {
  C2CModel m(small_dims(3, 4), 8);
  Rng rng(9);
  Encoded e = m.encode(random_tensor({2, 5, 12}, rng, false));
  ScoreParts p = m.score_parts(e);
  EXPECT_EQ(p.obj_given_verb.shape(), (Shape{2, 12}));
  EXPECT_EQ(p.verb_given_obj.shape(), (Shape{2, 12}));
  for (double v : p.obj_given_verb.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Model, SingleVerbSingleObjectHandComposition) {
  C2CModel m(small_dims(1, 1, true), 10);
  Rng rng(11);
  Encoded e = m.encode(random_tensor({1, 4, 12}, rng, false));
  ScoreParts p = m.score_parts(e);
  auto fuse = [](const Linear& fuser, std::span<const double> ref, std::span<const double> cond) {
    const std::size_t C = ref.size();
    std::vector<double> out(C);
    for (std::size_t j = 0; j < C; ++j) {
      double s = fuser.bias[j];
      for (std::size_t i = 0; i < C; ++i) s += ref[i] * fuser.weight[i * C + j];
      for (std::size_t i = 0; i < C; ++i) s += cond[i] * fuser.weight[(C + i) * C + j];
      out[j] = s;
    }
    return out;
  };
  const auto fused_dyn = fuse(m.dynamics_path_fuser(), e.stat.values(), m.verb_prototypes().values());
  const auto fused_stat = fuse(m.static_path_fuser(), e.dynamic.values(), m.object_prototypes().values());
  EXPECT_NEAR(p.obj_given_verb[0], (cosine(fused_dyn, m.object_prototypes().values()) + 1.0) / 2.0, 1e-12);
  EXPECT_NEAR(p.verb_given_obj[0], (cosine(fused_stat, m.verb_prototypes().values()) + 1.0) / 2.0, 1e-12);
}

TEST(Model, AffineMapEndpoints) {
  Tensor c({3}, {1.0, -1.0, 0.0});
  Tensor s = affine(c, 0.5, 0.5);
  EXPECT_EQ(s[0], 1.0);
  EXPECT_EQ(s[1], 0.0);
  EXPECT_EQ(s[2], 0.5);
}

TEST(Compose, HandEvaluatedModes) {
  EXPECT_NEAR(grid_scores(toy_parts(1.0, 1.0, 0.8, 0.6), InferenceMode::kFull)[0], 0.7, 1e-15);
  EXPECT_EQ(grid_scores(toy_parts(0.0, 0.7, 0.8, 0.6), InferenceMode::kIndependent)[0], 0.0);
  EXPECT_EQ(grid_scores(toy_parts(1.0, 1.0, 0.8, 0.6), InferenceMode::kKnowledgeAgnostic)[0], 2.0);
  EXPECT_NEAR(grid_scores(toy_parts(0.5, 1.0, 0.8, 0.6), InferenceMode::kDynamicOnly)[0], 0.4, 1e-15);
  EXPECT_NEAR(grid_scores(toy_parts(1.0, 0.5, 0.8, 0.6), InferenceMode::kStaticOnly)[0], 0.3, 1e-15);
}

TEST(Compose, FullIsMeanOfPathsAndLayoutMatchesGrid) {
  C2CModel m(small_dims(3, 4), 12);
  Rng rng(13);
  ScoreParts p = m.score_parts(m.encode(random_tensor({2, 5, 12}, rng, false)));
  Tensor full = grid_scores(p, InferenceMode::kFull);
  Tensor dyn = grid_scores(p, InferenceMode::kDynamicOnly);
  Tensor stat = grid_scores(p, InferenceMode::kStaticOnly);
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_EQ(full[i], (dyn[i] + stat[i]) * 0.5);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t l = 0; l < 3; ++l) {
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(dyn[b * 12 + l * 4 + k], p.verb[b * 3 + l] * p.obj_given_verb[b * 12 + l * 4 + k]);
        EXPECT_EQ(stat[b * 12 + l * 4 + k], p.object[b * 4 + k] * p.verb_given_obj[b * 12 + k * 3 + l]);
      }
    }
  }
}

TEST(Compose, GatherFollowsLabelSpace) {
  C2CModel m(small_dims(3, 4), 14);
  Rng rng(15);
  ScoreParts p = m.score_parts(m.encode(random_tensor({1, 5, 12}, rng, false)));
  LabelSpace space({"a", "b", "c"}, {"w", "x", "y", "z"}, {{2, 1}, {0, 3}});
  Tensor s = compose_scores(p, space, InferenceMode::kFull);
  Tensor g = grid_scores(p, InferenceMode::kFull);
  ASSERT_EQ(s.shape(), (Shape{1, 2}));
  EXPECT_EQ(s[0], g[2 * 4 + 1]);
  EXPECT_EQ(s[1], g[0 * 4 + 3]);
}

TEST(Compose, ParseModes) {
  for (InferenceMode mode : kAllInferenceModes) EXPECT_EQ(parse_inference_mode(to_string(mode)), mode);
  EXPECT_THROW(parse_inference_mode("bogus"), InvalidConfig);
}

TEST(Model, CloneIsDeepAndFromParametersRoundTrips) {
  C2CModel m(small_dims(), 16);
  C2CModel c = m.clone();
  c.verb_prototypes().mutable_values()[0] += 1.0;
  EXPECT_NE(c.verb_prototypes()[0], m.verb_prototypes()[0]);
  std::map<std::string, Tensor> named;
  for (const auto& p : m.parameters()) named.emplace(p.name, p.tensor);
  C2CModel r = C2CModel::from_parameters(named);
  ASSERT_EQ(r.parameters().size(), m.parameters().size());
  named.erase("general.bias");
  EXPECT_THROW(C2CModel::from_parameters(named), FormatError);
}

TEST(Model, SharedReferenceHasFewerParameters) {
  EXPECT_EQ(C2CModel(small_dims(3, 4, false), 1).parameters().size(), 24u);
  EXPECT_EQ(C2CModel(small_dims(3, 4, true), 1).parameters().size(), 16u);
}

TEST(Model, SeedPrototypesFromWordVectors) {
  C2CModel m(small_dims(2, 2), 17);
  std::map<std::string, std::vector<double>> vectors{{"a", {3, 0, 4, 0, 0, 0}}, {"b", {1, 2, 3}}};
  EXPECT_EQ(seed_prototypes(m.verb_prototypes(), {"a", "b"}, vectors, 1), 2u);
  EXPECT_NEAR(m.verb_prototypes()[0], 0.6, 1e-15);
  EXPECT_NEAR(m.verb_prototypes()[2], 0.8, 1e-15);
  EXPECT_EQ(seed_prototypes(m.object_prototypes(), {"x", "y"}, vectors, 1), 0u);
}
