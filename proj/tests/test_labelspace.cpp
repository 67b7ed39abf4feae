#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "c2c/labelspace.hpp"
#include "c2c/synthetic.hpp"

using namespace c2c;

namespace {

std::vector<AnnotationRecord> make_records(const std::vector<std::tuple<std::string, std::string, int, SourceSplit>>& spec) {
  std::vector<AnnotationRecord> out;
  int id = 0;
  for (const auto& [v, o, n, split] : spec) {
    for (int i = 0; i < n; ++i) out.push_back({"r" + std::to_string(id++), v, o, split});
  }
  return out;
}

}  // namespace

TEST(LabelSpace, TwoRecordsGiveTwoCompositions) {
  const LabelSpace s = build_label_space(make_records({{"open", "box", 1, SourceSplit::kTrain},
                                                       {"close", "box", 1, SourceSplit::kTrain}}));
  EXPECT_EQ(s.num_verbs(), 2u);
  EXPECT_EQ(s.num_objects(), 1u);
  EXPECT_EQ(s.num_compositions(), 2u);
  EXPECT_EQ(s.verbs(), (std::vector<std::string>{"close", "open"}));
}

TEST(LabelSpace, DuplicatesCollapse) {
  const LabelSpace s = build_label_space(make_records({{"open", "box", 4, SourceSplit::kTrain}}));
  EXPECT_EQ(s.num_compositions(), 1u);
}

TEST(LabelSpace, EmptyInputThrows) { EXPECT_THROW(build_label_space({}), InvalidInput); }

TEST(LabelSpace, ValidationRejectsBadInput) {
  EXPECT_THROW(LabelSpace({"a", "a"}, {"x"}, {}), InvalidInput);
  EXPECT_THROW(LabelSpace({"a"}, {"x"}, {{1, 0}}), InvalidInput);
  EXPECT_THROW(LabelSpace({"a"}, {"x"}, {{0, 0}, {0, 0}}), InvalidInput);
}

TEST(LabelSpace, VocabularySizesFollowGenerator) {
  const auto records = synthetic_annotations(17, 23, 30, 0.3, 4);
  ASSERT_GT(records.size(), 9000u);
  const LabelSpace s = build_label_space(records);
  EXPECT_EQ(s.num_verbs(), 17u);
  EXPECT_EQ(s.num_objects(), 23u);
}

TEST(CompositionMask, CountsAndInclusion) {
  std::vector<Composition> comps;
  for (std::size_t v = 0; v < 3; ++v) {
    for (std::size_t o = 0; o < 3; ++o) comps.push_back({v, o});
  }
  SplitSpec split;
  split.space = LabelSpace({"a", "b", "c"}, {"x", "y", "z"}, comps);
  split.train_compositions = {0, 1, 4, 5, 8};
  split.val_compositions = {0, 2};
  split.test_compositions = {1, 3, 6, 7};
  const auto train = composition_mask(split.space, split, MaskKind::kTrain);
  const auto feasible = composition_mask(split.space, split, MaskKind::kFeasible);
  EXPECT_EQ(std::count(train.begin(), train.end(), 1), 5);
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i]) EXPECT_TRUE(feasible[i]);
  }
  // 5 train + 3 unseen test compositions.
  split.val_compositions = {0};
  split.test_compositions = {1, 3, 6, 7};
  const auto f2 = composition_mask(split.space, split, MaskKind::kFeasible);
  EXPECT_EQ(std::count(f2.begin(), f2.end(), 1), 8);
}

TEST(CheckSplit, FlagsViolations) {
  SplitSpec split;
  split.space = LabelSpace({"a", "b"}, {"x", "y"}, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  split.train_compositions = {0, 3};
  for (int i = 0; i < 5; ++i) {
    split.train_samples.push_back({"t0_" + std::to_string(i), 0});
    split.train_samples.push_back({"t3_" + std::to_string(i), 3});
  }
  split.val_compositions = {0, 1};
  split.test_compositions = {3, 2};
  for (int i = 0; i < 5; ++i) {
    split.val_samples.push_back({"v0_" + std::to_string(i), 0});
    split.val_samples.push_back({"v1_" + std::to_string(i), 1});
    split.test_samples.push_back({"s3_" + std::to_string(i), 3});
    split.test_samples.push_back({"s2_" + std::to_string(i), 2});
  }
  EXPECT_TRUE(check_split(split).empty());
  split.test_samples.pop_back();
  EXPECT_FALSE(check_split(split).empty());
}

TEST(Sthcom, SmallCompositionIsRemoved) {
  std::vector<std::tuple<std::string, std::string, int, SourceSplit>> spec;
  const std::vector<std::string> verbs{"v0", "v1", "v2", "v3"}, objects{"o0", "o1", "o2", "o3"};
  for (std::size_t v = 0; v < 4; ++v) {
    for (std::size_t o = 0; o < 4; ++o) {
      const bool test = (v + o) % 3 == 0;
      int n = 12;
      if (v == 1 && o == 2) n = 3;
      spec.emplace_back(verbs[v], objects[o], n, test ? SourceSplit::kTest : SourceSplit::kTrain);
    }
  }
  const SplitSpec s = build_sthcom_split(make_records(spec), 3);
  const auto c = s.space.find({*s.space.verb_index("v1"), *s.space.object_index("o2")});
  EXPECT_FALSE(c.has_value());
  EXPECT_TRUE(check_split(s).empty());
}

TEST(Sthcom, TestComponentsMissingFromTrainAreRemoved) {
  std::vector<std::tuple<std::string, std::string, int, SourceSplit>> spec;
  for (int v = 0; v < 4; ++v) {
    for (int o = 0; o < 4; ++o) {
      spec.emplace_back("v" + std::to_string(v), "o" + std::to_string(o), 12,
                        (v + o) % 2 ? SourceSplit::kTest : SourceSplit::kTrain);
    }
  }
  spec.emplace_back("ghost", "o0", 10, SourceSplit::kTest);
  const SplitSpec s = build_sthcom_split(make_records(spec), 1);
  EXPECT_FALSE(s.space.verb_index("ghost").has_value());
}

TEST(Sthcom, DeterministicPerSeedAndSatisfiesInvariants) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto records = synthetic_annotations(8, 8, 16, 0.35, 100 + seed);
    const SplitSpec a = build_sthcom_split(records, seed);
    const SplitSpec b = build_sthcom_split(records, seed);
    EXPECT_TRUE(a == b);
    const auto problems = check_split(a);
    EXPECT_TRUE(problems.empty()) << problems.front();
  }
}

TEST(Sthcom, InterchangeCreatesSeenCompositionsInTest) {
  const auto records = synthetic_annotations(10, 10, 20, 0.35, 9);
  const SplitSpec s = build_sthcom_split(records, 2);
  const std::set<std::size_t> train(s.train_compositions.begin(), s.train_compositions.end());
  std::size_t seen = 0, unseen = 0;
  for (std::size_t c : s.test_compositions) (train.count(c) ? seen : unseen)++;
  EXPECT_GT(seen, 0u);
  EXPECT_GT(unseen, 0u);
}

TEST(Sthcom, ValTestRatioIsRoughlyThreeToFour) {
  const auto records = synthetic_annotations(12, 12, 20, 0.4, 11);
  const SplitSpec s = build_sthcom_split(records, 5);
  const double share = static_cast<double>(s.val_samples.size()) /
                       static_cast<double>(s.val_samples.size() + s.test_samples.size());
  EXPECT_NEAR(share, 3.0 / 7.0, 0.08);
}

TEST(Sthcom, EmptyTrainAfterCleaningFails) {
  const auto records = make_records({{"a", "x", 3, SourceSplit::kTrain}, {"a", "x", 9, SourceSplit::kTest}});
  try {
    build_sthcom_split(records, 0);
    FAIL();
  } catch (const ConstructionFailed& e) {
    EXPECT_EQ(e.stage(), "cleaning");
  }
}

TEST(Sthcom, DuplicateSampleIdsRejected) {
  std::vector<AnnotationRecord> records{{"s", "a", "x", SourceSplit::kTrain}, {"s", "b", "x", SourceSplit::kTrain}};
  EXPECT_THROW(build_sthcom_split(records, 0), InvalidInput);
}
