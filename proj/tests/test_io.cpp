#include <gtest/gtest.h>

#include <filesystem>

#include "c2c/io.hpp"
#include "c2c/synthetic.hpp"

using namespace c2c;

namespace {

VideoDataset tiny_dataset() {
  VideoDataset d;
  d.shape = {4, 8, 8, 3};
  Rng rng(1);
  std::vector<float> v(d.shape.video_size());
  for (std::uint32_t i = 0; i < 2; ++i) {
    for (float& x : v) x = static_cast<float>(rng.normal());
    d.append(v, i, 1 - i);
  }
  return d;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "c2c_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Features, PayloadSizeAndRoundTrip) {
  const VideoDataset d = tiny_dataset();
  const std::string bytes = encode_features(d);
  const std::size_t header = 4 + 6 * 4;
  EXPECT_EQ(bytes.size() - header, 2u * (8 + 4 * 4 * 8 * 8 * 3));
  const VideoDataset back = decode_features(bytes);
  EXPECT_EQ(back.shape, d.shape);
  EXPECT_EQ(back.verbs, d.verbs);
  EXPECT_EQ(back.objects, d.objects);
  EXPECT_EQ(back.values, d.values);
  EXPECT_EQ(encode_features(back), bytes);
}

TEST(Features, FileRoundTrip) {
  const VideoDataset d = tiny_dataset();
  write_features(scratch("f.c2cf"), d);
  EXPECT_EQ(read_features(scratch("f.c2cf")).values, d.values);
  EXPECT_THROW(read_features(scratch("missing.c2cf")), IoError);
}

TEST(Features, BadMagicAndTruncation) {
  std::string bytes = encode_features(tiny_dataset());
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_features(bad), FormatError);
  try {
    decode_features(bytes.substr(0, bytes.size() - 10));
    FAIL();
  } catch (const FormatError& e) {
    // The second record is incomplete; it starts after the header and one record.
    EXPECT_EQ(e.offset(), static_cast<long long>(28 + 8 + 4 * 768));
  }
  EXPECT_THROW(decode_features(bytes + "x"), FormatError);
  EXPECT_THROW(decode_features(bytes.substr(0, 10)), FormatError);
}

TEST(Checkpoint, RoundTripThroughF32) {
  ModelDims dims;
  dims.frame_size = 12;
  dims.hidden = 6;
  dims.channels = 5;
  dims.num_verbs = 3;
  dims.num_objects = 2;
  C2CModel m(dims, 4);
  const std::string bytes = encode_checkpoint(m);
  const C2CModel back = C2CModel::from_parameters(decode_checkpoint_tensors(bytes));
  EXPECT_EQ(encode_checkpoint(back), bytes);
  const auto a = m.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    for (std::size_t k = 0; k < a[i].tensor.size(); ++k) {
      EXPECT_EQ(b[i].tensor[k], static_cast<double>(static_cast<float>(a[i].tensor[k])));
    }
  }
  EXPECT_THROW(decode_checkpoint_tensors(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint_tensors("C2CM\x02\0\0\0"), FormatError);
}

TEST(ScoreMatrixFile, RoundTrip) {
  ScoreMatrix m;
  m.rows = 2;
  m.cols = 3;
  m.seen = {1, 0, 1};
  m.truth = {0, 1};
  m.scores = {0.5, 0.25, -1.0, 2.0, 0.125, 3.5};
  write_score_matrix(scratch("s.c2cs"), m);
  const ScoreMatrix back = read_score_matrix(scratch("s.c2cs"));
  EXPECT_EQ(back.scores, m.scores);
  EXPECT_EQ(back.truth, m.truth);
  EXPECT_EQ(back.seen, m.seen);
  const std::string bytes = encode_score_matrix(m);
  EXPECT_EQ(bytes.size(), 16u + 3 + 2 * 4 + 6 * 4);
  EXPECT_THROW(decode_score_matrix(bytes.substr(0, bytes.size() - 1)), FormatError);
}

TEST(SplitFile, RoundTrip) {
  SyntheticSpec spec;
  spec.num_verbs = 3;
  spec.num_objects = 3;
  spec.shape = {2, 2, 2, 1};
  spec.train_per_composition = 2;
  spec.eval_per_composition = 1;
  spec.unseen = 2;
  const SyntheticData s = generate_synthetic(spec);
  write_split(scratch("split.json"), s.split);
  EXPECT_TRUE(read_split(scratch("split.json")) == s.split);
  EXPECT_THROW(split_from_json(nlohmann::json::parse(R"({"verbs": ["a"]})")), FormatError);
}

TEST(Annotations, ParseAndFormat) {
  const std::string text =
      "{\"sample_id\": \"1\", \"verb\": \"open\", \"object\": \"box\", \"split\": \"train\"}\n"
      "\n"
      "{\"sample_id\": \"2\", \"verb\": \"close\", \"object\": \"box\", \"split\": \"test\"}\n";
  const auto records = parse_annotations(text);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[1].verb, "close");
  EXPECT_EQ(records[1].split, SourceSplit::kTest);
  EXPECT_EQ(parse_annotations(format_annotations(records)).size(), 2u);
  EXPECT_THROW(parse_annotations("{\"sample_id\": \"1\"}\n"), FormatError);
  EXPECT_THROW(parse_annotations("{\"sample_id\": \"1\", \"verb\": \"a\", \"object\": \"b\", \"split\": \"val\"}\n"),
               FormatError);
  EXPECT_THROW(parse_annotations("not json\n"), FormatError);
}

TEST(Config, RoundTripAndUnknownKeys) {
  TrainConfig c;
  c.alpha = 0.4;
  c.enhanced = false;
  c.train_mode = InferenceMode::kDynamicOnly;
  const TrainConfig back = apply_config_json({}, to_json(c));
  EXPECT_EQ(back.alpha, 0.4);
  EXPECT_FALSE(back.enhanced);
  EXPECT_EQ(back.train_mode, InferenceMode::kDynamicOnly);
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(apply_config_json({}, nlohmann::json::parse(R"({"alhpa": 1})")), InvalidConfig);
  EXPECT_THROW(apply_config_json({}, nlohmann::json::parse(R"({"tau": "x"})")), InvalidConfig);
}

TEST(History, CsvMarksInactiveTerms) {
  EpochReport e;
  e.epoch = 1;
  e.batches = 3;
  e.mean.verb = 0.5;
  e.mean.con = NAN;
  const std::string csv = history_to_csv({e});
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "epoch,batches,cutmix_batches,L_verb,L_obj,L_comp,L_com,L_sup_verb,L_sup_obj,L_ind,L_con,L_new,total");
  EXPECT_NE(csv.find(",nan,"), std::string::npos);
}

TEST(Embeddings, ParsesWithOptionalHeader) {
  const auto a = parse_embeddings("2 3\nopen 1 2 3\nclose 4 5 6\n");
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a.at("close"), (std::vector<double>{4, 5, 6}));
  EXPECT_THROW(parse_embeddings("open 1 x\n"), FormatError);
}
