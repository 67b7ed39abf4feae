#pragma once

// On-disk formats. Binary formats are little-endian with 32-bit fields:
//
//   feature file  "C2CF" version N T H W C_in, then N records of
//                 (verb u32, object u32, T*H*W*C_in f32)
//   checkpoint    "C2CM" version, then named parameter blocks of
//                 (name length u32, name bytes, rank u32, dims u32..., f32 values)
//   score matrix  "C2CS" version N N_a, N_a seen-flag bytes, N ground-truth
//                 u32 column indices, N*N_a f32 scores
//
// Text formats: annotations are JSON lines {sample_id, verb, object, split};
// splits, configs and reports are JSON; loss histories and curves are CSV.

#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2c/dataset.hpp"
#include "c2c/error.hpp"
#include "c2c/evaluation.hpp"
#include "c2c/fileutil.hpp"
#include "c2c/labelspace.hpp"
#include "c2c/model.hpp"
#include "c2c/training.hpp"

namespace c2c {

inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kScoreMatrixVersion = 1;

// ---------------------------------------------------------------------------
// Feature files

inline std::string encode_features(const VideoDataset& d) {
  if (d.values.size() != d.size() * d.shape.video_size() || d.objects.size() != d.size()) {
    throw InvalidInput("encode_features: dataset sizes are inconsistent");
  }
  ByteWriter w;
  w.bytes("C2CF");
  w.u32(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(d.size()));
  w.u32(static_cast<std::uint32_t>(d.shape.frames));
  w.u32(static_cast<std::uint32_t>(d.shape.height));
  w.u32(static_cast<std::uint32_t>(d.shape.width));
  w.u32(static_cast<std::uint32_t>(d.shape.channels));
  for (std::size_t i = 0; i < d.size(); ++i) {
    w.u32(d.verbs[i]);
    w.u32(d.objects[i]);
    for (float v : d.video(i)) w.f32(v);
  }
  return w.take();
}

inline VideoDataset decode_features(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic("C2CF");
  const std::uint32_t version = r.u32("version");
  if (version != kFeatureFileVersion) throw FormatError("unsupported feature file version " + std::to_string(version), 4);
  VideoDataset d;
  const std::uint32_t n = r.u32("N");
  d.shape.frames = r.u32("T");
  d.shape.height = r.u32("H");
  d.shape.width = r.u32("W");
  d.shape.channels = r.u32("C_in");
  const std::size_t per = d.shape.video_size();
  const std::size_t expected = static_cast<std::size_t>(n) * (8 + 4 * per);
  if (r.remaining() < expected) {
    // Locate the first incomplete record for the error offset.
    const std::size_t record = 8 + 4 * per;
    const std::size_t whole = record ? r.remaining() / record : 0;
    throw FormatError("truncated feature file: " + std::to_string(whole) + " of " + std::to_string(n) +
                          " records present",
                      static_cast<long long>(r.offset() + whole * record));
  }
  d.values.reserve(static_cast<std::size_t>(n) * per);
  for (std::uint32_t i = 0; i < n; ++i) {
    d.verbs.push_back(r.u32("verb"));
    d.objects.push_back(r.u32("object"));
    for (std::size_t k = 0; k < per; ++k) d.values.push_back(r.f32("value"));
  }
  r.expect_end();
  return d;
}

inline void write_features(const std::filesystem::path& path, const VideoDataset& d) {
  write_file_atomic(path, encode_features(d));
}
inline VideoDataset read_features(const std::filesystem::path& path) { return decode_features(read_file(path)); }

// ---------------------------------------------------------------------------
// Checkpoints

inline std::string encode_checkpoint(const C2CModel& model) {
  ByteWriter w;
  w.bytes("C2CM");
  w.u32(kCheckpointVersion);
  for (const auto& p : model.parameters()) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.tensor.values()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

inline std::map<std::string, Tensor> decode_checkpoint_tensors(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic("C2CM");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  std::map<std::string, Tensor> named;
  while (r.remaining() > 0) {
    const std::size_t at = r.offset();
    const std::uint32_t len = r.u32("name length");
    std::string name(r.bytes(len, "name"));
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError("parameter " + name + " has invalid rank", static_cast<long long>(at));
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32("dim"));
    std::vector<double> values(shape_size(shape));
    if (r.remaining() / 4 < values.size()) {
      throw FormatError("truncated values of parameter " + name, static_cast<long long>(r.offset()));
    }
    for (double& v : values) v = r.f32("value");
    if (!named.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
      throw FormatError("duplicate parameter " + name, static_cast<long long>(at));
    }
  }
  return named;
}

inline void write_checkpoint(const std::filesystem::path& path, const C2CModel& model) {
  write_file_atomic(path, encode_checkpoint(model));
}
inline C2CModel read_checkpoint(const std::filesystem::path& path) {
  return C2CModel::from_parameters(decode_checkpoint_tensors(read_file(path)));
}

// ---------------------------------------------------------------------------
// Score matrices

inline std::string encode_score_matrix(const ScoreMatrix& m) {
  ByteWriter w;
  w.bytes("C2CS");
  w.u32(kScoreMatrixVersion);
  w.u32(static_cast<std::uint32_t>(m.rows));
  w.u32(static_cast<std::uint32_t>(m.cols));
  for (std::uint8_t s : m.seen) w.u8(s ? 1 : 0);
  for (std::size_t t : m.truth) w.u32(static_cast<std::uint32_t>(t));
  for (double s : m.scores) w.f32(static_cast<float>(s));
  return w.take();
}

inline ScoreMatrix decode_score_matrix(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic("C2CS");
  const std::uint32_t version = r.u32("version");
  if (version != kScoreMatrixVersion) throw FormatError("unsupported score matrix version " + std::to_string(version), 4);
  ScoreMatrix m;
  m.rows = r.u32("N");
  m.cols = r.u32("N_a");
  for (std::size_t c = 0; c < m.cols; ++c) m.seen.push_back(r.u8("seen flag"));
  for (std::size_t i = 0; i < m.rows; ++i) m.truth.push_back(r.u32("ground truth"));
  if (r.remaining() / 4 < m.rows * m.cols) throw FormatError("truncated scores", static_cast<long long>(r.offset()));
  m.scores.reserve(m.rows * m.cols);
  for (std::size_t i = 0; i < m.rows * m.cols; ++i) m.scores.push_back(r.f32("score"));
  r.expect_end();
  return m;
}

inline void write_score_matrix(const std::filesystem::path& path, const ScoreMatrix& m) {
  write_file_atomic(path, encode_score_matrix(m));
}
inline ScoreMatrix read_score_matrix(const std::filesystem::path& path) { return decode_score_matrix(read_file(path)); }

// ---------------------------------------------------------------------------
// Annotations (JSON lines)

inline std::vector<AnnotationRecord> parse_annotations(const std::string& text) {
  std::vector<AnnotationRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AnnotationRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      r.verb = j.at("verb").get<std::string>();
      r.object = j.at("object").get<std::string>();
      const std::string split = j.at("split").get<std::string>();
      if (split == "train") {
        r.split = SourceSplit::kTrain;
      } else if (split == "test") {
        r.split = SourceSplit::kTest;
      } else {
        throw FormatError("annotation line " + std::to_string(lineno) + ": split must be train or test");
      }
      if (r.sample_id.empty() || r.verb.empty() || r.object.empty()) {
        throw FormatError("annotation line " + std::to_string(lineno) + ": empty field");
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("annotation line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::string format_annotations(const std::vector<AnnotationRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j = {{"sample_id", r.sample_id},
                        {"verb", r.verb},
                        {"object", r.object},
                        {"split", r.split == SourceSplit::kTrain ? "train" : "test"}};
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
  return parse_annotations(read_file(path));
}

// ---------------------------------------------------------------------------
// SplitSpec (JSON)

inline nlohmann::json to_json(const SplitSpec& s) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : s.space.compositions()) comps.push_back({c.verb, c.object});
  auto samples = [](const std::vector<SampleRef>& refs) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : refs) a.push_back({{"sample_id", r.sample_id}, {"composition", r.composition}});
    return a;
  };
  return {{"verbs", s.space.verbs()},
          {"objects", s.space.objects()},
          {"compositions", comps},
          {"train_compositions", s.train_compositions},
          {"val_compositions", s.val_compositions},
          {"test_compositions", s.test_compositions},
          {"train_samples", samples(s.train_samples)},
          {"val_samples", samples(s.val_samples)},
          {"test_samples", samples(s.test_samples)}};
}

inline SplitSpec split_from_json(const nlohmann::json& j) {
  try {
    std::vector<Composition> comps;
    for (const auto& c : j.at("compositions")) comps.push_back({c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>()});
    SplitSpec s;
    s.space = LabelSpace(j.at("verbs").get<std::vector<std::string>>(), j.at("objects").get<std::vector<std::string>>(),
                         std::move(comps));
    s.train_compositions = j.at("train_compositions").get<std::vector<std::size_t>>();
    s.val_compositions = j.at("val_compositions").get<std::vector<std::size_t>>();
    s.test_compositions = j.at("test_compositions").get<std::vector<std::size_t>>();
    auto samples = [](const nlohmann::json& a) {
      std::vector<SampleRef> out;
      for (const auto& r : a) out.push_back({r.at("sample_id").get<std::string>(), r.at("composition").get<std::size_t>()});
      return out;
    };
    s.train_samples = samples(j.at("train_samples"));
    s.val_samples = samples(j.at("val_samples"));
    s.test_samples = samples(j.at("test_samples"));
    for (const auto* list : {&s.train_compositions, &s.val_compositions, &s.test_compositions}) {
      for (std::size_t c : *list) {
        if (c >= s.space.num_compositions()) throw FormatError("split: composition index out of range");
      }
    }
    for (const auto* list : {&s.train_samples, &s.val_samples, &s.test_samples}) {
      for (const auto& r : *list) {
        if (r.composition >= s.space.num_compositions()) throw FormatError("split: sample composition out of range");
      }
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("split JSON: ") + e.what());
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("split JSON: ") + e.what());
  }
}

inline void write_split(const std::filesystem::path& path, const SplitSpec& s) {
  write_file_atomic(path, to_json(s).dump(1) + "\n");
}

inline SplitSpec read_split(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("split JSON: " + std::string(e.what()));
  }
  return split_from_json(j);
}

// ---------------------------------------------------------------------------
// Training config (flat JSON)

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"tau", c.tau},
          {"rho", c.rho},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"gamma", c.gamma},
          {"p", c.p},
          {"enhanced", c.enhanced},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"hidden", c.hidden},
          {"channels", c.channels},
          {"share_reference", c.share_reference},
          {"train_mode", std::string(to_string(c.train_mode))}};
}

/// Applies the keys present in `j` on top of `base`. Unknown keys are errors.
inline TrainConfig apply_config_json(TrainConfig base, const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidConfig("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "tau") base.tau = v.get<double>();
      else if (key == "rho") base.rho = v.get<double>();
      else if (key == "alpha") base.alpha = v.get<double>();
      else if (key == "beta") base.beta = v.get<double>();
      else if (key == "gamma") base.gamma = v.get<double>();
      else if (key == "p") base.p = v.get<double>();
      else if (key == "enhanced") base.enhanced = v.get<bool>();
      else if (key == "epochs") base.epochs = v.get<std::size_t>();
      else if (key == "batch_size") base.batch_size = v.get<std::size_t>();
      else if (key == "learning_rate") base.learning_rate = v.get<double>();
      else if (key == "seed") base.seed = v.get<std::uint64_t>();
      else if (key == "hidden") base.hidden = v.get<std::size_t>();
      else if (key == "channels") base.channels = v.get<std::size_t>();
      else if (key == "share_reference") base.share_reference = v.get<bool>();
      else if (key == "train_mode") base.train_mode = parse_inference_mode(v.get<std::string>());
      else throw InvalidConfig("unknown config key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("config: ") + e.what());
  }
  return base;
}

inline TrainConfig read_config(const std::filesystem::path& path, TrainConfig base = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("config JSON: " + std::string(e.what()));
  }
  return apply_config_json(base, j);
}

// ---------------------------------------------------------------------------
// Loss history (CSV)

inline std::string history_to_csv(const std::vector<EpochReport>& history) {
  std::string out = "epoch,batches,cutmix_batches,L_verb,L_obj,L_comp,L_com,L_sup_verb,L_sup_obj,L_ind,L_con,L_new,total\n";
  for (const auto& e : history) {
    const LossReport& m = e.mean;
    out += std::to_string(e.epoch) + "," + std::to_string(e.batches) + "," + std::to_string(e.cutmix_batches);
    for (double v : {m.verb, m.object, m.comp, m.com, m.sup_verb, m.sup_obj, m.ind, m.con, m.novel, m.total}) {
      out += "," + (std::isnan(v) ? std::string("nan") : format_double(v));
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Word vectors ("word v1 v2 ..." per line; an optional "count dim" header)

inline std::map<std::string, std::vector<double>> parse_embeddings(const std::string& text) {
  std::map<std::string, std::vector<double>> out;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw FormatError("embeddings: non-numeric value for " + word);
    if (first && v.size() == 1) {  // fastText header
      first = false;
      continue;
    }
    first = false;
    out[word] = std::move(v);
  }
  return out;
}

}  // namespace c2c
