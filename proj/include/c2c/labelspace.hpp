#pragma once

// Compositional label domain (verbs, objects, verb-object actions) and the
// generalized zero-shot split semantics built on top of it.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "c2c/error.hpp"
#include "c2c/rng.hpp"

namespace c2c {

enum class SourceSplit { kTrain, kTest };

struct AnnotationRecord {
  std::string sample_id;
  std::string verb;
  std::string object;
  SourceSplit split = SourceSplit::kTrain;
};

struct Composition {
  std::size_t verb = 0;
  std::size_t object = 0;
  friend auto operator<=>(const Composition&, const Composition&) = default;
};

class LabelSpace {
 public:
  LabelSpace() = default;

  /// Validates uniqueness and index ranges.
  LabelSpace(std::vector<std::string> verbs, std::vector<std::string> objects, std::vector<Composition> compositions)
      : verbs_(std::move(verbs)), objects_(std::move(objects)), compositions_(std::move(compositions)) {
    auto unique_names = [](const std::vector<std::string>& names, const char* what) {
      std::set<std::string> seen;
      for (const auto& n : names) {
        if (n.empty()) throw InvalidInput(std::string("empty ") + what + " name");
        if (!seen.insert(n).second) throw InvalidInput(std::string("duplicate ") + what + " name: " + n);
      }
    };
    unique_names(verbs_, "verb");
    unique_names(objects_, "object");
    for (std::size_t i = 0; i < compositions_.size(); ++i) {
      const Composition& c = compositions_[i];
      if (c.verb >= verbs_.size() || c.object >= objects_.size()) {
        throw InvalidInput("composition references an unknown verb or object");
      }
      if (!index_.emplace(key(c), i).second) throw InvalidInput("duplicate composition pair");
    }
  }

  std::size_t num_verbs() const { return verbs_.size(); }
  std::size_t num_objects() const { return objects_.size(); }
  std::size_t num_compositions() const { return compositions_.size(); }

  const std::vector<std::string>& verbs() const { return verbs_; }
  const std::vector<std::string>& objects() const { return objects_; }
  const std::vector<Composition>& compositions() const { return compositions_; }
  const Composition& composition(std::size_t i) const { return compositions_.at(i); }

  std::optional<std::size_t> find(Composition c) const {
    auto it = index_.find(key(c));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> verb_index(const std::string& name) const { return lookup(verbs_, name); }
  std::optional<std::size_t> object_index(const std::string& name) const { return lookup(objects_, name); }

  /// Flat index of a pair in the dense N_v x N_o grid.
  std::size_t grid_index(Composition c) const { return c.verb * objects_.size() + c.object; }

  friend bool operator==(const LabelSpace& a, const LabelSpace& b) {
    return a.verbs_ == b.verbs_ && a.objects_ == b.objects_ && a.compositions_ == b.compositions_;
  }

 private:
  std::uint64_t key(Composition c) const {
    return (static_cast<std::uint64_t>(c.verb) << 32) | static_cast<std::uint64_t>(c.object);
  }
  static std::optional<std::size_t> lookup(const std::vector<std::string>& names, const std::string& name) {
    auto it = std::lower_bound(names.begin(), names.end(), name);
    if (it != names.end() && *it == name) return static_cast<std::size_t>(it - names.begin());
    // Vocabularies are normally sorted; fall back to a scan for hand-built spaces.
    it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
  }

  std::vector<std::string> verbs_;
  std::vector<std::string> objects_;
  std::vector<Composition> compositions_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

struct SampleRef {
  std::string sample_id;
  std::size_t composition = 0;
  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

enum class Partition { kTrain, kVal, kTest };

struct SplitSpec {
  LabelSpace space;
  std::vector<std::size_t> train_compositions;  // sorted, unique
  std::vector<std::size_t> val_compositions;
  std::vector<std::size_t> test_compositions;
  std::vector<SampleRef> train_samples;
  std::vector<SampleRef> val_samples;
  std::vector<SampleRef> test_samples;

  const std::vector<SampleRef>& samples(Partition p) const {
    return p == Partition::kTrain ? train_samples : p == Partition::kVal ? val_samples : test_samples;
  }
  const std::vector<std::size_t>& compositions(Partition p) const {
    return p == Partition::kTrain ? train_compositions : p == Partition::kVal ? val_compositions : test_compositions;
  }

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// Vocabularies sorted lexicographically; compositions are the distinct
/// observed pairs ordered by (verb index, object index).
inline LabelSpace build_label_space(const std::vector<AnnotationRecord>& records) {
  if (records.empty()) throw InvalidInput("build_label_space: no records");
  std::set<std::string> verbs, objects;
  for (const auto& r : records) {
    if (r.verb.empty() || r.object.empty()) throw InvalidInput("record " + r.sample_id + " has an empty name");
    verbs.insert(r.verb);
    objects.insert(r.object);
  }
  std::vector<std::string> vs(verbs.begin(), verbs.end());
  std::vector<std::string> os(objects.begin(), objects.end());
  auto index_of = [](const std::vector<std::string>& names, const std::string& n) {
    return static_cast<std::size_t>(std::lower_bound(names.begin(), names.end(), n) - names.begin());
  };
  std::set<Composition> pairs;
  for (const auto& r : records) pairs.insert({index_of(vs, r.verb), index_of(os, r.object)});
  return LabelSpace(std::move(vs), std::move(os), std::vector<Composition>(pairs.begin(), pairs.end()));
}

enum class MaskKind { kTrain, kFeasible };

/// Boolean mask over the space's compositions: A_train, or A_train ∪ A_val ∪ A_test.
inline std::vector<std::uint8_t> composition_mask(const LabelSpace& space, const SplitSpec& split, MaskKind which) {
  std::vector<std::uint8_t> mask(space.num_compositions(), 0);
  auto mark = [&](const std::vector<std::size_t>& comps) {
    for (std::size_t c : comps) {
      if (c >= mask.size()) throw InvalidInput("composition_mask: composition index out of range");
      mask[c] = 1;
    }
  };
  mark(split.train_compositions);
  if (which == MaskKind::kFeasible) {
    mark(split.val_compositions);
    mark(split.test_compositions);
  }
  return mask;
}

/// Every constraint a generalized zero-shot split must satisfy. Returns a
/// human-readable list of violations; empty means valid.
inline std::vector<std::string> check_split(const SplitSpec& split, std::size_t min_samples = 5) {
  std::vector<std::string> problems;
  const LabelSpace& space = split.space;
  const std::size_t na = space.num_compositions();
  std::set<std::string> ids;

  auto check_partition = [&](const char* name, const std::vector<std::size_t>& comps,
                             const std::vector<SampleRef>& samples) {
    std::set<std::size_t> comp_set(comps.begin(), comps.end());
    if (comp_set.size() != comps.size()) problems.push_back(std::string(name) + ": duplicate composition");
    std::map<std::size_t, std::size_t> counts;
    for (const auto& s : samples) {
      if (s.composition >= na) {
        problems.push_back(std::string(name) + ": sample " + s.sample_id + " has out-of-range composition");
        continue;
      }
      if (!comp_set.count(s.composition)) {
        problems.push_back(std::string(name) + ": sample " + s.sample_id + " uses an unlisted composition");
      }
      if (!ids.insert(s.sample_id).second) problems.push_back("duplicate sample id " + s.sample_id);
      ++counts[s.composition];
    }
    for (std::size_t c : comps) {
      if (c >= na) {
        problems.push_back(std::string(name) + ": composition index out of range");
      } else if (counts[c] < min_samples) {
        problems.push_back(std::string(name) + ": composition " + std::to_string(c) + " has " +
                           std::to_string(counts[c]) + " samples (< " + std::to_string(min_samples) + ")");
      }
    }
  };
  check_partition("train", split.train_compositions, split.train_samples);
  check_partition("val", split.val_compositions, split.val_samples);
  check_partition("test", split.test_compositions, split.test_samples);
  if (split.train_compositions.empty()) problems.push_back("train: no compositions");

  std::set<std::size_t> train_verbs, train_objects, train_set;
  for (std::size_t c : split.train_compositions) {
    if (c >= na) continue;
    train_set.insert(c);
    train_verbs.insert(space.composition(c).verb);
    train_objects.insert(space.composition(c).object);
  }
  auto check_eval = [&](const char* name, const std::vector<std::size_t>& comps) {
    bool any_seen = false, any_unseen = false;
    for (std::size_t c : comps) {
      if (c >= na) continue;
      const Composition& p = space.composition(c);
      if (!train_verbs.count(p.verb)) problems.push_back(std::string(name) + ": verb " + space.verbs()[p.verb] + " unseen in train");
      if (!train_objects.count(p.object)) problems.push_back(std::string(name) + ": object " + space.objects()[p.object] + " unseen in train");
      (train_set.count(c) ? any_seen : any_unseen) = true;
    }
    if (!any_seen) problems.push_back(std::string(name) + ": no seen compositions");
    if (!any_unseen) problems.push_back(std::string(name) + ": no unseen compositions");
  };
  check_eval("val", split.val_compositions);
  check_eval("test", split.test_compositions);
  return problems;
}

struct SthcomOptions {
  std::size_t min_samples = 5;
  double select_fraction = 1.0 / 3.0;
  double interchange_fraction = 0.5;
  std::size_t val_parts = 3;
  std::size_t test_parts = 4;
};

namespace detail {

/// Assigns whole compositions to val or test so that the val share of the
/// sample count tracks val_parts / (val_parts + test_parts). Largest first.
inline void divide_val_test(const std::vector<std::pair<std::size_t, std::size_t>>& comp_counts, double val_share,
                            std::vector<std::size_t>& val, std::vector<std::size_t>& test) {
  auto order = comp_counts;
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  double val_n = 0.0, total = 0.0;
  bool val_empty = true, test_empty = true;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto [comp, n] = order[i];
    const bool last = i + 1 == order.size();
    total += static_cast<double>(n);
    const double dev_val = std::abs((val_n + static_cast<double>(n)) - val_share * total);
    const double dev_test = std::abs(val_n - val_share * total);
    bool to_val = dev_val < dev_test;
    // Each side must end up with at least one composition from this group.
    if (last && val_empty) to_val = true;
    if (last && test_empty) to_val = false;
    if (to_val) {
      val.push_back(comp);
      val_n += static_cast<double>(n);
      val_empty = false;
    } else {
      test.push_back(comp);
      test_empty = false;
    }
  }
}

}  // namespace detail

/// Benchmark split construction from annotations carrying an initial
/// train/test membership:
///   1. clean to a fixed point: drop (composition, split) groups with fewer
///      than min_samples samples and test samples whose verb or object is
///      absent from train;
///   2. select select_fraction of the train compositions and of the test
///      compositions, and move interchange_fraction of each selected
///      composition's samples to the other split, so selected compositions
///      become seen in test;
///   3. divide the test pool into val and test at composition granularity in
///      the val_parts:test_parts sample ratio, seen and unseen separately.
inline SplitSpec build_sthcom_split(const std::vector<AnnotationRecord>& records, std::uint64_t seed,
                                    const SthcomOptions& opt = {}) {
  if (records.empty()) throw InvalidInput("build_sthcom_split: no records");
  {
    std::unordered_set<std::string> ids;
    for (const auto& r : records) {
      if (r.sample_id.empty()) throw InvalidInput("build_sthcom_split: empty sample_id");
      if (!ids.insert(r.sample_id).second) throw InvalidInput("build_sthcom_split: duplicate sample_id " + r.sample_id);
    }
  }
  using Key = std::pair<std::string, std::string>;
  std::vector<std::size_t> alive;  // record indices still present
  std::vector<SourceSplit> where(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    alive.push_back(i);
    where[i] = records[i].split;
  }

  // 1. fixed-point cleaning
  for (bool changed = true; changed;) {
    changed = false;
    std::map<std::pair<Key, SourceSplit>, std::size_t> counts;
    for (std::size_t i : alive) counts[{{records[i].verb, records[i].object}, where[i]}]++;
    std::set<std::string> train_verbs, train_objects;
    for (std::size_t i : alive) {
      if (where[i] == SourceSplit::kTrain && counts[{{records[i].verb, records[i].object}, where[i]}] >= opt.min_samples) {
        train_verbs.insert(records[i].verb);
        train_objects.insert(records[i].object);
      }
    }
    std::vector<std::size_t> kept;
    for (std::size_t i : alive) {
      const auto& r = records[i];
      bool keep = counts[{{r.verb, r.object}, where[i]}] >= opt.min_samples;
      if (keep && where[i] == SourceSplit::kTest) keep = train_verbs.count(r.verb) && train_objects.count(r.object);
      if (keep) kept.push_back(i);
    }
    changed = kept.size() != alive.size();
    alive = std::move(kept);
  }
  std::size_t n_train = 0, n_test = 0;
  for (std::size_t i : alive) (where[i] == SourceSplit::kTrain ? n_train : n_test)++;
  if (n_train == 0) throw ConstructionFailed("cleaning", "train split is empty after cleaning");
  if (n_test == 0) throw ConstructionFailed("cleaning", "test split is empty after cleaning");

  // 2. selection and interchange
  Rng rng(seed);
  std::map<Key, std::vector<std::size_t>> train_groups, test_groups;
  for (std::size_t i : alive) {
    (where[i] == SourceSplit::kTrain ? train_groups : test_groups)[{records[i].verb, records[i].object}].push_back(i);
  }
  auto interchange = [&](std::map<Key, std::vector<std::size_t>>& groups, SourceSplit to) {
    // Moving part of a composition must leave min_samples on both sides.
    std::vector<Key> eligible;
    for (const auto& [key, members] : groups) {
      const auto moved = static_cast<std::size_t>(opt.interchange_fraction * static_cast<double>(members.size()));
      if (moved >= opt.min_samples && members.size() - moved >= opt.min_samples) eligible.push_back(key);
    }
    const auto want = static_cast<std::size_t>(std::llround(opt.select_fraction * static_cast<double>(groups.size())));
    rng.shuffle(eligible);
    eligible.resize(std::min(want, eligible.size()));
    std::sort(eligible.begin(), eligible.end());
    for (const Key& key : eligible) {
      std::vector<std::size_t> members = groups[key];
      rng.shuffle(members);
      const auto moved = static_cast<std::size_t>(opt.interchange_fraction * static_cast<double>(members.size()));
      for (std::size_t k = 0; k < moved; ++k) where[members[k]] = to;
    }
  };
  interchange(train_groups, SourceSplit::kTest);
  interchange(test_groups, SourceSplit::kTrain);

  std::vector<AnnotationRecord> kept_records;
  for (std::size_t i : alive) kept_records.push_back(records[i]);
  LabelSpace space = build_label_space(kept_records);

  SplitSpec split;
  std::map<std::size_t, std::vector<std::string>> train_members, pool_members;
  for (std::size_t i : alive) {
    const auto& r = records[i];
    const std::size_t c = *space.find({*space.verb_index(r.verb), *space.object_index(r.object)});
    (where[i] == SourceSplit::kTrain ? train_members : pool_members)[c].push_back(r.sample_id);
  }
  if (train_members.empty()) throw ConstructionFailed("interchange", "train split is empty");
  for (auto& [c, ids] : train_members) {
    split.train_compositions.push_back(c);
    std::sort(ids.begin(), ids.end());
    for (auto& id : ids) split.train_samples.push_back({id, c});
  }

  // 3. val/test division
  std::vector<std::pair<std::size_t, std::size_t>> seen, unseen;
  for (const auto& [c, ids] : pool_members) {
    (train_members.count(c) ? seen : unseen).push_back({c, ids.size()});
  }
  if (seen.size() < 2) throw ConstructionFailed("val_test_division", "fewer than two seen compositions in the test pool");
  if (unseen.size() < 2) throw ConstructionFailed("val_test_division", "fewer than two unseen compositions in the test pool");
  const double val_share = static_cast<double>(opt.val_parts) / static_cast<double>(opt.val_parts + opt.test_parts);
  detail::divide_val_test(seen, val_share, split.val_compositions, split.test_compositions);
  detail::divide_val_test(unseen, val_share, split.val_compositions, split.test_compositions);
  std::sort(split.val_compositions.begin(), split.val_compositions.end());
  std::sort(split.test_compositions.begin(), split.test_compositions.end());
  auto fill = [&](const std::vector<std::size_t>& comps, std::vector<SampleRef>& out) {
    for (std::size_t c : comps) {
      auto ids = pool_members[c];
      std::sort(ids.begin(), ids.end());
      for (auto& id : ids) out.push_back({id, c});
    }
  };
  fill(split.val_compositions, split.val_samples);
  fill(split.test_compositions, split.test_samples);
  split.space = std::move(space);
  return split;
}

}  // namespace c2c
