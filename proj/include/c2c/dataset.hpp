#pragma once

#include <charconv>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "c2c/error.hpp"
#include "c2c/labelspace.hpp"
#include "c2c/tensor.hpp"

namespace c2c {

struct VideoShape {
  std::size_t frames = 0;    // T
  std::size_t height = 0;    // H
  std::size_t width = 0;     // W
  std::size_t channels = 0;  // C_in

  std::size_t frame_size() const { return height * width * channels; }
  std::size_t video_size() const { return frames * frame_size(); }
  friend bool operator==(const VideoShape&, const VideoShape&) = default;
};

/// Videos stored as 32-bit values, T x H x W x C_in row-major per sample,
/// with per-sample verb/object indices into a LabelSpace.
struct VideoDataset {
  VideoShape shape;
  std::vector<float> values;
  std::vector<std::uint32_t> verbs;
  std::vector<std::uint32_t> objects;

  std::size_t size() const { return verbs.size(); }

  std::span<const float> video(std::size_t i) const {
    return std::span<const float>(values).subspan(i * shape.video_size(), shape.video_size());
  }

  void append(std::span<const float> video, std::uint32_t verb, std::uint32_t object) {
    if (video.size() != shape.video_size()) throw ShapeError("append: video size mismatch");
    values.insert(values.end(), video.begin(), video.end());
    verbs.push_back(verb);
    objects.push_back(object);
  }

  /// [B, T, H*W*C_in] batch of the given samples.
  Tensor batch(std::span<const std::size_t> indices) const {
    const std::size_t n = shape.video_size();
    std::vector<double> v(indices.size() * n);
    for (std::size_t b = 0; b < indices.size(); ++b) {
      auto src = video(indices[b]);
      for (std::size_t i = 0; i < n; ++i) v[b * n + i] = src[i];
    }
    return Tensor({indices.size(), shape.frames, shape.frame_size()}, std::move(v));
  }
};

/// Sample ids in a SplitSpec that refers to a feature file are the decimal
/// record indices. Returns the record index of every sample in `partition`
/// and checks that labels agree with the split's compositions.
inline std::vector<std::size_t> resolve_samples(const SplitSpec& split, const VideoDataset& data, Partition partition) {
  std::vector<std::size_t> out;
  for (const SampleRef& s : split.samples(partition)) {
    std::size_t idx = 0;
    const char* first = s.sample_id.data();
    const char* last = first + s.sample_id.size();
    auto [ptr, ec] = std::from_chars(first, last, idx);
    if (ec != std::errc() || ptr != last) throw InvalidInput("sample id '" + s.sample_id + "' is not a record index");
    if (idx >= data.size()) throw InvalidInput("sample id " + s.sample_id + " exceeds the feature file");
    const Composition& c = split.space.composition(s.composition);
    if (data.verbs[idx] != c.verb || data.objects[idx] != c.object) {
      throw InvalidInput("sample " + s.sample_id + " labels disagree with its composition");
    }
    out.push_back(idx);
  }
  return out;
}

}  // namespace c2c
