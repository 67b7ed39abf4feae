#pragma once

// Synthetic compositional videos. Objects are static coloured shapes; verbs
// are temporal trajectories applied to the shape. Verbs come in pairs whose
// trajectories are time reversals of each other, so an order-invariant
// feature cannot tell the two members of a pair apart.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "c2c/dataset.hpp"
#include "c2c/error.hpp"
#include "c2c/labelspace.hpp"
#include "c2c/rng.hpp"

namespace c2c {

struct SyntheticSpec {
  std::size_t num_verbs = 6;
  std::size_t num_objects = 6;
  VideoShape shape{6, 16, 16, 3};
  std::size_t train_per_composition = 24;
  std::size_t eval_per_composition = 10;  // per composition, in each of val and test
  std::size_t unseen = 12;                // compositions held out of train
  double noise = 0.1;                     // sigma
  double variation = 0.2;                 // delta
  std::uint64_t seed = 0;

  void validate() const {
    if (num_verbs == 0 || num_objects == 0) throw InvalidConfig("synthetic: vocabulary sizes must be positive");
    if (shape.frames < 2 || shape.height == 0 || shape.width == 0 || shape.channels == 0) {
      throw InvalidConfig("synthetic: video dimensions must be positive (at least 2 frames)");
    }
    if (train_per_composition == 0 || eval_per_composition == 0) {
      throw InvalidConfig("synthetic: per-composition sample counts must be positive");
    }
    if (!(noise >= 0.0) || !(variation >= 0.0)) throw InvalidConfig("synthetic: sigma and delta must be >= 0");
  }
};

struct SyntheticData {
  VideoDataset data;
  SplitSpec split;
};

namespace detail {

/// Static pattern of object `o`: a shape mask times a colour, [H, W, C].
inline std::vector<double> object_pattern(std::size_t o, const VideoShape& s, std::uint64_t seed) {
  Rng rng(seed ^ (0x51ed270b27c3f1a5ULL * (o + 1)));
  std::vector<double> colour(s.channels);
  double norm = 0.0;
  for (double& c : colour) {
    c = rng.uniform(0.1, 1.0);
    norm += c * c;
  }
  for (double& c : colour) c /= std::sqrt(norm / static_cast<double>(s.channels));
  const double cy = (static_cast<double>(s.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(s.width) - 1.0) / 2.0;
  const double r = std::min(s.height, s.width) / 4.0;
  const std::size_t kind = o % 5;
  const double aspect = 1.0 + 0.5 * static_cast<double>((o / 5) % 3);
  std::vector<double> p(s.frame_size(), 0.0);
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      const double dy = (static_cast<double>(y) - cy) / r;
      const double dx = (static_cast<double>(x) - cx) / (r * aspect);
      const double d = std::sqrt(dx * dx + dy * dy);
      bool on = false;
      switch (kind) {
        case 0: on = d <= 1.0; break;
        case 1: on = std::abs(dx) <= 0.8 && std::abs(dy) <= 0.8; break;
        case 2: on = (std::abs(dx) <= 0.3 && std::abs(dy) <= 1.1) || (std::abs(dy) <= 0.3 && std::abs(dx) <= 1.1); break;
        case 3: on = d <= 1.2 && d >= 0.6; break;
        default: on = std::abs(dx - dy) <= 0.45 && std::abs(dx + dy) <= 1.6; break;
      }
      if (!on) continue;
      for (std::size_t c = 0; c < s.channels; ++c) p[(y * s.width + x) * s.channels + c] = colour[c];
    }
  }
  return p;
}

/// Smooth appearance change: a sum of four random plane waves with per-channel
/// amplitudes, scaled to unit RMS. Spatially coherent, unlike pixel noise,
/// so it reads as a change of the object rather than a per-pixel fingerprint.
inline std::vector<double> smooth_field(const VideoShape& s, Rng& rng) {
  constexpr double two_pi = 6.283185307179586;
  std::vector<double> field(s.frame_size(), 0.0);
  for (int k = 0; k < 4; ++k) {
    const double fy = rng.uniform(0.5, 2.0), fx = rng.uniform(0.5, 2.0), phase = rng.uniform(0.0, two_pi);
    std::vector<double> amp(s.channels);
    for (double& a : amp) a = rng.normal();
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) {
        const double w = std::cos(two_pi * (fy * static_cast<double>(y) / static_cast<double>(s.height) +
                                            fx * static_cast<double>(x) / static_cast<double>(s.width)) +
                                  phase);
        for (std::size_t c = 0; c < s.channels; ++c) field[(y * s.width + x) * s.channels + c] += amp[c] * w;
      }
    }
  }
  double ss = 0.0;
  for (double f : field) ss += f * f;
  const double rms = std::sqrt(ss / static_cast<double>(field.size()));
  if (rms > 0.0) {
    for (double& f : field) f /= rms;
  }
  return field;
}

/// Renders frame `t` of verb `v` applied to the pattern `base`.
inline void render_frame(std::size_t v, std::size_t t, const std::vector<double>& base, const VideoShape& s,
                         double* out) {
  const std::size_t kind = (v / 2) % 3;
  const bool reversed = v % 2 == 1;
  const double speed = 1.0 + static_cast<double>(v / 6);
  const double last = static_cast<double>(s.frames - 1);
  // Position along the trajectory in [-1, 1].
  double u = 2.0 * static_cast<double>(t) / last - 1.0;
  if (reversed) u = -u;
  long dy = 0, dx = 0;
  double gain = 1.0;
  if (kind == 0) {
    dx = std::lround(u * speed * static_cast<double>(s.width) / 4.0);
  } else if (kind == 1) {
    dy = std::lround(u * speed * static_cast<double>(s.height) / 4.0);
  } else {
    gain = 1.0 + 0.6 * u / speed;
  }
  const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
  for (long y = 0; y < H; ++y) {
    const long sy = ((y - dy) % H + H) % H;
    for (long x = 0; x < W; ++x) {
      const long sx = ((x - dx) % W + W) % W;
      for (std::size_t c = 0; c < s.channels; ++c) {
        out[(y * W + x) * static_cast<long>(s.channels) + static_cast<long>(c)] =
            gain * base[(sy * W + sx) * static_cast<long>(s.channels) + static_cast<long>(c)];
      }
    }
  }
}

/// Picks `count` compositions to hold out so that every verb and object
/// keeps at least one training composition.
inline std::vector<std::uint8_t> choose_holdout(std::size_t nv, std::size_t no, std::size_t count, Rng& rng) {
  std::vector<std::uint8_t> held(nv * no, 0);
  if (count == 0) return held;
  std::vector<std::size_t> verb_left(nv, no), object_left(no, nv);
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::fill(held.begin(), held.end(), 0);
    std::fill(verb_left.begin(), verb_left.end(), no);
    std::fill(object_left.begin(), object_left.end(), nv);
    std::size_t chosen = 0;
    for (std::size_t g : rng.permutation(nv * no)) {
      if (chosen == count) break;
      const std::size_t v = g / no, o = g % no;
      if (verb_left[v] <= 1 || object_left[o] <= 1) continue;
      held[g] = 1;
      --verb_left[v];
      --object_left[o];
      ++chosen;
    }
    if (chosen == count) return held;
  }
  throw ConstructionFailed("holdout", "cannot hold out " + std::to_string(count) +
                                          " compositions while keeping every verb and object in train");
}

}  // namespace detail

/// Sample ids are the decimal record indices of the returned dataset. Train
/// holds the seen compositions; val and test each hold every composition.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t nv = spec.num_verbs, no = spec.num_objects;
  if (spec.unseen == 0 || spec.unseen >= nv * no) {
    throw ConstructionFailed("holdout", "need at least one seen and one unseen composition");
  }
  Rng rng(spec.seed);
  const auto held = detail::choose_holdout(nv, no, spec.unseen, rng);

  auto pad = [](std::size_t i, std::size_t n) {
    std::string s = std::to_string(i);
    const std::size_t width = std::to_string(n - 1).size();
    return std::string(width - s.size(), '0') + s;
  };
  std::vector<std::string> verbs, objects;
  for (std::size_t v = 0; v < nv; ++v) verbs.push_back("verb" + pad(v, nv));
  for (std::size_t o = 0; o < no; ++o) objects.push_back("object" + pad(o, no));
  std::vector<Composition> comps;
  for (std::size_t v = 0; v < nv; ++v) {
    for (std::size_t o = 0; o < no; ++o) comps.push_back({v, o});
  }

  const VideoShape& s = spec.shape;
  std::vector<std::vector<double>> patterns;
  for (std::size_t o = 0; o < no; ++o) patterns.push_back(detail::object_pattern(o, s, spec.seed));
  // Verb-conditioned object appearance: u_o + delta * perturb(v, o).
  std::vector<std::vector<double>> bases(nv * no);
  for (std::size_t g = 0; g < nv * no; ++g) {
    Rng prng(spec.seed ^ (0x2545f4914f6cdd1dULL * (g + 1)));
    bases[g] = patterns[g % no];
    const std::vector<double> field = detail::smooth_field(s, prng);
    for (std::size_t i = 0; i < field.size(); ++i) bases[g][i] += spec.variation * field[i];
  }

  SyntheticData out;
  out.data.shape = s;
  out.split.space = LabelSpace(verbs, objects, comps);
  std::vector<double> video(s.video_size());
  std::vector<float> fvideo(s.video_size());
  auto emit = [&](std::size_t g, std::vector<SampleRef>& refs) {
    const std::size_t v = g / no, o = g % no;
    for (std::size_t t = 0; t < s.frames; ++t) detail::render_frame(v, t, bases[g], s, video.data() + t * s.frame_size());
    for (std::size_t i = 0; i < video.size(); ++i) {
      const double n = spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0;
      fvideo[i] = static_cast<float>(video[i] + n);
    }
    refs.push_back({std::to_string(out.data.size()), g});
    out.data.append(fvideo, static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(o));
  };
  for (std::size_t g = 0; g < nv * no; ++g) {
    if (held[g]) continue;
    out.split.train_compositions.push_back(g);
    for (std::size_t i = 0; i < spec.train_per_composition; ++i) emit(g, out.split.train_samples);
  }
  for (std::size_t g = 0; g < nv * no; ++g) {
    out.split.val_compositions.push_back(g);
    for (std::size_t i = 0; i < spec.eval_per_composition; ++i) emit(g, out.split.val_samples);
  }
  for (std::size_t g = 0; g < nv * no; ++g) {
    out.split.test_compositions.push_back(g);
    for (std::size_t i = 0; i < spec.eval_per_composition; ++i) emit(g, out.split.test_samples);
  }
  return out;
}

/// Annotation records for split-builder experiments. About 15% of the pairs
/// are absent; the rest get a uniform count in [0, 2 * mean_count] and a
/// random initial train/test membership.
inline std::vector<AnnotationRecord> synthetic_annotations(std::size_t nv, std::size_t no, std::size_t mean_count,
                                                           double test_share, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AnnotationRecord> out;
  std::size_t id = 0;
  for (std::size_t v = 0; v < nv; ++v) {
    for (std::size_t o = 0; o < no; ++o) {
      if (rng.bernoulli(0.15)) continue;
      const std::size_t count = static_cast<std::size_t>(rng.below(2 * mean_count + 1));
      const SourceSplit split = rng.bernoulli(test_share) ? SourceSplit::kTest : SourceSplit::kTrain;
      for (std::size_t i = 0; i < count; ++i) {
        out.push_back({"s" + std::to_string(id++), "verb" + std::to_string(v), "object" + std::to_string(o), split});
      }
    }
  }
  return out;
}

}  // namespace c2c
