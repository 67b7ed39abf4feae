#pragma once

#include <cstdint>
#include <vector>

#include "c2c/gradcheck.hpp"
#include "c2c/hsic.hpp"
#include "c2c/model.hpp"
#include "c2c/synthetic.hpp"
#include "c2c/training.hpp"

namespace c2c {

enum class ObjectiveBranch { kPlain, kCutMix };

struct ObjectiveCheckOptions {
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  TrainConfig config{};
  GradcheckOptions gradcheck{};
  VideoShape shape{6, 16, 16, 3};
};

/// Finite-difference check of the full training objective of one branch on a
/// small synthetic batch. HSIC bandwidths are recorded on the analytic pass
/// and replayed for every perturbed evaluation.
inline GradcheckReport check_objective_gradients(ObjectiveBranch branch, const ObjectiveCheckOptions& opt = {}) {
  SyntheticSpec spec;
  spec.num_verbs = 3;
  spec.num_objects = 3;
  spec.unseen = 2;
  spec.shape = opt.shape;
  spec.train_per_composition = 1;
  spec.eval_per_composition = 1;
  spec.seed = opt.seed;
  const SyntheticData sd = generate_synthetic(spec);
  const std::size_t B = std::min(opt.batch, sd.split.train_samples.size());
  std::vector<std::size_t> batch;
  for (std::size_t i = 0; i < B; ++i) batch.push_back(i);

  ModelDims dims;
  dims.frame_size = spec.shape.frame_size();
  dims.hidden = opt.config.hidden;
  dims.channels = opt.config.channels;
  dims.num_verbs = spec.num_verbs;
  dims.num_objects = spec.num_objects;
  dims.share_reference = opt.config.share_reference;
  C2CModel model(dims, opt.seed + 1);

  const ObjectiveContext ctx = make_objective_context(sd.split);
  BatchLabels own, partner;
  Rng rng(opt.seed + 2);
  const std::vector<std::size_t> perm = rng.permutation(B);
  std::vector<double> lambda(B);
  std::vector<double> mixed(B * spec.shape.video_size());
  for (std::size_t b = 0; b < B; ++b) {
    own.verbs.push_back(sd.data.verbs[batch[b]]);
    own.objects.push_back(sd.data.objects[batch[b]]);
    partner.verbs.push_back(sd.data.verbs[batch[perm[b]]]);
    partner.objects.push_back(sd.data.objects[batch[perm[b]]]);
    auto [video, rec] = cutmix(sd.data.video(batch[b]), sd.data.video(batch[perm[b]]), spec.shape, rng);
    std::copy(video.begin(), video.end(), mixed.begin() + static_cast<long>(b * spec.shape.video_size()));
    lambda[b] = rec.lambda;
  }
  const Tensor videos = branch == ObjectiveBranch::kCutMix
                            ? Tensor({B, spec.shape.frames, spec.shape.frame_size()}, mixed)
                            : sd.data.batch(batch);

  BandwidthCache cache;
  auto loss = [&]() {
    cache.rewind();
    ForwardOutputs fw = forward(model, videos, opt.config.train_mode);
    LossTerms terms = branch == ObjectiveBranch::kCutMix
                          ? mixed_losses(fw, own, partner, lambda, ctx, opt.config, &cache)
                          : plain_losses(fw, own, ctx, opt.config, &cache);
    Tensor total = total_loss(terms, opt.config, branch == ObjectiveBranch::kCutMix);
    cache.freeze();
    return total;
  };
  return gradcheck(loss, model.parameters(), opt.gradcheck);
}

}  // namespace c2c
