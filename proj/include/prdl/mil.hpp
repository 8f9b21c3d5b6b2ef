#ifndef PRDL_MIL_HPP
#define PRDL_MIL_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prdl/autodiff.hpp"
#include "prdl/dataset.hpp"
#include "prdl/metrics.hpp"
#include "prdl/prs_store.hpp"

namespace prdl::mil {

// Synthetic bag-of-patches benchmark. Class 0 bags contain only background
// texture; every other class plants ceil(rho * n) patches of its own
// texture among background patches.
struct SyntheticBagConfig {
  std::size_t num_classes = 3;
  std::size_t bags_per_class = 20;
  std::size_t patches_per_bag = 24;
  double positive_fraction = 0.5;  // rho
  double noise = 0.05;
  std::size_t patch_size = 16;
  std::uint64_t seed = 1;

  void validate() const;
};

// Deterministic per seed; splits are stratified 6:1:3. Pixel values are
// snapped to the 8-bit grid so the PPM round trip is lossless.
data::Dataset gen_synthetic(const SyntheticBagConfig& cfg);

struct MilModel {
  std::size_t repr_dim = 0;
  std::size_t attn_hidden = 0;
  std::size_t num_classes = 0;
  ad::ParamSet params;  // attn.v {h,D}, attn.w {h}, cls.w {C,D}, cls.b {C}

  static MilModel init(std::size_t repr_dim, std::size_t attn_hidden,
                       std::size_t num_classes, Rng& rng);
};

// a_i = softmax_i(w^T tanh(V z_i)); bag = sum a_i z_i; logits = W bag + b.
// Reductions over patches use value-sorted summation, so the result is
// bit-identical under any patch permutation.
struct PoolResult {
  ad::Tensor logits;   // {C}
  ad::Tensor weights;  // {n}, sums to 1
};
PoolResult attention_pool(const MilModel& m, const ad::Tensor& z);

// Tape version used during training (patch order fixed there).
struct PoolVars {
  ad::Var logits;
  ad::Var weights;
};
PoolVars attention_forward(ad::Tape& tape, const ad::LeafMap& leaves,
                           const ad::Tensor& z);

enum class AugMode { None, Prs, RandomPerturb, McDiscard };
AugMode parse_aug_mode(const std::string& name);  // DomainError on bad name
const char* aug_mode_name(AugMode mode);

// Feature-space baselines: identity, elementwise Gaussian perturbation with
// scale s, or Monte-Carlo patch discarding keeping each patch with
// probability q (resampled until at least one patch survives).
ad::Tensor baseline_augment(const ad::Tensor& z, AugMode mode,
                            double perturb_scale, double keep_prob, Rng& rng);

struct MilConfig {
  std::size_t epochs = 60;
  double lr = 0.1;
  std::size_t attn_hidden = 16;
  double perturb_scale = 1.0;  // random-perturb: standard Gaussian
  double discard_keep = 0.8;   // mc-discard keep probability
  bool per_patch_prompts = false;  // default: one prompt per bag per epoch
  bool resample_every_step = false;
  bool literal_sigma = false;  // sample with raw sigma instead of sigma (.) m_p
  std::uint64_t seed = 0;

  void validate() const;
};

using SplitMap = std::map<std::string, data::Split>;

SplitMap split_map_of(const data::Dataset& ds);

struct TrainedMil {
  MilModel model;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

// Bag-level cross-entropy with per-bag gradient steps; representations come
// from the store according to the augmentation mode (training only); the
// best-validation-accuracy parameters are kept.
TrainedMil train_mil(const prs::PrsStore& store, const SplitMap& splits,
                     const MilConfig& cfg, AugMode mode);

// Inference always uses stored means; never samples.
metrics::Metrics evaluate(const MilModel& m, const prs::PrsStore& store,
                          const SplitMap& splits, data::Split split);

// Versioned binary (magic "PRML"), f64 little-endian; round trips are
// bit-exact.
void save_mil_model(const MilModel& m, const std::string& path);
MilModel load_mil_model(const std::string& path);

}  // namespace prdl::mil

#endif  // PRDL_MIL_HPP
