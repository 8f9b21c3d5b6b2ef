#ifndef PRDL_TRAINER_HPP
#define PRDL_TRAINER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "prdl/augment.hpp"
#include "prdl/autodiff.hpp"
#include "prdl/image.hpp"
#include "prdl/loss.hpp"
#include "prdl/model.hpp"

namespace prdl::train {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::size_t max_steps = 0;    // 0 = no cap
  std::size_t max_images = 512; // pretraining pool cap, 0 = no cap

  double lr_scale = 0.0005;     // lr_base = lr_scale * batch_size / 256
  double lr_floor = 1e-6;
  std::size_t warmup_epochs = 1;

  double lambda0 = 0.996;       // EMA momentum start; cosine toward 1
  double tau_t_start = 0.04;
  double tau_t_end = 0.07;
  std::size_t tau_t_ramp_epochs = 10;

  std::size_t n_local = 4;
  double clip_norm = 0.0;       // global-norm gradient clip; 0 disables

  std::uint64_t seed = 0;

  loss::LossConfig loss;
  model::ModelDims dims;

  void validate() const;
  double lr_base() const {
    return lr_scale * static_cast<double>(batch_size) / 256.0;
  }
};

struct Schedule {
  double lr = 0.0;
  double lambda = 1.0;
  double tau_t = 0.04;
};

// lr: linear warmup from 0, then cosine from lr_base to lr_floor.
// lambda: cosine from lambda0 to exactly 1 at the final step index.
// tau_t: linear ramp over the configured epochs, then constant.
Schedule schedule(std::size_t step, std::size_t steps_per_epoch,
                  std::size_t total_steps, const TrainConfig& cfg);

// ---- per-image step graph ----------------------------------------------------

// Everything random about one image's step, drawn in a fixed order from one
// stream: pre-augmentation, one prompt + view per crop (2 global then
// n_local local), then one noise vector per teacher view.
struct ImageStepInputs {
  std::vector<double> x_tilde;                // flattened pre-augmented image
  std::vector<std::vector<double>> views;     // flattened; [0..1] global
  std::vector<aug::Prompt> prompts;           // one per view
  std::vector<ad::Tensor> teacher_probs;      // per teacher view (constants)
  std::vector<ad::Tensor> eps;                // per teacher view, {D}
  bool zero_sigma_p = false;                  // force sigma_p = 0 (tests)
};

ImageStepInputs draw_image_inputs(const img::ToyImage& image,
                                  std::size_t n_local, Rng& rng,
                                  std::size_t repr_dim);

// Teacher branch: global views through the EMA encoder/projector; probs are
// softmax((logits - center) / tau_t) when centering is enabled. Returns the
// raw logits (needed for the center update) and fills inputs.teacher_probs.
std::vector<ad::Tensor> teacher_forward(const model::PrdlModel& m,
                                        ImageStepInputs& inputs, double tau_t);

struct ImageLossTerms {
  ad::Var ce;
  ad::Var kl;
  ad::Var sparsity;
  ad::Var variance;
  ad::Var total;
};

// The full three-branch loss for one image. Shared by training, evaluation
// and the gradient-check suites.
ImageLossTerms build_image_loss(ad::Tape& tape, const ad::LeafMap& leaves,
                                const model::ModelDims& dims,
                                const loss::LossConfig& lcfg,
                                const ImageStepInputs& inputs);

// ---- trainer -------------------------------------------------------------------

struct StepResult {
  loss::LossBreakdown breakdown;
  Schedule sched;
};

class Trainer {
 public:
  Trainer(model::PrdlModel m, TrainConfig cfg, std::size_t steps_per_epoch,
          std::size_t total_steps);

  // One gradient step plus EMA and center updates. Randomness derives from
  // (cfg.seed, step index, image index); identical state and seed produce
  // identical results for any thread count.
  StepResult train_step(const std::vector<img::ToyImage>& batch);

  // Forward-only pass with the step index pinned; mutates nothing.
  loss::LossBreakdown eval_step(const std::vector<img::ToyImage>& batch,
                                std::uint64_t step_index) const;

  const model::PrdlModel& model() const { return model_; }
  model::PrdlModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  Schedule schedule_at(std::size_t step) const {
    return schedule(step, steps_per_epoch_, total_steps_, cfg_);
  }

 private:
  struct ImageResult {
    loss::LossBreakdown breakdown;
    std::map<std::string, ad::Tensor> grads;
    std::vector<ad::Tensor> teacher_logits;
  };

  ImageResult process_image(const img::ToyImage& image,
                            std::uint64_t image_seed, double tau_t,
                            bool with_grad) const;

  model::PrdlModel model_;
  TrainConfig cfg_;
  std::size_t steps_per_epoch_;
  std::size_t total_steps_;
};

// ---- full pretraining ----------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  loss::LossBreakdown mean;
  Schedule sched;  // at the last step of the epoch
};

struct PretrainResult {
  std::vector<EpochLog> epochs;
  loss::LossBreakdown final_eval;   // forward-only pass at step total_steps
  std::uint64_t final_step = 0;
  std::string checkpoint_path;
  std::string log_path;
};

// Runs the full schedule over the image pool, writes checkpoint.bin and
// pretrain_log.csv under out_dir, and returns the log. The final_eval line
// is reproducible from the checkpoint alone via Trainer::eval_step.
PretrainResult pretrain(const TrainConfig& cfg,
                        const std::vector<img::ToyImage>& images,
                        const std::string& out_dir);

}  // namespace prdl::train

#endif  // PRDL_TRAINER_HPP
