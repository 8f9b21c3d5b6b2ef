#include "prdl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "prdl/kernels.hpp"

namespace prdl::train {

using ad::LeafMap;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t stream(std::uint64_t seed, const char* tag) {
  return derive_seed(seed, hash_string(tag));
}

std::vector<double> stable_softmax(const std::vector<double>& logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  std::vector<double> out(logits.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw DomainError("TrainConfig: batch_size must be > 0");
  if (epochs == 0) throw DomainError("TrainConfig: epochs must be > 0");
  if (!(lr_scale > 0.0)) throw DomainError("TrainConfig: lr_scale must be > 0");
  if (lr_floor < 0.0) throw DomainError("TrainConfig: lr_floor must be >= 0");
  if (!(lambda0 >= 0.0 && lambda0 <= 1.0)) {
    throw DomainError("TrainConfig: lambda0 must be in [0, 1]");
  }
  if (!(tau_t_start > 0.0) || !(tau_t_end > 0.0)) {
    throw DomainError("TrainConfig: teacher temperatures must be positive");
  }
  if (clip_norm < 0.0) throw DomainError("TrainConfig: clip_norm must be >= 0");
  if (dims.repr_dim == 0 || dims.input_dim == 0 || dims.proj_dim == 0) {
    throw DomainError("TrainConfig: model dimensions must be positive");
  }
  loss.validate();
}

Schedule schedule(std::size_t step, std::size_t steps_per_epoch,
                  std::size_t total_steps, const TrainConfig& cfg) {
  Schedule s;
  const double base = cfg.lr_base();
  const std::size_t warmup = cfg.warmup_epochs * steps_per_epoch;

  if (warmup > 0 && step < warmup) {
    s.lr = base * static_cast<double>(step) / static_cast<double>(warmup);
  } else {
    const std::size_t decay_steps =
        total_steps > warmup ? total_steps - warmup : 1;
    const double progress = std::min(
        1.0, static_cast<double>(step - std::min(step, warmup)) /
                 static_cast<double>(decay_steps));
    s.lr = cfg.lr_floor +
           0.5 * (base - cfg.lr_floor) * (1.0 + std::cos(kPi * progress));
  }

  // lambda reaches exactly 1 at the last step index.
  const double denom =
      total_steps > 1 ? static_cast<double>(total_steps - 1) : 1.0;
  const double f = std::min(1.0, static_cast<double>(step) / denom);
  s.lambda = 1.0 - (1.0 - cfg.lambda0) * 0.5 * (1.0 + std::cos(kPi * f));

  const std::size_t ramp = cfg.tau_t_ramp_epochs * steps_per_epoch;
  const double tau_progress =
      ramp == 0 ? 1.0
                : std::min(1.0, static_cast<double>(step) /
                                    static_cast<double>(ramp));
  s.tau_t = cfg.tau_t_start + (cfg.tau_t_end - cfg.tau_t_start) * tau_progress;
  return s;
}

ImageStepInputs draw_image_inputs(const img::ToyImage& image,
                                  std::size_t n_local, Rng& rng,
                                  std::size_t repr_dim) {
  ImageStepInputs in;
  const img::ToyImage x_tilde = aug::pre_augment(image, rng);

  const std::size_t n_views = 2 + n_local;
  in.views.reserve(n_views);
  in.prompts.reserve(n_views);
  for (std::size_t v = 0; v < n_views; ++v) {
    const aug::ViewKind kind =
        v < 2 ? aug::ViewKind::Global : aug::ViewKind::Local;
    const aug::Prompt p = aug::sample_prompt(rng);
    in.prompts.push_back(p);
    in.views.push_back(aug::compose_view(x_tilde, p, kind, rng).image.values());
  }

  const img::ToyImage canon =
      (x_tilde.width() == aug::kGlobalSize &&
       x_tilde.height() == aug::kGlobalSize)
          ? x_tilde
          : aug::resize_bilinear(x_tilde, aug::kGlobalSize, aug::kGlobalSize);
  in.x_tilde = canon.values();

  for (int t = 0; t < 2; ++t) {
    Tensor eps({repr_dim});
    for (std::size_t d = 0; d < repr_dim; ++d) eps[d] = rng.normal();
    in.eps.push_back(std::move(eps));
  }
  return in;
}

std::vector<Tensor> teacher_forward(const model::PrdlModel& m,
                                    ImageStepInputs& inputs, double tau_t) {
  if (!(tau_t > 0.0)) {
    throw DomainError("teacher_forward: tau_t must be positive");
  }
  Tape tape;
  LeafMap leaves = model::make_leaves(tape, m.teacher, /*with_grad=*/false);
  std::vector<Tensor> logits;
  inputs.teacher_probs.clear();
  for (int i = 0; i < 2; ++i) {
    Var z = model::encoder_forward(
        tape, leaves, tape.constant(Tensor::vector(inputs.views[i])));
    Tensor l = model::projector_forward(tape, leaves, z).value();
    std::vector<double> shifted(l.size());
    for (std::size_t j = 0; j < l.size(); ++j) {
      const double c = m.center.size() == l.size() ? m.center[j] : 0.0;
      shifted[j] = (l[j] - c) / tau_t;
    }
    inputs.teacher_probs.push_back(Tensor::vector(stable_softmax(shifted)));
    logits.push_back(std::move(l));
  }
  return logits;
}

ImageLossTerms build_image_loss(Tape& tape, const LeafMap& leaves,
                                const model::ModelDims& dims,
                                const loss::LossConfig& lcfg,
                                const ImageStepInputs& inputs) {
  const std::size_t n_teacher = inputs.teacher_probs.size();
  if (n_teacher == 0 || inputs.eps.size() != n_teacher) {
    throw DomainError("build_image_loss: teacher probs and noise vectors must "
                      "pair up");
  }
  if (inputs.views.size() < 2 || inputs.prompts.size() != inputs.views.size()) {
    throw DomainError("build_image_loss: need >= 2 views with prompts");
  }
  if (inputs.x_tilde.size() != dims.input_dim) {
    throw ShapeError("build_image_loss: x_tilde has " +
                     std::to_string(inputs.x_tilde.size()) +
                     " values, expected " + std::to_string(dims.input_dim));
  }

  // Representation branch on the pre-augmented image.
  Var x = tape.constant(Tensor::vector(inputs.x_tilde));
  Var z_tilde = model::encoder_forward(tape, leaves, x);
  Var mu = model::head_forward(tape, leaves, "mu", dims.head_depth, z_tilde);
  Var log_var =
      model::head_forward(tape, leaves, "sig", dims.head_depth, z_tilde);
  Var sigma = ad::exp(ad::scale(log_var, 0.5));

  // Image branch: every view through the student encoder.
  ImageLossTerms terms;
  Var image_ce;
  std::size_t pairs = 0;
  for (std::size_t j = 0; j < inputs.views.size(); ++j) {
    Var z = model::encoder_forward(
        tape, leaves, tape.constant(Tensor::vector(inputs.views[j])));
    Var logits = ad::scale(model::projector_forward(tape, leaves, z),
                           1.0 / lcfg.tau_s);
    for (std::size_t i = 0; i < n_teacher; ++i) {
      if (j == i) continue;  // same underlying crop as teacher view i
      Var h = loss::xent_vs_softmax(tape, inputs.teacher_probs[i], logits);
      image_ce = image_ce.valid() ? ad::add(image_ce, h) : h;
      ++pairs;
    }
  }
  image_ce = ad::scale(image_ce, 1.0 / static_cast<double>(pairs));

  // Sampled branch: one reparameterized sample per teacher prompt.
  Var sampled_ce;
  Var sp_sum;
  Var var_sum;
  for (std::size_t i = 0; i < n_teacher; ++i) {
    Var m_p = model::prompted_mask(tape, leaves.at("mask.u"), inputs.prompts[i]);
    Var sigma_p = ad::mul(sigma, m_p);
    if (inputs.zero_sigma_p) sigma_p = ad::scale(sigma_p, 0.0);
    Var z_v = ad::add(mu, ad::mul(sigma_p, tape.constant(inputs.eps[i])));
    Var logits_v = ad::scale(model::projector_forward(tape, leaves, z_v),
                             1.0 / lcfg.tau_v);
    Var h = loss::xent_vs_softmax(tape, inputs.teacher_probs[i], logits_v);
    sampled_ce = sampled_ce.valid() ? ad::add(sampled_ce, h) : h;

    Var sp = loss::sparsity_graph(m_p);
    sp_sum = sp_sum.valid() ? ad::add(sp_sum, sp) : sp;
    Var vh = loss::variance_hinge_graph(m_p, lcfg.gamma);
    var_sum = var_sum.valid() ? ad::add(var_sum, vh) : vh;
  }
  const double inv_t = 1.0 / static_cast<double>(n_teacher);
  sampled_ce = ad::scale(sampled_ce, inv_t);

  terms.ce = ad::add(image_ce, sampled_ce);
  terms.kl = loss::kl_graph(mu, log_var, lcfg.kl_direction);
  terms.sparsity = ad::scale(sp_sum, inv_t);
  terms.variance = ad::scale(var_sum, inv_t);
  terms.total = ad::add(
      ad::add(ad::add(terms.ce, ad::scale(terms.kl, lcfg.beta1)),
              ad::scale(terms.sparsity, lcfg.beta2)),
      ad::scale(terms.variance, lcfg.beta3));
  return terms;
}

Trainer::Trainer(model::PrdlModel m, TrainConfig cfg,
                 std::size_t steps_per_epoch, std::size_t total_steps)
    : model_(std::move(m)),
      cfg_(std::move(cfg)),
      steps_per_epoch_(steps_per_epoch),
      total_steps_(total_steps) {
  cfg_.validate();
  if (steps_per_epoch_ == 0 || total_steps_ == 0) {
    throw DomainError("Trainer: steps_per_epoch and total_steps must be > 0");
  }
}

Trainer::ImageResult Trainer::process_image(const img::ToyImage& image,
                                            std::uint64_t image_seed,
                                            double tau_t,
                                            bool with_grad) const {
  Rng rng(image_seed);
  ImageStepInputs inputs =
      draw_image_inputs(image, cfg_.n_local, rng, model_.dims.repr_dim);
  ImageResult res;
  res.teacher_logits = teacher_forward(model_, inputs, tau_t);

  Tape tape;
  LeafMap leaves = model::make_leaves(tape, model_.student, with_grad);
  ImageLossTerms terms =
      build_image_loss(tape, leaves, model_.dims, cfg_.loss, inputs);

  res.breakdown.ce = terms.ce.value()[0];
  res.breakdown.kl = terms.kl.value()[0];
  res.breakdown.sparsity = terms.sparsity.value()[0];
  res.breakdown.variance = terms.variance.value()[0];
  res.breakdown.total = terms.total.value()[0];

  if (with_grad) {
    tape.backward(terms.total);
    for (const auto& item : model_.student.items()) {
      res.grads.emplace(item.name, tape.grad(leaves.at(item.name)));
    }
  }
  return res;
}

StepResult Trainer::train_step(const std::vector<img::ToyImage>& batch) {
  if (batch.empty()) throw DomainError("train_step: empty batch");
  const Schedule sched = schedule_at(model_.step);
  const std::uint64_t step_seed =
      derive_seed(stream(cfg_.seed, "step"), model_.step);

  const std::size_t n = batch.size();
  std::vector<ImageResult> results(n);
  kernels::parallel_for(n, [&](std::size_t i) {
    results[i] = process_image(batch[i], derive_seed(step_seed, i),
                               sched.tau_t, /*with_grad=*/true);
  });

  // Deterministic reductions: fixed image order regardless of thread count.
  loss::LossBreakdown mean;
  for (const ImageResult& r : results) {
    mean.ce += r.breakdown.ce;
    mean.kl += r.breakdown.kl;
    mean.sparsity += r.breakdown.sparsity;
    mean.variance += r.breakdown.variance;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  mean.ce *= inv_n;
  mean.kl *= inv_n;
  mean.sparsity *= inv_n;
  mean.variance *= inv_n;
  const loss::LossBreakdown breakdown = loss::total_loss(
      mean.ce, mean.kl, mean.sparsity, mean.variance, cfg_.loss);

  if (!std::isfinite(breakdown.total)) {
    std::ostringstream os;
    os << "train_step: non-finite loss at step " << model_.step
       << " (ce=" << breakdown.ce << " kl=" << breakdown.kl
       << " sparsity=" << breakdown.sparsity
       << " variance=" << breakdown.variance << ")";
    throw DomainError(os.str());
  }

  // Batch gradient: mean over images in index order.
  std::map<std::string, Tensor> grad;
  for (const auto& item : model_.student.items()) {
    Tensor g(item.value.shape());
    for (const ImageResult& r : results) {
      const Tensor& gi = r.grads.at(item.name);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k];
    }
    for (std::size_t k = 0; k < g.size(); ++k) g[k] *= inv_n;
    grad.emplace(item.name, std::move(g));
  }

  double clip_factor = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grad) {
      for (std::size_t k = 0; k < g.size(); ++k) sq += g[k] * g[k];
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) clip_factor = cfg_.clip_norm / norm;
  }

  for (auto& item : model_.student.items()) {
    if (!item.value.requires_grad()) continue;
    const Tensor& g = grad.at(item.name);
    for (std::size_t k = 0; k < item.value.size(); ++k) {
      item.value[k] -= sched.lr * clip_factor * g[k];
    }
  }

  model::ema_update(model_.teacher, model_.student, sched.lambda);

  if (cfg_.loss.center_teacher) {
    Tensor batch_mean({model_.dims.proj_dim});
    std::size_t count = 0;
    for (const ImageResult& r : results) {
      for (const Tensor& l : r.teacher_logits) {
        for (std::size_t k = 0; k < batch_mean.size(); ++k) {
          batch_mean[k] += l[k];
        }
        ++count;
      }
    }
    // The running mean starts at the first batch mean; a zero start would
    // leave the shared logit bias in the teacher targets for the first tens
    // of steps and distort the early loss scale.
    const double momentum =
        model_.step == 0 ? 0.0 : cfg_.loss.center_momentum;
    for (std::size_t k = 0; k < batch_mean.size(); ++k) {
      batch_mean[k] /= static_cast<double>(count);
      model_.center[k] =
          momentum * model_.center[k] + (1.0 - momentum) * batch_mean[k];
    }
  }

  ++model_.step;
  return StepResult{breakdown, sched};
}

loss::LossBreakdown Trainer::eval_step(const std::vector<img::ToyImage>& batch,
                                       std::uint64_t step_index) const {
  if (batch.empty()) throw DomainError("eval_step: empty batch");
  const Schedule sched =
      schedule(step_index, steps_per_epoch_, total_steps_, cfg_);
  const std::uint64_t step_seed =
      derive_seed(stream(cfg_.seed, "step"), step_index);

  const std::size_t n = batch.size();
  std::vector<ImageResult> results(n);
  kernels::parallel_for(n, [&](std::size_t i) {
    results[i] = process_image(batch[i], derive_seed(step_seed, i),
                               sched.tau_t, /*with_grad=*/false);
  });

  loss::LossBreakdown mean;
  for (const ImageResult& r : results) {
    mean.ce += r.breakdown.ce;
    mean.kl += r.breakdown.kl;
    mean.sparsity += r.breakdown.sparsity;
    mean.variance += r.breakdown.variance;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return loss::total_loss(mean.ce * inv_n, mean.kl * inv_n,
                          mean.sparsity * inv_n, mean.variance * inv_n,
                          cfg_.loss);
}

PretrainResult pretrain(const TrainConfig& cfg,
                        const std::vector<img::ToyImage>& images,
                        const std::string& out_dir) {
  cfg.validate();
  if (images.empty()) throw DomainError("pretrain: empty dataset");

  std::vector<img::ToyImage> pool = images;
  if (cfg.max_images > 0 && pool.size() > cfg.max_images) {
    Rng shuffle_rng(stream(cfg.seed, "subsample"));
    for (std::size_t i = pool.size() - 1; i > 0; --i) {
      std::swap(pool[i], pool[shuffle_rng.uniform_index(i + 1)]);
    }
    pool.resize(cfg.max_images);
  }

  const std::size_t spe =
      (pool.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total = cfg.epochs * spe;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);

  Rng init_rng(stream(cfg.seed, "init"));
  Trainer trainer(model::PrdlModel::init(cfg.dims, init_rng), cfg, spe, total);

  PretrainResult result;
  std::vector<img::ToyImage> last_batch;
  bool done = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(stream(cfg.seed, "shuffle"), epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
    }

    EpochLog log;
    log.epoch = epoch;
    std::size_t steps_in_epoch = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      std::vector<img::ToyImage> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(pool[order[i]]);

      const StepResult step = trainer.train_step(batch);
      log.mean.ce += step.breakdown.ce;
      log.mean.kl += step.breakdown.kl;
      log.mean.sparsity += step.breakdown.sparsity;
      log.mean.variance += step.breakdown.variance;
      log.mean.total += step.breakdown.total;
      log.sched = step.sched;
      ++steps_in_epoch;
      last_batch = std::move(batch);
      if (trainer.model().step >= total) {
        done = true;
        break;
      }
    }
    const double inv = 1.0 / static_cast<double>(steps_in_epoch);
    log.mean.ce *= inv;
    log.mean.kl *= inv;
    log.mean.sparsity *= inv;
    log.mean.variance *= inv;
    log.mean.total *= inv;
    result.epochs.push_back(log);
  }

  result.final_step = trainer.model().step;
  result.final_eval = trainer.eval_step(last_batch, result.final_step);

  std::filesystem::create_directories(out_dir);
  result.checkpoint_path =
      (std::filesystem::path(out_dir) / "checkpoint.bin").string();
  model::save_checkpoint(trainer.model(), result.checkpoint_path);

  result.log_path =
      (std::filesystem::path(out_dir) / "pretrain_log.csv").string();
  std::ofstream log_file(result.log_path);
  if (!log_file) throw IoError::at(result.log_path, "cannot open for writing");
  log_file << "epoch,ce,kl,sparsity,variance,total,lr,lambda,tau_t\n";
  log_file.precision(17);
  for (const EpochLog& e : result.epochs) {
    log_file << e.epoch << "," << e.mean.ce << "," << e.mean.kl << ","
             << e.mean.sparsity << "," << e.mean.variance << ","
             << e.mean.total << "," << e.sched.lr << "," << e.sched.lambda
             << "," << e.sched.tau_t << "\n";
  }
  log_file << "final_eval," << result.final_eval.ce << ","
           << result.final_eval.kl << "," << result.final_eval.sparsity << ","
           << result.final_eval.variance << "," << result.final_eval.total
           << ",step=" << result.final_step << ",,\n";
  if (!log_file) throw IoError::at(result.log_path, "write failure");
  return result;
}

}  // namespace prdl::train
