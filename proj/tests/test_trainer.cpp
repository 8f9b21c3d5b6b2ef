#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "prdl/kernels.hpp"
#include "prdl/trainer.hpp"

using namespace prdl;
using namespace prdl::train;
using ad::LeafMap;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

// Small model that still accepts real 16x16 views.
TrainConfig small_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.seed = seed;
  cfg.n_local = 2;
  cfg.dims.enc_hidden = 24;
  cfg.dims.repr_dim = 8;
  cfg.dims.proj_hidden = 12;
  cfg.dims.proj_dim = 12;
  return cfg;
}

std::vector<img::ToyImage> synthetic_images(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<img::ToyImage> images;
  images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    img::ToyImage im(aug::kGlobalSize, aug::kGlobalSize);
    const double base_r = rng.uniform(0.2, 0.8);
    const double base_g = rng.uniform(0.2, 0.8);
    const double freq = rng.uniform(1.0, 3.0);
    for (std::size_t y = 0; y < im.height(); ++y)
      for (std::size_t x = 0; x < im.width(); ++x) {
        const double wave =
            0.2 * std::sin(freq * (static_cast<double>(x + y)) / 4.0);
        im.at(x, y, 0) = base_r + wave + rng.uniform(-0.05, 0.05);
        im.at(x, y, 1) = base_g - wave + rng.uniform(-0.05, 0.05);
        im.at(x, y, 2) = 0.5 + rng.uniform(-0.05, 0.05);
      }
    im.clamp01();
    images.push_back(std::move(im));
  }
  return images;
}

Trainer make_trainer(const TrainConfig& cfg, std::size_t spe,
                     std::size_t total) {
  Rng init_rng(derive_seed(cfg.seed, hash_string("init")));
  return Trainer(model::PrdlModel::init(cfg.dims, init_rng), cfg, spe, total);
}

}  // namespace

TEST_CASE("schedule endpoints") {
  TrainConfig cfg = small_config(1);
  cfg.batch_size = 32;
  const std::size_t spe = 16, total = 100;

  SUBCASE("warmup starts at zero learning rate") {
    CHECK(schedule(0, spe, total, cfg).lr == 0.0);
  }

  SUBCASE("linear scaling rule for the base learning rate") {
    CHECK(cfg.lr_base() == doctest::Approx(6.25e-5).epsilon(1e-12));
    const std::size_t warmup = cfg.warmup_epochs * spe;
    CHECK(schedule(warmup, spe, total, cfg).lr ==
          doctest::Approx(6.25e-5).epsilon(1e-9));
  }

  SUBCASE("lambda reaches 1 at the final step") {
    CHECK(std::abs(schedule(total - 1, spe, total, cfg).lambda - 1.0) < 1e-9);
    CHECK(schedule(0, spe, total, cfg).lambda ==
          doctest::Approx(cfg.lambda0).epsilon(1e-12));
  }

  SUBCASE("teacher temperature ramps linearly then stays constant") {
    CHECK(schedule(0, spe, total, cfg).tau_t == doctest::Approx(0.04));
    const std::size_t ramp = cfg.tau_t_ramp_epochs * spe;
    CHECK(schedule(ramp, spe, total, cfg).tau_t == doctest::Approx(0.07));
    CHECK(schedule(ramp + 500, spe, total, cfg).tau_t == doctest::Approx(0.07));
    // Midpoint.
    CHECK(schedule(ramp / 2, spe, total, cfg).tau_t ==
          doctest::Approx(0.055).epsilon(1e-9));
  }

  SUBCASE("learning rate decays monotonically after warmup") {
    const std::size_t warmup = cfg.warmup_epochs * spe;
    double prev = schedule(warmup, spe, total, cfg).lr;
    for (std::size_t s = warmup + 1; s < total; ++s) {
      const double cur = schedule(s, spe, total, cfg).lr;
      CHECK(cur <= prev + 1e-15);
      prev = cur;
    }
    CHECK(prev >= cfg.lr_floor - 1e-15);
  }
}

TEST_CASE("train_step is deterministic given state and seed") {
  const TrainConfig cfg = small_config(42);
  const auto images = synthetic_images(cfg.batch_size, 7);

  Trainer t1 = make_trainer(cfg, 4, 8);
  Trainer t2 = make_trainer(cfg, 4, 8);
  const StepResult r1 = t1.train_step(images);
  const StepResult r2 = t2.train_step(images);
  CHECK(r1.breakdown.total == r2.breakdown.total);
  CHECK(r1.breakdown.ce == r2.breakdown.ce);
  CHECK(r1.breakdown.kl == r2.breakdown.kl);
  CHECK(r1.breakdown.sparsity == r2.breakdown.sparsity);
  CHECK(r1.breakdown.variance == r2.breakdown.variance);

  for (std::size_t i = 0; i < t1.model().student.size(); ++i) {
    CHECK(t1.model().student.items()[i].value.values() ==
          t2.model().student.items()[i].value.values());
  }
}

TEST_CASE("training results are invariant to the thread count") {
  const TrainConfig cfg = small_config(43);
  const auto images = synthetic_images(cfg.batch_size, 8);

  kernels::set_max_threads(1);
  Trainer serial = make_trainer(cfg, 4, 8);
  const StepResult r_serial = serial.train_step(images);

  kernels::set_max_threads(4);
  Trainer parallel = make_trainer(cfg, 4, 8);
  const StepResult r_parallel = parallel.train_step(images);
  kernels::set_max_threads(1);

  CHECK(r_serial.breakdown.total == r_parallel.breakdown.total);
  for (std::size_t i = 0; i < serial.model().student.size(); ++i) {
    CHECK(serial.model().student.items()[i].value.values() ==
          parallel.model().student.items()[i].value.values());
  }
  CHECK(serial.model().center.values() == parallel.model().center.values());
}

TEST_CASE("loss breakdown identity and finiteness hold during training") {
  const TrainConfig cfg = small_config(44);
  const auto images = synthetic_images(16, 9);
  Trainer trainer = make_trainer(cfg, 4, 12);

  for (int step = 0; step < 6; ++step) {
    std::vector<img::ToyImage> batch(images.begin() + (step % 3) * 4,
                                     images.begin() + (step % 3) * 4 + 4);
    const StepResult r = trainer.train_step(batch);
    CHECK(std::isfinite(r.breakdown.total));
    const double recomposed = r.breakdown.ce +
                              cfg.loss.beta1 * r.breakdown.kl +
                              cfg.loss.beta2 * r.breakdown.sparsity +
                              cfg.loss.beta3 * r.breakdown.variance;
    CHECK(std::abs(r.breakdown.total - recomposed) < 1e-12);
    CHECK(r.breakdown.variance >= 0.0);
    CHECK(r.breakdown.variance <= 1.0);
    CHECK(r.breakdown.sparsity >= 0.0);
    CHECK(r.breakdown.kl >= 0.0);
  }

  // Mask entries remain strictly inside (0,1) after training steps.
  const Tensor m = model::mask_matrix(trainer.model().student.at("mask.u"));
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(m[i] > 0.0);
    CHECK(m[i] < 1.0);
  }
}

TEST_CASE("teacher changes only through EMA; student changes through gradients") {
  TrainConfig cfg = small_config(45);
  cfg.lambda0 = 1.0;  // freeze the teacher
  const auto images = synthetic_images(cfg.batch_size, 10);
  Trainer trainer = make_trainer(cfg, 4, 8);

  ad::ParamSet teacher_before;
  for (const auto& item : trainer.model().teacher.items()) {
    teacher_before.add(item.name, item.value);
  }
  ad::ParamSet student_before;
  for (const auto& item : trainer.model().student.items()) {
    student_before.add(item.name, item.value);
  }

  // Ensure a non-zero learning rate at step 0: skip warmup.
  cfg = trainer.config();
  (void)cfg;
  trainer.train_step(images);  // step 0, lr may be 0 in warmup
  trainer.train_step(images);  // warmup ramp: lr > 0

  for (const auto& item : trainer.model().teacher.items()) {
    CHECK(item.value.values() == teacher_before.at(item.name).values());
  }
  bool any_changed = false;
  for (const auto& item : trainer.model().student.items()) {
    if (item.value.values() != student_before.at(item.name).values()) {
      any_changed = true;
    }
  }
  CHECK(any_changed);
}

TEST_CASE("teacher parameters replay the EMA recursion exactly") {
  TrainConfig cfg = small_config(46);
  cfg.lambda0 = 0.9;
  const auto images = synthetic_images(cfg.batch_size, 11);
  Trainer trainer = make_trainer(cfg, 2, 10);

  // Record initial teacher and per-step (lambda, student-after-update).
  ad::ParamSet replay;
  for (const auto& item : trainer.model().teacher.items()) {
    replay.add(item.name, item.value);
  }
  for (int step = 0; step < 10; ++step) {
    const StepResult r = trainer.train_step(images);
    for (auto& item : replay.items()) {
      const Tensor& s = trainer.model().student.at(item.name);
      for (std::size_t k = 0; k < item.value.size(); ++k) {
        item.value[k] = r.sched.lambda * item.value[k] +
                        (1.0 - r.sched.lambda) * s[k];
      }
    }
  }
  for (const auto& item : trainer.model().teacher.items()) {
    const Tensor& expect = replay.at(item.name);
    for (std::size_t k = 0; k < item.value.size(); ++k) {
      CHECK(std::abs(item.value[k] - expect[k]) < 1e-12);
    }
  }
}

TEST_CASE("degenerate sampled branch reduces to the mean representation") {
  Rng rng(47);
  model::ModelDims dims;
  dims.input_dim = 12;
  dims.enc_hidden = 10;
  dims.repr_dim = 6;
  dims.proj_hidden = 8;
  dims.proj_dim = 8;
  model::PrdlModel m = model::PrdlModel::init(dims, rng);

  loss::LossConfig lcfg;
  lcfg.beta1 = lcfg.beta2 = lcfg.beta3 = 0.0;

  ImageStepInputs inputs;
  inputs.zero_sigma_p = true;
  for (std::size_t i = 0; i < dims.input_dim; ++i) {
    inputs.x_tilde.push_back(rng.uniform(0.2, 0.8));
  }
  for (int v = 0; v < 3; ++v) {
    std::vector<double> view(dims.input_dim);
    for (double& x : view) x = rng.uniform(0.2, 0.8);
    inputs.views.push_back(view);
    inputs.prompts.push_back(aug::sample_prompt(rng));
  }
  for (int i = 0; i < 2; ++i) {
    inputs.teacher_probs.push_back(
        Tensor::vector(oracle::random_simplex(rng, dims.proj_dim)));
    Tensor eps({dims.repr_dim});
    for (std::size_t d = 0; d < dims.repr_dim; ++d) eps[d] = rng.normal();
    inputs.eps.push_back(std::move(eps));
  }

  Tape tape;
  LeafMap leaves = model::make_leaves(tape, m.student, /*with_grad=*/false);
  const ImageLossTerms terms =
      build_image_loss(tape, leaves, dims, lcfg, inputs);
  CHECK(std::isfinite(terms.total.value()[0]));
  CHECK(terms.total.value()[0] == terms.ce.value()[0]);

  // With sigma_p = 0, the sampled term equals cross-entropy against the
  // softmax of projector(mu)/tau_v.
  Var x = tape.constant(Tensor::vector(inputs.x_tilde));
  Var z = model::encoder_forward(tape, leaves, x);
  Var mu = model::head_forward(tape, leaves, "mu", dims.head_depth, z);
  Var logits_mu = ad::scale(model::projector_forward(tape, leaves, mu),
                            1.0 / lcfg.tau_v);
  double expected_sampled = 0.0;
  for (int i = 0; i < 2; ++i) {
    expected_sampled +=
        loss::xent_vs_softmax(tape, inputs.teacher_probs[i], logits_mu)
            .value()[0];
  }
  expected_sampled /= 2.0;

  // Recover the sampled part: ce = image_term + sampled_term where the image
  // term is independent of zero_sigma_p; rebuild with fresh sampled noise to
  // isolate it.
  ImageStepInputs noisy = inputs;
  noisy.zero_sigma_p = false;
  Tape tape2;
  LeafMap leaves2 = model::make_leaves(tape2, m.student, false);
  const ImageLossTerms noisy_terms =
      build_image_loss(tape2, leaves2, dims, lcfg, noisy);
  // Same image term in both graphs; the difference is the sampled term.
  const double image_term_delta =
      terms.ce.value()[0] - noisy_terms.ce.value()[0];
  (void)image_term_delta;

  // Direct check: rebuild the degenerate graph and compare its sampled term.
  const double image_pairs_term = [&] {
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t j = 0; j < inputs.views.size(); ++j) {
      Var zj = model::encoder_forward(
          tape, leaves, tape.constant(Tensor::vector(inputs.views[j])));
      Var lj = ad::scale(model::projector_forward(tape, leaves, zj),
                         1.0 / lcfg.tau_s);
      for (std::size_t i = 0; i < 2; ++i) {
        if (j == i) continue;
        acc += loss::xent_vs_softmax(tape, inputs.teacher_probs[i], lj)
                   .value()[0];
        ++pairs;
      }
    }
    return acc / static_cast<double>(pairs);
  }();
  CHECK(terms.ce.value()[0] ==
        doctest::Approx(image_pairs_term + expected_sampled).epsilon(1e-12));

  // Gradients flow cleanly through the degenerate graph.
  for (auto& item : m.student.items()) item.value.set_requires_grad(true);
  auto report = ad::grad_check(
      [&](Tape& t, const LeafMap& l) {
        return build_image_loss(t, l, dims, lcfg, inputs).total;
      },
      m.student, 1e-4, 1e-4);
  CHECK(report.pass);
}

TEST_CASE("full image loss graph passes a gradient check at tiny size") {
  Rng rng(48);
  model::ModelDims dims;
  dims.input_dim = 12;
  dims.enc_hidden = 10;
  dims.repr_dim = 6;
  dims.proj_hidden = 8;
  dims.proj_dim = 8;
  model::PrdlModel m = model::PrdlModel::init(dims, rng);
  loss::LossConfig lcfg;  // default weights: every term participates

  ImageStepInputs inputs;
  for (std::size_t i = 0; i < dims.input_dim; ++i) {
    inputs.x_tilde.push_back(rng.uniform(0.2, 0.8));
  }
  for (int v = 0; v < 4; ++v) {
    std::vector<double> view(dims.input_dim);
    for (double& x : view) x = rng.uniform(0.2, 0.8);
    inputs.views.push_back(view);
    inputs.prompts.push_back(aug::sample_prompt(rng));
  }
  for (int i = 0; i < 2; ++i) {
    inputs.teacher_probs.push_back(
        Tensor::vector(oracle::random_simplex(rng, dims.proj_dim)));
    Tensor eps({dims.repr_dim});
    for (std::size_t d = 0; d < dims.repr_dim; ++d) eps[d] = rng.normal();
    inputs.eps.push_back(std::move(eps));
  }

  auto report = ad::grad_check(
      [&](Tape& t, const LeafMap& l) {
        return build_image_loss(t, l, dims, lcfg, inputs).total;
      },
      m.student, 1e-4, 1e-4);
  if (!report.pass) {
    for (const auto& e : report.entries) {
      if (e.max_rel_err > 1e-4) {
        MESSAGE(e.param, " rel_err=", e.max_rel_err, " analytic=", e.analytic,
                " numeric=", e.numeric);
      }
    }
  }
  CHECK(report.pass);
}

TEST_CASE("non-finite loss aborts with the per-term breakdown") {
  TrainConfig cfg = small_config(49);
  const auto images = synthetic_images(cfg.batch_size, 12);
  Trainer trainer = make_trainer(cfg, 4, 8);
  trainer.model().student.at("enc.w1")[0] =
      std::numeric_limits<double>::quiet_NaN();
  try {
    trainer.train_step(images);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("ce=") != std::string::npos);
    CHECK(msg.find("kl=") != std::string::npos);
  }
}

TEST_CASE("pretrain smoke: checkpoint round trip reproduces the final eval") {
  TrainConfig cfg = small_config(50);
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.max_images = 0;
  const auto images = synthetic_images(64, 13);
  const std::string out_dir =
      (std::filesystem::temp_directory_path() / "prdl_test_pretrain").string();

  const PretrainResult result = pretrain(cfg, images, out_dir);
  CHECK(result.epochs.size() == 2);
  CHECK(std::filesystem::exists(result.checkpoint_path));
  CHECK(std::filesystem::exists(result.log_path));

  // Reload and replay the final forward pass bit-exactly.
  model::PrdlModel reloaded = model::load_checkpoint(result.checkpoint_path);
  CHECK(reloaded.step == result.final_step);
  const std::size_t spe = 64 / 8;
  Trainer replay(std::move(reloaded), cfg, spe, cfg.epochs * spe);

  // Rebuild the last batch exactly as pretrain drew it.
  std::vector<std::size_t> order(64);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(
      derive_seed(derive_seed(cfg.seed, hash_string("shuffle")), 1));
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
  }
  std::vector<img::ToyImage> last_batch;
  for (std::size_t i = 56; i < 64; ++i) last_batch.push_back(images[order[i]]);

  const loss::LossBreakdown replayed =
      replay.eval_step(last_batch, result.final_step);
  CHECK(replayed.total == result.final_eval.total);
  CHECK(replayed.ce == result.final_eval.ce);
  CHECK(replayed.kl == result.final_eval.kl);

  std::filesystem::remove_all(out_dir);
}
