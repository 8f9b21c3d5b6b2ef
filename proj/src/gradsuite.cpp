#include "prdl/gradsuite.hpp"

#include <cmath>

#include "prdl/trainer.hpp"

namespace prdl::train {

using ad::LeafMap;
using ad::ParamSet;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

model::ModelDims toy_dims() {
  model::ModelDims d;
  d.input_dim = 12;
  d.enc_hidden = 10;
  d.repr_dim = 8;
  d.proj_hidden = 8;
  d.proj_dim = 8;
  d.head_depth = 1;
  d.num_ops = 6;
  return d;
}

std::vector<double> random_input(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(0.1, 0.9);
  return v;
}

// Smallest |pre-activation| over every relu in the three branches for one
// input vector (encoder twice-hidden plus the projector hidden layer fed by
// either the encoder output or a sampled representation).
double relu_margin(const model::PrdlModel& m, const ImageStepInputs& inputs) {
  Tape tape;
  LeafMap leaves = model::make_leaves(tape, m.student, /*with_grad=*/false);
  double margin = 1e300;
  auto scan = [&margin](const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      margin = std::min(margin, std::abs(t[i]));
    }
  };
  auto probe_encoder = [&](const std::vector<double>& pixels) {
    Var x = tape.constant(Tensor::vector(pixels));
    Var pre1 = ad::linear(leaves.at("enc.w1"), x, leaves.at("enc.b1"));
    scan(pre1.value());
    Var pre2 =
        ad::linear(leaves.at("enc.w2"), ad::relu(pre1), leaves.at("enc.b2"));
    scan(pre2.value());
    return ad::linear(leaves.at("enc.w3"), ad::relu(pre2), leaves.at("enc.b3"));
  };
  auto probe_projector = [&](Var z) {
    Var pre = ad::linear(leaves.at("proj.w1"), z, leaves.at("proj.b1"));
    scan(pre.value());
  };

  for (const auto& view : inputs.views) probe_projector(probe_encoder(view));
  Var z_tilde = probe_encoder(inputs.x_tilde);
  Var mu = model::head_forward(tape, leaves, "mu", m.dims.head_depth, z_tilde);
  Var sigma = ad::exp(ad::scale(
      model::head_forward(tape, leaves, "sig", m.dims.head_depth, z_tilde),
      0.5));
  for (std::size_t i = 0; i < inputs.teacher_probs.size(); ++i) {
    Var m_p = model::prompted_mask(tape, leaves.at("mask.u"), inputs.prompts[i]);
    Var z_v = ad::add(mu, ad::mul(ad::mul(sigma, m_p),
                                  tape.constant(inputs.eps[i])));
    probe_projector(z_v);
  }
  return margin;
}

struct ToyCase {
  model::PrdlModel model;
  ImageStepInputs inputs;
};

ToyCase make_smooth_case(std::uint64_t seed, const loss::LossConfig& lcfg) {
  const model::ModelDims dims = toy_dims();
  for (int attempt = 0; attempt < 64; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    ToyCase c{model::PrdlModel::init(dims, rng), {}};

    c.inputs.x_tilde = random_input(rng, dims.input_dim);
    for (int v = 0; v < 4; ++v) {
      c.inputs.views.push_back(random_input(rng, dims.input_dim));
      c.inputs.prompts.push_back(aug::sample_prompt(rng));
    }
    for (int i = 0; i < 2; ++i) {
      Tensor eps({dims.repr_dim});
      for (std::size_t d = 0; d < dims.repr_dim; ++d) eps[d] = rng.normal();
      c.inputs.eps.push_back(std::move(eps));
    }
    ImageStepInputs probe_inputs = c.inputs;
    teacher_forward(c.model, probe_inputs, /*tau_t=*/0.05);
    c.inputs.teacher_probs = probe_inputs.teacher_probs;

    if (relu_margin(c.model, c.inputs) > 0.01) return c;
    (void)lcfg;
  }
  throw DomainError("gradient_suite: could not find a kink-free toy case");
}

}  // namespace

GradSuiteResult gradient_suite(std::uint64_t base_seed, int num_seeds,
                               double h, double tolerance) {
  GradSuiteResult result;
  result.pass = true;
  const model::ModelDims dims = toy_dims();
  loss::LossConfig lcfg;  // default weights and temperatures

  for (int s = 0; s < num_seeds; ++s) {
    const std::uint64_t seed = derive_seed(base_seed, hash_string("case"),
                                           static_cast<std::uint64_t>(s));
    ToyCase c = make_smooth_case(seed, lcfg);

    struct Term {
      const char* name;
      ad::GraphBuilder build;
    };
    const ImageStepInputs& in = c.inputs;
    const std::vector<Term> terms = {
        {"ce", [&](Tape& t, const LeafMap& l) {
           return build_image_loss(t, l, dims, lcfg, in).ce;
         }},
        {"kl_paper_literal", [&](Tape& t, const LeafMap& l) {
           loss::LossConfig alt = lcfg;
           alt.kl_direction = loss::KlDirection::PaperLiteral;
           return build_image_loss(t, l, dims, alt, in).kl;
         }},
        {"kl_conventional", [&](Tape& t, const LeafMap& l) {
           loss::LossConfig alt = lcfg;
           alt.kl_direction = loss::KlDirection::Conventional;
           return build_image_loss(t, l, dims, alt, in).kl;
         }},
        {"sparsity", [&](Tape& t, const LeafMap& l) {
           return build_image_loss(t, l, dims, lcfg, in).sparsity;
         }},
        {"variance_hinge", [&](Tape& t, const LeafMap& l) {
           return build_image_loss(t, l, dims, lcfg, in).variance;
         }},
        {"total", [&](Tape& t, const LeafMap& l) {
           return build_image_loss(t, l, dims, lcfg, in).total;
         }},
    };

    for (const Term& term : terms) {
      const auto report = ad::grad_check(term.build, c.model.student, h,
                                         tolerance);
      GradSuiteCase entry;
      entry.name = term.name;
      entry.seed = seed;
      entry.pass = report.pass;
      entry.max_rel_err = report.max_rel_err;
      result.pass = result.pass && report.pass;
      result.cases.push_back(std::move(entry));
    }
  }
  return result;
}

}  // namespace prdl::train
