#ifndef PRDL_MODEL_HPP
#define PRDL_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "prdl/augment.hpp"
#include "prdl/autodiff.hpp"
#include "prdl/image.hpp"
#include "prdl/rng.hpp"

namespace prdl::model {

struct ModelDims {
  std::size_t input_dim = 3 * aug::kGlobalSize * aug::kGlobalSize;
  std::size_t enc_hidden = 128;   // two hidden layers of this width
  std::size_t repr_dim = 32;      // D
  std::size_t proj_hidden = 64;
  std::size_t proj_dim = 64;      // P
  std::size_t head_depth = 1;     // layers in each distribution head
  std::size_t num_ops = aug::kNumOperators;  // K

  bool operator==(const ModelDims&) const = default;
};

// Per-patch Gaussian in representation space.
struct ReprDistribution {
  ad::Tensor mu;     // {D}
  ad::Tensor sigma;  // {D}, strictly positive
};

// Parameter naming scheme; also the checkpoint serialization order.
// Student:  enc.w1 enc.b1 enc.w2 enc.b2 enc.w3 enc.b3
//           proj.w1 proj.b1 proj.w2 proj.b2
//           mu.w1 mu.b1 ... (head_depth layers)  sig.w1 sig.b1 ...
//           mask.u ({K, D})
// Teacher:  enc.* and proj.* only, gradient-free.
struct PrdlModel {
  ModelDims dims;
  ad::ParamSet student;
  ad::ParamSet teacher;
  ad::Tensor center;       // {P}; running center of teacher logits
  std::uint64_t step = 0;

  // Weights ~ N(0, 1/sqrt(fan_in)), biases zero, mask.u ~ N(0, 1).
  // The teacher starts as a copy of the student.
  static PrdlModel init(const ModelDims& dims, Rng& rng);
};

// ---- graph builders (shared by training, extraction and grad checks) -------

// MLP encoder: input -> hidden -> hidden -> D, relu activations.
ad::Var encoder_forward(ad::Tape& tape, const ad::LeafMap& leaves,
                        ad::Var input);
// Projector g: D -> hidden -> P.
ad::Var projector_forward(ad::Tape& tape, const ad::LeafMap& leaves,
                          ad::Var z);
// Distribution heads; "mu." or "sig." prefix. Depth > 1 inserts relu.
ad::Var head_forward(ad::Tape& tape, const ad::LeafMap& leaves,
                     const std::string& prefix, std::size_t depth, ad::Var z);
// Prompted mask m_p = (sum of sigmoid(u) rows with bit set) / |p|_1.
ad::Var prompted_mask(ad::Tape& tape, ad::Var u, const aug::Prompt& p);

// ---- value-level operations -------------------------------------------------

ad::LeafMap make_leaves(ad::Tape& tape, const ad::ParamSet& params,
                        bool with_grad);

// Deterministic representation of a canonical-size view.
ad::Tensor encode(const ad::ParamSet& params, const ModelDims& dims,
                  const img::ToyImage& view);

// softmax(g(z) / tau); tau must be positive.
ad::Tensor project_probs(const ad::ParamSet& params, const ad::Tensor& z,
                         double tau);

// mu = h_mu(f(x)), sigma = exp(h_sig(f(x)) / 2).
ReprDistribution estimate_distribution(const ad::ParamSet& params,
                                       const ModelDims& dims,
                                       const img::ToyImage& x);

// sigma_p = sigma (.) m_p; every component shrinks strictly when M < 1.
ad::Tensor prompted_sigma(const ad::Tensor& mask_u, const ad::Tensor& sigma,
                          const aug::Prompt& p);
ad::Tensor prompted_mask_value(const ad::Tensor& mask_u, const aug::Prompt& p);

// z_v = mu + sigma_p (.) eps, eps ~ N(0, I).
ad::Tensor sample_representation(const ReprDistribution& dist,
                                 const ad::Tensor& sigma_p, Rng& rng);

// theta_t <- lambda * theta_t + (1 - lambda) * theta_s for every teacher
// tensor (matched by name). lambda outside [0, 1] or shape mismatch throws.
void ema_update(ad::ParamSet& teacher, const ad::ParamSet& student,
                double lambda);

// M = sigmoid(U) rows; cosine similarity matrix {K, K}.
ad::Tensor mask_matrix(const ad::Tensor& mask_u);
ad::Tensor mask_similarity(const ad::Tensor& mask_matrix);

// ---- checkpoint I/O ----------------------------------------------------------

// Versioned binary, magic "PRDL": dims header, step, then parameter blobs in
// declared order as 64-bit little-endian. Round trips are bit-exact.
void save_checkpoint(const PrdlModel& model, const std::string& path);
PrdlModel load_checkpoint(const std::string& path);

}  // namespace prdl::model

#endif  // PRDL_MODEL_HPP
