#include "prdl/model.hpp"

#include <cmath>

#include "prdl/binio.hpp"

namespace prdl::model {

using ad::LeafMap;
using ad::ParamSet;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor init_weight(Rng& rng, std::size_t out_dim, std::size_t in_dim) {
  Tensor w({out_dim, in_dim});
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, scale);
  w.set_requires_grad(true);
  return w;
}

Tensor init_bias(std::size_t n) {
  Tensor b({n});
  b.set_requires_grad(true);
  return b;
}

void add_linear(ParamSet& ps, const std::string& prefix, int layer,
                std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  ps.add(prefix + ".w" + std::to_string(layer), init_weight(rng, out_dim, in_dim));
  ps.add(prefix + ".b" + std::to_string(layer), init_bias(out_dim));
}

}  // namespace

PrdlModel PrdlModel::init(const ModelDims& dims, Rng& rng) {
  PrdlModel m;
  m.dims = dims;

  add_linear(m.student, "enc", 1, dims.enc_hidden, dims.input_dim, rng);
  add_linear(m.student, "enc", 2, dims.enc_hidden, dims.enc_hidden, rng);
  add_linear(m.student, "enc", 3, dims.repr_dim, dims.enc_hidden, rng);
  add_linear(m.student, "proj", 1, dims.proj_hidden, dims.repr_dim, rng);
  add_linear(m.student, "proj", 2, dims.proj_dim, dims.proj_hidden, rng);
  for (std::size_t l = 1; l <= dims.head_depth; ++l) {
    add_linear(m.student, "mu", static_cast<int>(l), dims.repr_dim,
               dims.repr_dim, rng);
  }
  for (std::size_t l = 1; l <= dims.head_depth; ++l) {
    add_linear(m.student, "sig", static_cast<int>(l), dims.repr_dim,
               dims.repr_dim, rng);
  }
  Tensor u({dims.num_ops, dims.repr_dim});
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = rng.normal();
  u.set_requires_grad(true);
  m.student.add("mask.u", std::move(u));

  // Teacher: gradient-free copy of encoder and projector.
  for (const auto& item : m.student.items()) {
    if (item.name.rfind("enc.", 0) == 0 || item.name.rfind("proj.", 0) == 0) {
      Tensor t = item.value;
      t.set_requires_grad(false);
      m.teacher.add(item.name, std::move(t));
    }
  }

  m.center = Tensor({dims.proj_dim});
  m.step = 0;
  return m;
}

Var encoder_forward(Tape& tape, const LeafMap& leaves, Var input) {
  (void)tape;
  Var h1 = ad::relu(ad::linear(leaves.at("enc.w1"), input, leaves.at("enc.b1")));
  Var h2 = ad::relu(ad::linear(leaves.at("enc.w2"), h1, leaves.at("enc.b2")));
  return ad::linear(leaves.at("enc.w3"), h2, leaves.at("enc.b3"));
}

Var projector_forward(Tape& tape, const LeafMap& leaves, Var z) {
  (void)tape;
  Var h = ad::relu(ad::linear(leaves.at("proj.w1"), z, leaves.at("proj.b1")));
  return ad::linear(leaves.at("proj.w2"), h, leaves.at("proj.b2"));
}

Var head_forward(Tape& tape, const LeafMap& leaves, const std::string& prefix,
                 std::size_t depth, Var z) {
  (void)tape;
  Var h = z;
  for (std::size_t l = 1; l <= depth; ++l) {
    const std::string idx = std::to_string(l);
    h = ad::linear(leaves.at(prefix + ".w" + idx), h,
                   leaves.at(prefix + ".b" + idx));
    if (l < depth) h = ad::relu(h);
  }
  return h;
}

Var prompted_mask(Tape& tape, Var u, const aug::Prompt& p) {
  if (!p.any()) {
    throw DomainError("prompted_mask: all-zero prompt (|p|_1 = 0)");
  }
  Var m = ad::sigmoid(u);
  Var acc;
  for (std::size_t k = 0; k < aug::kNumOperators; ++k) {
    if (!p.active(k)) continue;
    Var rk = ad::row(m, k);
    acc = acc.valid() ? ad::add(acc, rk) : rk;
  }
  (void)tape;
  return ad::scale(acc, 1.0 / static_cast<double>(p.count()));
}

LeafMap make_leaves(Tape& tape, const ParamSet& params, bool with_grad) {
  LeafMap leaves;
  for (const auto& item : params.items()) {
    Tensor t = item.value;
    if (!with_grad) t.set_requires_grad(false);
    leaves.emplace(item.name, tape.leaf(std::move(t)));
  }
  return leaves;
}

Tensor encode(const ParamSet& params, const ModelDims& dims,
              const img::ToyImage& view) {
  if (view.values().size() != dims.input_dim) {
    throw ShapeError("encode: view has " +
                     std::to_string(view.values().size()) +
                     " values, expected " + std::to_string(dims.input_dim));
  }
  Tape tape;
  LeafMap leaves = make_leaves(tape, params, /*with_grad=*/false);
  Var input = tape.constant(Tensor::vector(view.values()));
  return encoder_forward(tape, leaves, input).value();
}

Tensor project_probs(const ParamSet& params, const Tensor& z, double tau) {
  if (!(tau > 0.0)) {
    throw DomainError("project_probs: temperature must be positive, got " +
                      std::to_string(tau));
  }
  Tape tape;
  LeafMap leaves = make_leaves(tape, params, /*with_grad=*/false);
  Var logits = projector_forward(tape, leaves, tape.constant(z));
  return ad::softmax(ad::scale(logits, 1.0 / tau)).value();
}

ReprDistribution estimate_distribution(const ParamSet& params,
                                       const ModelDims& dims,
                                       const img::ToyImage& x) {
  if (x.values().size() != dims.input_dim) {
    throw ShapeError("estimate_distribution: input has " +
                     std::to_string(x.values().size()) + " values, expected " +
                     std::to_string(dims.input_dim));
  }
  Tape tape;
  LeafMap leaves = make_leaves(tape, params, /*with_grad=*/false);
  Var z = encoder_forward(tape, leaves, tape.constant(Tensor::vector(x.values())));
  Var mu = head_forward(tape, leaves, "mu", dims.head_depth, z);
  Var log_var = head_forward(tape, leaves, "sig", dims.head_depth, z);
  ReprDistribution dist;
  dist.mu = mu.value();
  dist.sigma = ad::exp(ad::scale(log_var, 0.5)).value();
  return dist;
}

Tensor prompted_mask_value(const Tensor& mask_u, const aug::Prompt& p) {
  Tape tape;
  Tensor u = mask_u;
  u.set_requires_grad(false);
  return prompted_mask(tape, tape.leaf(std::move(u)), p).value();
}

Tensor prompted_sigma(const Tensor& mask_u, const Tensor& sigma,
                      const aug::Prompt& p) {
  const Tensor m_p = prompted_mask_value(mask_u, p);
  if (!m_p.same_shape(sigma)) {
    throw ShapeError::mismatch("prompted_sigma", m_p.shape(), sigma.shape());
  }
  Tensor out(sigma.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigma[i] * m_p[i];
  return out;
}

Tensor sample_representation(const ReprDistribution& dist,
                             const Tensor& sigma_p, Rng& rng) {
  if (!dist.mu.same_shape(sigma_p)) {
    throw ShapeError::mismatch("sample_representation", dist.mu.shape(),
                               sigma_p.shape());
  }
  Tensor out(dist.mu.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = dist.mu[i] + sigma_p[i] * rng.normal();
  }
  return out;
}

void ema_update(ParamSet& teacher, const ParamSet& student, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw DomainError("ema_update: lambda must be in [0, 1], got " +
                      std::to_string(lambda));
  }
  for (auto& item : teacher.items()) {
    const Tensor& s = student.at(item.name);
    if (!s.same_shape(item.value)) {
      throw ShapeError::mismatch("ema_update(" + item.name + ")",
                                 item.value.shape(), s.shape());
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      item.value[i] = lambda * item.value[i] + (1.0 - lambda) * s[i];
    }
  }
}

Tensor mask_matrix(const Tensor& mask_u) {
  Tensor m(mask_u.shape());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double x = mask_u[i];
    m[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }
  return m;
}

Tensor mask_similarity(const Tensor& m) {
  const std::size_t k = m.rows(), d = m.cols();
  Tensor sim({k, k});
  std::vector<double> norms(k);
  for (std::size_t i = 0; i < k; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < d; ++j) n += m.at2(i, j) * m.at2(i, j);
    norms[i] = std::sqrt(n);
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) {
        sim.at2(i, j) = 1.0;
        continue;
      }
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += m.at2(i, c) * m.at2(j, c);
      sim.at2(i, j) = dot / (norms[i] * norms[j]);
    }
  }
  return sim;
}

// ---- checkpoint I/O ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'R', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

void write_param_set(binio::Writer& w, const ParamSet& ps) {
  w.u32(static_cast<std::uint32_t>(ps.size()));
  for (const auto& item : ps.items()) {
    w.u16(static_cast<std::uint16_t>(item.name.size()));
    w.str(item.name);
    w.u8(static_cast<std::uint8_t>(item.value.rank()));
    for (std::size_t d : item.value.shape()) {
      w.u32(static_cast<std::uint32_t>(d));
    }
    for (double v : item.value.values()) w.f64(v);
  }
}

void read_param_set(binio::Reader& r, ParamSet& ps, bool requires_grad) {
  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const std::uint8_t rank = r.u8();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    Tensor tensor(shape);
    for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] = r.f64();
    tensor.set_requires_grad(requires_grad);
    ps.add(name, std::move(tensor));
  }
}

}  // namespace

void save_checkpoint(const PrdlModel& model, const std::string& path) {
  binio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(model.dims.repr_dim));
  w.u32(static_cast<std::uint32_t>(model.dims.num_ops));
  w.u32(static_cast<std::uint32_t>(model.dims.proj_dim));
  w.u32(static_cast<std::uint32_t>(model.dims.input_dim));
  w.u32(static_cast<std::uint32_t>(model.dims.enc_hidden));
  w.u32(static_cast<std::uint32_t>(model.dims.proj_hidden));
  w.u32(static_cast<std::uint32_t>(model.dims.head_depth));
  w.u64(model.step);
  write_param_set(w, model.student);
  write_param_set(w, model.teacher);
  for (double v : model.center.values()) w.f64(v);
  binio::write_file(path, w.buffer());
}

PrdlModel load_checkpoint(const std::string& path) {
  const auto buf = binio::read_file(path);
  binio::Reader r(buf.data(), buf.size(), path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("bad magic (expected PRDL)");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  PrdlModel m;
  m.dims.repr_dim = r.u32();
  m.dims.num_ops = r.u32();
  m.dims.proj_dim = r.u32();
  m.dims.input_dim = r.u32();
  m.dims.enc_hidden = r.u32();
  m.dims.proj_hidden = r.u32();
  m.dims.head_depth = r.u32();
  m.step = r.u64();
  read_param_set(r, m.student, /*requires_grad=*/true);
  read_param_set(r, m.teacher, /*requires_grad=*/false);
  m.center = Tensor({m.dims.proj_dim});
  for (std::size_t i = 0; i < m.center.size(); ++i) m.center[i] = r.f64();
  if (r.remaining() != 0) r.fail("trailing bytes after checkpoint payload");
  return m;
}

}  // namespace prdl::model
