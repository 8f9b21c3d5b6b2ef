#include "prdl/mil.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prdl/binio.hpp"
#include "prdl/kernels.hpp"

namespace prdl::mil {

using ad::LeafMap;
using ad::ParamSet;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

// Order-independent sum: sorting the terms fixes the addition order no
// matter how the inputs were permuted.
double sorted_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

struct ClassTexture {
  double base[3];
  double freq;
  double angle;
  double amp;
};

ClassTexture texture_for(std::size_t cls, std::size_t num_classes) {
  static const double palette[8][3] = {
      {0.52, 0.52, 0.52},  // background
      {0.75, 0.35, 0.35}, {0.35, 0.75, 0.35}, {0.35, 0.35, 0.75},
      {0.75, 0.70, 0.30}, {0.70, 0.35, 0.70}, {0.30, 0.70, 0.70},
      {0.60, 0.45, 0.25}};
  ClassTexture t;
  const std::size_t p = cls % 8;
  t.base[0] = palette[p][0];
  t.base[1] = palette[p][1];
  t.base[2] = palette[p][2];
  t.freq = cls == 0 ? 0.0 : 1.0 + 0.5 * static_cast<double>(cls);
  t.angle = static_cast<double>(cls) * 3.14159265358979 /
            static_cast<double>(std::max<std::size_t>(num_classes, 1));
  t.amp = cls == 0 ? 0.0 : 0.15;
  return t;
}

img::ToyImage make_patch(const ClassTexture& t, std::size_t size, double noise,
                         Rng& rng) {
  img::ToyImage im(size, size);
  const double phase = rng.uniform(0.0, kTwoPi);
  const double ca = std::cos(t.angle), sa = std::sin(t.angle);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (ca * static_cast<double>(x) +
                        sa * static_cast<double>(y)) /
                       static_cast<double>(size);
      const double wave = t.amp * std::sin(kTwoPi * t.freq * u + phase);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = t.base[c] + wave + rng.normal(0.0, noise);
        v = std::clamp(v, 0.0, 1.0);
        // Snap to the 8-bit grid so PPM round trips are lossless.
        im.at(x, y, c) = std::round(v * 255.0) / 255.0;
      }
    }
  }
  return im;
}

}  // namespace

void SyntheticBagConfig::validate() const {
  if (num_classes < 2) {
    throw DomainError("SyntheticBagConfig: need at least 2 classes");
  }
  if (bags_per_class == 0 || patches_per_bag == 0) {
    throw DomainError("SyntheticBagConfig: bags and patches must be positive");
  }
  if (!(positive_fraction > 0.0 && positive_fraction <= 1.0)) {
    throw DomainError(
        "SyntheticBagConfig: positive_fraction must be in (0, 1]");
  }
  if (noise < 0.0) throw DomainError("SyntheticBagConfig: noise must be >= 0");
  if (patch_size == 0) throw DomainError("SyntheticBagConfig: patch_size");
}

data::Dataset gen_synthetic(const SyntheticBagConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const ClassTexture background = texture_for(0, cfg.num_classes);

  data::Dataset ds;
  for (std::size_t cls = 0; cls < cfg.num_classes; ++cls) {
    const ClassTexture texture = texture_for(cls, cfg.num_classes);
    const std::size_t positives =
        cls == 0 ? 0
                 : std::min<std::size_t>(
                       cfg.patches_per_bag,
                       static_cast<std::size_t>(std::ceil(
                           cfg.positive_fraction *
                           static_cast<double>(cfg.patches_per_bag))));
    for (std::size_t b = 0; b < cfg.bags_per_class; ++b) {
      data::ImageBag bag;
      bag.id = "c" + std::to_string(cls) + "_b" + std::to_string(b);
      bag.label = static_cast<std::uint32_t>(cls);

      std::vector<std::size_t> slots(cfg.patches_per_bag);
      std::iota(slots.begin(), slots.end(), 0);
      for (std::size_t i = slots.size() - 1; i > 0; --i) {
        std::swap(slots[i], slots[rng.uniform_index(i + 1)]);
      }

      bag.patches.resize(cfg.patches_per_bag);
      for (std::size_t p = 0; p < cfg.patches_per_bag; ++p) {
        const bool is_positive = p < positives;
        bag.patches[slots[p]] = make_patch(
            is_positive ? texture : background, cfg.patch_size, cfg.noise, rng);
      }
      ds.bags.push_back(std::move(bag));
    }
  }

  // Stratified 6:1:3 split: shuffle within each class, interleave classes
  // round-robin, then cut at 60% and 70%.
  std::vector<std::vector<std::size_t>> per_class(cfg.num_classes);
  for (std::size_t i = 0; i < ds.bags.size(); ++i) {
    per_class[ds.bags[i].label].push_back(i);
  }
  for (auto& list : per_class) {
    for (std::size_t i = list.size(); i > 1; --i) {
      std::swap(list[i - 1], list[rng.uniform_index(i)]);
    }
  }
  std::vector<std::size_t> order;
  order.reserve(ds.bags.size());
  for (std::size_t round = 0; round < cfg.bags_per_class; ++round) {
    for (std::size_t cls = 0; cls < cfg.num_classes; ++cls) {
      if (round < per_class[cls].size()) order.push_back(per_class[cls][round]);
    }
  }
  const std::size_t n = order.size();
  const std::size_t train_end = n * 6 / 10;
  const std::size_t val_end = n * 7 / 10;
  for (std::size_t pos = 0; pos < n; ++pos) {
    data::Split split = data::Split::Test;
    if (pos < train_end) {
      split = data::Split::Train;
    } else if (pos < val_end) {
      split = data::Split::Val;
    }
    ds.bags[order[pos]].split = split;
  }
  return ds;
}

MilModel MilModel::init(std::size_t repr_dim, std::size_t attn_hidden,
                        std::size_t num_classes, Rng& rng) {
  MilModel m;
  m.repr_dim = repr_dim;
  m.attn_hidden = attn_hidden;
  m.num_classes = num_classes;

  auto weight = [&rng](std::vector<std::size_t> shape, std::size_t fan_in) {
    Tensor w(std::move(shape));
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, scale);
    w.set_requires_grad(true);
    return w;
  };
  m.params.add("attn.v", weight({attn_hidden, repr_dim}, repr_dim));
  m.params.add("attn.w", weight({attn_hidden}, attn_hidden));
  m.params.add("cls.w", weight({num_classes, repr_dim}, repr_dim));
  Tensor b({num_classes});
  b.set_requires_grad(true);
  m.params.add("cls.b", std::move(b));
  return m;
}

PoolVars attention_forward(Tape& tape, const LeafMap& leaves, const Tensor& z) {
  if (z.rank() != 2 || z.rows() == 0) {
    throw DomainError("attention_forward: need a non-empty n x D matrix");
  }
  const std::size_t n = z.rows(), d = z.cols();

  std::vector<Var> patch_vars;
  std::vector<Var> scores;
  patch_vars.reserve(n);
  scores.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = z.at2(i, j);
    Var zi = tape.constant(Tensor::vector(std::move(row)));
    patch_vars.push_back(zi);
    Var hidden = ad::tanh(ad::matvec(leaves.at("attn.v"), zi));
    scores.push_back(ad::dot(leaves.at("attn.w"), hidden));
  }
  Var weights = ad::softmax(ad::stack_scalars(tape, scores));

  Var bag;
  for (std::size_t i = 0; i < n; ++i) {
    Var contrib = ad::mul(ad::element(weights, i), patch_vars[i]);
    bag = bag.valid() ? ad::add(bag, contrib) : contrib;
  }
  Var logits = ad::linear(leaves.at("cls.w"), bag, leaves.at("cls.b"));
  return PoolVars{logits, weights};
}

PoolResult attention_pool(const MilModel& m, const Tensor& z) {
  if (z.rank() != 2 || z.rows() == 0) {
    throw DomainError("attention_pool: empty bag");
  }
  if (z.cols() != m.repr_dim) {
    throw ShapeError::mismatch("attention_pool", z.shape(),
                               {z.rows(), m.repr_dim});
  }
  const std::size_t n = z.rows(), d = z.cols(), h = m.attn_hidden;
  const Tensor& v = m.params.at("attn.v");
  const Tensor& w = m.params.at("attn.w");
  const Tensor& cw = m.params.at("cls.w");
  const Tensor& cb = m.params.at("cls.b");

  // Per-patch attention scores (independent of patch order).
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r < h; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += v.at2(r, j) * z.at2(i, j);
      s += w[r] * std::tanh(acc);
    }
    scores[i] = s;
  }

  // Permutation-exact softmax: max and sorted-sum are order-independent.
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  std::vector<double> expos(n);
  for (std::size_t i = 0; i < n; ++i) expos[i] = std::exp(scores[i] - mx);
  const double denom = sorted_sum(expos);

  PoolResult out;
  out.weights = Tensor({n});
  for (std::size_t i = 0; i < n; ++i) out.weights[i] = expos[i] / denom;

  Tensor bag({d});
  std::vector<double> terms(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) terms[i] = out.weights[i] * z.at2(i, j);
    bag[j] = sorted_sum(terms);
  }

  out.logits = Tensor({m.num_classes});
  for (std::size_t c = 0; c < m.num_classes; ++c) {
    double acc = cb[c];
    for (std::size_t j = 0; j < d; ++j) acc += cw.at2(c, j) * bag[j];
    out.logits[c] = acc;
  }
  return out;
}

AugMode parse_aug_mode(const std::string& name) {
  if (name == "none") return AugMode::None;
  if (name == "prs") return AugMode::Prs;
  if (name == "random-perturb") return AugMode::RandomPerturb;
  if (name == "mc-discard") return AugMode::McDiscard;
  throw DomainError("unknown augmentation mode '" + name +
                    "'; valid modes: none, prs, random-perturb, mc-discard");
}

const char* aug_mode_name(AugMode mode) {
  switch (mode) {
    case AugMode::None: return "none";
    case AugMode::Prs: return "prs";
    case AugMode::RandomPerturb: return "random-perturb";
    default: return "mc-discard";
  }
}

Tensor baseline_augment(const Tensor& z, AugMode mode, double perturb_scale,
                        double keep_prob, Rng& rng) {
  if (z.rank() != 2 || z.rows() == 0) {
    throw DomainError("baseline_augment: need a non-empty n x D matrix");
  }
  switch (mode) {
    case AugMode::None:
      return z;
    case AugMode::RandomPerturb: {
      if (perturb_scale < 0.0) {
        throw DomainError("baseline_augment: perturbation scale must be >= 0");
      }
      Tensor out = z;
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += perturb_scale * rng.normal();
      }
      return out;
    }
    case AugMode::McDiscard: {
      if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
        throw DomainError(
            "baseline_augment: keep probability must be in (0, 1]");
      }
      const std::size_t n = z.rows(), d = z.cols();
      std::vector<std::size_t> kept;
      do {
        kept.clear();
        for (std::size_t i = 0; i < n; ++i) {
          if (rng.bernoulli(keep_prob)) kept.push_back(i);
        }
      } while (kept.empty());
      Tensor out({kept.size(), d});
      for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) out.at2(i, j) = z.at2(kept[i], j);
      }
      return out;
    }
    default:
      throw DomainError("baseline_augment: prs is handled by train_mil");
  }
}

void MilConfig::validate() const {
  if (epochs == 0) throw DomainError("MilConfig: epochs must be > 0");
  if (!(lr > 0.0)) throw DomainError("MilConfig: lr must be > 0");
  if (attn_hidden == 0) throw DomainError("MilConfig: attn_hidden must be > 0");
  if (perturb_scale < 0.0) {
    throw DomainError("MilConfig: perturb_scale must be >= 0");
  }
  if (!(discard_keep > 0.0 && discard_keep <= 1.0)) {
    throw DomainError("MilConfig: discard_keep must be in (0, 1]");
  }
}

SplitMap split_map_of(const data::Dataset& ds) {
  SplitMap m;
  for (const data::ImageBag& b : ds.bags) m[b.id] = b.split;
  return m;
}

namespace {

Tensor training_representations(const prs::PrsStore& store,
                                const std::string& bag_id, AugMode mode,
                                const MilConfig& cfg, prs::StoreSampler& sampler,
                                Rng& aug_rng, Rng& prompt_rng) {
  switch (mode) {
    case AugMode::None:
      return prs::mean_bag(store, bag_id);
    case AugMode::Prs: {
      if (!cfg.per_patch_prompts) {
        const aug::Prompt p = aug::sample_prompt(prompt_rng);
        return sampler.sample(bag_id, p, !cfg.literal_sigma);
      }
      // Per-patch prompts: an independent prompt and noise row per patch.
      const prs::BagEntry& bag = store.bag(bag_id);
      const std::size_t n = bag.patches.size(), d = store.repr_dim;
      Tensor z({n, d});
      for (std::size_t i = 0; i < n; ++i) {
        const aug::Prompt p = aug::sample_prompt(prompt_rng);
        const std::vector<double> m_p =
            cfg.literal_sigma ? std::vector<double>(d, 1.0)
                              : store.prompted_mask(p);
        for (std::size_t j = 0; j < d; ++j) {
          const double sigma_p =
              static_cast<double>(bag.patches[i].sigma[j]) * m_p[j];
          z.at2(i, j) =
              static_cast<double>(bag.patches[i].mu[j]) +
              sigma_p * prompt_rng.normal();
        }
      }
      return z;
    }
    default:
      return baseline_augment(prs::mean_bag(store, bag_id), mode,
                              cfg.perturb_scale, cfg.discard_keep, aug_rng);
  }
}

std::uint64_t mil_stream(std::uint64_t seed, const char* tag) {
  return derive_seed(seed, hash_string(tag));
}

}  // namespace

TrainedMil train_mil(const prs::PrsStore& store, const SplitMap& splits,
                     const MilConfig& cfg, AugMode mode) {
  cfg.validate();

  std::vector<const prs::BagEntry*> train_bags;
  std::size_t num_classes = 0;
  for (const prs::BagEntry& bag : store.bags) {
    const auto it = splits.find(bag.id);
    if (it == splits.end()) {
      throw DomainError("train_mil: no split/label entry for bag '" + bag.id +
                        "'");
    }
    num_classes = std::max<std::size_t>(num_classes, bag.label + 1);
    if (it->second == data::Split::Train) train_bags.push_back(&bag);
  }
  if (train_bags.empty()) throw DomainError("train_mil: empty training split");
  if (num_classes < 2) throw DomainError("train_mil: need at least 2 classes");

  Rng init_rng(mil_stream(cfg.seed, "mil-init"));
  MilModel model =
      MilModel::init(store.repr_dim, cfg.attn_hidden, num_classes, init_rng);
  prs::StoreSampler sampler(store, mil_stream(cfg.seed, "prs"));

  TrainedMil best;
  best.model = model;
  best.best_val_accuracy = -1.0;

  const bool have_val = [&] {
    for (const auto& [id, s] : splits) {
      if (s == data::Split::Val && store.has_bag(id)) return true;
    }
    return false;
  }();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_bags.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(derive_seed(mil_stream(cfg.seed, "order"), epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[order_rng.uniform_index(i + 1)]);
    }

    for (std::size_t idx : order) {
      const prs::BagEntry& bag = *train_bags[idx];
      Rng aug_rng(derive_seed(mil_stream(cfg.seed, "aug"), epoch,
                              hash_string(bag.id)));
      Rng prompt_rng(derive_seed(mil_stream(cfg.seed, "prompt"), epoch,
                                 hash_string(bag.id)));
      const Tensor z = training_representations(store, bag.id, mode, cfg,
                                                sampler, aug_rng, prompt_rng);

      Tape tape;
      LeafMap leaves = model::make_leaves(tape, model.params, true);
      PoolVars pooled = attention_forward(tape, leaves, z);
      Var ce = ad::sub(ad::logsumexp(pooled.logits),
                       ad::element(pooled.logits, bag.label));
      tape.backward(ce);
      for (auto& item : model.params.items()) {
        const Tensor& g = tape.grad(leaves.at(item.name));
        for (std::size_t k = 0; k < item.value.size(); ++k) {
          item.value[k] -= cfg.lr * g[k];
        }
      }
    }

    if (have_val) {
      const metrics::Metrics val =
          evaluate(model, store, splits, data::Split::Val);
      if (val.acc >= best.best_val_accuracy) {
        best.best_val_accuracy = val.acc;
        best.best_epoch = epoch;
        best.model = model;
      }
    }
  }

  if (!have_val) {
    best.model = model;
    best.best_epoch = cfg.epochs - 1;
  }
  return best;
}

void save_mil_model(const MilModel& m, const std::string& path) {
  binio::Writer w;
  w.bytes("PRML", 4);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(m.repr_dim));
  w.u32(static_cast<std::uint32_t>(m.attn_hidden));
  w.u32(static_cast<std::uint32_t>(m.num_classes));
  w.u32(static_cast<std::uint32_t>(m.params.size()));
  for (const auto& item : m.params.items()) {
    w.u16(static_cast<std::uint16_t>(item.name.size()));
    w.str(item.name);
    w.u8(static_cast<std::uint8_t>(item.value.rank()));
    for (std::size_t dim : item.value.shape()) {
      w.u32(static_cast<std::uint32_t>(dim));
    }
    for (double v : item.value.values()) w.f64(v);
  }
  binio::write_file(path, w.buffer());
}

MilModel load_mil_model(const std::string& path) {
  const auto buf = binio::read_file(path);
  binio::Reader r(buf.data(), buf.size(), path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "PRML", 4) != 0) r.fail("bad magic (expected PRML)");
  const std::uint32_t version = r.u32();
  if (version != 1) r.fail("unsupported model version");
  MilModel m;
  m.repr_dim = r.u32();
  m.attn_hidden = r.u32();
  m.num_classes = r.u32();
  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    Tensor tensor(shape);
    for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] = r.f64();
    tensor.set_requires_grad(true);
    m.params.add(name, std::move(tensor));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after model payload");
  return m;
}

metrics::Metrics evaluate(const MilModel& m, const prs::PrsStore& store,
                          const SplitMap& splits, data::Split split) {
  std::vector<const prs::BagEntry*> bags;
  for (const prs::BagEntry& bag : store.bags) {
    const auto it = splits.find(bag.id);
    if (it == splits.end()) {
      throw DomainError("evaluate: no split entry for bag '" + bag.id + "'");
    }
    if (it->second == split) bags.push_back(&bag);
  }
  if (bags.empty()) throw DomainError("evaluate: empty split");

  const std::size_t n = bags.size(), c = m.num_classes;
  Tensor probs({n, c});
  std::vector<int> labels(n), predicted(n);
  kernels::parallel_for(n, [&](std::size_t i) {
    const PoolResult pooled = attention_pool(m, prs::mean_bag(store, bags[i]->id));
    double mx = pooled.logits[0];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, pooled.logits[k]);
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      probs.at2(i, k) = std::exp(pooled.logits[k] - mx);
      denom += probs.at2(i, k);
    }
    int arg = 0;
    for (std::size_t k = 0; k < c; ++k) {
      probs.at2(i, k) /= denom;
      if (probs.at2(i, k) > probs.at2(i, static_cast<std::size_t>(arg))) {
        arg = static_cast<int>(k);
      }
    }
    labels[i] = static_cast<int>(bags[i]->label);
    predicted[i] = arg;
  });

  bool single_class = true;
  for (std::size_t i = 1; i < n; ++i) {
    if (labels[i] != labels[0]) single_class = false;
  }
  if (single_class) {
    throw DomainError("evaluate: AUC undefined on a single-class split");
  }

  metrics::Metrics out;
  out.auc = metrics::micro_auc(probs, labels);
  out.f1 = metrics::macro_f1(predicted, labels, c);
  out.acc = metrics::accuracy(predicted, labels);
  return out;
}

}  // namespace prdl::mil
