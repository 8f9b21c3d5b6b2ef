#include "prdl/prs_store.hpp"

#include <zlib.h>

#include <cmath>

#include "prdl/binio.hpp"
#include "prdl/kernels.hpp"

namespace prdl::prs {

using ad::Tensor;

void PrsStore::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < bags.size(); ++i) {
    if (!index_.emplace(bags[i].id, i).second) {
      throw DomainError("PrsStore: duplicate bag id '" + bags[i].id + "'");
    }
  }
}

bool PrsStore::has_bag(const std::string& id) const {
  return index_.count(id) != 0;
}

const BagEntry& PrsStore::bag(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw DomainError("PrsStore: unknown bag '" + id + "'");
  }
  return bags[it->second];
}

std::vector<double> PrsStore::prompted_mask(const aug::Prompt& p) const {
  if (!p.any()) throw DomainError("prompted_mask: all-zero prompt");
  std::vector<double> m(repr_dim, 0.0);
  for (std::size_t k = 0; k < num_ops; ++k) {
    if (!p.active(k)) continue;
    for (std::size_t d = 0; d < repr_dim; ++d) m[d] += mask_at(k, d);
  }
  const double inv = 1.0 / static_cast<double>(p.count());
  for (double& v : m) v *= inv;
  return m;
}

PrsStore extract_distributions(const model::PrdlModel& m,
                               const data::Dataset& ds) {
  PrsStore store;
  store.repr_dim = static_cast<std::uint32_t>(m.dims.repr_dim);
  store.num_ops = static_cast<std::uint32_t>(m.dims.num_ops);

  const Tensor mask = model::mask_matrix(m.student.at("mask.u"));
  store.mask.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    store.mask[i] = static_cast<float>(mask[i]);
  }

  store.bags.resize(ds.bags.size());
  kernels::parallel_for(ds.bags.size(), [&](std::size_t b) {
    const data::ImageBag& bag = ds.bags[b];
    BagEntry entry;
    entry.id = bag.id;
    entry.label = bag.label;
    entry.patches.reserve(bag.patches.size());
    for (const img::ToyImage& patch : bag.patches) {
      const img::ToyImage canon =
          (patch.width() == aug::kGlobalSize &&
           patch.height() == aug::kGlobalSize)
              ? patch
              : aug::resize_bilinear(patch, aug::kGlobalSize, aug::kGlobalSize);
      const model::ReprDistribution dist =
          model::estimate_distribution(m.student, m.dims, canon);
      PatchRecord rec;
      rec.mu.resize(dist.mu.size());
      rec.sigma.resize(dist.sigma.size());
      for (std::size_t d = 0; d < dist.mu.size(); ++d) {
        rec.mu[d] = static_cast<float>(dist.mu[d]);
        rec.sigma[d] = static_cast<float>(dist.sigma[d]);
      }
      entry.patches.push_back(std::move(rec));
    }
    store.bags[b] = std::move(entry);
  });
  store.rebuild_index();
  return store;
}

namespace {

constexpr char kMagic[4] = {'P', 'R', 'S', 'D'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t crc_of(const std::uint8_t* data, std::size_t size) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data),
              static_cast<uInt>(size)));
}

}  // namespace

void save_store(const PrsStore& store, const std::string& path) {
  binio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(store.repr_dim);
  w.u32(store.num_ops);
  for (float v : store.mask) w.f32(v);
  w.u32(static_cast<std::uint32_t>(store.bags.size()));
  for (const BagEntry& bag : store.bags) {
    w.u16(static_cast<std::uint16_t>(bag.id.size()));
    w.str(bag.id);
    w.u32(bag.label);
    w.u32(static_cast<std::uint32_t>(bag.patches.size()));
    for (const PatchRecord& rec : bag.patches) {
      for (float v : rec.mu) w.f32(v);
      for (float v : rec.sigma) w.f32(v);
    }
  }
  const std::uint32_t crc = crc_of(w.buffer().data(), w.size());
  w.u32(crc);
  binio::write_file(path, w.buffer());
}

PrsStore load_store(const std::string& path) {
  const auto buf = binio::read_file(path);
  if (buf.size() < 4 + 4 + 4 + 4 + 4 + 4) {
    throw IoError::at(path, "file too small for a PRSD store");
  }

  // Checksum first: a corrupted or truncated file never yields a partial
  // store.
  binio::Reader crc_reader(buf.data() + buf.size() - 4, 4, path);
  const std::uint32_t stored_crc = crc_reader.u32();
  const std::uint32_t actual_crc = crc_of(buf.data(), buf.size() - 4);
  if (stored_crc != actual_crc) {
    throw IoError::at(path, "checksum mismatch (stored " +
                                std::to_string(stored_crc) + ", computed " +
                                std::to_string(actual_crc) + ")");
  }

  binio::Reader r(buf.data(), buf.size() - 4, path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("bad magic (expected PRSD)");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    r.fail("unsupported store version " + std::to_string(version));
  }

  PrsStore store;
  store.repr_dim = r.u32();
  store.num_ops = r.u32();
  if (store.repr_dim == 0 || store.num_ops == 0) {
    r.fail("degenerate dimensions");
  }
  store.mask.resize(static_cast<std::size_t>(store.repr_dim) * store.num_ops);
  for (float& v : store.mask) {
    v = r.f32();
    if (!(v > 0.0f && v < 1.0f)) r.fail("mask entry outside (0,1)");
  }

  const std::uint32_t bag_count = r.u32();
  store.bags.reserve(bag_count);
  for (std::uint32_t b = 0; b < bag_count; ++b) {
    BagEntry bag;
    const std::uint16_t id_len = r.u16();
    bag.id = r.str(id_len);
    bag.label = r.u32();
    const std::uint32_t patch_count = r.u32();
    bag.patches.resize(patch_count);
    for (std::uint32_t i = 0; i < patch_count; ++i) {
      PatchRecord& p = bag.patches[i];
      p.mu.resize(store.repr_dim);
      p.sigma.resize(store.repr_dim);
      for (float& v : p.mu) v = r.f32();
      for (float& v : p.sigma) {
        v = r.f32();
        if (!(v > 0.0f)) {
          throw IoError::at(path, "non-positive sigma in bag '" + bag.id + "'");
        }
      }
    }
    store.bags.push_back(std::move(bag));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after bag table");
  store.rebuild_index();
  return store;
}

std::vector<BagLocation> locate_bags(const std::string& path) {
  const auto buf = binio::read_file(path);
  if (buf.size() < 24) throw IoError::at(path, "file too small");
  binio::Reader r(buf.data(), buf.size() - 4, path);
  r.skip(8);  // magic + version
  const std::uint32_t d = r.u32();
  const std::uint32_t k = r.u32();
  r.skip(static_cast<std::size_t>(d) * k * 4);  // mask block
  const std::uint32_t bag_count = r.u32();
  const std::size_t record_bytes = 8u * d;  // fixed per-record stride

  std::vector<BagLocation> out;
  out.reserve(bag_count);
  for (std::uint32_t b = 0; b < bag_count; ++b) {
    BagLocation loc;
    const std::uint16_t id_len = r.u16();
    loc.id = r.str(id_len);
    r.skip(4);  // label
    loc.patch_count = r.u32();
    loc.payload_offset = r.offset();
    loc.record_stride = record_bytes;
    // Jump over the payload; no per-record scan.
    r.skip(static_cast<std::size_t>(loc.patch_count) * record_bytes);
    out.push_back(std::move(loc));
  }
  return out;
}

Tensor sample_bag(const PrsStore& store, const std::string& bag_id,
                  const aug::Prompt& prompt, Rng& rng, bool use_prompt_mask) {
  if (!prompt.any()) throw DomainError("sample_bag: all-zero prompt");
  const BagEntry& bag = store.bag(bag_id);
  const std::size_t n = bag.patches.size();
  const std::size_t d = store.repr_dim;
  const std::vector<double> m_p =
      use_prompt_mask ? store.prompted_mask(prompt)
                      : std::vector<double>(d, 1.0);
  Tensor z({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const PatchRecord& rec = bag.patches[i];
    for (std::size_t j = 0; j < d; ++j) {
      const double sigma_p = static_cast<double>(rec.sigma[j]) * m_p[j];
      z.at2(i, j) = static_cast<double>(rec.mu[j]) + sigma_p * rng.normal();
    }
  }
  return z;
}

Tensor mean_bag(const PrsStore& store, const std::string& bag_id) {
  const BagEntry& bag = store.bag(bag_id);
  const std::size_t n = bag.patches.size();
  const std::size_t d = store.repr_dim;
  Tensor z({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      z.at2(i, j) = static_cast<double>(bag.patches[i].mu[j]);
    }
  }
  return z;
}

Tensor StoreSampler::sample(const std::string& bag_id,
                            const aug::Prompt& prompt, bool use_prompt_mask) {
  const std::uint64_t call = counters_[bag_id]++;
  Rng rng(derive_seed(seed_, hash_string(bag_id), call));
  return sample_bag(store_, bag_id, prompt, rng, use_prompt_mask);
}

}  // namespace prdl::prs
