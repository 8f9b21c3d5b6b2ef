#ifndef PRDL_PRS_STORE_HPP
#define PRDL_PRS_STORE_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "prdl/augment.hpp"
#include "prdl/autodiff.hpp"
#include "prdl/dataset.hpp"
#include "prdl/model.hpp"

namespace prdl::prs {

// Per-patch Gaussian, stored at f32 precision; all sampling math promotes
// to f64.
struct PatchRecord {
  std::vector<float> mu;
  std::vector<float> sigma;
};

struct BagEntry {
  std::string id;
  std::uint32_t label = 0;
  std::vector<PatchRecord> patches;
};

class PrsStore {
 public:
  std::uint32_t repr_dim = 0;  // D
  std::uint32_t num_ops = 0;   // K
  std::vector<float> mask;     // K x D, row-major, entries in (0,1)
  std::vector<BagEntry> bags;

  void rebuild_index();
  bool has_bag(const std::string& id) const;
  const BagEntry& bag(const std::string& id) const;  // unknown id throws

  double mask_at(std::size_t k, std::size_t d) const {
    return static_cast<double>(mask[k * repr_dim + d]);
  }

  // Prompted mask row in f64: mean of the selected mask rows.
  std::vector<double> prompted_mask(const aug::Prompt& p) const;

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

// One (mu, sigma) per patch through the distribution estimator; patches are
// resized to the canonical encoder input when needed. M is copied from the
// checkpoint's sigmoid(U).
PrsStore extract_distributions(const model::PrdlModel& m,
                               const data::Dataset& ds);

// Binary format, little-endian:
//   "PRSD" | version u32 | D u32 | K u32 | M as KxD f32 | bag_count u32 |
//   per bag: id_len u16, id, label u32, patch_count u32,
//            patches as (mu: D f32, sigma: D f32) |
//   crc32 u32 over all preceding bytes.
// Patch records have a fixed stride of 8*D bytes, so every record offset is
// computable from the bag headers without reading payloads.
void save_store(const PrsStore& store, const std::string& path);
PrsStore load_store(const std::string& path);

// Bag payload offsets computed from headers alone (patch i of a bag lives at
// payload_offset + i * record_stride). Skips every payload while scanning.
struct BagLocation {
  std::string id;
  std::uint32_t patch_count = 0;
  std::size_t payload_offset = 0;
  std::size_t record_stride = 0;
};
std::vector<BagLocation> locate_bags(const std::string& path);

// Fresh reparameterized sample per patch: row i = mu_i + sigma_p_i (.) eps.
// With use_prompt_mask=false the raw sigma is used instead of sigma (.) m_p.
ad::Tensor sample_bag(const PrsStore& store, const std::string& bag_id,
                      const aug::Prompt& prompt, Rng& rng,
                      bool use_prompt_mask = true);

// Stored means, verbatim (inference path; never samples).
ad::Tensor mean_bag(const PrsStore& store, const std::string& bag_id);

// Derives an independent stream per (seed, bag, call) so concurrent readers
// and reruns are reproducible.
class StoreSampler {
 public:
  StoreSampler(const PrsStore& store, std::uint64_t seed)
      : store_(store), seed_(seed) {}

  ad::Tensor sample(const std::string& bag_id, const aug::Prompt& prompt,
                    bool use_prompt_mask = true);

 private:
  const PrsStore& store_;
  std::uint64_t seed_;
  std::unordered_map<std::string, std::uint64_t> counters_;
};

}  // namespace prdl::prs

#endif  // PRDL_PRS_STORE_HPP
