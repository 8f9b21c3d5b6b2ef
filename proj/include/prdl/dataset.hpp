#ifndef PRDL_DATASET_HPP
#define PRDL_DATASET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "prdl/image.hpp"

namespace prdl::data {

enum class Split { Train, Val, Test };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct ImageBag {
  std::string id;
  std::uint32_t label = 0;
  Split split = Split::Train;
  std::vector<img::ToyImage> patches;
};

struct Dataset {
  std::vector<ImageBag> bags;

  std::vector<const ImageBag*> in_split(Split s) const;
  std::vector<img::ToyImage> split_patch_pool(Split s) const;
};

// Directory layout: bags/<bag_id>/<patch_idx>.ppm (binary PPM, 8-bit),
// labels.csv (bag_id,label) and splits.csv (bag_id,split).
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

}  // namespace prdl::data

#endif  // PRDL_DATASET_HPP
