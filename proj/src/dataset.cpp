#include "prdl/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "prdl/errors.hpp"

namespace prdl::data {

namespace fs = std::filesystem;

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DomainError("unknown split '" + s + "'");
}

std::vector<const ImageBag*> Dataset::in_split(Split s) const {
  std::vector<const ImageBag*> out;
  for (const ImageBag& b : bags) {
    if (b.split == s) out.push_back(&b);
  }
  return out;
}

std::vector<img::ToyImage> Dataset::split_patch_pool(Split s) const {
  std::vector<img::ToyImage> pool;
  for (const ImageBag& b : bags) {
    if (b.split != s) continue;
    pool.insert(pool.end(), b.patches.begin(), b.patches.end());
  }
  return pool;
}

void write_dataset(const Dataset& ds, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root / "bags");

  std::ofstream labels(root / "labels.csv");
  if (!labels) throw IoError::at((root / "labels.csv").string(), "cannot open");
  labels << "bag_id,label\n";
  std::ofstream splits(root / "splits.csv");
  if (!splits) throw IoError::at((root / "splits.csv").string(), "cannot open");
  splits << "bag_id,split\n";

  for (const ImageBag& bag : ds.bags) {
    const fs::path bag_dir = root / "bags" / bag.id;
    fs::create_directories(bag_dir);
    for (std::size_t i = 0; i < bag.patches.size(); ++i) {
      img::write_ppm(bag.patches[i],
                     (bag_dir / (std::to_string(i) + ".ppm")).string());
    }
    labels << bag.id << "," << bag.label << "\n";
    splits << bag.id << "," << split_name(bag.split) << "\n";
  }
  if (!labels || !splits) throw IoError::at(dir, "metadata write failure");
}

namespace {

std::map<std::string, std::string> read_csv_pairs(const std::string& path,
                                                  const std::string& header) {
  std::ifstream in(path);
  if (!in) throw IoError::at(path, "cannot open");
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw IoError::at(path, "expected header '" + header + "'");
  }
  std::map<std::string, std::string> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IoError::at(path, "malformed row '" + line + "'");
    out[line.substr(0, comma)] = line.substr(comma + 1);
  }
  return out;
}

}  // namespace

Dataset read_dataset(const std::string& dir) {
  const fs::path root(dir);
  const auto labels = read_csv_pairs((root / "labels.csv").string(), "bag_id,label");
  const auto splits = read_csv_pairs((root / "splits.csv").string(), "bag_id,split");

  Dataset ds;
  for (const auto& [bag_id, label_str] : labels) {
    ImageBag bag;
    bag.id = bag_id;
    try {
      bag.label = static_cast<std::uint32_t>(std::stoul(label_str));
    } catch (const std::exception&) {
      throw IoError::at((root / "labels.csv").string(),
                        "bad label '" + label_str + "' for bag " + bag_id);
    }
    const auto split_it = splits.find(bag_id);
    if (split_it == splits.end()) {
      throw IoError::at((root / "splits.csv").string(),
                        "missing split for bag " + bag_id);
    }
    bag.split = parse_split(split_it->second);

    const fs::path bag_dir = root / "bags" / bag_id;
    if (!fs::is_directory(bag_dir)) {
      throw IoError::at(bag_dir.string(), "missing bag directory");
    }
    std::vector<std::size_t> indices;
    for (const auto& entry : fs::directory_iterator(bag_dir)) {
      const std::string stem = entry.path().stem().string();
      if (entry.path().extension() != ".ppm") continue;
      try {
        indices.push_back(std::stoul(stem));
      } catch (const std::exception&) {
        throw IoError::at(entry.path().string(), "non-numeric patch filename");
      }
    }
    std::sort(indices.begin(), indices.end());
    for (std::size_t idx : indices) {
      bag.patches.push_back(
          img::read_ppm((bag_dir / (std::to_string(idx) + ".ppm")).string()));
    }
    if (bag.patches.empty()) {
      throw IoError::at(bag_dir.string(), "bag has no patches");
    }
    ds.bags.push_back(std::move(bag));
  }
  if (ds.bags.empty()) throw IoError::at(dir, "dataset has no bags");
  return ds;
}

}  // namespace prdl::data
