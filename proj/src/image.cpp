#include "prdl/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "prdl/errors.hpp"

namespace prdl::img {

void ToyImage::clamp01() {
  for (double& v : values_) v = std::clamp(v, 0.0, 1.0);
}

void write_ppm(const ToyImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError::at(path, "cannot open for writing");
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> bytes;
  bytes.reserve(img.values().size());
  for (double v : img.values()) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    bytes.push_back(static_cast<unsigned char>(q));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError::at(path, "short write");
}

ToyImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError::at(path, "cannot open for reading");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError::at(path, "not a binary PPM (P6)");
  long w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0) throw IoError::at(path, "bad PPM header");
  if (maxval != 255) throw IoError::at(path, "unsupported maxval");
  in.get();  // single whitespace after header
  ToyImage img(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
  std::vector<unsigned char> bytes(img.values().size());
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw IoError::at(path, "truncated pixel data");
  }
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img.values()[i] = static_cast<double>(bytes[i]) / 255.0;
  }
  return img;
}

}  // namespace prdl::img
