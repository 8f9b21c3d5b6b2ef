#ifndef PRDL_IMAGE_HPP
#define PRDL_IMAGE_HPP

#include <cstddef>
#include <string>
#include <vector>

namespace prdl::img {

// Small RGB image, interleaved row-major, channel values in [0, 1].
class ToyImage {
 public:
  ToyImage() = default;
  ToyImage(std::size_t width, std::size_t height)
      : width_(width), height_(height), values_(width * height * 3, 0.0) {}

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t pixel_count() const { return width_ * height_; }

  double& at(std::size_t x, std::size_t y, std::size_t c) {
    return values_[(y * width_ + x) * 3 + c];
  }
  double at(std::size_t x, std::size_t y, std::size_t c) const {
    return values_[(y * width_ + x) * 3 + c];
  }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  void clamp01();

  bool operator==(const ToyImage& o) const {
    return width_ == o.width_ && height_ == o.height_ && values_ == o.values_;
  }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> values_;
};

// Binary PPM (P6, maxval 255). Values are quantized with round(v * 255).
void write_ppm(const ToyImage& img, const std::string& path);
ToyImage read_ppm(const std::string& path);

}  // namespace prdl::img

#endif  // PRDL_IMAGE_HPP
