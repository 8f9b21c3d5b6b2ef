#ifndef PRDL_AUGMENT_HPP
#define PRDL_AUGMENT_HPP

#include <array>
#include <cstdint>
#include <string>

#include "prdl/image.hpp"
#include "prdl/rng.hpp"

namespace prdl::aug {

// Canonical operator order; prompt bit k gates operator k.
inline constexpr std::size_t kNumOperators = 6;
enum Operator : std::size_t {
  kResizedCrop = 0,
  kHorizontalFlip = 1,
  kColorJitter = 2,
  kGrayscale = 3,
  kGaussianBlur = 4,
  kSolarization = 5,
};
const char* operator_name(std::size_t k);

// Encoder input is 16x16; local crops are taken at 8x8 and upsampled.
inline constexpr std::size_t kGlobalSize = 16;
inline constexpr std::size_t kLocalSize = 8;

inline constexpr double kGlobalAreaLo = 0.4;
inline constexpr double kGlobalAreaHi = 1.0;
inline constexpr double kLocalAreaLo = 0.05;
inline constexpr double kLocalAreaHi = 0.4;

// Binary selector over the K operators; all-zero prompts are invalid.
struct Prompt {
  std::array<std::uint8_t, kNumOperators> bits{};

  bool active(std::size_t k) const { return bits[k] != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  bool any() const { return count() > 0; }

  static Prompt single(std::size_t k) {
    Prompt p;
    p.bits[k] = 1;
    return p;
  }
  static Prompt all_ones() {
    Prompt p;
    p.bits.fill(1);
    return p;
  }
  bool operator==(const Prompt&) const = default;
};

// Each bit is an independent fair coin; all-zero draws are rejected and
// redrawn so every returned prompt selects at least one operator.
Prompt sample_prompt(Rng& rng);

enum class ViewKind { Global, Local };

struct View {
  img::ToyImage image;  // always kGlobalSize x kGlobalSize
  ViewKind kind = ViewKind::Global;
  Prompt prompt;
};

// ---- deterministic building blocks -----------------------------------------

img::ToyImage resize_bilinear(const img::ToyImage& src, std::size_t out_w,
                              std::size_t out_h);
img::ToyImage horizontal_flip(const img::ToyImage& src);
img::ToyImage grayscale(const img::ToyImage& src);
img::ToyImage solarize(const img::ToyImage& src, double threshold = 0.5);
img::ToyImage gaussian_blur3(const img::ToyImage& src, double sigma);

// Fixed application order: brightness, contrast, saturation, hue. Contrast
// blends toward the per-image mean luma; hue shifts in HSV space.
struct JitterFactors {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue_shift = 0.0;
  static JitterFactors identity() { return {}; }
};
JitterFactors draw_jitter(Rng& rng);  // strengths (0.4, 0.4, 0.2, 0.1)
img::ToyImage color_jitter(const img::ToyImage& src, const JitterFactors& f);

// Area fraction drawn uniformly in [area_lo, area_hi]; both crop sides are
// scaled by sqrt(fraction), position uniform, then bilinear resize.
img::ToyImage random_resized_crop(const img::ToyImage& src, Rng& rng,
                                  double area_lo, double area_hi,
                                  std::size_t out_size);

// ---- spec operations ---------------------------------------------------------

struct PreAugmentParams {
  bool flip = false;
  JitterFactors jitter;
  bool to_gray = false;
};
PreAugmentParams draw_pre_augment(Rng& rng);
img::ToyImage apply_pre_augment(const img::ToyImage& src,
                                const PreAugmentParams& p);

// Random flip (p=0.5), color jitter (0.4, 0.4, 0.2, 0.1), random grayscale
// (p=0.2); size preserved.
img::ToyImage pre_augment(const img::ToyImage& src, Rng& rng);

// Applies one operator by index. ResizedCrop uses the global area range and
// output size unless overridden.
img::ToyImage apply_operator(const img::ToyImage& src, std::size_t op_index,
                             Rng& rng, double area_lo = kGlobalAreaLo,
                             double area_hi = kGlobalAreaHi,
                             std::size_t crop_out = kGlobalSize);

// Applies the prompt's active operators in canonical order. When the
// ResizedCrop bit is off the geometry stage is a deterministic resize to the
// kind's size. Local views are produced at kLocalSize and upsampled.
View compose_view(const img::ToyImage& pre_augmented, const Prompt& p,
                  ViewKind kind, Rng& rng);

}  // namespace prdl::aug

#endif  // PRDL_AUGMENT_HPP
