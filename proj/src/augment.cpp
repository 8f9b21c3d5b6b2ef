#include "prdl/augment.hpp"

#include <algorithm>
#include <cmath>

#include "prdl/errors.hpp"

namespace prdl::aug {

const char* operator_name(std::size_t k) {
  static const char* names[kNumOperators] = {"ResizedCrop",  "HorizontalFlip",
                                             "ColorJitter",  "Grayscale",
                                             "GaussianBlur", "Solarization"};
  if (k >= kNumOperators) throw DomainError("operator_name: bad index");
  return names[k];
}

Prompt sample_prompt(Rng& rng) {
  Prompt p;
  do {
    for (std::size_t k = 0; k < kNumOperators; ++k) {
      p.bits[k] = rng.bernoulli(0.5) ? 1 : 0;
    }
  } while (!p.any());
  return p;
}

namespace {

double luma(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double maxc = std::max({r, g, b});
  const double minc = std::min({r, g, b});
  v = maxc;
  const double d = maxc - minc;
  s = maxc == 0.0 ? 0.0 : d / maxc;
  if (d == 0.0) {
    h = 0.0;
    return;
  }
  if (maxc == r) {
    h = (g - b) / d;
  } else if (maxc == g) {
    h = (b - r) / d + 2.0;
  } else {
    h = (r - g) / d + 4.0;
  }
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = h - std::floor(h);  // wrap into [0,1)
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace

img::ToyImage resize_bilinear(const img::ToyImage& src, std::size_t out_w,
                              std::size_t out_h) {
  img::ToyImage dst(out_w, out_h);
  const double sx_scale = static_cast<double>(src.width()) / out_w;
  const double sy_scale = static_cast<double>(src.height()) / out_h;
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    double sy = (oy + 0.5) * sy_scale - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(src.height() - 1));
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, src.height() - 1);
    const double fy = sy - y0;
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double sx = (ox + 0.5) * sx_scale - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(src.width() - 1));
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, src.width() - 1);
      const double fx = sx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double top =
            src.at(x0, y0, c) * (1.0 - fx) + src.at(x1, y0, c) * fx;
        const double bot =
            src.at(x0, y1, c) * (1.0 - fx) + src.at(x1, y1, c) * fx;
        dst.at(ox, oy, c) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  dst.clamp01();
  return dst;
}

img::ToyImage horizontal_flip(const img::ToyImage& src) {
  img::ToyImage dst(src.width(), src.height());
  for (std::size_t y = 0; y < src.height(); ++y)
    for (std::size_t x = 0; x < src.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c)
        dst.at(x, y, c) = src.at(src.width() - 1 - x, y, c);
  return dst;
}

img::ToyImage grayscale(const img::ToyImage& src) {
  img::ToyImage dst(src.width(), src.height());
  for (std::size_t y = 0; y < src.height(); ++y)
    for (std::size_t x = 0; x < src.width(); ++x) {
      const double g = luma(src.at(x, y, 0), src.at(x, y, 1), src.at(x, y, 2));
      for (std::size_t c = 0; c < 3; ++c) dst.at(x, y, c) = g;
    }
  dst.clamp01();
  return dst;
}

img::ToyImage solarize(const img::ToyImage& src, double threshold) {
  img::ToyImage dst = src;
  for (double& v : dst.values()) {
    if (v > threshold) v = 1.0 - v;
  }
  return dst;
}

img::ToyImage gaussian_blur3(const img::ToyImage& src, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_blur3: sigma must be > 0");
  double w[3][3];
  double total = 0.0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const double e = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[dy + 1][dx + 1] = e;
      total += e;
    }
  for (auto& row : w)
    for (double& v : row) v /= total;

  img::ToyImage dst(src.width(), src.height());
  const long wmax = static_cast<long>(src.width()) - 1;
  const long hmax = static_cast<long>(src.height()) - 1;
  for (std::size_t y = 0; y < src.height(); ++y)
    for (std::size_t x = 0; x < src.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const long sx = std::clamp(static_cast<long>(x) + dx, 0L, wmax);
            const long sy = std::clamp(static_cast<long>(y) + dy, 0L, hmax);
            acc += w[dy + 1][dx + 1] *
                   src.at(static_cast<std::size_t>(sx),
                          static_cast<std::size_t>(sy), c);
          }
        dst.at(x, y, c) = acc;
      }
  dst.clamp01();
  return dst;
}

JitterFactors draw_jitter(Rng& rng) {
  JitterFactors f;
  f.brightness = rng.uniform(0.6, 1.4);
  f.contrast = rng.uniform(0.6, 1.4);
  f.saturation = rng.uniform(0.8, 1.2);
  f.hue_shift = rng.uniform(-0.1, 0.1);
  return f;
}

img::ToyImage color_jitter(const img::ToyImage& src, const JitterFactors& f) {
  img::ToyImage out = src;

  if (f.brightness != 1.0) {
    for (double& v : out.values()) v *= f.brightness;
    out.clamp01();
  }

  if (f.contrast != 1.0) {
    double mean = 0.0;
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t x = 0; x < out.width(); ++x)
        mean += luma(out.at(x, y, 0), out.at(x, y, 1), out.at(x, y, 2));
    mean /= static_cast<double>(out.pixel_count());
    for (double& v : out.values()) v = mean + f.contrast * (v - mean);
    out.clamp01();
  }

  if (f.saturation != 1.0) {
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t x = 0; x < out.width(); ++x) {
        const double g =
            luma(out.at(x, y, 0), out.at(x, y, 1), out.at(x, y, 2));
        for (std::size_t c = 0; c < 3; ++c) {
          out.at(x, y, c) = g + f.saturation * (out.at(x, y, c) - g);
        }
      }
    out.clamp01();
  }

  if (f.hue_shift != 0.0) {
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t x = 0; x < out.width(); ++x) {
        double h, s, v;
        rgb_to_hsv(out.at(x, y, 0), out.at(x, y, 1), out.at(x, y, 2), h, s, v);
        double r, g, b;
        hsv_to_rgb(h + f.hue_shift, s, v, r, g, b);
        out.at(x, y, 0) = r;
        out.at(x, y, 1) = g;
        out.at(x, y, 2) = b;
      }
    out.clamp01();
  }

  return out;
}

img::ToyImage random_resized_crop(const img::ToyImage& src, Rng& rng,
                                  double area_lo, double area_hi,
                                  std::size_t out_size) {
  const double fraction = rng.uniform(area_lo, area_hi);
  const double side = std::sqrt(fraction);
  const auto crop_w = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::round(side * src.width())));
  const auto crop_h = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::round(side * src.height())));
  const std::size_t cw = std::min(crop_w, src.width());
  const std::size_t ch = std::min(crop_h, src.height());
  const std::size_t x0 = rng.uniform_index(src.width() - cw + 1);
  const std::size_t y0 = rng.uniform_index(src.height() - ch + 1);

  img::ToyImage crop(cw, ch);
  for (std::size_t y = 0; y < ch; ++y)
    for (std::size_t x = 0; x < cw; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        crop.at(x, y, c) = src.at(x0 + x, y0 + y, c);
  return resize_bilinear(crop, out_size, out_size);
}

PreAugmentParams draw_pre_augment(Rng& rng) {
  PreAugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.jitter = draw_jitter(rng);
  p.to_gray = rng.bernoulli(0.2);
  return p;
}

img::ToyImage apply_pre_augment(const img::ToyImage& src,
                                const PreAugmentParams& p) {
  img::ToyImage out = src;
  if (p.flip) out = horizontal_flip(out);
  out = color_jitter(out, p.jitter);
  if (p.to_gray) out = grayscale(out);
  return out;
}

img::ToyImage pre_augment(const img::ToyImage& src, Rng& rng) {
  return apply_pre_augment(src, draw_pre_augment(rng));
}

img::ToyImage apply_operator(const img::ToyImage& src, std::size_t op_index,
                             Rng& rng, double area_lo, double area_hi,
                             std::size_t crop_out) {
  switch (op_index) {
    case kResizedCrop:
      return random_resized_crop(src, rng, area_lo, area_hi, crop_out);
    case kHorizontalFlip:
      return horizontal_flip(src);
    case kColorJitter:
      return color_jitter(src, draw_jitter(rng));
    case kGrayscale:
      return grayscale(src);
    case kGaussianBlur:
      return gaussian_blur3(src, rng.uniform(0.1, 2.0));
    case kSolarization:
      return solarize(src);
    default:
      throw DomainError("apply_operator: invalid operator index " +
                        std::to_string(op_index));
  }
}

View compose_view(const img::ToyImage& pre_augmented, const Prompt& p,
                  ViewKind kind, Rng& rng) {
  if (!p.any()) throw DomainError("compose_view: all-zero prompt");

  const bool local = kind == ViewKind::Local;
  const std::size_t target = local ? kLocalSize : kGlobalSize;
  const double area_lo = local ? kLocalAreaLo : kGlobalAreaLo;
  const double area_hi = local ? kLocalAreaHi : kGlobalAreaHi;

  img::ToyImage out =
      p.active(kResizedCrop)
          ? random_resized_crop(pre_augmented, rng, area_lo, area_hi, target)
          : resize_bilinear(pre_augmented, target, target);

  for (std::size_t k = kHorizontalFlip; k < kNumOperators; ++k) {
    if (p.active(k)) out = apply_operator(out, k, rng);
  }
  if (local) out = resize_bilinear(out, kGlobalSize, kGlobalSize);

  return View{std::move(out), kind, p};
}

}  // namespace prdl::aug
