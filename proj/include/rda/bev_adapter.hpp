#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rda/numeric/array.hpp"
#include "rda/planeval.hpp"
#include "rda/types.hpp"

namespace rda::bev {

inline constexpr std::size_t kChannels = 4;  // occupancy, vx, vy, class flag

struct BevSpec {
  double extent = 32.0;     // metres, ego-centred square
  double resolution = 0.5;  // metres per cell

  std::size_t cells() const {
    if (!(extent > 0 && resolution > 0)) throw std::invalid_argument("BEV extent and resolution must be positive");
    const double n = extent / resolution;
    if (std::abs(n - std::round(n)) > 1e-9) throw std::invalid_argument("BEV extent must be a multiple of resolution");
    return static_cast<std::size_t>(std::llround(n));
  }
};

// data has shape {C, H, W}. Row index runs along +x (forward), column along +y.
struct BevFeature {
  nn::Array data;
  double resolution = 0.5;
  double extent = 32.0;
  std::size_t skipped = 0;  // objects wholly outside the extent

  std::size_t channels() const { return data.shape()[0]; }
  std::size_t height() const { return data.shape()[1]; }
  std::size_t width() const { return data.shape()[2]; }
  double at(std::size_t c, std::size_t r, std::size_t col) const {
    return data[(c * height() + r) * width() + col];
  }
};

inline double cell_center(std::size_t i, const BevSpec& spec) {
  return -spec.extent / 2 + (static_cast<double>(i) + 0.5) * spec.resolution;
}

inline BevFeature rasterize_scene(const std::vector<ObjectBox>& objects, const BevSpec& spec = {}) {
  const std::size_t n = spec.cells();
  BevFeature f;
  f.resolution = spec.resolution;
  f.extent = spec.extent;
  f.data = nn::Array({kChannels, n, n});
  const ObjectBox area{0.0, 0.0, spec.extent, spec.extent, 0.0};
  auto cell_index = [&](double v) {
    return (v + spec.extent / 2) / spec.resolution - 0.5;
  };
  for (const auto& o : objects) {
    if (!plan::obb_intersect(o, area)) {
      ++f.skipped;
      continue;
    }
    double lo_x = o.x, hi_x = o.x, lo_y = o.y, hi_y = o.y;
    for (auto c : plan::box_corners(o)) {
      lo_x = std::min(lo_x, c.x);
      hi_x = std::max(hi_x, c.x);
      lo_y = std::min(lo_y, c.y);
      hi_y = std::max(hi_y, c.y);
    }
    const auto clamp_idx = [&](double v) {
      return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
    };
    const std::size_t r0 = clamp_idx(std::floor(cell_index(lo_x))), r1 = clamp_idx(std::ceil(cell_index(hi_x)));
    const std::size_t c0 = clamp_idx(std::floor(cell_index(lo_y))), c1 = clamp_idx(std::ceil(cell_index(hi_y)));
    for (std::size_t r = r0; r <= r1; ++r) {
      for (std::size_t c = c0; c <= c1; ++c) {
        if (!plan::point_in_box({cell_center(r, spec), cell_center(c, spec)}, o)) continue;
        const double vals[kChannels] = {1.0, o.vx, o.vy, class_flag(o.cls)};
        for (std::size_t ch = 0; ch < kChannels; ++ch) f.data[(ch * n + r) * n + c] = vals[ch];
      }
    }
  }
  return f;
}

// Token-major layout: tokens has shape {(H/h)*(W/w), C*h*w}.
struct VisualTokens {
  nn::Array tokens;
  std::size_t h = 0, w = 0;
  std::size_t channels = 0, height = 0, width = 0;

  std::size_t count() const { return tokens.shape()[0]; }
  std::size_t dim() const { return tokens.shape()[1]; }
};

class GridError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline VisualTokens grid_flatten(const nn::Array& data, std::size_t h, std::size_t w) {
  if (data.rank() != 3) throw GridError("BEV array must have rank 3");
  const std::size_t C = data.shape()[0], H = data.shape()[1], W = data.shape()[2];
  if (h == 0 || w == 0 || H % h != 0 || W % w != 0) {
    throw GridError("grid " + std::to_string(h) + "x" + std::to_string(w) + " does not divide " +
                    std::to_string(H) + "x" + std::to_string(W));
  }
  const std::size_t gh = H / h, gw = W / w, dim = C * h * w;
  VisualTokens out{nn::Array({gh * gw, dim}), h, w, C, H, W};
  for (std::size_t i = 0; i < gh; ++i) {
    for (std::size_t j = 0; j < gw; ++j) {
      double* tok = out.tokens.data() + (i * gw + j) * dim;
      std::size_t k = 0;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) tok[k++] = data[(c * H + i * h + y) * W + j * w + x];
        }
      }
    }
  }
  return out;
}

inline VisualTokens grid_flatten(const BevFeature& bev, std::size_t h, std::size_t w) {
  return grid_flatten(bev.data, h, w);
}

inline nn::Array unflatten(const VisualTokens& v) {
  const std::size_t C = v.channels, H = v.height, W = v.width;
  if (v.h == 0 || v.w == 0 || H % v.h || W % v.w || v.count() != (H / v.h) * (W / v.w) || v.dim() != C * v.h * v.w) {
    throw GridError("visual tokens inconsistent with their grid spec");
  }
  nn::Array out({C, H, W});
  const std::size_t gw = W / v.w, dim = v.dim();
  for (std::size_t t = 0; t < v.count(); ++t) {
    const std::size_t i = t / gw, j = t % gw;
    const double* tok = v.tokens.data() + t * dim;
    std::size_t k = 0;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < v.h; ++y) {
        for (std::size_t x = 0; x < v.w; ++x) out[(c * H + i * v.h + y) * W + j * v.w + x] = tok[k++];
      }
    }
  }
  return out;
}

// Default adapter input for a scene: 64 tokens of dimension 256.
inline VisualTokens scene_tokens(const std::vector<ObjectBox>& objects, const BevSpec& spec = {}, std::size_t h = 8,
                                 std::size_t w = 8) {
  return grid_flatten(rasterize_scene(objects, spec), h, w);
}

}  // namespace rda::bev
