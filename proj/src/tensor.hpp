#pragma once

#include <cstdint>
#include <vector>

#include "common.hpp"
#include "nn.hpp"

namespace kfwc {

// Dense CHW float image tensor, values expected in [0,1].
struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_, float fill = 0.f)
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {}

  float& at(int ch, int y, int x) { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
  float at(int ch, int y, int x) const { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
  size_t size() const { return v.size(); }
};

inline nn::FeatureMap<float> to_feature_map(const Tensor3& t) {
  nn::FeatureMap<float> f;
  f.h = t.h;
  f.w = t.w;
  f.m.resize(t.c, t.h * t.w);
  for (int ch = 0; ch < t.c; ++ch)
    for (int i = 0; i < t.h * t.w; ++i)
      f.m(ch, i) = t.v[static_cast<size_t>(ch) * t.h * t.w + i];
  return f;
}

// 8-bit interleaved image as decoded from disk; c is 1 or 3 (RGB order).
struct ImageU8 {
  int c = 0, h = 0, w = 0;
  std::vector<uint8_t> bytes;  // h*w*c, row-major, channel-interleaved

  uint8_t& at(int y, int x, int ch) { return bytes[(static_cast<size_t>(y) * w + x) * c + ch]; }
  uint8_t at(int y, int x, int ch) const { return bytes[(static_cast<size_t>(y) * w + x) * c + ch]; }
};

}  // namespace kfwc
