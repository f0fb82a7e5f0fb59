#include "explain.hpp"

#include <algorithm>
#include <cmath>

namespace kfwc::explain {

HeatMap cam_from_capture(const model::FMap& activation, const model::MatX& grad,
                         int class_id, char branch) {
  if (activation.m.rows() != grad.rows() || activation.m.cols() != grad.cols())
    throw ContractError("cam_from_capture: activation/gradient shape mismatch");
  HeatMap map;
  map.h = activation.h;
  map.w = activation.w;
  map.class_id = class_id;
  map.branch = branch;
  nn::Vec<float> weights = grad.rowwise().mean();  // (1/Z) * sum_ij
  map.channel_weights.assign(weights.data(), weights.data() + weights.size());
  nn::Vec<float> flat = activation.m.transpose() * weights;
  map.grid.resize(flat.size());
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const float v = std::max(0.f, flat[i]);
    if (!std::isfinite(v)) throw NumericError("non-finite heat map value");
    map.grid[i] = v;
  }
  return map;
}

std::pair<HeatMap, HeatMap> gradcam(const model::DiagnosisModel& m, const Tensor3& fundus,
                                    const Tensor3& oct, int class_id) {
  if (class_id < 0 || class_id >= data::kNumDiseaseClasses)
    throw ContractError("gradcam: class id out of range");
  model::Encoder::Ctx ctx_f, ctx_o;
  (void)m.scores(fundus, oct, &ctx_f, &ctx_o);
  if (!ctx_f.last_activation() || !ctx_o.last_activation())
    throw ConfigError("gradcam: trunk exposes no capturable conv activation");

  // d(score_c)/d(fused) is row c of the diagnosis head.
  nn::Vec<float> dfused = m.head.w.row(class_id).transpose();
  nn::Vec<float> dff = dfused.head(model::kFeatureDim);
  nn::Vec<float> dfo = dfused.tail(model::kFeatureDim);

  model::Encoder scratch_f = m.enc_f.clone_zero();
  model::Encoder scratch_o = m.enc_o.clone_zero();
  m.enc_f.backward(ctx_f, dff, scratch_f, /*stop_at_last_activation=*/true);
  m.enc_o.backward(ctx_o, dfo, scratch_o, /*stop_at_last_activation=*/true);

  return {cam_from_capture(*ctx_f.last_activation(), ctx_f.last_activation_grad, class_id, 'F'),
          cam_from_capture(*ctx_o.last_activation(), ctx_o.last_activation_grad, class_id, 'O')};
}

std::vector<float> upsample_bilinear(const HeatMap& map, int out_h, int out_w) {
  std::vector<float> out(static_cast<size_t>(out_h) * out_w);
  const double sy = static_cast<double>(map.h) / out_h;
  const double sx = static_cast<double>(map.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(map.h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, map.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(map.w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, map.w - 1);
      const double wx = fx - x0;
      const double v = (1 - wy) * ((1 - wx) * map.at(y0, x0) + wx * map.at(y0, x1)) +
                       wy * ((1 - wx) * map.at(y1, x0) + wx * map.at(y1, x1));
      out[static_cast<size_t>(y) * out_w + x] = static_cast<float>(v);
    }
  }
  return out;
}

namespace {

// Fixed jet-style colormap; zero point is dark blue (0, 0, 0.5).
void colormap(float v, float rgb[3]) {
  v = std::clamp(v, 0.f, 1.f);
  rgb[0] = std::clamp(1.5f - std::abs(4.f * v - 3.f), 0.f, 1.f);
  rgb[1] = std::clamp(1.5f - std::abs(4.f * v - 2.f), 0.f, 1.f);
  rgb[2] = std::clamp(1.5f - std::abs(4.f * v - 1.f), 0.f, 1.f);
}

}  // namespace

Tensor3 render_overlay(const HeatMap& map, const Tensor3& original, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw ContractError("render_overlay: alpha outside [0,1]");
  Tensor3 out = original;
  float lo = 0.f, hi = 0.f;
  double total = 0.0;
  for (float v : map.grid) total += v;
  if (alpha == 0.0 || total == 0.0) return out;  // transparent
  lo = *std::min_element(map.grid.begin(), map.grid.end());
  hi = *std::max_element(map.grid.begin(), map.grid.end());
  const std::vector<float> up = upsample_bilinear(map, original.h, original.w);
  const float a = static_cast<float>(alpha);
  for (int y = 0; y < original.h; ++y) {
    for (int x = 0; x < original.w; ++x) {
      const float raw = up[static_cast<size_t>(y) * original.w + x];
      const float norm = hi > lo ? (raw - lo) / (hi - lo) : 0.f;
      float rgb[3];
      colormap(norm, rgb);
      for (int ch = 0; ch < original.c; ++ch) {
        const float base = out.at(ch, y, x);
        out.at(ch, y, x) = (1.f - a) * base + a * rgb[original.c == 1 ? 0 : ch];
      }
    }
  }
  return out;
}

double localization_score(const HeatMap& map, const std::vector<data::LesionBox>& boxes,
                          int img_w, int img_h) {
  const std::vector<float> up = upsample_bilinear(map, img_h, img_w);
  double total = 0.0;
  for (float v : up) total += v;
  if (total <= 0.0) return 0.0;
  // union mask of 2x-dilated boxes
  std::vector<uint8_t> mask(static_cast<size_t>(img_h) * img_w, 0);
  for (const auto& b : boxes) {
    const double cx = b.x + b.w / 2.0, cy = b.y + b.h / 2.0;
    const int x0 = std::max(0, static_cast<int>(std::lround(cx - b.w)));
    const int x1 = std::min(img_w, static_cast<int>(std::lround(cx + b.w)));
    const int y0 = std::max(0, static_cast<int>(std::lround(cy - b.h)));
    const int y1 = std::min(img_h, static_cast<int>(std::lround(cy + b.h)));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) mask[static_cast<size_t>(y) * img_w + x] = 1;
  }
  double inside = 0.0;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) inside += up[i];
  return inside / total;
}

}  // namespace kfwc::explain
