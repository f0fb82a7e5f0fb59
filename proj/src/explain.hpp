#pragma once

#include <utility>
#include <vector>

#include "data.hpp"
#include "model.hpp"

namespace kfwc::explain {

// Non-negative spatial relevance map for one branch and class. channel_weights
// are the globally averaged gradients, one per channel of the last conv block.
struct HeatMap {
  int h = 0, w = 0;
  std::vector<float> grid;  // h*w, row-major, >= 0
  int class_id = 0;
  char branch = 'F';  // 'F' or 'O'
  std::vector<float> channel_weights;

  float at(int y, int x) const { return grid[static_cast<size_t>(y) * w + x]; }
};

// Pure map construction from a captured activation and its gradient:
//   w_k = (1/Z) * sum_ij dscore/dA_kij,  map = ReLU(sum_k w_k A_k),  Z = h*w.
HeatMap cam_from_capture(const model::FMap& activation, const model::MatX& grad,
                         int class_id, char branch);

// Backpropagates the raw class-c diagnosis score to each branch's last conv
// block. Model parameters are not modified.
std::pair<HeatMap, HeatMap> gradcam(const model::DiagnosisModel& m, const Tensor3& fundus,
                                    const Tensor3& oct, int class_id);

// Bilinear upsampling of the map to arbitrary size.
std::vector<float> upsample_bilinear(const HeatMap& map, int out_h, int out_w);

// Min-max normalized map blended over the original with a fixed blue->red
// colormap: out = (1-alpha)*original + alpha*colormap(norm). All-zero maps
// render fully transparent; constant nonzero maps normalize to 0.
Tensor3 render_overlay(const HeatMap& map, const Tensor3& original, double alpha);

// Heat mass inside the union of 2x-dilated boxes over total heat mass,
// evaluated on the map upsampled to (img_h, img_w); 0 when total mass is 0.
double localization_score(const HeatMap& map, const std::vector<data::LesionBox>& boxes,
                          int img_w, int img_h);

}  // namespace kfwc::explain
