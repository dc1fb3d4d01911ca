#pragma once

#include <vector>

#include "bat/box.hpp"
#include "bat/config.hpp"
#include "bat/model.hpp"

namespace bat {

// Training loss over one sample's head maps. Computed outside the graph; the
// seeds are d(total)/d(map) cotangents for backward_seeded.
//
//   total = cls + lambda_iou * (1 - GIoU) + lambda_l1 * L1
//
// cls is a Gaussian-weighted focal loss over the score map with a single
// positive at the ground-truth center cell. Offset and size are supervised at
// that cell only; the box they decode to drives the GIoU and L1 terms, both
// in search-crop pixels (L1 on (cx, cy, w, h) normalized by the crop size).
struct LossParts {
  double cls = 0.0, iou = 0.0, l1 = 0.0, total = 0.0;
};

struct LossSeeds {
  std::vector<double> d_score, d_offset, d_size;
};

struct LossResult {
  LossParts parts;
  LossSeeds seeds;
};

// exp(-((r-row)^2+(c-col)^2) / (2 sigma^2)) per cell; exactly 1 at (row, col).
std::vector<double> gaussian_target_map(int grid, int row, int col, double sigma_cells);

// GIoU plus its gradient w.r.t. the predicted box's center/size. Throws
// std::invalid_argument when either box has a non-positive side.
struct GiouGrad {
  double giou = 0.0;
  double d_cx = 0.0, d_cy = 0.0, d_w = 0.0, d_h = 0.0;
};
GiouGrad giou_with_grad(const BBox& pred, const BBox& gt);

LossResult compute_loss(const HeadMaps& maps, const BBox& gt_crop, const RunConfig& cfg);

}  // namespace bat
