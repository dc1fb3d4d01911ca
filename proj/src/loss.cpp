#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bat/loss.hpp"

namespace bat {

namespace {

constexpr double kProbEps = 1e-12;

double clamp_p(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::vector<double> gaussian_target_map(int grid, int row, int col, double sigma_cells) {
  if (sigma_cells <= 0.0) throw std::invalid_argument("gaussian_target_map: sigma must be positive");
  std::vector<double> t(std::size_t(grid) * grid);
  double inv = 1.0 / (2.0 * sigma_cells * sigma_cells);
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c) {
      double d2 = double(r - row) * (r - row) + double(c - col) * (c - col);
      t[std::size_t(r) * grid + c] = std::exp(-d2 * inv);
    }
  t[std::size_t(row) * grid + col] = 1.0;  // exact peak, no exp round-off
  return t;
}

GiouGrad giou_with_grad(const BBox& pred, const BBox& gt) {
  if (pred.w <= 0.0 || pred.h <= 0.0 || gt.w <= 0.0 || gt.h <= 0.0)
    throw std::invalid_argument("giou_with_grad: boxes need positive width and height");

  double x1 = pred.x, x2 = pred.x + pred.w, y1 = pred.y, y2 = pred.y + pred.h;
  double gx1 = gt.x, gx2 = gt.x + gt.w, gy1 = gt.y, gy2 = gt.y + gt.h;

  double iw = std::min(x2, gx2) - std::max(x1, gx1);
  double ih = std::min(y2, gy2) - std::max(y1, gy1);
  bool overlap = iw > 0.0 && ih > 0.0;
  double inter = overlap ? iw * ih : 0.0;

  double area_p = pred.w * pred.h;
  double uni = area_p + gt.w * gt.h - inter;

  double ew = std::max(x2, gx2) - std::min(x1, gx1);
  double eh = std::max(y2, gy2) - std::min(y1, gy1);
  double enc = ew * eh;

  GiouGrad out;
  out.giou = inter / uni - (enc - uni) / enc;

  // d(inter)/d corners (subgradient at the kinks)
  double dI_x1 = overlap && x1 > gx1 ? -ih : 0.0;
  double dI_x2 = overlap && x2 < gx2 ? ih : 0.0;
  double dI_y1 = overlap && y1 > gy1 ? -iw : 0.0;
  double dI_y2 = overlap && y2 < gy2 ? iw : 0.0;

  // d(pred area)/d corners
  double dA_x1 = -pred.h, dA_x2 = pred.h, dA_y1 = -pred.w, dA_y2 = pred.w;

  // d(enclosure)/d corners
  double dC_x1 = x1 < gx1 ? -eh : 0.0;
  double dC_x2 = x2 > gx2 ? eh : 0.0;
  double dC_y1 = y1 < gy1 ? -ew : 0.0;
  double dC_y2 = y2 > gy2 ? ew : 0.0;

  auto d_corner = [&](double dI, double dA, double dC) {
    double dU = dA - dI;
    double d_iou = (dI * uni - inter * dU) / (uni * uni);
    // (enc-uni)/enc = 1 - uni/enc
    double d_pen = -(dU * enc - uni * dC) / (enc * enc);
    return d_iou - d_pen;
  };

  double d_x1 = d_corner(dI_x1, dA_x1, dC_x1);
  double d_x2 = d_corner(dI_x2, dA_x2, dC_x2);
  double d_y1 = d_corner(dI_y1, dA_y1, dC_y1);
  double d_y2 = d_corner(dI_y2, dA_y2, dC_y2);

  // corners to center/size: x1 = cx - w/2, x2 = cx + w/2
  out.d_cx = d_x1 + d_x2;
  out.d_cy = d_y1 + d_y2;
  out.d_w = 0.5 * (d_x2 - d_x1);
  out.d_h = 0.5 * (d_y2 - d_y1);
  return out;
}

LossResult compute_loss(const HeadMaps& maps, const BBox& gt_crop, const RunConfig& cfg) {
  int S = maps.grid;
  std::size_t n = std::size_t(S) * S;
  if (maps.score.size() != n || maps.offset.size() != 2 * n || maps.size.size() != 2 * n)
    throw std::invalid_argument("compute_loss: map sizes disagree with grid");
  if (gt_crop.w <= 0.0 || gt_crop.h <= 0.0)
    throw std::invalid_argument("compute_loss: degenerate ground-truth box");

  int stride = cfg.patch_size;
  double crop = cfg.image_size_search;
  double sigma_cells = cfg.sigma() / stride;

  double gcx = gt_crop.cx(), gcy = gt_crop.cy();
  int col = std::clamp(int(std::floor(gcx / stride)), 0, S - 1);
  int row = std::clamp(int(std::floor(gcy / stride)), 0, S - 1);
  std::size_t cell = std::size_t(row) * S + col;

  LossResult res;
  res.seeds.d_score.assign(n, 0.0);
  res.seeds.d_offset.assign(2 * n, 0.0);
  res.seeds.d_size.assign(2 * n, 0.0);

  // focal term, single positive, normalizer 1
  std::vector<double> target = gaussian_target_map(S, row, col, sigma_cells);
  double a = cfg.focal_alpha, g = cfg.focal_gamma;
  double cls = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double p = clamp_p(maps.score[i]);
    if (i == cell) {
      cls += -std::pow(1.0 - p, a) * std::log(p);
      res.seeds.d_score[i] =
          a * std::pow(1.0 - p, a - 1.0) * std::log(p) - std::pow(1.0 - p, a) / p;
    } else {
      double w = std::pow(1.0 - target[i], g);
      cls += -w * std::pow(p, a) * std::log(1.0 - p);
      res.seeds.d_score[i] =
          -w * (a * std::pow(p, a - 1.0) * std::log(1.0 - p) - std::pow(p, a) / (1.0 - p));
    }
  }

  // box decoded at the ground-truth cell
  double ox = maps.offset[cell], oy = maps.offset[n + cell];
  double sw = maps.size[cell], sh = maps.size[n + cell];
  double cx = (col + 0.5 + ox) * stride;
  double cy = (row + 0.5 + oy) * stride;
  double w = sw * crop, h = sh * crop;
  BBox pred{cx - w / 2.0, cy - h / 2.0, w, h};

  GiouGrad gg = giou_with_grad(pred, gt_crop);
  double iou_loss = 1.0 - gg.giou;

  // L1 over (cx, cy, w, h) / crop
  double dcx = (cx - gcx) / crop, dcy = (cy - gcy) / crop;
  double dw = (w - gt_crop.w) / crop, dh = (h - gt_crop.h) / crop;
  double l1 = (std::abs(dcx) + std::abs(dcy) + std::abs(dw) + std::abs(dh)) / 4.0;

  double li = cfg.lambda_iou, ll = cfg.lambda_l1;

  // chain to the raw maps: d(cx)/d(ox) = stride, d(w)/d(sw) = crop
  double d_cx = li * -gg.d_cx + ll * sgn(dcx) / (4.0 * crop);
  double d_cy = li * -gg.d_cy + ll * sgn(dcy) / (4.0 * crop);
  double d_w = li * -gg.d_w + ll * sgn(dw) / (4.0 * crop);
  double d_h = li * -gg.d_h + ll * sgn(dh) / (4.0 * crop);
  res.seeds.d_offset[cell] = d_cx * stride;
  res.seeds.d_offset[n + cell] = d_cy * stride;
  res.seeds.d_size[cell] = d_w * crop;
  res.seeds.d_size[n + cell] = d_h * crop;

  res.parts.cls = cls;
  res.parts.iou = iou_loss;
  res.parts.l1 = l1;
  res.parts.total = cls + li * iou_loss + ll * l1;
  return res;
}

}  // namespace bat
