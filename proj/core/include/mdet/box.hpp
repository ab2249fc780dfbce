#pragma once

#include <algorithm>
#include <array>
#include <string>

#include "mdet/error.hpp"

namespace mdet {

// Axis-aligned box in image units with x1 < x2 and y1 < y2.
struct BoxXYXY {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 1.0;
  double y2 = 1.0;

  // Rejects degenerate or inverted boxes.
  static BoxXYXY make(double x1, double y1, double x2, double y2) {
    if (!(x1 < x2) || !(y1 < y2)) {
      throw DimensionError("degenerate box (" + std::to_string(x1) + ", " + std::to_string(y1) +
                           ", " + std::to_string(x2) + ", " + std::to_string(y2) + ")");
    }
    return BoxXYXY{x1, y1, x2, y2};
  }

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return width() * height(); }
  double cx() const noexcept { return 0.5 * (x1 + x2); }
  double cy() const noexcept { return 0.5 * (y1 + y2); }
  bool operator==(const BoxXYXY&) const = default;
};

double iou(const BoxXYXY& a, const BoxXYXY& b);

// IoU minus the fraction of the enclosing hull not covered by the union.
double giou(const BoxXYXY& a, const BoxXYXY& b);

// IoU and GIoU of a predicted box p against a target t, with dGIoU/dp.
// Coordinates are (x1, y1, x2, y2). Subgradients at ties pick the predicted side.
template <typename T>
struct GiouTerms {
  T iou{};
  T giou{};
  std::array<T, 4> d_giou{};
};

template <typename T>
GiouTerms<T> giou_terms(const std::array<T, 4>& p, const std::array<T, 4>& t) {
  GiouTerms<T> r;
  const T zero{0};

  // intersection extents; derivative flags say whether p's edge is the active one
  const bool px1_in = p[0] >= t[0];
  const bool px2_in = p[2] <= t[2];
  const bool py1_in = p[1] >= t[1];
  const bool py2_in = p[3] <= t[3];
  const T iw_raw = std::min(p[2], t[2]) - std::max(p[0], t[0]);
  const T ih_raw = std::min(p[3], t[3]) - std::max(p[1], t[1]);
  const bool overlap = iw_raw > zero && ih_raw > zero;
  const T iw = overlap ? iw_raw : zero;
  const T ih = overlap ? ih_raw : zero;
  const T inter = iw * ih;

  const T pw = p[2] - p[0];
  const T ph = p[3] - p[1];
  const T area_p = pw * ph;
  const T area_t = (t[2] - t[0]) * (t[3] - t[1]);
  const T uni = area_p + area_t - inter;

  const bool hx1_p = p[0] <= t[0];
  const bool hx2_p = p[2] >= t[2];
  const bool hy1_p = p[1] <= t[1];
  const bool hy2_p = p[3] >= t[3];
  const T cw = std::max(p[2], t[2]) - std::min(p[0], t[0]);
  const T ch = std::max(p[3], t[3]) - std::min(p[1], t[1]);
  const T hull = cw * ch;

  r.iou = inter / uni;
  r.giou = r.iou - (hull - uni) / hull;

  std::array<T, 4> d_inter{};
  if (overlap) {
    d_inter[0] = px1_in ? -ih : zero;
    d_inter[2] = px2_in ? ih : zero;
    d_inter[1] = py1_in ? -iw : zero;
    d_inter[3] = py2_in ? iw : zero;
  }
  const std::array<T, 4> d_area_p{-ph, -pw, ph, pw};
  const std::array<T, 4> d_hull{hx1_p ? -ch : zero, hy1_p ? -cw : zero, hx2_p ? ch : zero,
                                hy2_p ? cw : zero};
  for (std::size_t i = 0; i < 4; ++i) {
    const T d_uni = d_area_p[i] - d_inter[i];
    // giou = inter/uni - 1 + uni/hull
    r.d_giou[i] = (d_inter[i] * uni - inter * d_uni) / (uni * uni) +
                  (d_uni * hull - uni * d_hull[i]) / (hull * hull);
  }
  return r;
}

}  // namespace mdet
