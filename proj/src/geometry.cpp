#include "avr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace avr {

BoundingBox::BoundingBox(double x, double y, double w, double h) : x_(x), y_(y), w_(w), h_(h) {
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(w) || !std::isfinite(h)) {
    throw std::invalid_argument("bounding box has non-finite coordinates");
  }
  if (w <= 0.0 || h <= 0.0) {
    throw std::invalid_argument("bounding box needs positive width and height, got w=" +
                                std::to_string(w) + " h=" + std::to_string(h));
  }
  if (x < 0.0 || y < 0.0) {
    throw std::invalid_argument("bounding box origin must be non-negative");
  }
}

ImageDims::ImageDims(double w, double h) : width(w), height(h) {
  if (!(w > 0.0) || !(h > 0.0) || !std::isfinite(w) || !std::isfinite(h)) {
    throw std::invalid_argument("image dimensions must be positive");
  }
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x(), b.x());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y(), b.y());
  if (iw <= 0.0 || ih <= 0.0) {
    return 0.0;
  }
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

BoundingBox union_box(const BoundingBox& s, const BoundingBox& o) {
  const double x0 = std::min(s.x(), o.x());
  const double y0 = std::min(s.y(), o.y());
  const double x1 = std::max(s.right(), o.right());
  const double y1 = std::max(s.bottom(), o.bottom());
  // When one box spans the whole extent, reuse its size so a containing box
  // comes back bit-identical instead of as right - x.
  auto extent = [](double lo, double hi, double a_lo, double a_hi, double a_len, double b_lo,
                   double b_hi, double b_len) {
    if (lo == a_lo && hi == a_hi) return a_len;
    if (lo == b_lo && hi == b_hi) return b_len;
    return hi - lo;
  };
  return BoundingBox(x0, y0, extent(x0, x1, s.x(), s.right(), s.w(), o.x(), o.right(), o.w()),
                     extent(y0, y1, s.y(), s.bottom(), s.h(), o.y(), o.bottom(), o.h()));
}

SpatialFeature spatial_feature(const BoundingBox& s, const BoundingBox& o, const ImageDims& dims) {
  const double W = dims.width;
  const double H = dims.height;
  const double image_area = W * H;
  return {
      s.x() / W, s.y() / H, s.right() / W, s.bottom() / H, s.area() / image_area,
      o.x() / W, o.y() / H, o.right() / W, o.bottom() / H, o.area() / image_area,
      (s.x() - o.x()) / W, (s.y() - o.y()) / H, std::log(s.w() / o.w()), std::log(s.h() / o.h()),
  };
}

}  // namespace avr
