#pragma once

#include <array>

namespace avr {

/// Axis-aligned box in image pixels, (x, y) being the top-left corner.
/// Construction rejects non-positive extents and negative origins.
class BoundingBox {
 public:
  BoundingBox(double x, double y, double w, double h);

  double x() const { return x_; }
  double y() const { return y_; }
  double w() const { return w_; }
  double h() const { return h_; }
  double right() const { return x_ + w_; }
  double bottom() const { return y_ + h_; }
  double area() const { return w_ * h_; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

 private:
  double x_;
  double y_;
  double w_;
  double h_;
};

struct ImageDims {
  ImageDims(double width, double height);

  double width;
  double height;

  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

inline constexpr std::size_t kSpatialFeatureDim = 14;

/// Normalized subject box (5), normalized object box (5), then relative
/// translation and log size ratios (4).
using SpatialFeature = std::array<double, kSpatialFeatureDim>;

double iou(const BoundingBox& a, const BoundingBox& b);

/// Smallest rectangle containing both boxes (the predicate box).
BoundingBox union_box(const BoundingBox& s, const BoundingBox& o);

/// Area normalization uses the raw box even when it extends past the image.
SpatialFeature spatial_feature(const BoundingBox& s, const BoundingBox& o, const ImageDims& dims);

}  // namespace avr
