#pragma once

#include "rotlab/tensor.hpp"

namespace rotlab {

constexpr int kImageSize = 28;

// Wraps an angle in degrees into (-180, 180].
double wrap_angle_deg(double a);

// Rotation about the image center, bilinear interpolation, source samples
// outside the grid take `fill`; output clamped to [0,1]. Positive angles
// rotate the content counterclockwise (viewed with row 0 on top). Angles are
// wrapped into (-180, 180].
Tensor rotate_image(const Tensor& img, double theta_deg, double fill);

// Integer translation: content moves by (dx right, dy down); vacated pixels
// take `fill`. |dx|,|dy| <= 10.
Tensor shift_image(const Tensor& img, int dx, int dy, double fill);

double image_mse(const Tensor& a, const Tensor& b);

// MSE over pixels at least `border` away from every edge. The image corners
// are excluded by a wider margin than a plain border when comparing rotated
// content, which is what the reconstruction metrics need.
double interior_mse(const Tensor& a, const Tensor& b, int border = 4);

// Mean absolute error over pixels within `radius` of the image center.
double central_mae(const Tensor& a, const Tensor& b, double radius);

}  // namespace rotlab
