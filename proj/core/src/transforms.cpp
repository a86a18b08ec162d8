#include "rotlab/transforms.hpp"

#include <algorithm>
#include <cmath>

namespace rotlab {

namespace {

void check_28x28(const Tensor& img, const char* what) {
    if (img.shape != std::vector<int>{28, 28}) {
        throw ShapeError(std::string(what) + ": expected 28x28 image, got " + shape_str(img.shape));
    }
}

}  // namespace

double wrap_angle_deg(double a) {
    a = std::fmod(a, 360.0);
    if (a <= -180.0) a += 360.0;
    if (a > 180.0) a -= 360.0;
    return a;
}

Tensor rotate_image(const Tensor& img, double theta_deg, double fill) {
    check_28x28(img, "rotate_image");
    if (fill < 0.0 || fill > 1.0) throw Error("rotate_image: fill must be in [0,1]");
    const double theta = wrap_angle_deg(theta_deg) * M_PI / 180.0;
    const double co = std::cos(theta), si = std::sin(theta);
    const double c = (kImageSize - 1) / 2.0;

    Tensor out({28, 28});
    for (int y = 0; y < 28; ++y) {
        for (int x = 0; x < 28; ++x) {
            // inverse map: rotate the destination pixel back into the source
            const double sx = c + co * (x - c) - si * (y - c);
            const double sy = c + si * (x - c) + co * (y - c);
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            auto sample = [&](int yy, int xx) {
                if (yy < 0 || yy >= 28 || xx < 0 || xx >= 28) return fill;
                return img.data[static_cast<std::size_t>(yy) * 28 + xx];
            };
            const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                             fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
            out.data[static_cast<std::size_t>(y) * 28 + x] = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

Tensor shift_image(const Tensor& img, int dx, int dy, double fill) {
    check_28x28(img, "shift_image");
    if (std::abs(dx) > 10 || std::abs(dy) > 10) {
        throw Error("shift_image: |dx|,|dy| must be <= 10");
    }
    Tensor out({28, 28});
    for (int y = 0; y < 28; ++y) {
        for (int x = 0; x < 28; ++x) {
            const int sy = y - dy, sx = x - dx;
            out.data[static_cast<std::size_t>(y) * 28 + x] =
                (sy >= 0 && sy < 28 && sx >= 0 && sx < 28)
                    ? img.data[static_cast<std::size_t>(sy) * 28 + sx]
                    : fill;
        }
    }
    return out;
}

double image_mse(const Tensor& a, const Tensor& b) {
    check_28x28(a, "image_mse");
    check_28x28(b, "image_mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

double interior_mse(const Tensor& a, const Tensor& b, int border) {
    check_28x28(a, "interior_mse");
    check_28x28(b, "interior_mse");
    double s = 0.0;
    int n = 0;
    for (int y = border; y < 28 - border; ++y) {
        for (int x = border; x < 28 - border; ++x) {
            const double d = a.data[static_cast<std::size_t>(y) * 28 + x] -
                             b.data[static_cast<std::size_t>(y) * 28 + x];
            s += d * d;
            ++n;
        }
    }
    return s / n;
}

double central_mae(const Tensor& a, const Tensor& b, double radius) {
    check_28x28(a, "central_mae");
    check_28x28(b, "central_mae");
    const double c = (kImageSize - 1) / 2.0;
    double s = 0.0;
    int n = 0;
    for (int y = 0; y < 28; ++y) {
        for (int x = 0; x < 28; ++x) {
            if (std::hypot(y - c, x - c) > radius) continue;
            s += std::fabs(a.data[static_cast<std::size_t>(y) * 28 + x] -
                           b.data[static_cast<std::size_t>(y) * 28 + x]);
            ++n;
        }
    }
    return s / n;
}

}  // namespace rotlab
