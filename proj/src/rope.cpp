#include "vidattn/rope.hpp"

#include <cmath>
#include <stdexcept>

namespace vidattn {

AxisSplit default_axis_split(int head_dim) {
    if (head_dim < 6 || head_dim % 2 != 0)
        throw std::invalid_argument("default_axis_split: head_dim must be even and >= 6");
    int spatial = (head_dim / 4) & ~1;  // largest even value <= head_dim/4
    if (spatial < 2) spatial = 2;
    AxisSplit s;
    s.y = spatial;
    s.x = spatial;
    s.t = head_dim - 2 * spatial;
    return s;
}

RopeParams RopeParams::make(int head_dim, std::array<double, 3> scales, double base) {
    RopeParams p;
    p.head_dim = head_dim;
    p.split = default_axis_split(head_dim);
    p.base = base;
    p.scales = scales;
    p.validate();
    return p;
}

void RopeParams::validate() const {
    if (head_dim <= 0 || head_dim % 2 != 0)
        throw std::invalid_argument("RopeParams: head_dim must be positive and even");
    if (split.t < 0 || split.y < 0 || split.x < 0 || split.t % 2 != 0 || split.y % 2 != 0 ||
        split.x % 2 != 0)
        throw std::invalid_argument("RopeParams: axis split entries must be even and >= 0");
    if (split.sum() != head_dim)
        throw std::invalid_argument("RopeParams: axis split must sum to head_dim");
    if (base <= 0.0) throw std::invalid_argument("RopeParams: base must be positive");
}

std::array<double, 3> proxy_scale_factors(const GridDims& proxy, const GridDims& target) {
    if (!proxy.positive() || !target.positive())
        throw std::invalid_argument("proxy_scale_factors: grid dims must be positive");
    return {static_cast<double>(target.t) / static_cast<double>(proxy.t),
            static_cast<double>(target.h) / static_cast<double>(proxy.h),
            static_cast<double>(target.w) / static_cast<double>(proxy.w)};
}

std::vector<double> rope_angles(const RopeParams& p, double t, double y, double x) {
    p.validate();
    std::vector<double> angles;
    angles.reserve(static_cast<std::size_t>(p.head_dim / 2));
    const double coords[3] = {p.scales[0] * t, p.scales[1] * y, p.scales[2] * x};
    const int dims[3] = {p.split.t, p.split.y, p.split.x};
    for (int a = 0; a < 3; ++a) {
        const int half = dims[a] / 2;
        for (int i = 0; i < half; ++i) {
            const double omega = std::pow(p.base, -2.0 * static_cast<double>(i) / static_cast<double>(dims[a]));
            angles.push_back(coords[a] * omega);
        }
    }
    return angles;
}

void apply_rope_inplace(double* vec, const std::vector<double>& angles) {
    for (std::size_t i = 0; i < angles.size(); ++i) {
        const double c = std::cos(angles[i]);
        const double s = std::sin(angles[i]);
        const double v0 = vec[2 * i];
        const double v1 = vec[2 * i + 1];
        vec[2 * i] = c * v0 - s * v1;
        vec[2 * i + 1] = s * v0 + c * v1;
    }
}

std::vector<double> apply_rope(std::vector<double> vec, const std::vector<double>& angles) {
    if (vec.size() != 2 * angles.size())
        throw std::invalid_argument("apply_rope: vec must hold 2*angles.size() entries");
    apply_rope_inplace(vec.data(), angles);
    return vec;
}

void apply_rope_inverse_inplace(double* vec, const std::vector<double>& angles) {
    for (std::size_t i = 0; i < angles.size(); ++i) {
        const double c = std::cos(angles[i]);
        const double s = std::sin(angles[i]);
        const double v0 = vec[2 * i];
        const double v1 = vec[2 * i + 1];
        vec[2 * i] = c * v0 + s * v1;
        vec[2 * i + 1] = -s * v0 + c * v1;
    }
}

}  // namespace vidattn
