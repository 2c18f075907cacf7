#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vidattn/grid.hpp"

namespace vidattn {

// How many channels of a head each spatial-temporal axis owns. Every entry
// must be even (channels rotate in pairs) and the three must sum to head_dim.
struct AxisSplit {
    int t = 0;
    int y = 0;
    int x = 0;
    int sum() const { return t + y + x; }
    bool operator==(const AxisSplit&) const = default;
};

// Largest even split proportional to (2, 1, 1): y and x each get the largest
// even value <= head_dim/4 (at least 2), the remainder goes to t. Requires
// head_dim even and >= 6.
AxisSplit default_axis_split(int head_dim);

// Rotary position parameters for one attention head. Angles for axis a use
// frequencies base^(-2i/d_a), i = 0..d_a/2-1, evaluated at scale_a * coord_a.
struct RopeParams {
    int head_dim = 0;
    AxisSplit split;
    double base = 10000.0;
    std::array<double, 3> scales{1.0, 1.0, 1.0};  // (t, y, x) coordinate multipliers

    static RopeParams make(int head_dim, std::array<double, 3> scales = {1.0, 1.0, 1.0},
                           double base = 10000.0);
    void validate() const;  // throws std::invalid_argument
};

// Per-axis coordinate multipliers (r_t, r_y, r_x) = target/proxy dims, so a
// proxy token lands on the target-grid position it summarizes. Throws unless
// both grids are positive.
std::array<double, 3> proxy_scale_factors(const GridDims& proxy, const GridDims& target);

// head_dim/2 rotation angles: t-axis block, then y, then x.
std::vector<double> rope_angles(const RopeParams& p, double t, double y, double x);

// Rotate channel pairs (2i, 2i+1) of vec by angles[i]. vec must hold
// head_dim = 2*angles.size() entries.
void apply_rope_inplace(double* vec, const std::vector<double>& angles);
std::vector<double> apply_rope(std::vector<double> vec, const std::vector<double>& angles);

// Inverse rotation (used by backward passes).
void apply_rope_inverse_inplace(double* vec, const std::vector<double>& angles);

}  // namespace vidattn
