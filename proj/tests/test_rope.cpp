#include "vidattn/rope.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "vidattn/rng.hpp"
#include "testing.hpp"

using namespace vidattn;

namespace {

constexpr double kPi = 3.14159265358979323846;

void axis_split_defaults() {
    CHECK(default_axis_split(16) == (AxisSplit{8, 4, 4}));
    CHECK(default_axis_split(8) == (AxisSplit{4, 2, 2}));
    CHECK(default_axis_split(6) == (AxisSplit{2, 2, 2}));
    CHECK(default_axis_split(12) == (AxisSplit{8, 2, 2}));
    CHECK(default_axis_split(128) == (AxisSplit{64, 32, 32}));
    for (int hd = 6; hd <= 64; hd += 2) {
        const AxisSplit s = default_axis_split(hd);
        CHECK(s.sum() == hd);
        CHECK(s.t % 2 == 0 && s.y % 2 == 0 && s.x % 2 == 0);
        CHECK(s.t >= 2 && s.y >= 2 && s.x >= 2);
    }
    CHECK_THROWS((void)default_axis_split(4), std::invalid_argument);
    CHECK_THROWS((void)default_axis_split(7), std::invalid_argument);
}

void frozen_angles() {
    // head_dim 6 gives one frequency per axis, and that frequency is
    // base^0 = 1, so the angles are just the (scaled) coordinates
    const RopeParams p = RopeParams::make(6);
    const std::vector<double> a = rope_angles(p, 1.0, 2.0, 3.0);
    CHECK(a.size() == 3);
    CHECK(a[0] == 1.0 && a[1] == 2.0 && a[2] == 3.0);

    const RopeParams scaled = RopeParams::make(6, {4.0, 2.0, 1.0});
    const std::vector<double> b = rope_angles(scaled, 1.0, 2.0, 3.0);
    CHECK(b[0] == 4.0 && b[1] == 4.0 && b[2] == 3.0);
}

void quarter_turn() {
    const std::vector<double> angles = {kPi / 2.0, 0.0, 0.0};
    const std::vector<double> v = {1.0, 0.0, 1.0, 0.0, 1.0, 0.0};
    const std::vector<double> r = apply_rope(v, angles);
    CHECK_NEAR(r[0], 0.0, 1e-15);
    CHECK_NEAR(r[1], 1.0, 1e-15);
    CHECK(r[2] == 1.0 && r[3] == 0.0);
    CHECK(r[4] == 1.0 && r[5] == 0.0);
}

void inverse_rotation() {
    Rng rng(3);
    for (int it = 0; it < 20; ++it) {
        const RopeParams p = RopeParams::make(12, {1.5, 1.0, 2.0});
        const std::vector<double> angles =
            rope_angles(p, rng.uniform(0.0, 9.0), rng.uniform(0.0, 9.0), rng.uniform(0.0, 9.0));
        std::vector<double> v(12);
        for (auto& x : v) x = rng.normal();
        std::vector<double> w = v;
        apply_rope_inplace(w.data(), angles);
        apply_rope_inverse_inplace(w.data(), angles);
        for (int i = 0; i < 12; ++i) CHECK_NEAR(w[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(i)], 1e-14);
    }
}

void norm_preserved() {
    Rng rng(4);
    for (int it = 0; it < 50; ++it) {
        const RopeParams p =
            RopeParams::make(16, {rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0)});
        const std::vector<double> angles =
            rope_angles(p, rng.uniform(0.0, 30.0), rng.uniform(0.0, 30.0), rng.uniform(0.0, 30.0));
        std::vector<double> v(16);
        double n0 = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            n0 += x * x;
        }
        const std::vector<double> r = apply_rope(v, angles);
        double n1 = 0.0;
        for (double x : r) n1 += x * x;
        CHECK_NEAR(n1, n0, 1e-12 * std::max(1.0, n0));
    }
}

void relative_position_invariance() {
    Rng rng(5);
    for (int it = 0; it < 100; ++it) {
        const RopeParams p = RopeParams::make(8);
        std::vector<double> q(8), k(8);
        for (auto& x : q) x = rng.normal();
        for (auto& x : k) x = rng.normal();
        const double qt = rng.uniform(0.0, 8.0), qy = rng.uniform(0.0, 8.0), qx = rng.uniform(0.0, 8.0);
        const double kt = rng.uniform(0.0, 8.0), ky = rng.uniform(0.0, 8.0), kx = rng.uniform(0.0, 8.0);
        const double st = rng.uniform(-5.0, 5.0), sy = rng.uniform(-5.0, 5.0), sx = rng.uniform(-5.0, 5.0);

        const std::vector<double> q1 = apply_rope(q, rope_angles(p, qt, qy, qx));
        const std::vector<double> k1 = apply_rope(k, rope_angles(p, kt, ky, kx));
        const std::vector<double> q2 = apply_rope(q, rope_angles(p, qt + st, qy + sy, qx + sx));
        const std::vector<double> k2 = apply_rope(k, rope_angles(p, kt + st, ky + sy, kx + sx));
        double d1 = 0.0, d2 = 0.0;
        for (int i = 0; i < 8; ++i) {
            d1 += q1[static_cast<std::size_t>(i)] * k1[static_cast<std::size_t>(i)];
            d2 += q2[static_cast<std::size_t>(i)] * k2[static_cast<std::size_t>(i)];
        }
        CHECK_NEAR(d1, d2, 1e-9);
    }
}

void proxy_anchor_alignment_is_exact() {
    const GridDims proxy{1, 4, 4};
    const GridDims target{2, 8, 8};
    const std::array<double, 3> r = proxy_scale_factors(proxy, target);
    CHECK(r[0] == 2.0 && r[1] == 2.0 && r[2] == 2.0);

    const RopeParams gp = RopeParams::make(16, r);
    const RopeParams dp = RopeParams::make(16);
    for (std::int64_t j = 0; j < proxy.count(); ++j) {
        const Coord3 c = coord_of(proxy, j);
        const std::vector<double> a = rope_angles(gp, static_cast<double>(c.t),
                                                  static_cast<double>(c.y), static_cast<double>(c.x));
        const std::vector<double> b =
            rope_angles(dp, static_cast<double>(2 * c.t), static_cast<double>(2 * c.y),
                        static_cast<double>(2 * c.x));
        CHECK(a == b);  // bitwise, not approximately
    }
}

void temporal_dilation() {
    // the proxy generator represents an r_t-times longer horizon by scaling
    // temporal coordinates: frame k must land exactly on target frame 4k
    const std::array<double, 3> r = proxy_scale_factors(GridDims{5, 4, 4}, GridDims{20, 4, 4});
    CHECK(r[0] == 4.0 && r[1] == 1.0 && r[2] == 1.0);
    const RopeParams dilated = RopeParams::make(8, {4.0, 1.0, 1.0});
    const RopeParams plain = RopeParams::make(8);
    for (int k = 0; k < 5; ++k) {
        const std::vector<double> a = rope_angles(dilated, k, 2.0, 3.0);
        const std::vector<double> b = rope_angles(plain, 4.0 * k, 2.0, 3.0);
        CHECK(a == b);
    }
}

void validation_errors() {
    CHECK_THROWS((void)RopeParams::make(5), std::invalid_argument);
    CHECK_THROWS((void)RopeParams::make(2), std::invalid_argument);
    CHECK_THROWS((void)proxy_scale_factors(GridDims{0, 1, 1}, GridDims{2, 2, 2}),
                 std::invalid_argument);
    std::vector<double> v(4);
    CHECK_THROWS((void)apply_rope(v, {0.1, 0.2, 0.3}), std::invalid_argument);
}

}  // namespace

int main() {
    return tst::run({
        {"axis_split_defaults", axis_split_defaults},
        {"frozen_angles", frozen_angles},
        {"quarter_turn", quarter_turn},
        {"inverse_rotation", inverse_rotation},
        {"norm_preserved", norm_preserved},
        {"relative_position_invariance", relative_position_invariance},
        {"proxy_anchor_alignment_is_exact", proxy_anchor_alignment_is_exact},
        {"temporal_dilation", temporal_dilation},
        {"validation_errors", validation_errors},
    });
}
