#include "vidattn/grid.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "vidattn/rng.hpp"
#include "testing.hpp"

using namespace vidattn;

namespace {

// O(N) structural audit of one partition, cheap enough for the exhaustive
// sweep below: cube spans chain contiguously in cube row-major order with
// clipped extents, and a division-free walk of the original tokens confirms
// each one lands inside its own cube's span with perm/inv_perm mutually
// consistent and collision-free (together: perm is a bijection and every
// cube's tokens fill exactly one contiguous reordered span).
bool partition_is_sound(const CubePartition& p, std::vector<char>& seen) {
    const GridDims& g = p.grid;
    const std::int64_t n = g.count();
    if (static_cast<std::int64_t>(p.perm.size()) != n) return false;
    if (static_cast<std::int64_t>(p.inv_perm.size()) != n) return false;

    std::int64_t next_start = 0, ci = 0;
    for (const Cube& c : p.cubes) {
        const std::int64_t want_ci =
            (c.coord.it * p.cube_grid.iy + c.coord.iy) * p.cube_grid.ix + c.coord.ix;
        if (want_ci != ci++) return false;
        if (c.range.start != next_start) return false;
        if (c.extent.t != std::min(p.cube.ct, g.t - c.coord.it * p.cube.ct)) return false;
        if (c.extent.y != std::min(p.cube.ch, g.h - c.coord.iy * p.cube.ch)) return false;
        if (c.extent.x != std::min(p.cube.cw, g.w - c.coord.ix * p.cube.cw)) return false;
        if (c.range.len != c.extent.t * c.extent.y * c.extent.x) return false;
        next_start += c.range.len;
    }
    if (next_start != n) return false;

    seen.assign(static_cast<std::size_t>(n), 0);
    bool ok = true;
    std::int64_t o = 0, it = 0, tc = 0;
    for (std::int64_t t = 0; t < g.t; ++t) {
        std::int64_t iy = 0, yc = 0;
        for (std::int64_t y = 0; y < g.h; ++y) {
            std::int64_t ix = 0, xc = 0;
            const std::int64_t row = (it * p.cube_grid.iy + iy) * p.cube_grid.ix;
            for (std::int64_t x = 0; x < g.w; ++x, ++o) {
                const Cube& c = p.cubes[static_cast<std::size_t>(row + ix)];
                const std::int64_t pos = p.inv_perm[static_cast<std::size_t>(o)];
                ok = ok && pos >= c.range.start && pos < c.range.start + c.range.len &&
                     p.perm[static_cast<std::size_t>(pos)] == o &&
                     seen[static_cast<std::size_t>(pos)] == 0;
                seen[static_cast<std::size_t>(pos)] = 1;
                if (++xc == p.cube.cw) { xc = 0; ++ix; }
            }
            if (++yc == p.cube.ch) { yc = 0; ++iy; }
        }
        if (++tc == p.cube.ct) { tc = 0; ++it; }
    }
    return ok;
}

void linear_index_and_back() {
    const GridDims g{2, 2, 4};
    CHECK(linear_index(g, Coord3{1, 0, 2}) == 10);
    CHECK(linear_index(g, Coord3{0, 1, 3}) == 7);
    CHECK(linear_index(g, Coord3{0, 0, 0}) == 0);
    CHECK(linear_index(g, Coord3{1, 1, 3}) == 15);
    for (std::int64_t i = 0; i < g.count(); ++i) CHECK(linear_index(g, coord_of(g, i)) == i);
    CHECK_THROWS((void)linear_index(g, Coord3{2, 0, 0}), std::out_of_range);
    CHECK_THROWS((void)linear_index(g, Coord3{0, -1, 0}), std::out_of_range);
    CHECK_THROWS((void)coord_of(g, 16), std::out_of_range);
}

void frozen_permutation() {
    const CubePartition p = build_partition(GridDims{2, 2, 4}, CubeDims{1, 2, 2});
    const std::vector<std::int64_t> want = {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
    CHECK(p.perm == want);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(p.inv_perm[static_cast<std::size_t>(want[i])] == static_cast<std::int64_t>(i));
    CHECK(p.cube_count() == 4);
    CHECK(p.cube_grid == (CubeCoord{2, 1, 2}));
    // the second cube's tokens are NOT contiguous in the original layout:
    // {2, 3, 6, 7} has a gap, which is exactly why the reordering exists
    const Cube& c1 = p.cubes[1];
    CHECK(c1.range.start == 4 && c1.range.len == 4);
    bool contiguous_in_original = true;
    for (std::int64_t k = c1.range.start + 1; k < c1.range.start + c1.range.len; ++k)
        if (p.perm[static_cast<std::size_t>(k)] != p.perm[static_cast<std::size_t>(k - 1)] + 1)
            contiguous_in_original = false;
    CHECK(!contiguous_in_original);
}

void clipped_borders() {
    const CubePartition p = build_partition(GridDims{3, 5, 5}, CubeDims{2, 2, 2});
    CHECK(p.cube_count() == 18);  // 2 x 3 x 3
    std::int64_t total = 0;
    for (const Cube& c : p.cubes) {
        CHECK(c.range.len == c.extent.t * c.extent.y * c.extent.x);
        total += c.range.len;
    }
    CHECK(total == 75);
    // far-corner cube is clipped to 1 x 1 x 1
    const Cube& last = p.cubes.back();
    CHECK(last.coord == (CubeCoord{1, 2, 2}));
    CHECK(last.extent == (Coord3{1, 1, 1}));
}

void cube_lookup() {
    const CubePartition p = build_partition(GridDims{2, 2, 4}, CubeDims{1, 2, 2});
    CHECK(cube_of_token(p, 10) == (CubeCoord{1, 0, 1}));
    CHECK(cube_of_token(p, 0) == (CubeCoord{0, 0, 0}));
    for (std::int64_t k = 0; k < p.token_count(); ++k) {
        // the cube that owns position k in the reordered sequence agrees
        // with the coordinate arithmetic on the original index
        const Cube* owner = nullptr;
        for (const Cube& c : p.cubes)
            if (k >= c.range.start && k < c.range.start + c.range.len) owner = &c;
        CHECK(owner != nullptr);
        CHECK(cube_of_token(p, p.perm[static_cast<std::size_t>(k)]) == owner->coord);
    }
}

void identity_when_cube_covers_grid() {
    const GridDims g{2, 3, 4};
    const CubePartition p = build_partition(g, CubeDims{2, 3, 4});
    CHECK(p.cube_count() == 1);
    std::vector<std::int64_t> iota(static_cast<std::size_t>(g.count()));
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(p.perm == iota);
    CHECK(p.inv_perm == iota);
}

void random_round_trips() {
    Rng rng(42);
    for (int it = 0; it < 100; ++it) {
        const GridDims g{1 + rng.uniform_index(5), 1 + rng.uniform_index(5),
                         1 + rng.uniform_index(5)};
        const CubeDims c{1 + rng.uniform_index(g.t), 1 + rng.uniform_index(g.h),
                         1 + rng.uniform_index(g.w)};
        const CubePartition p = build_partition(g, c);

        std::vector<double> seq(static_cast<std::size_t>(g.count()));
        for (auto& v : seq) v = rng.uniform();
        const std::vector<double> reordered = apply_permutation(seq, p.perm);
        const std::vector<double> back = apply_permutation(reordered, p.inv_perm);
        CHECK(back == seq);
        for (std::int64_t k = 0; k < g.count(); ++k)
            CHECK(p.inv_perm[static_cast<std::size_t>(p.perm[static_cast<std::size_t>(k)])] == k);
    }
}

void exhaustive_small_partition_sweep() {
    // Every grid with dims <= 16 under every valid cube size.
    std::vector<char> seen;
    int bad = 0;
    for (std::int64_t t = 1; t <= 16; ++t)
        for (std::int64_t h = 1; h <= 16; ++h)
            for (std::int64_t w = 1; w <= 16; ++w)
                for (std::int64_t ct = 1; ct <= t; ++ct)
                    for (std::int64_t ch = 1; ch <= h; ++ch)
                        for (std::int64_t cw = 1; cw <= w; ++cw) {
                            const CubePartition p =
                                build_partition(GridDims{t, h, w}, CubeDims{ct, ch, cw});
                            if (!partition_is_sound(p, seen)) {
                                if (bad < 5)
                                    std::printf("    bad partition: grid (%lld,%lld,%lld) cube "
                                                "(%lld,%lld,%lld)\n",
                                                static_cast<long long>(t), static_cast<long long>(h),
                                                static_cast<long long>(w), static_cast<long long>(ct),
                                                static_cast<long long>(ch), static_cast<long long>(cw));
                                ++bad;
                            }
                        }
    CHECK(bad == 0);
}

void random_larger_partitions() {
    Rng rng(2024);
    std::vector<char> seen;
    int bad = 0;
    for (int it = 0; it < 100; ++it) {
        // at least one dim beyond the exhaustive sweep's reach
        GridDims g{1 + rng.uniform_index(40), 1 + rng.uniform_index(40), 1 + rng.uniform_index(40)};
        switch (it % 3) {
            case 0: g.t = 17 + rng.uniform_index(24); break;
            case 1: g.h = 17 + rng.uniform_index(24); break;
            default: g.w = 17 + rng.uniform_index(24); break;
        }
        const CubeDims c{1 + rng.uniform_index(g.t), 1 + rng.uniform_index(g.h),
                         1 + rng.uniform_index(g.w)};
        const CubePartition p = build_partition(g, c);
        if (!partition_is_sound(p, seen)) ++bad;
    }
    CHECK(bad == 0);
}

void geometric_locality() {
    // within one cube, any two tokens are within the cube edge lengths on
    // every axis; under the plain row-major layout that bound fails
    const GridDims g{2, 2, 4};
    const CubeDims c{1, 2, 2};
    const CubePartition p = build_partition(g, c);
    for (const Cube& cb : p.cubes)
        for (std::int64_t a = cb.range.start; a < cb.range.start + cb.range.len; ++a)
            for (std::int64_t b = cb.range.start; b < cb.range.start + cb.range.len; ++b) {
                const Coord3 ca = coord_of(g, p.perm[static_cast<std::size_t>(a)]);
                const Coord3 cc = coord_of(g, p.perm[static_cast<std::size_t>(b)]);
                CHECK(std::abs(ca.t - cc.t) < c.ct);
                CHECK(std::abs(ca.y - cc.y) < c.ch);
                CHECK(std::abs(ca.x - cc.x) < c.cw);
            }
    // same-size windows of the unpermuted sequence break the bound
    bool identity_layout_violates = false;
    const std::int64_t window = c.ct * c.ch * c.cw;
    for (std::int64_t start = 0; start + window <= g.count(); start += window)
        for (std::int64_t a = start; a < start + window; ++a)
            for (std::int64_t b = start; b < start + window; ++b) {
                const Coord3 ca = coord_of(g, a);
                const Coord3 cc = coord_of(g, b);
                if (std::abs(ca.t - cc.t) >= c.ct || std::abs(ca.y - cc.y) >= c.ch ||
                    std::abs(ca.x - cc.x) >= c.cw)
                    identity_layout_violates = true;
            }
    CHECK(identity_layout_violates);
}

void adjacency_predicates() {
    CHECK(cubes_adjacent(CubeCoord{0, 0, 0}, CubeCoord{0, 0, 0}, 0));
    CHECK(!cubes_adjacent(CubeCoord{0, 0, 0}, CubeCoord{0, 0, 1}, 0));
    CHECK(cubes_adjacent(CubeCoord{0, 0, 0}, CubeCoord{1, 1, 1}, 1));  // diagonal
    CHECK(!cubes_adjacent(CubeCoord{0, 0, 0}, CubeCoord{0, 0, 2}, 1));
    CHECK(cubes_adjacent(CubeCoord{0, 0, 0}, CubeCoord{0, 0, 2}, 2));
    CHECK(cubes_adjacent_faces(CubeCoord{1, 1, 1}, CubeCoord{1, 1, 1}));
    CHECK(cubes_adjacent_faces(CubeCoord{1, 1, 1}, CubeCoord{1, 1, 2}));
    CHECK(!cubes_adjacent_faces(CubeCoord{0, 0, 0}, CubeCoord{0, 1, 1}));  // diagonal
    CHECK_THROWS((void)cubes_adjacent(CubeCoord{0, 0, 0}, CubeCoord{0, 0, 0}, -1),
                 std::invalid_argument);
}

void invalid_arguments() {
    CHECK_THROWS((void)build_partition(GridDims{0, 2, 2}, CubeDims{1, 1, 1}), std::invalid_argument);
    CHECK_THROWS((void)build_partition(GridDims{2, 2, 2}, CubeDims{3, 1, 1}), std::invalid_argument);
    CHECK_THROWS((void)build_partition(GridDims{2, 2, 2}, CubeDims{0, 1, 1}), std::invalid_argument);
    const std::vector<double> seq = {1.0, 2.0};
    const std::vector<std::int64_t> bad = {0};
    CHECK_THROWS((void)apply_permutation(seq, bad), std::invalid_argument);
    CHECK(ceil_div(5, 2) == 3);
    CHECK(ceil_div(4, 2) == 2);
}

}  // namespace

int main() {
    return tst::run({
        {"linear_index_and_back", linear_index_and_back},
        {"frozen_permutation", frozen_permutation},
        {"clipped_borders", clipped_borders},
        {"cube_lookup", cube_lookup},
        {"identity_when_cube_covers_grid", identity_when_cube_covers_grid},
        {"random_round_trips", random_round_trips},
        {"exhaustive_small_partition_sweep", exhaustive_small_partition_sweep},
        {"random_larger_partitions", random_larger_partitions},
        {"geometric_locality", geometric_locality},
        {"adjacency_predicates", adjacency_predicates},
        {"invalid_arguments", invalid_arguments},
    });
}
