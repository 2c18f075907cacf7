#include "vidattn/grid.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace vidattn {

namespace {

void require_positive(const GridDims& g) {
    if (!g.positive()) throw std::invalid_argument("grid dims must be positive");
}

}  // namespace

std::int64_t linear_index(const GridDims& grid, const Coord3& c) {
    require_positive(grid);
    if (c.t < 0 || c.t >= grid.t || c.y < 0 || c.y >= grid.h || c.x < 0 || c.x >= grid.w)
        throw std::out_of_range("linear_index: coordinate outside grid");
    return (c.t * grid.h + c.y) * grid.w + c.x;
}

Coord3 coord_of(const GridDims& grid, std::int64_t index) {
    require_positive(grid);
    if (index < 0 || index >= grid.count()) throw std::out_of_range("coord_of: index outside grid");
    Coord3 c;
    c.x = index % grid.w;
    c.y = (index / grid.w) % grid.h;
    c.t = index / (grid.w * grid.h);
    return c;
}

CubePartition build_partition(const GridDims& grid, const CubeDims& cube) {
    require_positive(grid);
    if (cube.ct <= 0 || cube.ch <= 0 || cube.cw <= 0)
        throw std::invalid_argument("cube dims must be positive");
    if (cube.ct > grid.t || cube.ch > grid.h || cube.cw > grid.w)
        throw std::invalid_argument("cube dims must not exceed grid dims");

    CubePartition part;
    part.grid = grid;
    part.cube = cube;
    part.cube_grid = CubeCoord{ceil_div(grid.t, cube.ct), ceil_div(grid.h, cube.ch), ceil_div(grid.w, cube.cw)};

    const std::int64_t n = grid.count();
    part.perm.resize(static_cast<std::size_t>(n));
    part.inv_perm.resize(static_cast<std::size_t>(n));
    part.cubes.reserve(
        static_cast<std::size_t>(part.cube_grid.it * part.cube_grid.iy * part.cube_grid.ix));

    std::int64_t pos = 0;
    for (std::int64_t it = 0; it < part.cube_grid.it; ++it) {
        const std::int64_t t0 = it * cube.ct;
        const std::int64_t dt = std::min(cube.ct, grid.t - t0);
        for (std::int64_t iy = 0; iy < part.cube_grid.iy; ++iy) {
            const std::int64_t y0 = iy * cube.ch;
            const std::int64_t dy = std::min(cube.ch, grid.h - y0);
            for (std::int64_t ix = 0; ix < part.cube_grid.ix; ++ix) {
                const std::int64_t x0 = ix * cube.cw;
                const std::int64_t dx = std::min(cube.cw, grid.w - x0);

                Cube cb;
                cb.coord = CubeCoord{it, iy, ix};
                cb.extent = Coord3{dt, dy, dx};
                cb.range = TokenRange{pos, dt * dy * dx};
                for (std::int64_t lt = 0; lt < dt; ++lt)
                    for (std::int64_t ly = 0; ly < dy; ++ly)
                        for (std::int64_t lx = 0; lx < dx; ++lx) {
                            const std::int64_t orig =
                                linear_index(grid, Coord3{t0 + lt, y0 + ly, x0 + lx});
                            part.perm[static_cast<std::size_t>(pos)] = orig;
                            part.inv_perm[static_cast<std::size_t>(orig)] = pos;
                            ++pos;
                        }
                part.cubes.push_back(cb);
            }
        }
    }
    return part;
}

CubeCoord cube_of_token(const CubePartition& part, std::int64_t original_index) {
    const Coord3 c = coord_of(part.grid, original_index);  // throws on out-of-range
    return CubeCoord{c.t / part.cube.ct, c.y / part.cube.ch, c.x / part.cube.cw};
}

bool cubes_adjacent(const CubeCoord& a, const CubeCoord& b, int radius) {
    if (radius < 0) throw std::invalid_argument("adjacency radius must be >= 0");
    const std::int64_t dt = std::llabs(a.it - b.it);
    const std::int64_t dy = std::llabs(a.iy - b.iy);
    const std::int64_t dx = std::llabs(a.ix - b.ix);
    const std::int64_t cheb = std::max(dt, std::max(dy, dx));
    return cheb <= radius;
}

bool cubes_adjacent_faces(const CubeCoord& a, const CubeCoord& b) {
    const std::int64_t dt = std::llabs(a.it - b.it);
    const std::int64_t dy = std::llabs(a.iy - b.iy);
    const std::int64_t dx = std::llabs(a.ix - b.ix);
    return dt + dy + dx <= 1;
}

}  // namespace vidattn
