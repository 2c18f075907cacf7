#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace vidattn {

// A video latent grid of T frames x H rows x W columns. Tokens are addressed
// row-major in (t, y, x) order: index = t*H*W + y*W + x.
struct GridDims {
    std::int64_t t = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t count() const { return t * h * w; }
    bool positive() const { return t > 0 && h > 0 && w > 0; }
    bool operator==(const GridDims&) const = default;
};

// Edge lengths of one cube of the partition, in tokens per axis.
struct CubeDims {
    std::int64_t ct = 0;
    std::int64_t ch = 0;
    std::int64_t cw = 0;
    bool operator==(const CubeDims&) const = default;
};

struct Coord3 {
    std::int64_t t = 0;
    std::int64_t y = 0;
    std::int64_t x = 0;
    bool operator==(const Coord3&) const = default;
};

struct CubeCoord {
    std::int64_t it = 0;
    std::int64_t iy = 0;
    std::int64_t ix = 0;
    bool operator==(const CubeCoord&) const = default;
};

// Contiguous span [start, start+len) in the reordered token sequence.
struct TokenRange {
    std::int64_t start = 0;
    std::int64_t len = 0;
};

struct Cube {
    CubeCoord coord;   // position in the cube grid
    Coord3 extent;     // actual edge lengths (border cubes are clipped)
    TokenRange range;  // span in the reordered sequence
};

struct Permutation {
    // forward[k] = original index of the token at reordered position k.
    std::vector<std::int64_t> forward;
    // inverse[i] = reordered position of original token i.
    std::vector<std::int64_t> inverse;
};

// Cube decomposition of a grid. The grid is cut into ceil(T/ct) x ceil(H/ch)
// x ceil(W/cw) cubes; cubes at the far borders are clipped, never padded.
// perm lists, cube by cube (cubes row-major in (it, iy, ix), tokens row-major
// in (t, y, x) inside each cube), the original index of every token, so each
// cube owns one contiguous span of the reordered sequence.
struct CubePartition {
    GridDims grid;
    CubeDims cube;
    CubeCoord cube_grid;  // number of cubes per axis
    std::vector<Cube> cubes;
    std::vector<std::int64_t> perm;      // reordered position -> original index
    std::vector<std::int64_t> inv_perm;  // original index -> reordered position

    std::int64_t token_count() const { return grid.count(); }
    std::int64_t cube_count() const { return static_cast<std::int64_t>(cubes.size()); }

    Permutation permutation() const { return Permutation{perm, inv_perm}; }
};

std::int64_t linear_index(const GridDims& grid, const Coord3& c);
Coord3 coord_of(const GridDims& grid, std::int64_t index);

// Throws std::invalid_argument unless 0 < cube dim <= grid dim on every axis.
CubePartition build_partition(const GridDims& grid, const CubeDims& cube);

// Cube-grid coordinate of an original (row-major) token index.
CubeCoord cube_of_token(const CubePartition& part, std::int64_t original_index);

// Chebyshev adjacency on cube coordinates: max per-axis distance <= radius.
// radius 0 means "same cube"; face adjacency (radius 1, no diagonals) is
// cubes_adjacent_faces.
bool cubes_adjacent(const CubeCoord& a, const CubeCoord& b, int radius);
bool cubes_adjacent_faces(const CubeCoord& a, const CubeCoord& b);

// out[k] = seq[forward[k]]. Applying the inverse array undoes it.
template <typename T>
std::vector<T> apply_permutation(const std::vector<T>& seq, const std::vector<std::int64_t>& forward) {
    if (seq.size() != forward.size()) throw std::invalid_argument("apply_permutation: length mismatch");
    std::vector<T> out(seq.size());
    for (std::size_t k = 0; k < forward.size(); ++k) out[k] = seq[static_cast<std::size_t>(forward[k])];
    return out;
}

template <typename T>
std::vector<T> apply_permutation(const std::vector<T>& seq, const Permutation& p) {
    return apply_permutation(seq, p.forward);
}

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace vidattn
