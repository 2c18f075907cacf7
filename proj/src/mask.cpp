#include "vidattn/mask.hpp"

#include <algorithm>
#include <stdexcept>

namespace vidattn {

DetailToGlobal parse_detail_to_global(const std::string& s) {
    if (s == "full") return DetailToGlobal::full;
    if (s == "none") return DetailToGlobal::none;
    throw std::invalid_argument("detail_to_global policy must be 'full' or 'none', got '" + s + "'");
}

std::string to_string(DetailToGlobal p) { return p == DetailToGlobal::full ? "full" : "none"; }

bool JointBlockMask::allowed(std::int64_t q, std::int64_t k) const {
    const std::int64_t total = total_tokens();
    if (q < 0 || q >= total || k < 0 || k >= total)
        throw std::out_of_range("JointBlockMask::allowed: index outside joint sequence");
    const bool q_detail = q < n_detail;
    const bool k_detail = k < n_detail;
    if (q_detail && k_detail) {
        const Cube& a = partition.cubes[static_cast<std::size_t>(cube_of_reordered[static_cast<std::size_t>(q)])];
        const Cube& b = partition.cubes[static_cast<std::size_t>(cube_of_reordered[static_cast<std::size_t>(k)])];
        return cubes_adjacent(a.coord, b.coord, radius);
    }
    if (q_detail && !k_detail) return policy == DetailToGlobal::full;
    if (!q_detail && k_detail) return false;  // one-way guidance
    return true;                              // global <-> global
}

JointBlockMask build_joint_mask(const CubePartition& part, std::int64_t n_global, int radius,
                                DetailToGlobal policy) {
    if (n_global < 0) throw std::invalid_argument("build_joint_mask: n_global must be >= 0");
    if (radius < 0) throw std::invalid_argument("build_joint_mask: radius must be >= 0");

    JointBlockMask m;
    m.n_detail = part.token_count();
    m.n_global = n_global;
    m.partition = part;
    m.radius = radius;
    m.policy = policy;

    m.cube_of_reordered.resize(static_cast<std::size_t>(m.n_detail));
    for (std::size_t c = 0; c < part.cubes.size(); ++c) {
        const TokenRange r = part.cubes[c].range;
        for (std::int64_t k = r.start; k < r.start + r.len; ++k)
            m.cube_of_reordered[static_cast<std::size_t>(k)] = static_cast<std::int32_t>(c);
    }

    // Neighbor lists in ascending cube order: iterating the per-axis index
    // windows lexicographically visits row-major cube indices in order.
    const CubeCoord ng = part.cube_grid;
    m.neighbors.resize(part.cubes.size());
    for (std::size_t c = 0; c < part.cubes.size(); ++c) {
        const CubeCoord a = part.cubes[c].coord;
        const std::int64_t t0 = std::max<std::int64_t>(0, a.it - radius);
        const std::int64_t t1 = std::min<std::int64_t>(ng.it - 1, a.it + radius);
        const std::int64_t y0 = std::max<std::int64_t>(0, a.iy - radius);
        const std::int64_t y1 = std::min<std::int64_t>(ng.iy - 1, a.iy + radius);
        const std::int64_t x0 = std::max<std::int64_t>(0, a.ix - radius);
        const std::int64_t x1 = std::min<std::int64_t>(ng.ix - 1, a.ix + radius);
        for (std::int64_t jt = t0; jt <= t1; ++jt)
            for (std::int64_t jy = y0; jy <= y1; ++jy)
                for (std::int64_t jx = x0; jx <= x1; ++jx)
                    m.neighbors[c].push_back(static_cast<std::int32_t>((jt * ng.iy + jy) * ng.ix + jx));
    }
    return m;
}

template <typename T>
Matrix<T> materialize_mask(const JointBlockMask& m) {
    const std::int64_t total = m.total_tokens();
    if (total > kMaterializeCap)
        throw std::length_error("materialize_mask: joint sequence exceeds cap of " +
                                std::to_string(kMaterializeCap) + " tokens");
    Matrix<T> out(total, total);
    for (std::int64_t q = 0; q < total; ++q)
        for (std::int64_t k = 0; k < total; ++k)
            out(q, k) = m.allowed(q, k) ? T(0) : static_cast<T>(kMaskSentinel);
    return out;
}

template Matrix<float> materialize_mask<float>(const JointBlockMask&);
template Matrix<double> materialize_mask<double>(const JointBlockMask&);

std::int64_t allowed_entry_count(const JointBlockMask& m) {
    std::int64_t count = 0;
    // detail <-> detail via block structure
    for (std::size_t c = 0; c < m.partition.cubes.size(); ++c) {
        const std::int64_t qlen = m.partition.cubes[c].range.len;
        for (std::int32_t nb : m.neighbors[c]) count += qlen * m.partition.cubes[static_cast<std::size_t>(nb)].range.len;
    }
    if (m.policy == DetailToGlobal::full) count += m.n_detail * m.n_global;
    count += m.n_global * m.n_global;
    return count;
}

}  // namespace vidattn
