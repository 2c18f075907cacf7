#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vidattn/grid.hpp"
#include "vidattn/matrix.hpp"

namespace vidattn {

// What detail queries may read from the global span.
enum class DetailToGlobal { full, none };

DetailToGlobal parse_detail_to_global(const std::string& s);  // "full" | "none"
std::string to_string(DetailToGlobal p);

// Additive-mask sentinel used by the dense reference path. Kept finite so
// softmax max-subtraction never produces inf-inf = NaN; exp() of any masked
// score still underflows to exactly 0.
inline constexpr double kMaskSentinel = -1e30;
inline constexpr double kMaskThreshold = -1e29;  // entries <= this count as forbidden

// Visibility over a joint sequence laid out as [detail span; global span].
// Rules:
//   detail  <-> detail : allowed iff their cubes are Chebyshev-adjacent
//   detail   -> global : per policy (full or none)
//   global   -> detail : never (guidance is one-way)
//   global  <-> global : always
// Detail indices refer to the *reordered* (cube-contiguous) sequence.
struct JointBlockMask {
    std::int64_t n_detail = 0;
    std::int64_t n_global = 0;
    CubePartition partition;
    int radius = 1;
    DetailToGlobal policy = DetailToGlobal::full;

    // cube_of_reordered[k]: index into partition.cubes for detail position k.
    std::vector<std::int32_t> cube_of_reordered;
    // neighbors[c]: ascending cube indices visible from cube c (includes c).
    // This is the precomputed block structure the sparse kernel walks; the
    // allowed() predicate below recomputes adjacency from first principles
    // so the two can cross-check each other.
    std::vector<std::vector<std::int32_t>> neighbors;

    std::int64_t total_tokens() const { return n_detail + n_global; }
    bool allowed(std::int64_t q, std::int64_t k) const;
};

JointBlockMask build_joint_mask(const CubePartition& part, std::int64_t n_global, int radius,
                                DetailToGlobal policy);

// Dense additive mask: 0 where allowed, kMaskSentinel where forbidden.
// Refuses sequences longer than kMaterializeCap tokens.
inline constexpr std::int64_t kMaterializeCap = 4096;

template <typename T>
Matrix<T> materialize_mask(const JointBlockMask& m);

// Number of allowed (query, key) entries, computed from the block structure.
std::int64_t allowed_entry_count(const JointBlockMask& m);

}  // namespace vidattn
