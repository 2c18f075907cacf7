#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vidattn/grid.hpp"
#include "vidattn/mask.hpp"

namespace vidattn {

// Window shape for the cost model's cube neighbourhood. The sparse kernel
// itself always uses the Chebyshev window; `faces` (6-connected, radius
// fixed at 1) exists only as a sensitivity variant of the analytic model.
enum class CubeAdjacency { chebyshev, faces };

CubeAdjacency parse_cube_adjacency(const std::string& s);

// One attention configuration for the analytic cost model. Convention
// everywhere: 1 MAC = 2 flops; softmax exponentials/divisions excluded.
struct CostConfig {
    std::string name;
    GridDims grid;          // detail token grid
    CubeDims cube;
    int radius = 1;
    std::int64_t n_global = 0;
    int head_dim = 128;
    int heads = 12;
    DetailToGlobal policy = DetailToGlobal::full;
    CubeAdjacency adjacency = CubeAdjacency::chebyshev;

    std::int64_t d_total() const { return static_cast<std::int64_t>(head_dim) * heads; }
};

struct FlopsReport {
    std::string name;
    std::int64_t n_tokens = 0;
    std::int64_t n_global = 0;
    double dense_flops = 0.0;
    double local_flops = 0.0;
    double ratio = 0.0;  // dense / local
    // Per-term breakdown of local_flops. Two complete views:
    // by operation (scores + weighted = local) ...
    double term_scores = 0.0;
    double term_weighted = 0.0;
    // ... and by block (window + detail->global + global<->global = local).
    double term_detail_window = 0.0;
    double term_detail_to_global = 0.0;
    double term_global_block = 0.0;
};

// Full attention over n_tokens: QK^T and PV each cost n^2 d MACs, so
// 2 * (2 * n^2 * d) = 4 n^2 d flops.
double dense_attention_flops(std::int64_t n_tokens, std::int64_t d_total);

// Visible detail<->detail (query, key) pairs under the cube window.
std::int64_t local_visible_pairs(const CubePartition& part, int radius);
// Same count under the 6-connected window (own cube + face neighbours).
std::int64_t local_visible_pairs_faces(const CubePartition& part);

// Block-local cost: 4 d [ sum_q visible_keys(q) + n_global^2 + N n_global
// (if policy full) ]. Equals exactly 2x the sparse kernel's MAC count.
double local_attention_flops(const CostConfig& cfg);

FlopsReport make_flops_report(const CostConfig& cfg);
std::vector<FlopsReport> flops_table(const std::vector<CostConfig>& cfgs);

// Matched-duration self-attention saving of generating at 1/r_t frame rate:
// (r_t N')^2 / N'^2 = r_t^2.
double stage1_cost_ratio(double r_t);

// Preset file: a JSON array of CostConfig objects. Throws on parse errors,
// unknown keys, or an empty list.
std::vector<CostConfig> load_cost_configs(const std::string& path);

// CSV with header name,N,n_global,dense_flops,local_flops,ratio.
void write_flops_csv(std::ostream& os, const std::vector<FlopsReport>& rows);

}  // namespace vidattn
