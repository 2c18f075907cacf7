#include "vidattn/flops.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace vidattn {

double dense_attention_flops(std::int64_t n_tokens, std::int64_t d_total) {
    if (n_tokens <= 0 || d_total <= 0)
        throw std::invalid_argument("dense_attention_flops: n_tokens and d_total must be positive");
    const double n = static_cast<double>(n_tokens);
    return 4.0 * n * n * static_cast<double>(d_total);
}

CubeAdjacency parse_cube_adjacency(const std::string& s) {
    if (s == "chebyshev") return CubeAdjacency::chebyshev;
    if (s == "faces") return CubeAdjacency::faces;
    throw std::invalid_argument("adjacency must be 'chebyshev' or 'faces', got '" + s + "'");
}

std::int64_t local_visible_pairs(const CubePartition& part, int radius) {
    std::int64_t pairs = 0;
    for (const Cube& a : part.cubes)
        for (const Cube& b : part.cubes)
            if (cubes_adjacent(a.coord, b.coord, radius)) pairs += a.range.len * b.range.len;
    return pairs;
}

std::int64_t local_visible_pairs_faces(const CubePartition& part) {
    std::int64_t pairs = 0;
    for (const Cube& a : part.cubes)
        for (const Cube& b : part.cubes)
            if (cubes_adjacent_faces(a.coord, b.coord)) pairs += a.range.len * b.range.len;
    return pairs;
}

namespace {

std::int64_t window_pairs(const CubePartition& part, const CostConfig& cfg) {
    if (cfg.adjacency == CubeAdjacency::faces) {
        if (cfg.radius != 1)
            throw std::invalid_argument("CostConfig: face adjacency fixes radius at 1");
        return local_visible_pairs_faces(part);
    }
    return local_visible_pairs(part, cfg.radius);
}

}  // namespace

double local_attention_flops(const CostConfig& cfg) {
    const CubePartition part = build_partition(cfg.grid, cfg.cube);
    const double d = static_cast<double>(cfg.d_total());
    const double window = static_cast<double>(window_pairs(part, cfg));
    const double n = static_cast<double>(part.token_count());
    const double g = static_cast<double>(cfg.n_global);
    double pairs = window + g * g;
    if (cfg.policy == DetailToGlobal::full) pairs += n * g;
    return 4.0 * d * pairs;
}

FlopsReport make_flops_report(const CostConfig& cfg) {
    if (cfg.n_global < 0) throw std::invalid_argument("CostConfig: n_global must be >= 0");
    if (cfg.head_dim <= 0 || cfg.heads <= 0)
        throw std::invalid_argument("CostConfig: head_dim and heads must be positive");
    const CubePartition part = build_partition(cfg.grid, cfg.cube);

    FlopsReport r;
    r.name = cfg.name;
    r.n_tokens = part.token_count();
    r.n_global = cfg.n_global;

    const double d = static_cast<double>(cfg.d_total());
    const double window = static_cast<double>(window_pairs(part, cfg));
    const double n = static_cast<double>(r.n_tokens);
    const double g = static_cast<double>(cfg.n_global);
    const double cross = cfg.policy == DetailToGlobal::full ? n * g : 0.0;
    const double pairs = window + g * g + cross;

    r.dense_flops = dense_attention_flops(r.n_tokens, cfg.d_total());
    r.local_flops = 4.0 * d * pairs;
    r.ratio = r.dense_flops / r.local_flops;
    r.term_scores = 2.0 * d * pairs;
    r.term_weighted = 2.0 * d * pairs;
    r.term_detail_window = 4.0 * d * window;
    r.term_detail_to_global = 4.0 * d * cross;
    r.term_global_block = 4.0 * d * g * g;
    return r;
}

std::vector<FlopsReport> flops_table(const std::vector<CostConfig>& cfgs) {
    std::vector<FlopsReport> rows;
    rows.reserve(cfgs.size());
    for (const CostConfig& c : cfgs) rows.push_back(make_flops_report(c));
    return rows;
}

double stage1_cost_ratio(double r_t) {
    if (r_t <= 0.0) throw std::invalid_argument("stage1_cost_ratio: r_t must be positive");
    return r_t * r_t;
}

std::vector<CostConfig> load_cost_configs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open preset file: " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (!j.is_array()) throw std::invalid_argument("preset file must hold a JSON array");
    if (j.empty()) throw std::invalid_argument("preset file holds an empty list");

    std::vector<CostConfig> out;
    for (const auto& e : j) {
        static const char* known[] = {"name",     "grid",     "cube",  "radius",
                                      "n_global", "head_dim", "heads", "detail_to_global",
                                      "adjacency"};
        for (auto it = e.begin(); it != e.end(); ++it) {
            bool ok = false;
            for (const char* k : known)
                if (it.key() == k) ok = true;
            if (!ok) throw std::invalid_argument("preset entry has unknown key '" + it.key() + "'");
        }
        CostConfig c;
        c.name = e.at("name").get<std::string>();
        const auto g = e.at("grid");
        const auto cu = e.at("cube");
        if (!g.is_array() || g.size() != 3 || !cu.is_array() || cu.size() != 3)
            throw std::invalid_argument("preset grid/cube must be [t,h,w] triples");
        c.grid = GridDims{g[0].get<std::int64_t>(), g[1].get<std::int64_t>(), g[2].get<std::int64_t>()};
        c.cube = CubeDims{cu[0].get<std::int64_t>(), cu[1].get<std::int64_t>(), cu[2].get<std::int64_t>()};
        c.radius = e.value("radius", 1);
        c.n_global = e.value("n_global", std::int64_t{0});
        c.head_dim = e.value("head_dim", 128);
        c.heads = e.value("heads", 12);
        c.policy = parse_detail_to_global(e.value("detail_to_global", std::string("full")));
        c.adjacency = parse_cube_adjacency(e.value("adjacency", std::string("chebyshev")));
        out.push_back(std::move(c));
    }
    return out;
}

void write_flops_csv(std::ostream& os, const std::vector<FlopsReport>& rows) {
    os << "name,N,n_global,dense_flops,local_flops,ratio\n";
    char buf[128];
    for (const FlopsReport& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.0f,%.0f,%.4f", r.dense_flops, r.local_flops, r.ratio);
        os << r.name << ',' << r.n_tokens << ',' << r.n_global << ',' << buf << '\n';
    }
}

}  // namespace vidattn
