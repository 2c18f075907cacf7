#include "vidattn/check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <tuple>

#include "vidattn/attention.hpp"
#include "vidattn/dit.hpp"
#include "vidattn/flops.hpp"
#include "vidattn/grid.hpp"
#include "vidattn/mask.hpp"
#include "vidattn/matrix.hpp"
#include "vidattn/rng.hpp"
#include "vidattn/rope.hpp"

namespace vidattn {

namespace {

CheckResult make_result(std::string name, double max_error, double tolerance) {
    CheckResult r;
    r.name = std::move(name);
    r.max_error = max_error;
    r.tolerance = tolerance;
    r.pass = max_error <= tolerance;
    return r;
}

struct RandomJointCase {
    CubePartition part;
    JointBlockMask mask;
    int d = 0;
};

RandomJointCase random_joint_case(Rng& rng, bool force_multi_cube) {
    GridDims grid{1 + rng.uniform_index(3), 1 + rng.uniform_index(4), 1 + rng.uniform_index(4)};
    CubeDims cube{1 + rng.uniform_index(std::min<std::int64_t>(2, grid.t)),
                  1 + rng.uniform_index(std::min<std::int64_t>(2, grid.h)),
                  1 + rng.uniform_index(std::min<std::int64_t>(2, grid.w))};
    if (force_multi_cube) {
        grid = GridDims{3, 4, 4};
        cube = CubeDims{2, 2, 2};
    }
    const int radius = static_cast<int>(rng.uniform_index(2));
    const std::int64_t n_global = 2 * rng.uniform_index(3);
    const DetailToGlobal policy =
        rng.uniform_index(2) == 0 ? DetailToGlobal::full : DetailToGlobal::none;

    RandomJointCase c;
    c.part = build_partition(grid, cube);
    c.mask = build_joint_mask(c.part, n_global, radius, policy);
    c.d = 2 * static_cast<int>(1 + rng.uniform_index(6));  // 2..12
    return c;
}

// Removes one entry from every multi-entry neighbor list, preferring a
// non-self cube so the sparse kernel silently skips visible keys.
void corrupt_neighbors(JointBlockMask& m) {
    for (std::size_t c = 0; c < m.neighbors.size(); ++c) {
        auto& list = m.neighbors[c];
        if (list.size() < 2) continue;
        if (list.back() != static_cast<std::int32_t>(c))
            list.pop_back();
        else
            list.erase(list.begin());
    }
}

template <typename T>
double sparse_dense_equivalence_error(bool corrupt) {
    Rng rng(2024);
    double max_err = 0.0;
    for (int it = 0; it < 50; ++it) {
        RandomJointCase c = random_joint_case(rng, it == 0);
        if (corrupt) corrupt_neighbors(c.mask);
        const std::int64_t total = c.mask.total_tokens();

        AttentionInputs<T> inp;
        inp.Q = Matrix<T>(total, c.d);
        inp.K = Matrix<T>(total, c.d);
        inp.V = Matrix<T>(total, c.d);
        inp.scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c.d)));
        for (auto& v : inp.Q.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));
        for (auto& v : inp.K.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));
        for (auto& v : inp.V.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));

        const Matrix<T> dense_mask = materialize_mask<T>(c.mask);
        const Matrix<T> ref = dense_masked_attention(inp, dense_mask);
        const Matrix<T> fast = block_sparse_attention(inp, c.mask);
        for (std::size_t i = 0; i < ref.data.size(); ++i)
            max_err = std::max(max_err,
                               std::abs(static_cast<double>(ref.data[i] - fast.data[i])));
    }
    return max_err;
}

double partition_invariant_violations() {
    double violations = 0.0;
    for (std::int64_t t = 1; t <= 6; ++t)
        for (std::int64_t h = 1; h <= 6; ++h)
            for (std::int64_t w = 1; w <= 6; ++w)
                for (std::int64_t ct = 1; ct <= t; ++ct)
                    for (std::int64_t ch = 1; ch <= h; ++ch)
                        for (std::int64_t cw = 1; cw <= w; ++cw) {
                            const GridDims grid{t, h, w};
                            const CubeDims cube{ct, ch, cw};
                            const CubePartition part = build_partition(grid, cube);
                            const std::int64_t n = grid.count();

                            if (part.cube_grid.it != ceil_div(t, ct) ||
                                part.cube_grid.iy != ceil_div(h, ch) ||
                                part.cube_grid.ix != ceil_div(w, cw))
                                violations += 1.0;
                            if (part.cube_count() !=
                                part.cube_grid.it * part.cube_grid.iy * part.cube_grid.ix)
                                violations += 1.0;

                            // perm is a bijection and inv_perm is its inverse
                            std::vector<char> seen(static_cast<std::size_t>(n), 0);
                            for (std::int64_t k = 0; k < n; ++k) {
                                const std::int64_t orig = part.perm[static_cast<std::size_t>(k)];
                                if (orig < 0 || orig >= n || seen[static_cast<std::size_t>(orig)]) {
                                    violations += 1.0;
                                    continue;
                                }
                                seen[static_cast<std::size_t>(orig)] = 1;
                                if (part.inv_perm[static_cast<std::size_t>(orig)] != k)
                                    violations += 1.0;
                            }

                            // cubes tile the reordered sequence contiguously,
                            // row-major at both levels, with clipped extents
                            std::int64_t next_start = 0;
                            std::int64_t cube_idx = 0;
                            for (const Cube& cb : part.cubes) {
                                const CubeCoord expect{
                                    cube_idx / (part.cube_grid.iy * part.cube_grid.ix),
                                    (cube_idx / part.cube_grid.ix) % part.cube_grid.iy,
                                    cube_idx % part.cube_grid.ix};
                                if (!(cb.coord == expect)) violations += 1.0;
                                if (cb.range.start != next_start) violations += 1.0;
                                next_start += cb.range.len;

                                const Coord3 want_extent{std::min(ct, t - cb.coord.it * ct),
                                                         std::min(ch, h - cb.coord.iy * ch),
                                                         std::min(cw, w - cb.coord.ix * cw)};
                                if (!(cb.extent == want_extent)) violations += 1.0;
                                if (cb.range.len != want_extent.t * want_extent.y * want_extent.x)
                                    violations += 1.0;

                                // tokens inside a cube stay in its box, in
                                // row-major (t, y, x) order
                                Coord3 prev{-1, -1, -1};
                                for (std::int64_t k = cb.range.start;
                                     k < cb.range.start + cb.range.len; ++k) {
                                    const Coord3 c =
                                        coord_of(grid, part.perm[static_cast<std::size_t>(k)]);
                                    if (c.t < cb.coord.it * ct || c.t >= cb.coord.it * ct + ct ||
                                        c.y < cb.coord.iy * ch || c.y >= cb.coord.iy * ch + ch ||
                                        c.x < cb.coord.ix * cw || c.x >= cb.coord.ix * cw + cw)
                                        violations += 1.0;
                                    const bool ascending =
                                        std::tie(c.t, c.y, c.x) > std::tie(prev.t, prev.y, prev.x);
                                    if (!ascending) violations += 1.0;
                                    prev = c;

                                    if (!(cube_of_token(part, part.perm[static_cast<std::size_t>(k)]) ==
                                          cb.coord))
                                        violations += 1.0;
                                }
                                ++cube_idx;
                            }
                            if (next_start != n) violations += 1.0;
                        }
    return violations;
}

double mask_rule_violations() {
    Rng rng(77);
    double violations = 0.0;
    for (int it = 0; it < 20; ++it) {
        RandomJointCase c = random_joint_case(rng, it == 0);
        const JointBlockMask& m = c.mask;
        const std::int64_t n = m.n_detail;
        const std::int64_t total = m.total_tokens();
        for (std::int64_t q = 0; q < total; ++q)
            for (std::int64_t k = 0; k < total; ++k) {
                bool want;
                if (q < n && k < n) {
                    // independent re-derivation: cube coordinates straight
                    // from the original token coordinates
                    const Coord3 a = coord_of(m.partition.grid, m.partition.perm[static_cast<std::size_t>(q)]);
                    const Coord3 b = coord_of(m.partition.grid, m.partition.perm[static_cast<std::size_t>(k)]);
                    const std::int64_t dt = std::abs(a.t / m.partition.cube.ct - b.t / m.partition.cube.ct);
                    const std::int64_t dy = std::abs(a.y / m.partition.cube.ch - b.y / m.partition.cube.ch);
                    const std::int64_t dx = std::abs(a.x / m.partition.cube.cw - b.x / m.partition.cube.cw);
                    want = std::max({dt, dy, dx}) <= m.radius;
                } else if (q < n) {
                    want = m.policy == DetailToGlobal::full;
                } else if (k < n) {
                    want = false;  // the global stream must never read detail
                } else {
                    want = true;
                }
                if (m.allowed(q, k) != want) violations += 1.0;
            }

        // the dense additive mask must encode exactly the same predicate
        const Mat dm = materialize_mask<double>(m);
        for (std::int64_t q = 0; q < total; ++q)
            for (std::int64_t k = 0; k < total; ++k) {
                const bool open = dm(q, k) > kMaskThreshold;
                if (open != m.allowed(q, k)) violations += 1.0;
            }
    }
    return violations;
}

double rope_norm_error() {
    Rng rng(11);
    const int dims[4] = {6, 8, 12, 16};
    double max_err = 0.0;
    for (int it = 0; it < 100; ++it) {
        const int hd = dims[rng.uniform_index(4)];
        const std::array<double, 3> scales{rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0),
                                           rng.uniform(0.5, 4.0)};
        const RopeParams p = RopeParams::make(hd, scales);
        const std::vector<double> angles =
            rope_angles(p, rng.uniform(0.0, 32.0), rng.uniform(0.0, 32.0), rng.uniform(0.0, 32.0));
        std::vector<double> v(static_cast<std::size_t>(hd));
        double norm0 = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            norm0 += x * x;
        }
        const std::vector<double> r = apply_rope(v, angles);
        double norm1 = 0.0;
        for (double x : r) norm1 += x * x;
        max_err = std::max(max_err, std::abs(norm1 - norm0) / std::max(norm0, 1e-12));
    }
    return max_err;
}

double rope_relative_error() {
    Rng rng(12);
    double max_err = 0.0;
    for (int it = 0; it < 100; ++it) {
        const int hd = 8 + 2 * static_cast<int>(rng.uniform_index(5));
        const std::array<double, 3> scales{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0),
                                           rng.uniform(0.5, 2.0)};
        const RopeParams p = RopeParams::make(hd, scales);

        std::vector<double> q(static_cast<std::size_t>(hd)), k(static_cast<std::size_t>(hd));
        for (auto& x : q) x = rng.normal();
        for (auto& x : k) x = rng.normal();

        const double qt = rng.uniform(0.0, 8.0), qy = rng.uniform(0.0, 8.0), qx = rng.uniform(0.0, 8.0);
        const double kt = rng.uniform(0.0, 8.0), ky = rng.uniform(0.0, 8.0), kx = rng.uniform(0.0, 8.0);
        const double st = rng.uniform(-4.0, 4.0), sy = rng.uniform(-4.0, 4.0), sx = rng.uniform(-4.0, 4.0);

        const std::vector<double> q1 = apply_rope(q, rope_angles(p, qt, qy, qx));
        const std::vector<double> k1 = apply_rope(k, rope_angles(p, kt, ky, kx));
        const std::vector<double> q2 = apply_rope(q, rope_angles(p, qt + st, qy + sy, qx + sx));
        const std::vector<double> k2 = apply_rope(k, rope_angles(p, kt + st, ky + sy, kx + sx));

        double dot1 = 0.0, dot2 = 0.0;
        for (int i = 0; i < hd; ++i) {
            dot1 += q1[static_cast<std::size_t>(i)] * k1[static_cast<std::size_t>(i)];
            dot2 += q2[static_cast<std::size_t>(i)] * k2[static_cast<std::size_t>(i)];
        }
        max_err = std::max(max_err, std::abs(dot1 - dot2));
    }
    return max_err;
}

// A proxy token with coordinate multipliers (r_t, r_y, r_x) must land on
// exactly the same rotation angles as the detail token at the target-grid
// position it summarizes — bitwise, not approximately.
double rope_anchor_error() {
    const GridDims proxy{2, 4, 4};
    const GridDims target{8, 16, 12};
    const std::array<double, 3> r = proxy_scale_factors(proxy, target);
    const RopeParams global_params = RopeParams::make(8, r);
    const RopeParams detail_params = RopeParams::make(8, {1.0, 1.0, 1.0});

    double max_err = 0.0;
    for (std::int64_t j = 0; j < proxy.count(); ++j) {
        const Coord3 g = coord_of(proxy, j);
        const std::vector<double> a = rope_angles(global_params, static_cast<double>(g.t),
                                                  static_cast<double>(g.y), static_cast<double>(g.x));
        const std::vector<double> b =
            rope_angles(detail_params, r[0] * static_cast<double>(g.t),
                        r[1] * static_cast<double>(g.y), r[2] * static_cast<double>(g.x));
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] != b[i]) max_err = std::max(max_err, std::abs(a[i] - b[i]));
    }
    return max_err;
}

// Forward passes sharing the proxy but with different detail inputs must
// produce bitwise-identical global-row activations: the asymmetric mask cuts
// every path from detail tokens into the global stream. Exercised across
// both policies, several radii/cube shapes, and multiple random inputs.
double stream_isolation_error() {
    struct Variant {
        CubeDims cube;
        int radius;
        DetailToGlobal policy;
    };
    const Variant variants[] = {
        {CubeDims{1, 2, 2}, 1, DetailToGlobal::full},
        {CubeDims{1, 2, 2}, 0, DetailToGlobal::full},
        {CubeDims{2, 2, 2}, 1, DetailToGlobal::none},
        {CubeDims{1, 4, 4}, 0, DetailToGlobal::full},
        {CubeDims{2, 4, 4}, 1, DetailToGlobal::none},
        {CubeDims{1, 2, 4}, 1, DetailToGlobal::full},
    };

    Rng rng(6);
    double max_err = 0.0;
    for (const Variant& var : variants) {
        ToyDiTConfig cfg;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.head_dim = 8;
        cfg.ffn_mult = 2;
        cfg.n_text = 2;
        cfg.channels = 2;
        cfg.grid = GridDims{2, 4, 4};
        cfg.proxy_grid = GridDims{1, 2, 2};
        cfg.cube = var.cube;
        cfg.radius = var.radius;
        cfg.policy = var.policy;
        const DitContext ctx = DitContext::make(cfg);
        const ToyDiTWeights w = init_weights(cfg, 5);

        const std::int64_t n = ctx.part.token_count();
        Mat x1(n, cfg.channels), x2(n, cfg.channels), proxy(ctx.mask.n_global, cfg.channels);
        for (auto& v : x1.data) v = rng.normal();
        for (auto& v : x2.data) v = rng.normal();
        for (auto& v : proxy.data) v = rng.normal();
        const Mat text = text_tokens_for_prompt(cfg, 3);

        DitTrace t1, t2;
        (void)dit_forward(w, ctx, x1, &proxy, text, 0.5, &t1);
        (void)dit_forward(w, ctx, x2, &proxy, text, 0.5, &t2);

        for (std::int64_t r = n; r < n + ctx.mask.n_global; ++r)
            for (std::int64_t c = 0; c < t1.z.cols; ++c)
                if (t1.z(r, c) != t2.z(r, c))
                    max_err = std::max(max_err, std::abs(t1.z(r, c) - t2.z(r, c)));
    }
    return max_err;
}

double gradient_check_error() {
    ToyDiTConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.head_dim = 6;
    cfg.ffn_mult = 2;
    cfg.n_text = 2;
    cfg.channels = 2;
    cfg.grid = GridDims{2, 4, 4};
    cfg.proxy_grid = GridDims{1, 2, 2};
    cfg.cube = CubeDims{1, 2, 2};
    cfg.radius = 1;
    const DitContext ctx = DitContext::make(cfg);

    ToyDiTWeights w = init_weights(cfg, 7);
    Rng rng(8);
    // the output head is zero at init, which would zero every upstream
    // gradient; randomize it so the whole graph is exercised
    for (auto& v : w.out_w.data) v = rng.uniform(-0.5, 0.5);

    const std::int64_t n = ctx.part.token_count();
    Mat x0(n, cfg.channels), eps(n, cfg.channels), proxy(ctx.mask.n_global, cfg.channels);
    for (auto& v : x0.data) v = rng.normal();
    for (auto& v : eps.data) v = rng.normal();
    for (auto& v : proxy.data) v = rng.normal();
    const double tau = 0.37;
    // unconditional mode so the learned null-text embedding gets a gradient
    const bool null_cond = true;

    ToyDiTWeights grads = zeros_like(w);
    (void)flow_match_loss_at(w, ctx, x0, &proxy, null_cond, 0, tau, eps, &grads);

    auto wt = w.tensors();
    auto gt = grads.tensors();
    const double h = 1e-5;
    double max_rel = 0.0;
    int probes = 0;
    for (std::size_t ti = 0; ti < wt.size(); ++ti) {
        Mat& mat = *wt[ti].second;
        const Mat& gmat = *gt[ti].second;
        const std::size_t sz = mat.data.size();
        std::vector<std::size_t> idx = {0, sz / 2, sz - 1};
        idx.push_back(static_cast<std::size_t>(rng.uniform_index(static_cast<std::int64_t>(sz))));
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
        for (std::size_t i : idx) {
            const double saved = mat.data[i];
            mat.data[i] = saved + h;
            const double lp = flow_match_loss_at(w, ctx, x0, &proxy, null_cond, 0, tau, eps, nullptr);
            mat.data[i] = saved - h;
            const double lm = flow_match_loss_at(w, ctx, x0, &proxy, null_cond, 0, tau, eps, nullptr);
            mat.data[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = gmat.data[i];
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
            max_rel = std::max(max_rel, rel);
            ++probes;
        }
    }
    return probes >= 64 ? max_rel : 1.0;  // refuse to pass on a thin probe set
}

double flop_mac_law_error() {
    Rng rng(99);
    double max_err = 0.0;
    for (int it = 0; it < 20; ++it) {
        RandomJointCase c = random_joint_case(rng, it == 0);
        const std::int64_t total = c.mask.total_tokens();

        AttentionInputs<double> inp;
        inp.Q = Mat(total, c.d);
        inp.K = Mat(total, c.d);
        inp.V = Mat(total, c.d);
        inp.scale = 1.0;
        for (auto& v : inp.Q.data) v = rng.uniform(-1.0, 1.0);
        for (auto& v : inp.K.data) v = rng.uniform(-1.0, 1.0);
        for (auto& v : inp.V.data) v = rng.uniform(-1.0, 1.0);

        MacCounts macs;
        (void)block_sparse_attention(inp, c.mask, &macs);

        CostConfig cc;
        cc.name = "probe";
        cc.grid = c.part.grid;
        cc.cube = c.part.cube;
        cc.radius = c.mask.radius;
        cc.n_global = c.mask.n_global;
        cc.heads = 1;  // the probe runs one head over the full model width
        cc.head_dim = c.d;
        cc.policy = c.mask.policy;

        const double analytic = local_attention_flops(cc);
        const double measured = 2.0 * static_cast<double>(macs.total());
        max_err = std::max(max_err, std::abs(analytic - measured));
    }
    return max_err;
}

}  // namespace

std::vector<CheckResult> run_check_suite(const CheckOptions& opt) {
    std::vector<CheckResult> out;
    out.push_back(make_result("partition_invariants", partition_invariant_violations(), 0.0));
    out.push_back(make_result("sparse_dense_equivalence_f64",
                              sparse_dense_equivalence_error<double>(opt.corrupt_adjacency), 1e-10));
    out.push_back(make_result("sparse_dense_equivalence_f32",
                              sparse_dense_equivalence_error<float>(opt.corrupt_adjacency), 1e-5));
    out.push_back(make_result("mask_asymmetry_rules", mask_rule_violations(), 0.0));
    out.push_back(make_result("rope_norm_preservation", rope_norm_error(), 1e-12));
    out.push_back(make_result("rope_relative_positions", rope_relative_error(), 1e-9));
    out.push_back(make_result("rope_anchor_alignment", rope_anchor_error(), 0.0));
    out.push_back(make_result("global_stream_isolation", stream_isolation_error(), 0.0));
    out.push_back(make_result("end_to_end_gradients", gradient_check_error(), 1e-4));
    out.push_back(make_result("flop_model_vs_mac_counter", flop_mac_law_error(), 0.0));
    out.push_back(
        make_result("frame_rate_cost_ratio", std::abs(stage1_cost_ratio(4.0) - 16.0), 0.0));
    return out;
}

void print_check_table(std::ostream& os, const std::vector<CheckResult>& results) {
    char buf[160];
    for (const CheckResult& r : results) {
        std::snprintf(buf, sizeof(buf), "%-30s  max_error=%-12.3e tol=%-9.0e %s\n", r.name.c_str(),
                      r.max_error, r.tolerance, r.pass ? "PASS" : "FAIL");
        os << buf;
    }
}

bool all_pass(const std::vector<CheckResult>& results) {
    for (const CheckResult& r : results)
        if (!r.pass) return false;
    return !results.empty();
}

}  // namespace vidattn
