#include "vidattn/dit.hpp"

#include <cmath>
#include <stdexcept>

namespace vidattn {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return x * 0.5 * std::erfc(-x * kInvSqrt2); }

double gelu_grad(double x) {
    const double phi_cdf = 0.5 * std::erfc(-x * kInvSqrt2);
    const double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return phi_cdf + x * phi_pdf;
}

// C = A B, [r x k][k x c]
Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dims differ");
    Mat c(a.rows, b.cols);
    for (std::int64_t r = 0; r < a.rows; ++r) {
        const double* arow = a.row(r);
        double* crow = c.row(r);
        for (std::int64_t k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = b.row(k);
            for (std::int64_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// C += A^T B, [r x k]^T [r x c] -> [k x c]
void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
        throw std::invalid_argument("matmul_tn_acc: shape mismatch");
    for (std::int64_t r = 0; r < a.rows; ++r) {
        const double* arow = a.row(r);
        const double* brow = b.row(r);
        for (std::int64_t k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            double* crow = c.row(k);
            for (std::int64_t j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
}

// C = A B^T, [r x k][c x k] -> [r x c]
Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dims differ");
    Mat c(a.rows, b.rows);
    for (std::int64_t r = 0; r < a.rows; ++r) {
        const double* arow = a.row(r);
        double* crow = c.row(r);
        for (std::int64_t j = 0; j < b.rows; ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (std::int64_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            crow[j] = acc;
        }
    }
    return c;
}

void add_inplace(Mat& a, const Mat& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

// b[0, j] += sum over rows of a(:, j)
void colsum_acc(const Mat& a, Mat& b) {
    if (b.rows != 1 || b.cols != a.cols) throw std::invalid_argument("colsum_acc: shape mismatch");
    for (std::int64_t r = 0; r < a.rows; ++r) {
        const double* arow = a.row(r);
        for (std::int64_t j = 0; j < a.cols; ++j) b.data[static_cast<std::size_t>(j)] += arow[j];
    }
}

Mat copy_rows(const Mat& a, std::int64_t r0, std::int64_t r1) {
    Mat out(r1 - r0, a.cols);
    for (std::int64_t r = r0; r < r1; ++r)
        for (std::int64_t j = 0; j < a.cols; ++j) out(r - r0, j) = a(r, j);
    return out;
}

Mat head_slice(const Mat& a, int h, int hd) {
    Mat out(a.rows, hd);
    for (std::int64_t r = 0; r < a.rows; ++r) {
        const double* arow = a.row(r) + static_cast<std::int64_t>(h) * hd;
        double* orow = out.row(r);
        for (int j = 0; j < hd; ++j) orow[j] = arow[j];
    }
    return out;
}

void head_write(Mat& a, const Mat& ah, int h, int hd) {
    for (std::int64_t r = 0; r < a.rows; ++r) {
        double* arow = a.row(r) + static_cast<std::int64_t>(h) * hd;
        const double* srow = ah.row(r);
        for (int j = 0; j < hd; ++j) arow[j] = srow[j];
    }
}

void layernorm_forward(const Mat& x, const Mat& g, const Mat& b, Mat& y, LnCache& cache) {
    const std::int64_t dm = x.cols;
    y = Mat(x.rows, dm);
    cache.xhat = Mat(x.rows, dm);
    cache.rstd.assign(static_cast<std::size_t>(x.rows), 0.0);
    for (std::int64_t r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double mu = 0.0;
        for (std::int64_t j = 0; j < dm; ++j) mu += xr[j];
        mu /= static_cast<double>(dm);
        double var = 0.0;
        for (std::int64_t j = 0; j < dm; ++j) {
            const double d = xr[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(dm);
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        cache.rstd[static_cast<std::size_t>(r)] = rstd;
        double* xh = cache.xhat.row(r);
        double* yr = y.row(r);
        for (std::int64_t j = 0; j < dm; ++j) {
            xh[j] = (xr[j] - mu) * rstd;
            yr[j] = g.data[static_cast<std::size_t>(j)] * xh[j] + b.data[static_cast<std::size_t>(j)];
        }
    }
}

// dx_acc += dLN/dx; dg_acc / db_acc accumulate parameter grads.
void layernorm_backward(const Mat& dy, const Mat& g, const LnCache& cache, Mat& dx_acc, Mat& dg_acc,
                        Mat& db_acc) {
    const std::int64_t dm = dy.cols;
    for (std::int64_t r = 0; r < dy.rows; ++r) {
        const double* dyr = dy.row(r);
        const double* xh = cache.xhat.row(r);
        const double rstd = cache.rstd[static_cast<std::size_t>(r)];
        double m1 = 0.0, m2 = 0.0;
        for (std::int64_t j = 0; j < dm; ++j) {
            const double dxh = dyr[j] * g.data[static_cast<std::size_t>(j)];
            m1 += dxh;
            m2 += dxh * xh[j];
        }
        m1 /= static_cast<double>(dm);
        m2 /= static_cast<double>(dm);
        double* dxr = dx_acc.row(r);
        for (std::int64_t j = 0; j < dm; ++j) {
            const double dxh = dyr[j] * g.data[static_cast<std::size_t>(j)];
            dxr[j] += rstd * (dxh - m1 - xh[j] * m2);
            dg_acc.data[static_cast<std::size_t>(j)] += dyr[j] * xh[j];
            db_acc.data[static_cast<std::size_t>(j)] += dyr[j];
        }
    }
}

// Rotate every row's per-head channel pairs by that token's angle table.
void rope_rows(Mat& m, const DitContext& ctx, std::int64_t n_detail, bool inverse) {
    const int heads = ctx.cfg.heads;
    const int hd = ctx.cfg.head_dim;
    for (std::int64_t r = 0; r < m.rows; ++r) {
        const std::vector<double>& angles =
            r < n_detail ? ctx.detail_angles[static_cast<std::size_t>(r)]
                         : ctx.global_angles[static_cast<std::size_t>(r - n_detail)];
        for (int h = 0; h < heads; ++h) {
            double* vec = m.row(r) + static_cast<std::int64_t>(h) * hd;
            if (inverse)
                apply_rope_inverse_inplace(vec, angles);
            else
                apply_rope_inplace(vec, angles);
        }
    }
}

Mat sincos_time_embedding(double tau, int dm) {
    Mat emb(1, dm);
    const int half = dm / 2;
    const double pos = tau * 1000.0;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
        emb(0, i) = std::sin(pos * freq);
        emb(0, half + i) = std::cos(pos * freq);
    }
    return emb;
}

Mat to_mat(const std::vector<double>& v, std::int64_t rows, std::int64_t cols) {
    if (static_cast<std::int64_t>(v.size()) != rows * cols)
        throw std::invalid_argument("to_mat: size mismatch");
    Mat out(rows, cols);
    out.data = v;
    return out;
}

}  // namespace

void ToyDiTConfig::validate() const {
    if (layers < 1 || heads < 1 || ffn_mult < 1 || n_text < 1 || channels < 1)
        throw std::invalid_argument("ToyDiTConfig: layers/heads/ffn_mult/n_text/channels must be >= 1");
    if (head_dim < 6 || head_dim % 2 != 0)
        throw std::invalid_argument("ToyDiTConfig: head_dim must be even and >= 6");
    if (!grid.positive()) throw std::invalid_argument("ToyDiTConfig: grid dims must be positive");
    if (cube.ct <= 0 || cube.ch <= 0 || cube.cw <= 0 || cube.ct > grid.t || cube.ch > grid.h ||
        cube.cw > grid.w)
        throw std::invalid_argument("ToyDiTConfig: cube dims must be in [1, grid]");
    if (radius < 0) throw std::invalid_argument("ToyDiTConfig: radius must be >= 0");
    if (use_global_stream) {
        if (!proxy_grid.positive())
            throw std::invalid_argument("ToyDiTConfig: proxy grid dims must be positive");
        if (grid.t % proxy_grid.t != 0 || grid.h % proxy_grid.h != 0 || grid.w % proxy_grid.w != 0)
            throw std::invalid_argument("ToyDiTConfig: grid dims must be divisible by proxy dims");
    }
    if (lr <= 0.0 || batch_size < 1)
        throw std::invalid_argument("ToyDiTConfig: lr must be positive and batch_size >= 1");
}

ToyDiTConfig stage1_config(const ToyDiTConfig& cfg) {
    cfg.validate();
    ToyDiTConfig c = cfg;
    const double r_t = proxy_scale_factors(cfg.proxy_grid, cfg.grid)[0];
    c.grid = cfg.proxy_grid;
    c.cube = CubeDims{cfg.proxy_grid.t, cfg.proxy_grid.h, cfg.proxy_grid.w};
    c.radius = 0;
    c.use_global_stream = false;
    c.detail_rope_scales = {r_t, 1.0, 1.0};
    return c;
}

std::vector<std::pair<std::string, Mat*>> ToyDiTWeights::tensors() {
    std::vector<std::pair<std::string, Mat*>> out;
    out.emplace_back("in_w", &in_w);
    out.emplace_back("in_b", &in_b);
    out.emplace_back("time_w1", &time_w1);
    out.emplace_back("time_b1", &time_b1);
    out.emplace_back("time_w2", &time_w2);
    out.emplace_back("time_b2", &time_b2);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerWeights& lw = layers[l];
        out.emplace_back(p + "ln1_g", &lw.ln1_g);
        out.emplace_back(p + "ln1_b", &lw.ln1_b);
        out.emplace_back(p + "wq", &lw.wq);
        out.emplace_back(p + "wk", &lw.wk);
        out.emplace_back(p + "wv", &lw.wv);
        out.emplace_back(p + "wo", &lw.wo);
        out.emplace_back(p + "ln2_g", &lw.ln2_g);
        out.emplace_back(p + "ln2_b", &lw.ln2_b);
        out.emplace_back(p + "wq_x", &lw.wq_x);
        out.emplace_back(p + "wk_x", &lw.wk_x);
        out.emplace_back(p + "wv_x", &lw.wv_x);
        out.emplace_back(p + "wo_x", &lw.wo_x);
        out.emplace_back(p + "ln3_g", &lw.ln3_g);
        out.emplace_back(p + "ln3_b", &lw.ln3_b);
        out.emplace_back(p + "ffn_w1", &lw.ffn_w1);
        out.emplace_back(p + "ffn_w2", &lw.ffn_w2);
    }
    out.emplace_back("lnf_g", &lnf_g);
    out.emplace_back("lnf_b", &lnf_b);
    out.emplace_back("out_w", &out_w);
    out.emplace_back("null_text", &null_text);
    return out;
}

std::vector<std::pair<std::string, const Mat*>> ToyDiTWeights::tensors() const {
    auto mut = const_cast<ToyDiTWeights*>(this)->tensors();
    std::vector<std::pair<std::string, const Mat*>> out;
    out.reserve(mut.size());
    for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
    return out;
}

ToyDiTWeights init_weights(const ToyDiTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int dm = cfg.model_dim();
    const int hidden = cfg.ffn_hidden();

    ToyDiTWeights w;
    w.in_w = Mat(cfg.channels, dm);
    w.in_b = Mat(1, dm);
    w.time_w1 = Mat(dm, dm);
    w.time_b1 = Mat(1, dm);
    w.time_w2 = Mat(dm, dm);
    w.time_b2 = Mat(1, dm);
    w.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (LayerWeights& l : w.layers) {
        l.ln1_g = Mat(1, dm);
        l.ln1_b = Mat(1, dm);
        l.wq = Mat(dm, dm);
        l.wk = Mat(dm, dm);
        l.wv = Mat(dm, dm);
        l.wo = Mat(dm, dm);
        l.ln2_g = Mat(1, dm);
        l.ln2_b = Mat(1, dm);
        l.wq_x = Mat(dm, dm);
        l.wk_x = Mat(dm, dm);
        l.wv_x = Mat(dm, dm);
        l.wo_x = Mat(dm, dm);
        l.ln3_g = Mat(1, dm);
        l.ln3_b = Mat(1, dm);
        l.ffn_w1 = Mat(dm, hidden);
        l.ffn_w2 = Mat(hidden, dm);
    }
    w.lnf_g = Mat(1, dm);
    w.lnf_b = Mat(1, dm);
    w.out_w = Mat(dm, cfg.channels);
    w.null_text = Mat(cfg.n_text, dm);

    Rng rng(seed);
    for (auto& [name, mat] : w.tensors()) {
        const bool is_gain = name.size() >= 2 && name.compare(name.size() - 2, 2, "_g") == 0;
        const bool is_bias = name.size() >= 2 && name.compare(name.size() - 2, 2, "_b") == 0;
        const bool ends_b1 = name.size() >= 3 && name.compare(name.size() - 3, 3, "_b1") == 0;
        const bool ends_b2 = name.size() >= 3 && name.compare(name.size() - 3, 3, "_b2") == 0;
        if (is_gain && name.find("ln") != std::string::npos) {
            mat->fill(1.0);
        } else if ((is_bias && name != "null_text") || ends_b1 || ends_b2) {
            mat->fill(0.0);
        } else if (name == "out_w") {
            mat->fill(0.0);
        } else if (name == "null_text") {
            for (double& v : mat->data) v = rng.normal();
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(mat->rows));
            for (double& v : mat->data) v = rng.uniform(-bound, bound);
        }
    }
    return w;
}

ToyDiTWeights zeros_like(const ToyDiTWeights& w) {
    ToyDiTWeights z = w;
    zero_all(z);
    return z;
}

void zero_all(ToyDiTWeights& w) {
    for (auto& [name, mat] : w.tensors()) mat->fill(0.0);
}

DitContext DitContext::make(const ToyDiTConfig& cfg) {
    cfg.validate();
    DitContext ctx;
    ctx.cfg = cfg;
    ctx.part = build_partition(cfg.grid, cfg.cube);
    const std::int64_t n_g = cfg.use_global_stream ? cfg.proxy_grid.count() : 0;
    ctx.mask = build_joint_mask(ctx.part, n_g, cfg.radius, cfg.policy);
    ctx.mask_detail =
        n_g > 0 ? build_joint_mask(ctx.part, 0, cfg.radius, cfg.policy) : ctx.mask;

    const RopeParams detail_params =
        RopeParams::make(cfg.head_dim, cfg.detail_rope_scales, cfg.rope_base);
    const std::int64_t n_detail = ctx.part.token_count();
    ctx.detail_angles.reserve(static_cast<std::size_t>(n_detail));
    for (std::int64_t k = 0; k < n_detail; ++k) {
        const Coord3 c = coord_of(cfg.grid, ctx.part.perm[static_cast<std::size_t>(k)]);
        ctx.detail_angles.push_back(rope_angles(detail_params, static_cast<double>(c.t),
                                                static_cast<double>(c.y), static_cast<double>(c.x)));
    }
    if (n_g > 0) {
        const std::array<double, 3> gs = cfg.scale_global_rope
                                             ? proxy_scale_factors(cfg.proxy_grid, cfg.grid)
                                             : std::array<double, 3>{1.0, 1.0, 1.0};
        const RopeParams global_params = RopeParams::make(cfg.head_dim, gs, cfg.rope_base);
        ctx.global_angles.reserve(static_cast<std::size_t>(n_g));
        for (std::int64_t j = 0; j < n_g; ++j) {
            const Coord3 c = coord_of(cfg.proxy_grid, j);
            ctx.global_angles.push_back(rope_angles(global_params, static_cast<double>(c.t),
                                                    static_cast<double>(c.y),
                                                    static_cast<double>(c.x)));
        }
    }
    return ctx;
}

Mat dit_forward(const ToyDiTWeights& w, const DitContext& ctx, const Mat& x_detail,
                const Mat* x_global, const Mat& text, double tau, DitTrace* trace) {
    const ToyDiTConfig& cfg = ctx.cfg;
    const std::int64_t n_detail = ctx.part.token_count();
    const std::int64_t dm = cfg.model_dim();
    const int heads = cfg.heads;
    const int hd = cfg.head_dim;

    if (x_detail.rows != n_detail || x_detail.cols != cfg.channels)
        throw std::invalid_argument("dit_forward: x_detail must be [n_detail, channels]");
    if (x_global != nullptr) {
        if (!cfg.use_global_stream)
            throw std::invalid_argument("dit_forward: config has no global stream");
        if (x_global->rows != ctx.mask.n_global || x_global->cols != cfg.channels)
            throw std::invalid_argument("dit_forward: x_global must be [n_global, channels]");
    }
    if (text.rows != cfg.n_text || text.cols != dm)
        throw std::invalid_argument("dit_forward: text must be [n_text, model_dim]");
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("dit_forward: tau must be in [0, 1]");

    const JointBlockMask& mask = x_global != nullptr ? ctx.mask : ctx.mask_detail;
    const std::int64_t n_global = x_global != nullptr ? mask.n_global : 0;
    const std::int64_t total = n_detail + n_global;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    DitTrace local;
    DitTrace& tr = trace != nullptr ? *trace : local;
    const bool want_probs = trace != nullptr;
    tr.layers.assign(static_cast<std::size_t>(cfg.layers), LayerTrace{});

    // Input projection; detail rows enter in cube-contiguous order.
    tr.x_detail_perm = Mat(n_detail, cfg.channels);
    for (std::int64_t k = 0; k < n_detail; ++k) {
        const std::int64_t orig = ctx.part.perm[static_cast<std::size_t>(k)];
        for (std::int64_t c = 0; c < cfg.channels; ++c) tr.x_detail_perm(k, c) = x_detail(orig, c);
    }
    tr.x_global = x_global != nullptr ? *x_global : Mat(0, cfg.channels);
    tr.text = text;

    Mat x(total, dm);
    {
        const Mat hd_detail = matmul(tr.x_detail_perm, w.in_w);
        for (std::int64_t r = 0; r < n_detail; ++r)
            for (std::int64_t j = 0; j < dm; ++j)
                x(r, j) = hd_detail(r, j) + w.in_b.data[static_cast<std::size_t>(j)];
        if (n_global > 0) {
            const Mat hd_global = matmul(tr.x_global, w.in_w);
            for (std::int64_t r = 0; r < n_global; ++r)
                for (std::int64_t j = 0; j < dm; ++j)
                    x(n_detail + r, j) = hd_global(r, j) + w.in_b.data[static_cast<std::size_t>(j)];
        }
    }

    // Timestep conditioning, added to every token before layer 1.
    tr.sin_emb = sincos_time_embedding(tau, static_cast<int>(dm));
    tr.time_pre = matmul(tr.sin_emb, w.time_w1);
    add_inplace(tr.time_pre, w.time_b1);
    tr.time_act = Mat(1, dm);
    for (std::int64_t j = 0; j < dm; ++j) tr.time_act(0, j) = gelu(tr.time_pre(0, j));
    Mat temb = matmul(tr.time_act, w.time_w2);
    add_inplace(temb, w.time_b2);
    for (std::int64_t r = 0; r < total; ++r)
        for (std::int64_t j = 0; j < dm; ++j) x(r, j) += temb.data[static_cast<std::size_t>(j)];

    for (int l = 0; l < cfg.layers; ++l) {
        const LayerWeights& lw = w.layers[static_cast<std::size_t>(l)];
        LayerTrace& lt = tr.layers[static_cast<std::size_t>(l)];

        // Joint block-sparse self-attention with rotary positions.
        layernorm_forward(x, lw.ln1_g, lw.ln1_b, lt.a, lt.ln1);
        lt.q_rot = matmul(lt.a, lw.wq);
        lt.k_rot = matmul(lt.a, lw.wk);
        lt.v = matmul(lt.a, lw.wv);
        rope_rows(lt.q_rot, ctx, n_detail, false);
        rope_rows(lt.k_rot, ctx, n_detail, false);

        lt.attn_out = Mat(total, dm);
        lt.probs.assign(static_cast<std::size_t>(heads), Mat{});
        for (int h = 0; h < heads; ++h) {
            AttentionInputs<double> inp{head_slice(lt.q_rot, h, hd), head_slice(lt.k_rot, h, hd),
                                        head_slice(lt.v, h, hd), scale};
            Mat* probs = want_probs ? &lt.probs[static_cast<std::size_t>(h)] : nullptr;
            const Mat oh = block_sparse_attention(inp, mask, nullptr, probs);
            head_write(lt.attn_out, oh, h, hd);
        }
        add_inplace(x, matmul(lt.attn_out, lw.wo));

        // Dense cross-attention: detail rows query the text tokens.
        const Mat xd = copy_rows(x, 0, n_detail);
        layernorm_forward(xd, lw.ln2_g, lw.ln2_b, lt.c, lt.ln2);
        lt.qx = matmul(lt.c, lw.wq_x);
        lt.kx = matmul(text, lw.wk_x);
        lt.vx = matmul(text, lw.wv_x);
        lt.cross_out = Mat(n_detail, dm);
        lt.probs_x.assign(static_cast<std::size_t>(heads), Mat{});
        for (int h = 0; h < heads; ++h) {
            const Mat qh = head_slice(lt.qx, h, hd);
            const Mat kh = head_slice(lt.kx, h, hd);
            const Mat vh = head_slice(lt.vx, h, hd);
            Mat scores = matmul_nt(qh, kh);  // [N, n_text]
            Mat& px = lt.probs_x[static_cast<std::size_t>(h)];
            px = Mat(n_detail, cfg.n_text);
            for (std::int64_t r = 0; r < n_detail; ++r) {
                double row_max = scores(r, 0) * scale;
                for (int j = 0; j < cfg.n_text; ++j) {
                    scores(r, j) *= scale;
                    if (scores(r, j) > row_max) row_max = scores(r, j);
                }
                double denom = 0.0;
                for (int j = 0; j < cfg.n_text; ++j) {
                    px(r, j) = std::exp(scores(r, j) - row_max);
                    denom += px(r, j);
                }
                for (int j = 0; j < cfg.n_text; ++j) px(r, j) /= denom;
            }
            const Mat oh = matmul(px, vh);
            head_write(lt.cross_out, oh, h, hd);
        }
        const Mat yx = matmul(lt.cross_out, lw.wo_x);
        for (std::int64_t r = 0; r < n_detail; ++r)
            for (std::int64_t j = 0; j < dm; ++j) x(r, j) += yx(r, j);

        // Position-wise FFN.
        layernorm_forward(x, lw.ln3_g, lw.ln3_b, lt.f, lt.ln3);
        lt.ffn_pre = matmul(lt.f, lw.ffn_w1);
        lt.ffn_act = Mat(total, cfg.ffn_hidden());
        for (std::size_t i = 0; i < lt.ffn_pre.data.size(); ++i)
            lt.ffn_act.data[i] = gelu(lt.ffn_pre.data[i]);
        add_inplace(x, matmul(lt.ffn_act, lw.ffn_w2));
    }

    layernorm_forward(x, w.lnf_g, w.lnf_b, tr.z, tr.lnf);
    const Mat zd = copy_rows(tr.z, 0, n_detail);
    const Mat vel_reordered = matmul(zd, w.out_w);

    Mat vel(n_detail, cfg.channels);
    for (std::int64_t k = 0; k < n_detail; ++k) {
        const std::int64_t orig = ctx.part.perm[static_cast<std::size_t>(k)];
        for (std::int64_t c = 0; c < cfg.channels; ++c) vel(orig, c) = vel_reordered(k, c);
    }
    return vel;
}

void dit_backward(const ToyDiTWeights& w, const DitContext& ctx, const DitTrace& trace,
                  const Mat& d_velocity, ToyDiTWeights& grads, Mat* d_text_out) {
    const ToyDiTConfig& cfg = ctx.cfg;
    const std::int64_t n_detail = ctx.part.token_count();
    const std::int64_t n_global = trace.x_global.rows;
    const std::int64_t total = n_detail + n_global;
    const std::int64_t dm = cfg.model_dim();
    const int heads = cfg.heads;
    const int hd = cfg.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    if (d_velocity.rows != n_detail || d_velocity.cols != cfg.channels)
        throw std::invalid_argument("dit_backward: d_velocity must be [n_detail, channels]");
    if (trace.layers.size() != static_cast<std::size_t>(cfg.layers) ||
        (cfg.layers > 0 && trace.layers[0].probs.empty()))
        throw std::invalid_argument("dit_backward: trace was not captured by dit_forward");

    Mat d_text(cfg.n_text, dm);

    // Output head.
    Mat d_vr(n_detail, cfg.channels);
    for (std::int64_t k = 0; k < n_detail; ++k) {
        const std::int64_t orig = ctx.part.perm[static_cast<std::size_t>(k)];
        for (std::int64_t c = 0; c < cfg.channels; ++c) d_vr(k, c) = d_velocity(orig, c);
    }
    const Mat zd = copy_rows(trace.z, 0, n_detail);
    matmul_tn_acc(zd, d_vr, grads.out_w);
    Mat dz(total, dm);
    {
        const Mat dzd = matmul_nt(d_vr, w.out_w);  // [N, dm]
        for (std::int64_t r = 0; r < n_detail; ++r)
            for (std::int64_t j = 0; j < dm; ++j) dz(r, j) = dzd(r, j);
    }

    Mat dx(total, dm);
    layernorm_backward(dz, w.lnf_g, trace.lnf, dx, grads.lnf_g, grads.lnf_b);

    for (int l = cfg.layers - 1; l >= 0; --l) {
        const LayerWeights& lw = w.layers[static_cast<std::size_t>(l)];
        LayerWeights& gw = grads.layers[static_cast<std::size_t>(l)];
        const LayerTrace& lt = trace.layers[static_cast<std::size_t>(l)];

        // FFN block: x_ffn = x_cross + gelu(ln3(x_cross) W1) W2.
        {
            const Mat& dy = dx;
            Mat dact = matmul_nt(dy, lw.ffn_w2);
            matmul_tn_acc(lt.ffn_act, dy, gw.ffn_w2);
            for (std::size_t i = 0; i < dact.data.size(); ++i)
                dact.data[i] *= gelu_grad(lt.ffn_pre.data[i]);
            matmul_tn_acc(lt.f, dact, gw.ffn_w1);
            const Mat df = matmul_nt(dact, lw.ffn_w1);
            layernorm_backward(df, lw.ln3_g, lt.ln3, dx, gw.ln3_g, gw.ln3_b);
        }

        // Cross-attention block (detail rows only).
        {
            const Mat dyx = copy_rows(dx, 0, n_detail);
            Mat dcross = matmul_nt(dyx, lw.wo_x);
            matmul_tn_acc(lt.cross_out, dyx, gw.wo_x);

            Mat dqx(n_detail, dm), dkx(cfg.n_text, dm), dvx(cfg.n_text, dm);
            for (int h = 0; h < heads; ++h) {
                const Mat doh = head_slice(dcross, h, hd);
                const Mat qh = head_slice(lt.qx, h, hd);
                const Mat kh = head_slice(lt.kx, h, hd);
                const Mat vh = head_slice(lt.vx, h, hd);
                const Mat& px = lt.probs_x[static_cast<std::size_t>(h)];

                Mat dvh(cfg.n_text, hd);
                matmul_tn_acc(px, doh, dvh);
                const Mat dpx = matmul_nt(doh, vh);  // [N, n_text]
                Mat dsx(n_detail, cfg.n_text);
                for (std::int64_t r = 0; r < n_detail; ++r) {
                    double rowsum = 0.0;
                    for (int j = 0; j < cfg.n_text; ++j) rowsum += dpx(r, j) * px(r, j);
                    for (int j = 0; j < cfg.n_text; ++j)
                        dsx(r, j) = px(r, j) * (dpx(r, j) - rowsum);
                }
                Mat dqh = matmul(dsx, kh);
                Mat dkh(cfg.n_text, hd);
                matmul_tn_acc(dsx, qh, dkh);
                for (auto& v : dqh.data) v *= scale;
                for (auto& v : dkh.data) v *= scale;
                head_write(dqx, dqh, h, hd);
                head_write(dkx, dkh, h, hd);
                head_write(dvx, dvh, h, hd);
            }
            matmul_tn_acc(lt.c, dqx, gw.wq_x);
            matmul_tn_acc(trace.text, dkx, gw.wk_x);
            matmul_tn_acc(trace.text, dvx, gw.wv_x);
            add_inplace(d_text, matmul_nt(dkx, lw.wk_x));
            add_inplace(d_text, matmul_nt(dvx, lw.wv_x));
            const Mat dc = matmul_nt(dqx, lw.wq_x);
            Mat dxd(n_detail, dm);
            layernorm_backward(dc, lw.ln2_g, lt.ln2, dxd, gw.ln2_g, gw.ln2_b);
            for (std::int64_t r = 0; r < n_detail; ++r)
                for (std::int64_t j = 0; j < dm; ++j) dx(r, j) += dxd(r, j);
        }

        // Self-attention block.
        {
            const Mat& dy = dx;
            Mat dattn = matmul_nt(dy, lw.wo);
            matmul_tn_acc(lt.attn_out, dy, gw.wo);

            Mat dq(total, dm), dk(total, dm), dv(total, dm);
            for (int h = 0; h < heads; ++h) {
                AttentionInputs<double> inp{head_slice(lt.q_rot, h, hd),
                                            head_slice(lt.k_rot, h, hd), head_slice(lt.v, h, hd),
                                            scale};
                const Mat doh = head_slice(dattn, h, hd);
                const AttentionGrads<double> g =
                    attention_backward_from_probs(inp, lt.probs[static_cast<std::size_t>(h)], doh);
                head_write(dq, g.dQ, h, hd);
                head_write(dk, g.dK, h, hd);
                head_write(dv, g.dV, h, hd);
            }
            rope_rows(dq, ctx, n_detail, true);  // inverse rotation
            rope_rows(dk, ctx, n_detail, true);
            matmul_tn_acc(lt.a, dq, gw.wq);
            matmul_tn_acc(lt.a, dk, gw.wk);
            matmul_tn_acc(lt.a, dv, gw.wv);
            Mat da = matmul_nt(dq, lw.wq);
            add_inplace(da, matmul_nt(dk, lw.wk));
            add_inplace(da, matmul_nt(dv, lw.wv));
            layernorm_backward(da, lw.ln1_g, lt.ln1, dx, gw.ln1_g, gw.ln1_b);
        }
    }

    // Timestep conditioning: every token received the same embedding.
    Mat dtemb(1, dm);
    colsum_acc(dx, dtemb);
    colsum_acc(dtemb, grads.time_b2);
    matmul_tn_acc(trace.time_act, dtemb, grads.time_w2);
    Mat dtact = matmul_nt(dtemb, w.time_w2);
    for (std::int64_t j = 0; j < dm; ++j) dtact(0, j) *= gelu_grad(trace.time_pre(0, j));
    colsum_acc(dtact, grads.time_b1);
    matmul_tn_acc(trace.sin_emb, dtact, grads.time_w1);

    // Input projection.
    const Mat dh_detail = copy_rows(dx, 0, n_detail);
    matmul_tn_acc(trace.x_detail_perm, dh_detail, grads.in_w);
    if (n_global > 0) {
        const Mat dh_global = copy_rows(dx, n_detail, total);
        matmul_tn_acc(trace.x_global, dh_global, grads.in_w);
    }
    colsum_acc(dx, grads.in_b);

    if (d_text_out != nullptr) *d_text_out = std::move(d_text);
}

Mat text_tokens_for_prompt(const ToyDiTConfig& cfg, int prompt_id) {
    Rng rng(0x74657874ULL + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(prompt_id + 1));
    Mat text(cfg.n_text, cfg.model_dim());
    for (double& v : text.data) v = rng.normal();
    return text;
}

double flow_match_loss_at(const ToyDiTWeights& w, const DitContext& ctx, const Mat& x0,
                          const Mat* proxy, bool null_cond, int prompt_id, double tau,
                          const Mat& eps, ToyDiTWeights* grads, double grad_weight) {
    const std::int64_t n = ctx.part.token_count();
    const std::int64_t d = ctx.cfg.channels;
    if (x0.rows != n || x0.cols != d || !eps.same_shape(x0))
        throw std::invalid_argument("flow_match_loss_at: x0/eps must be [n_detail, channels]");

    Mat x_tau(n, d);
    Mat v_target(n, d);
    for (std::size_t i = 0; i < x_tau.data.size(); ++i) {
        x_tau.data[i] = (1.0 - tau) * x0.data[i] + tau * eps.data[i];
        v_target.data[i] = eps.data[i] - x0.data[i];
    }

    const Mat text = null_cond ? w.null_text : text_tokens_for_prompt(ctx.cfg, prompt_id);
    DitTrace trace;
    const Mat pred =
        dit_forward(w, ctx, x_tau, proxy, text, tau, grads != nullptr ? &trace : nullptr);

    double loss = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double diff = pred.data[i] - v_target.data[i];
        loss += diff * diff;
    }
    const double denom = static_cast<double>(n * d);
    loss /= denom;

    if (grads != nullptr) {
        Mat d_vel(n, d);
        const double c = 2.0 * grad_weight / denom;
        for (std::size_t i = 0; i < d_vel.data.size(); ++i)
            d_vel.data[i] = c * (pred.data[i] - v_target.data[i]);
        Mat d_text;
        dit_backward(w, ctx, trace, d_vel, *grads, null_cond ? &d_text : nullptr);
        if (null_cond) add_inplace(grads->null_text, d_text);
    }
    return loss;
}

double flow_match_loss(const ToyDiTWeights& w, const DitContext& ctx,
                       const std::vector<const SyntheticSample*>& batch, bool stage1, Rng& rng,
                       ToyDiTWeights* grads) {
    if (batch.empty()) throw std::invalid_argument("flow_match_loss: empty batch");
    const std::int64_t n = ctx.part.token_count();
    const std::int64_t d = ctx.cfg.channels;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    double loss = 0.0;
    for (const SyntheticSample* s : batch) {
        const Mat x0 = stage1 ? to_mat(s->proxy, n, d) : to_mat(s->detail, n, d);
        Mat proxy;
        if (!stage1) proxy = to_mat(s->proxy, ctx.mask.n_global, d);
        const double tau = rng.uniform();
        Mat eps(n, d);
        for (double& v : eps.data) v = rng.normal();
        loss += flow_match_loss_at(w, ctx, x0, stage1 ? nullptr : &proxy, false, s->prompt_id, tau,
                                   eps, grads, inv_b);
    }
    return loss * inv_b;
}

namespace {

bool is_ffn_tensor(const std::string& name) { return name.find("ffn_w") != std::string::npos; }

void adam_step(ToyDiTWeights& w, const ToyDiTWeights& g, ToyDiTWeights& m, ToyDiTWeights& v,
               const ToyDiTConfig& cfg, int t) {
    auto wt = w.tensors();
    auto gt = g.tensors();
    auto mt = m.tensors();
    auto vt = v.tensors();
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < wt.size(); ++i) {
        if (cfg.freeze_ffn && is_ffn_tensor(wt[i].first)) continue;
        Mat& wm = *wt[i].second;
        const Mat& gm = *gt[i].second;
        Mat& mm = *mt[i].second;
        Mat& vm = *vt[i].second;
        for (std::size_t j = 0; j < wm.data.size(); ++j) {
            const double grad = gm.data[j];
            mm.data[j] = cfg.beta1 * mm.data[j] + (1.0 - cfg.beta1) * grad;
            vm.data[j] = cfg.beta2 * vm.data[j] + (1.0 - cfg.beta2) * grad * grad;
            const double mhat = mm.data[j] / c1;
            const double vhat = vm.data[j] / c2;
            wm.data[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

TrainResult train_common(const ToyDiTConfig& run_cfg, const std::vector<SyntheticSample>& data,
                         int steps, std::uint64_t seed, bool stage1) {
    if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    const DitContext ctx = DitContext::make(run_cfg);
    for (const SyntheticSample& s : data) {
        if (s.channels != run_cfg.channels)
            throw std::invalid_argument("train: sample channel count does not match config");
        const GridDims want = stage1 ? run_cfg.grid : run_cfg.proxy_grid;
        if (!(s.proxy_grid == want) || (!stage1 && !(s.grid == run_cfg.grid)))
            throw std::invalid_argument("train: sample dims do not match config");
    }

    TrainResult res;
    res.weights = init_weights(run_cfg, seed);
    ToyDiTWeights grads = zeros_like(res.weights);
    ToyDiTWeights m = zeros_like(res.weights);
    ToyDiTWeights v = zeros_like(res.weights);
    Rng rng(seed + 1);

    res.loss_trace.reserve(static_cast<std::size_t>(steps));
    for (int step = 1; step <= steps; ++step) {
        std::vector<const SyntheticSample*> batch;
        batch.reserve(static_cast<std::size_t>(run_cfg.batch_size));
        for (int b = 0; b < run_cfg.batch_size; ++b)
            batch.push_back(&data[static_cast<std::size_t>(
                rng.uniform_index(static_cast<std::int64_t>(data.size())))]);
        zero_all(grads);
        const double loss = flow_match_loss(res.weights, ctx, batch, stage1, rng, &grads);
        adam_step(res.weights, grads, m, v, run_cfg, step);
        res.loss_trace.push_back(loss);
    }
    return res;
}

}  // namespace

TrainResult train_stage1(const ToyDiTConfig& cfg, const std::vector<SyntheticSample>& data,
                         int steps, std::uint64_t seed) {
    return train_common(stage1_config(cfg), data, steps, seed, /*stage1=*/true);
}

TrainResult train_stage2(const ToyDiTConfig& cfg, const std::vector<SyntheticSample>& data,
                         int steps, std::uint64_t seed) {
    ToyDiTConfig c = cfg;
    c.validate();
    if (!c.use_global_stream)
        throw std::invalid_argument("train_stage2: config must enable the global stream");
    return train_common(c, data, steps, seed, /*stage1=*/false);
}

double eval_flow_loss(const ToyDiTWeights& w, const DitContext& ctx,
                      const std::vector<SyntheticSample>& data, std::uint64_t seed) {
    if (data.empty()) throw std::invalid_argument("eval_flow_loss: empty dataset");
    const std::int64_t n = ctx.part.token_count();
    const std::int64_t d = ctx.cfg.channels;
    const bool stage1 = !ctx.cfg.use_global_stream;

    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Rng rng(seed + i);
        const double tau = rng.uniform();
        Mat eps(n, d);
        for (double& v : eps.data) v = rng.normal();
        const Mat x0 = stage1 ? to_mat(data[i].proxy, n, d) : to_mat(data[i].detail, n, d);
        Mat proxy;
        if (!stage1) proxy = to_mat(data[i].proxy, ctx.mask.n_global, d);
        total += flow_match_loss_at(w, ctx, x0, stage1 ? nullptr : &proxy, false,
                                    data[i].prompt_id, tau, eps, nullptr);
    }
    return total / static_cast<double>(data.size());
}

Mat sample_euler(const ToyDiTWeights& w, const DitContext& ctx, const Mat* proxy,
                 const SampleOptions& opt) {
    if (opt.steps < 1) throw std::invalid_argument("sample_euler: steps must be >= 1");
    const std::int64_t n = ctx.part.token_count();
    const std::int64_t d = ctx.cfg.channels;
    if (proxy != nullptr && (proxy->rows != ctx.mask.n_global || proxy->cols != d))
        throw std::invalid_argument("sample_euler: proxy must be [n_global, channels]");

    Rng rng(opt.seed);
    Mat x(n, d);
    for (double& v : x.data) v = rng.normal();

    const Mat text_c = text_tokens_for_prompt(ctx.cfg, opt.prompt_id);
    const double dtau = 1.0 / static_cast<double>(opt.steps);
    for (int k = 0; k < opt.steps; ++k) {
        const double tau = 1.0 - static_cast<double>(k) * dtau;
        const Mat v_c = dit_forward(w, ctx, x, proxy, text_c, tau);
        if (opt.cfg_enabled && opt.cfg_scale != 1.0) {
            const Mat v_u = dit_forward(w, ctx, x, nullptr, w.null_text, tau);
            for (std::size_t i = 0; i < x.data.size(); ++i) {
                const double guided =
                    v_u.data[i] + opt.cfg_scale * (v_c.data[i] - v_u.data[i]);
                x.data[i] -= dtau * guided;
            }
        } else {
            for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] -= dtau * v_c.data[i];
        }
    }
    return x;
}

}  // namespace vidattn
