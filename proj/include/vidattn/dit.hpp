#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vidattn/attention.hpp"
#include "vidattn/grid.hpp"
#include "vidattn/mask.hpp"
#include "vidattn/matrix.hpp"
#include "vidattn/rng.hpp"
#include "vidattn/rope.hpp"
#include "vidattn/synthetic.hpp"

namespace vidattn {

// Desk-scale two-stream diffusion transformer. One weight set processes the
// joint [detail; global] sequence; the global stream rides along under the
// asymmetric block mask and never reads detail activations.
struct ToyDiTConfig {
    int layers = 2;
    int heads = 2;
    int head_dim = 16;
    int ffn_mult = 4;
    int n_text = 4;
    int channels = 2;  // latent channels D

    GridDims grid{2, 8, 8};        // detail token grid
    GridDims proxy_grid{1, 4, 4};  // global stream grid
    CubeDims cube{2, 4, 4};
    int radius = 1;
    DetailToGlobal policy = DetailToGlobal::full;
    bool use_global_stream = true;  // off for the single-stream proxy generator

    // Detail-stream RoPE coordinate multipliers; the proxy generator dilates
    // the temporal axis here. The global stream derives its multipliers from
    // proxy_scale_factors(proxy_grid, grid) unless scale_global_rope is off.
    std::array<double, 3> detail_rope_scales{1.0, 1.0, 1.0};
    bool scale_global_rope = true;
    double rope_base = 10000.0;

    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 4;
    bool freeze_ffn = false;

    int model_dim() const { return heads * head_dim; }
    int ffn_hidden() const { return ffn_mult * model_dim(); }
    void validate() const;  // throws std::invalid_argument
};

// Single-stream variant used for the proxy generator: the detail grid becomes
// the proxy grid, one cube covers everything (full attention), no global
// span, and temporal RoPE coordinates are dilated by grid.t / proxy_grid.t.
ToyDiTConfig stage1_config(const ToyDiTConfig& cfg);

struct LayerWeights {
    Mat ln1_g, ln1_b;            // [1, dm]
    Mat wq, wk, wv, wo;          // [dm, dm]
    Mat ln2_g, ln2_b;            // [1, dm]
    Mat wq_x, wk_x, wv_x, wo_x;  // [dm, dm]
    Mat ln3_g, ln3_b;            // [1, dm]
    Mat ffn_w1;                  // [dm, hidden]
    Mat ffn_w2;                  // [hidden, dm]
};

struct ToyDiTWeights {
    Mat in_w;                                // [D, dm]
    Mat in_b;                                // [1, dm]
    Mat time_w1, time_b1, time_w2, time_b2;  // [dm, dm] / [1, dm]
    std::vector<LayerWeights> layers;
    Mat lnf_g, lnf_b;  // [1, dm]
    Mat out_w;         // [dm, D], zero at init so the raw model predicts 0
    Mat null_text;     // [n_text, dm], learned unconditional text embedding

    // Stable enumeration used by init, serialization, Adam, and grad checks.
    std::vector<std::pair<std::string, Mat*>> tensors();
    std::vector<std::pair<std::string, const Mat*>> tensors() const;
};

// Fan-in scaled uniform init for projections, ones/zeros for norms, zeros for
// the output head. Deterministic in (config, seed).
ToyDiTWeights init_weights(const ToyDiTConfig& cfg, std::uint64_t seed);
ToyDiTWeights zeros_like(const ToyDiTWeights& w);
void zero_all(ToyDiTWeights& w);

// Per-config precomputation: partition, joint + detail-only masks, RoPE
// angle tables per token.
struct DitContext {
    ToyDiTConfig cfg;
    CubePartition part;
    JointBlockMask mask;         // [detail; global] visibility
    JointBlockMask mask_detail;  // same partition, no global span (CFG branch)
    std::vector<std::vector<double>> detail_angles;  // [N][head_dim/2], reordered order
    std::vector<std::vector<double>> global_angles;  // [n][head_dim/2], proxy row-major

    static DitContext make(const ToyDiTConfig& cfg);
};

// Cached activations of one forward pass (consumed by dit_backward).
struct LnCache {
    Mat xhat;                  // normalized activations
    std::vector<double> rstd;  // 1/sqrt(var + eps) per row
};

struct LayerTrace {
    LnCache ln1;
    Mat a, q_rot, k_rot, v;
    std::vector<Mat> probs;  // per head, [tokens, tokens]
    Mat attn_out;
    LnCache ln2;
    Mat c, qx, kx, vx;
    std::vector<Mat> probs_x;  // per head, [N, n_text]
    Mat cross_out;
    LnCache ln3;
    Mat f, ffn_pre, ffn_act;
};

struct DitTrace {
    Mat x_detail_perm;  // [N, D] detail input rows in reordered order
    Mat x_global;       // [n, D] (0 rows when the global stream is dropped)
    Mat text;           // [n_text, dm]
    Mat sin_emb;        // [1, dm]
    Mat time_pre, time_act;
    std::vector<LayerTrace> layers;
    LnCache lnf;
    Mat z;  // [tokens, dm]
};

// Velocity prediction for the detail stream, returned in grid row-major
// order. x_detail is [N, D] grid row-major; x_global is the clean proxy
// ([n, D] proxy row-major) or nullptr to drop the global stream; text is
// [n_text, dm]. tau in [0, 1]. Pass a trace to enable dit_backward.
Mat dit_forward(const ToyDiTWeights& w, const DitContext& ctx, const Mat& x_detail,
                const Mat* x_global, const Mat& text, double tau, DitTrace* trace = nullptr);

// Reverse-mode gradients. d_velocity is [N, D] grid row-major. Parameter
// gradients accumulate into grads; the text-token gradient lands in
// d_text_out when non-null (callers route it to null_text in unconditional
// mode, or discard it for fixed prompt tokens).
void dit_backward(const ToyDiTWeights& w, const DitContext& ctx, const DitTrace& trace,
                  const Mat& d_velocity, ToyDiTWeights& grads, Mat* d_text_out = nullptr);

// Fixed pseudo-random text tokens keyed by prompt id.
Mat text_tokens_for_prompt(const ToyDiTConfig& cfg, int prompt_id);

// Rectified-flow loss at a fixed (tau, eps) pair: x_tau = (1-tau) x0 + tau
// eps, target v = eps - x0, mean squared error over detail tokens. x0 and
// eps are [N, D] grid row-major. proxy conditions the global stream (or
// nullptr to drop it); null_cond swaps the prompt tokens for w.null_text.
// When grads is non-null, parameter gradients scaled by grad_weight are
// accumulated.
double flow_match_loss_at(const ToyDiTWeights& w, const DitContext& ctx, const Mat& x0,
                          const Mat* proxy, bool null_cond, int prompt_id, double tau,
                          const Mat& eps, ToyDiTWeights* grads, double grad_weight = 1.0);

// Batch loss with tau ~ U(0,1) and eps ~ N(0,1) drawn from rng (per sample:
// tau first, then eps row-major). Mean over the batch. stage1 trains on the
// proxy tensors with no conditioning stream.
double flow_match_loss(const ToyDiTWeights& w, const DitContext& ctx,
                       const std::vector<const SyntheticSample*>& batch, bool stage1, Rng& rng,
                       ToyDiTWeights* grads);

struct TrainResult {
    ToyDiTWeights weights;
    std::vector<double> loss_trace;  // one entry per step
};

// Adam training, fully deterministic in (config, dataset, steps, seed).
// stage 1: single-stream proxy generator on sample.proxy tensors.
// stage 2: joint model on sample.detail conditioned on the clean proxy.
TrainResult train_stage1(const ToyDiTConfig& cfg, const std::vector<SyntheticSample>& data,
                         int steps, std::uint64_t seed);
TrainResult train_stage2(const ToyDiTConfig& cfg, const std::vector<SyntheticSample>& data,
                         int steps, std::uint64_t seed);

// Deterministic held-out loss: per sample i, tau and eps come from a fresh
// Rng(seed + i), so the evaluation set is identical across models sharing a
// context shape.
double eval_flow_loss(const ToyDiTWeights& w, const DitContext& ctx,
                      const std::vector<SyntheticSample>& data, std::uint64_t seed);

struct SampleOptions {
    int steps = 16;
    std::uint64_t seed = 0;
    bool cfg_enabled = false;  // classifier-free guidance
    double cfg_scale = 1.0;
    int prompt_id = 0;
};

// Euler integration of the learned velocity from tau = 1 (pure noise) down
// to tau = 0; returns the [N, D] grid row-major sample. proxy conditions the
// global stream or is nullptr for the unconditional branch. With guidance,
// v = v_u + s (v_c - v_u); cfg_scale == 1 short-circuits to the conditional
// branch so it is byte-identical to cfg_enabled == false (initial noise is
// drawn before any branching, so RNG consumption matches too).
Mat sample_euler(const ToyDiTWeights& w, const DitContext& ctx, const Mat* proxy,
                 const SampleOptions& opt);

}  // namespace vidattn
