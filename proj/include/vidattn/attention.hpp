#pragma once

#include <cstdint>

#include "vidattn/mask.hpp"
#include "vidattn/matrix.hpp"

namespace vidattn {

// Single-head attention inputs over the joint sequence (detail span first,
// then global span), rows = tokens. Multi-head is a loop over heads.
template <typename T>
struct AttentionInputs {
    Matrix<T> Q;  // [n_tokens, d]
    Matrix<T> K;  // [n_tokens, d]
    Matrix<T> V;  // [n_tokens, d]
    T scale = T(1);  // usually 1/sqrt(d)
};

// Multiply-accumulate counts for one kernel invocation (never timing).
struct MacCounts {
    std::int64_t key_visits = 0;    // (query, key) pairs touched
    std::int64_t score_macs = 0;    // q.k dot products: d per pair
    std::int64_t weighted_macs = 0; // prob * V accumulation: d per pair
    std::int64_t total() const { return score_macs + weighted_macs; }
};

// Reference path: softmax((Q K^T + M) * scale) V with a dense additive mask
// (0 allowed / kMaskSentinel forbidden). Per-row max over allowed keys is
// subtracted before exponentiation; a fully-masked row throws
// std::domain_error. Shape mismatches throw std::invalid_argument.
template <typename T>
Matrix<T> dense_masked_attention(const AttentionInputs<T>& inp, const Matrix<T>& mask);

// Production path: walks only the visible blocks (masking by exclusion; no
// sentinel is ever added to a score). Detail queries visit the token ranges
// of their cube's neighbor list plus, per policy, the global span; global
// queries visit the global span only. Emits per-call MAC counts on request.
// If probs_out is non-null it receives the (token x token) attention weights
// with zeros at unvisited entries, for use by backward passes.
template <typename T>
Matrix<T> block_sparse_attention(const AttentionInputs<T>& inp, const JointBlockMask& mask,
                                 MacCounts* macs = nullptr, Matrix<T>* probs_out = nullptr);

template <typename T>
struct AttentionGrads {
    Matrix<T> dQ, dK, dV;
};

// Analytic gradients of dense_masked_attention w.r.t. Q, K, V.
template <typename T>
AttentionGrads<T> attention_backward(const AttentionInputs<T>& inp, const Matrix<T>& mask,
                                     const Matrix<T>& upstream);

// Core VJP given the forward's attention weights (masked entries must be 0).
// Shared by attention_backward and the transformer's training path.
template <typename T>
AttentionGrads<T> attention_backward_from_probs(const AttentionInputs<T>& inp,
                                                const Matrix<T>& probs, const Matrix<T>& upstream);

}  // namespace vidattn
