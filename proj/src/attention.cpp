#include "vidattn/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace vidattn {

namespace {

template <typename T>
void check_shapes(const AttentionInputs<T>& inp) {
    if (!inp.Q.same_shape(inp.K) || !inp.Q.same_shape(inp.V))
        throw std::invalid_argument("attention: Q, K, V must share shape");
    if (inp.Q.rows <= 0 || inp.Q.cols <= 0)
        throw std::invalid_argument("attention: empty inputs");
}

template <typename T>
T dot_row(const T* a, const T* b, std::int64_t d) {
    T acc = T(0);
    for (std::int64_t i = 0; i < d; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

template <typename T>
Matrix<T> dense_masked_attention(const AttentionInputs<T>& inp, const Matrix<T>& mask) {
    check_shapes(inp);
    const std::int64_t n = inp.Q.rows;
    const std::int64_t d = inp.Q.cols;
    if (mask.rows != n || mask.cols != n)
        throw std::invalid_argument("dense_masked_attention: mask must be n_tokens x n_tokens");

    Matrix<T> out(n, d);
    std::vector<T> scores(static_cast<std::size_t>(n));
    for (std::int64_t q = 0; q < n; ++q) {
        // Scores, and row max over allowed keys only.
        T row_max = std::numeric_limits<T>::lowest();
        bool any_allowed = false;
        for (std::int64_t k = 0; k < n; ++k) {
            const T m = mask(q, k);
            const T s = (dot_row(inp.Q.row(q), inp.K.row(k), d) + m) * inp.scale;
            scores[static_cast<std::size_t>(k)] = s;
            if (m > static_cast<T>(kMaskThreshold)) {
                any_allowed = true;
                if (s > row_max) row_max = s;
            }
        }
        if (!any_allowed)
            throw std::domain_error("dense_masked_attention: fully masked query row " +
                                    std::to_string(q));

        T denom = T(0);
        for (std::int64_t k = 0; k < n; ++k) {
            const T w = std::exp(scores[static_cast<std::size_t>(k)] - row_max);
            scores[static_cast<std::size_t>(k)] = w;  // masked entries underflow to exactly 0
            denom += w;
        }
        T* orow = out.row(q);
        for (std::int64_t k = 0; k < n; ++k) {
            const T p = scores[static_cast<std::size_t>(k)] / denom;
            const T* vrow = inp.V.row(k);
            for (std::int64_t i = 0; i < d; ++i) orow[i] += p * vrow[i];
        }
    }
    return out;
}

template <typename T>
Matrix<T> block_sparse_attention(const AttentionInputs<T>& inp, const JointBlockMask& mask,
                                 MacCounts* macs, Matrix<T>* probs_out) {
    check_shapes(inp);
    const std::int64_t total = mask.total_tokens();
    const std::int64_t d = inp.Q.cols;
    if (inp.Q.rows != total)
        throw std::invalid_argument("block_sparse_attention: rows must equal n_detail + n_global");

    if (macs != nullptr) *macs = MacCounts{};
    if (probs_out != nullptr) *probs_out = Matrix<T>(total, total);

    Matrix<T> out(total, d);
    std::vector<TokenRange> ranges;
    std::vector<T> scores;
    const TokenRange global_range{mask.n_detail, mask.n_global};

    for (std::int64_t q = 0; q < total; ++q) {
        ranges.clear();
        if (q < mask.n_detail) {
            const std::int32_t c = mask.cube_of_reordered[static_cast<std::size_t>(q)];
            for (std::int32_t nb : mask.neighbors[static_cast<std::size_t>(c)])
                ranges.push_back(mask.partition.cubes[static_cast<std::size_t>(nb)].range);
            if (mask.policy == DetailToGlobal::full && mask.n_global > 0)
                ranges.push_back(global_range);
        } else {
            ranges.push_back(global_range);
        }

        std::int64_t visible = 0;
        for (const TokenRange& r : ranges) visible += r.len;
        if (visible == 0)
            throw std::domain_error("block_sparse_attention: query " + std::to_string(q) +
                                    " has no visible keys");
        scores.resize(static_cast<std::size_t>(visible));

        const T* qrow = inp.Q.row(q);
        T row_max = std::numeric_limits<T>::lowest();
        std::size_t si = 0;
        for (const TokenRange& r : ranges)
            for (std::int64_t k = r.start; k < r.start + r.len; ++k) {
                const T s = dot_row(qrow, inp.K.row(k), d) * inp.scale;
                scores[si++] = s;
                if (s > row_max) row_max = s;
            }

        T denom = T(0);
        for (std::size_t i = 0; i < scores.size(); ++i) {
            scores[i] = std::exp(scores[i] - row_max);
            denom += scores[i];
        }

        T* orow = out.row(q);
        si = 0;
        for (const TokenRange& r : ranges)
            for (std::int64_t k = r.start; k < r.start + r.len; ++k) {
                const T p = scores[si++] / denom;
                if (probs_out != nullptr) (*probs_out)(q, k) = p;
                const T* vrow = inp.V.row(k);
                for (std::int64_t i = 0; i < d; ++i) orow[i] += p * vrow[i];
            }

        if (macs != nullptr) {
            macs->key_visits += visible;
            macs->score_macs += visible * d;
            macs->weighted_macs += visible * d;
        }
    }
    return out;
}

template <typename T>
AttentionGrads<T> attention_backward_from_probs(const AttentionInputs<T>& inp,
                                                const Matrix<T>& probs, const Matrix<T>& upstream) {
    check_shapes(inp);
    const std::int64_t n = inp.Q.rows;
    const std::int64_t d = inp.Q.cols;
    if (probs.rows != n || probs.cols != n)
        throw std::invalid_argument("attention_backward: probs must be n x n");
    if (upstream.rows != n || upstream.cols != d)
        throw std::invalid_argument("attention_backward: upstream must match output shape");

    AttentionGrads<T> g{Matrix<T>(n, d), Matrix<T>(n, d), Matrix<T>(n, d)};

    // dV = P^T dO
    for (std::int64_t q = 0; q < n; ++q) {
        const T* urow = upstream.row(q);
        for (std::int64_t k = 0; k < n; ++k) {
            const T p = probs(q, k);
            if (p == T(0)) continue;
            T* dvrow = g.dV.row(k);
            for (std::int64_t i = 0; i < d; ++i) dvrow[i] += p * urow[i];
        }
    }

    // dS = P o (dP - rowsum(dP o P)), dP = dO V^T. Masked entries carry P = 0
    // and therefore dS = 0 without ever consulting the mask.
    Matrix<T> dS(n, n);
    for (std::int64_t q = 0; q < n; ++q) {
        const T* urow = upstream.row(q);
        T rowsum = T(0);
        for (std::int64_t k = 0; k < n; ++k) {
            const T p = probs(q, k);
            if (p == T(0)) continue;
            const T dp = dot_row(urow, inp.V.row(k), d);
            dS(q, k) = p * dp;
            rowsum += p * dp;
        }
        for (std::int64_t k = 0; k < n; ++k) {
            const T p = probs(q, k);
            if (p == T(0)) continue;
            dS(q, k) -= p * rowsum;
        }
    }

    // dQ = dS K * scale, dK = dS^T Q * scale
    for (std::int64_t q = 0; q < n; ++q) {
        T* dqrow = g.dQ.row(q);
        for (std::int64_t k = 0; k < n; ++k) {
            const T ds = dS(q, k);
            if (ds == T(0)) continue;
            const T c = ds * inp.scale;
            const T* krow = inp.K.row(k);
            T* dkrow = g.dK.row(k);
            const T* qrow = inp.Q.row(q);
            for (std::int64_t i = 0; i < d; ++i) {
                dqrow[i] += c * krow[i];
                dkrow[i] += c * qrow[i];
            }
        }
    }
    return g;
}

template <typename T>
AttentionGrads<T> attention_backward(const AttentionInputs<T>& inp, const Matrix<T>& mask,
                                     const Matrix<T>& upstream) {
    check_shapes(inp);
    const std::int64_t n = inp.Q.rows;
    const std::int64_t d = inp.Q.cols;
    if (mask.rows != n || mask.cols != n)
        throw std::invalid_argument("attention_backward: mask must be n_tokens x n_tokens");

    // Recompute the forward weights (same numerics as dense_masked_attention).
    Matrix<T> probs(n, n);
    std::vector<T> scores(static_cast<std::size_t>(n));
    for (std::int64_t q = 0; q < n; ++q) {
        T row_max = std::numeric_limits<T>::lowest();
        bool any_allowed = false;
        for (std::int64_t k = 0; k < n; ++k) {
            const T m = mask(q, k);
            const T s = (dot_row(inp.Q.row(q), inp.K.row(k), d) + m) * inp.scale;
            scores[static_cast<std::size_t>(k)] = s;
            if (m > static_cast<T>(kMaskThreshold)) {
                any_allowed = true;
                if (s > row_max) row_max = s;
            }
        }
        if (!any_allowed)
            throw std::domain_error("attention_backward: fully masked query row " + std::to_string(q));
        T denom = T(0);
        for (std::int64_t k = 0; k < n; ++k) {
            const T w = std::exp(scores[static_cast<std::size_t>(k)] - row_max);
            scores[static_cast<std::size_t>(k)] = w;
            denom += w;
        }
        for (std::int64_t k = 0; k < n; ++k) probs(q, k) = scores[static_cast<std::size_t>(k)] / denom;
    }
    return attention_backward_from_probs(inp, probs, upstream);
}

template Matrix<float> dense_masked_attention<float>(const AttentionInputs<float>&, const Matrix<float>&);
template Matrix<double> dense_masked_attention<double>(const AttentionInputs<double>&, const Matrix<double>&);
template Matrix<float> block_sparse_attention<float>(const AttentionInputs<float>&, const JointBlockMask&,
                                                     MacCounts*, Matrix<float>*);
template Matrix<double> block_sparse_attention<double>(const AttentionInputs<double>&, const JointBlockMask&,
                                                       MacCounts*, Matrix<double>*);
template AttentionGrads<float> attention_backward_from_probs<float>(const AttentionInputs<float>&,
                                                                    const Matrix<float>&, const Matrix<float>&);
template AttentionGrads<double> attention_backward_from_probs<double>(const AttentionInputs<double>&,
                                                                      const Matrix<double>&, const Matrix<double>&);
template AttentionGrads<float> attention_backward<float>(const AttentionInputs<float>&, const Matrix<float>&,
                                                         const Matrix<float>&);
template AttentionGrads<double> attention_backward<double>(const AttentionInputs<double>&, const Matrix<double>&,
                                                           const Matrix<double>&);

}  // namespace vidattn
