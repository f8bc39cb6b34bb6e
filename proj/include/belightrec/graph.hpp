#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "belightrec/dataset.hpp"
#include "belightrec/semantic.hpp"
#include "belightrec/sparse.hpp"

namespace belightrec {

// Which vector the semantic sum of the item update aggregates: the
// neighbor's embedding (default) or the item's own embedding repeated per
// neighbor (kept for fidelity experiments).
enum class SemanticSummand { neighbor, self };

// Symmetrically degree-normalized operators derived from R and B. b_norm may
// be an empty m x m operator when no semantic signal is used.
struct PropagationOperator {
    SparseOperator r_norm;    // n x m, weight 1/sqrt(|N_u^R| |N_i^R|)
    SparseOperator r_norm_t;  // exact transpose
    SparseOperator b_norm;    // m x m over B's support
    SparseOperator b_norm_t;

    std::uint32_t n_users() const { return r_norm.rows; }
    std::uint32_t n_items() const { return r_norm.cols; }
};

inline std::pair<SparseOperator, SparseOperator> normalize_interaction(const InteractionMatrix& r) {
    for (std::uint32_t u = 0; u < r.n; ++u) {
        if (r.user_degree[u] == 0)
            throw Error("normalize_interaction: user " + std::to_string(u) + " has zero degree");
    }
    for (std::uint32_t i = 0; i < r.m; ++i) {
        if (r.item_degree[i] == 0)
            throw Error("normalize_interaction: item " + std::to_string(i) + " has zero degree");
    }
    SparseOperator op(r.n, r.m);
    op.row_offsets = r.row_offsets;
    op.col_indices = r.col_indices;
    op.values.resize(r.nnz());
    for (std::uint32_t u = 0; u < r.n; ++u) {
        for (std::uint64_t k = r.row_offsets[u]; k < r.row_offsets[u + 1]; ++k) {
            op.values[k] = 1.0 / std::sqrt(static_cast<double>(r.user_degree[u]) *
                                           static_cast<double>(r.item_degree[r.col_indices[k]]));
        }
    }
    return {op, op.transposed()};
}

// Degree normalization over B's support. Degrees count row support (out
// edges) for both endpoints since top-N selection can make B asymmetric.
// With scale_by_similarity the L1-normalized similarity weights multiply the
// degree coefficients instead of being discarded.
inline SparseOperator normalize_similarity(const SimilarityMatrix& b,
                                           bool scale_by_similarity = false) {
    SparseOperator op(b.m, b.m);
    op.row_offsets = b.row_offsets;
    op.col_indices = b.col_indices;
    op.values.resize(b.nnz());
    for (std::uint32_t i = 0; i < b.m; ++i) {
        const auto deg_i = b.row_degree(i);
        for (std::uint64_t k = b.row_offsets[i]; k < b.row_offsets[i + 1]; ++k) {
            const std::uint32_t nb = op.col_indices[k];
            if (nb == i) throw Error("normalize_similarity: nonzero diagonal at item " +
                                     std::to_string(i));
            const auto deg_b = b.row_degree(nb);
            if (deg_b == 0)
                throw Error("normalize_similarity: neighbor " + std::to_string(nb) +
                            " has empty row");
            double w = 1.0 / std::sqrt(static_cast<double>(deg_i) * static_cast<double>(deg_b));
            if (scale_by_similarity) w *= b.values[k];
            op.values[k] = w;
        }
    }
    return op;
}

inline PropagationOperator build_propagation_operator(const InteractionMatrix& r,
                                                      const SimilarityMatrix& b,
                                                      bool scale_by_similarity = false) {
    PropagationOperator op;
    auto [rn, rnt] = normalize_interaction(r);
    op.r_norm = std::move(rn);
    op.r_norm_t = std::move(rnt);
    op.b_norm = normalize_similarity(b, scale_by_similarity);
    op.b_norm_t = op.b_norm.transposed();
    return op;
}

inline PropagationOperator build_propagation_operator(const InteractionMatrix& r) {
    return build_propagation_operator(r, SimilarityMatrix::empty_matrix(r.m));
}

// One synchronous propagation step: both outputs are computed purely from
// the step-k inputs.
//   E_u' = R_norm * E_i
//   E_i' = R_norm^T * E_u  (+ semantic term over B when enabled)
inline std::pair<DenseMatrix, DenseMatrix> propagate_once(
    const PropagationOperator& op, const DenseMatrix& user_emb, const DenseMatrix& item_emb,
    bool use_semantic, SemanticSummand summand = SemanticSummand::neighbor) {
    if (user_emb.rows != op.n_users() || item_emb.rows != op.n_items() ||
        user_emb.cols != item_emb.cols)
        throw Error("propagate_once: dimension mismatch");

    DenseMatrix user_next = op.r_norm.multiply(item_emb);
    DenseMatrix item_next = op.r_norm_t.multiply(user_emb);
    if (use_semantic && !op.b_norm.empty()) {
        if (summand == SemanticSummand::neighbor) {
            op.b_norm.multiply_add(item_emb, item_next);
        } else {
            for (std::uint32_t i = 0; i < op.b_norm.rows; ++i) {
                double coeff = 0.0;
                for (std::uint64_t k = op.b_norm.row_offsets[i]; k < op.b_norm.row_offsets[i + 1];
                     ++k)
                    coeff += op.b_norm.values[k];
                if (coeff == 0.0) continue;
                auto out = item_next.row(i);
                const auto in = item_emb.row(i);
                for (std::size_t j = 0; j < out.size(); ++j) out[j] += coeff * in[j];
            }
        }
    }
    return {std::move(user_next), std::move(item_next)};
}

}  // namespace belightrec
