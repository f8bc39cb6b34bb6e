#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "belightrec/core.hpp"
#include "belightrec/dataset.hpp"

namespace belightrec {

struct MetricsAtK {
    double precision = 0.0;
    double recall = 0.0;
    double ndcg = 0.0;
};

struct RankingMetrics {
    std::vector<std::pair<std::uint32_t, MetricsAtK>> per_k;  // sorted by k
    std::size_t n_users_evaluated = 0;

    const MetricsAtK& at(std::uint32_t k) const {
        for (const auto& [kk, m] : per_k) {
            if (kk == k) return m;
        }
        throw Error("no metrics for k=" + std::to_string(k));
    }
};

// Masks the seen (train) items, then ranks by score descending with ties
// broken by ascending item index. Returns the first min(k, available) items.
inline std::vector<std::uint32_t> rank_top_k(std::span<const double> scores,
                                             std::span<const std::uint32_t> seen,
                                             std::uint32_t k) {
    if (k < 1) throw Error("rank_top_k: k must be >= 1");
    std::vector<char> masked(scores.size(), 0);
    for (const std::uint32_t s : seen) {
        if (s < masked.size()) masked[s] = 1;
    }
    std::vector<std::uint32_t> order;
    order.reserve(scores.size());
    for (std::uint32_t i = 0; i < scores.size(); ++i) {
        if (!masked[i]) order.push_back(i);
    }
    const std::size_t take = std::min<std::size_t>(k, order.size());
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    order.resize(take);
    return order;
}

// hits = |ranked[..k] ∩ test|; precision = hits / k, recall = hits / |test|.
inline std::pair<double, double> precision_recall_at_k(std::span<const std::uint32_t> ranked,
                                                       std::span<const std::uint32_t> test_items,
                                                       std::uint32_t k) {
    if (test_items.empty()) throw Error("precision_recall_at_k: empty test set");
    std::size_t hits = 0;
    const std::size_t upto = std::min<std::size_t>(k, ranked.size());
    for (std::size_t p = 0; p < upto; ++p) {
        if (std::binary_search(test_items.begin(), test_items.end(), ranked[p])) ++hits;
    }
    return {static_cast<double>(hits) / static_cast<double>(k),
            static_cast<double>(hits) / static_cast<double>(test_items.size())};
}

// Binary relevance: DCG = sum rel(p) / log2(p + 1), IDCG over the first
// min(k, |test|) positions.
inline double ndcg_at_k(std::span<const std::uint32_t> ranked,
                        std::span<const std::uint32_t> test_items, std::uint32_t k) {
    if (test_items.empty()) throw Error("ndcg_at_k: empty test set");
    double dcg = 0.0;
    const std::size_t upto = std::min<std::size_t>(k, ranked.size());
    for (std::size_t p = 0; p < upto; ++p) {
        if (std::binary_search(test_items.begin(), test_items.end(), ranked[p]))
            dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    }
    double idcg = 0.0;
    const std::size_t ideal = std::min<std::size_t>(k, test_items.size());
    for (std::size_t p = 0; p < ideal; ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    return dcg / idcg;
}

using Scorer = std::function<std::vector<double>(std::uint32_t user)>;

// Evaluates every user with a nonempty test set: masks that user's train
// items, ranks once at the largest k, and averages unweighted per-user
// metrics. Reduction order is fixed by user index.
inline RankingMetrics evaluate_model(const Scorer& scorer, const InteractionMatrix& train,
                                     const std::vector<std::vector<std::uint32_t>>& test_items,
                                     std::vector<std::uint32_t> ks = {5, 20}) {
    if (ks.empty()) throw Error("evaluate_model: no k values");
    std::sort(ks.begin(), ks.end());
    const std::uint32_t max_k = ks.back();

    RankingMetrics result;
    for (const std::uint32_t k : ks) result.per_k.emplace_back(k, MetricsAtK{});

    for (std::uint32_t u = 0; u < train.n; ++u) {
        if (u >= test_items.size() || test_items[u].empty()) continue;
        const auto scores = scorer(u);
        if (scores.size() != train.m) throw Error("evaluate_model: scorer returned wrong size");
        const auto ranked = rank_top_k(scores, train.items_of(u), max_k);
        for (auto& [k, acc] : result.per_k) {
            const auto [precision, recall] = precision_recall_at_k(ranked, test_items[u], k);
            acc.precision += precision;
            acc.recall += recall;
            acc.ndcg += ndcg_at_k(ranked, test_items[u], k);
        }
        ++result.n_users_evaluated;
    }
    if (result.n_users_evaluated == 0) throw Error("evaluate_model: no evaluable users");
    for (auto& [k, acc] : result.per_k) {
        acc.precision /= static_cast<double>(result.n_users_evaluated);
        acc.recall /= static_cast<double>(result.n_users_evaluated);
        acc.ndcg /= static_cast<double>(result.n_users_evaluated);
    }
    return result;
}

}  // namespace belightrec
