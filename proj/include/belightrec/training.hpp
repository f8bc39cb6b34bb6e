#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "belightrec/core.hpp"
#include "belightrec/dataset.hpp"
#include "belightrec/evaluation.hpp"
#include "belightrec/graph.hpp"
#include "belightrec/models.hpp"
#include "belightrec/sparse.hpp"

namespace belightrec {

struct BprTriplet {
    std::uint32_t user = 0;
    std::uint32_t pos_item = 0;
    std::uint32_t neg_item = 0;
};

struct TrainConfig {
    double learning_rate = 0.001;
    double l2_lambda = 1e-5;
    std::uint32_t batch_size = 1024;
    std::uint32_t max_epochs = 200;
    std::uint32_t eval_every = 10;  // epochs between evaluations
    std::uint32_t patience = 5;     // evaluations without improvement before stopping
    std::uint64_t seed = 42;
};

// Positives are drawn uniformly by edge (heavy users appear proportionally),
// negatives by uniform rejection over the item universe.
inline std::vector<BprTriplet> sample_triplets(const InteractionMatrix& r, std::size_t count,
                                               Rng& rng) {
    if (r.nnz() == 0) throw Error("sample_triplets: empty interaction matrix");
    std::vector<BprTriplet> batch;
    batch.reserve(count);
    for (std::size_t t = 0; t < count; ++t) {
        const auto edge = static_cast<std::size_t>(rng.uniform_below(r.nnz()));
        const std::uint32_t u = r.edge_user[edge];
        const std::uint32_t i = r.col_indices[edge];
        if (r.user_degree[u] >= r.m)
            throw Error("sample_triplets: user " + std::to_string(u) +
                        " interacts with every item; no negative exists");
        std::uint32_t j;
        do {
            j = static_cast<std::uint32_t>(rng.uniform_below(r.m));
        } while (r.has(u, j));
        batch.push_back({u, i, j});
    }
    return batch;
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ln(1 + e^z) without overflow.
inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

}  // namespace detail

// Sum of -ln sigma(pos - neg) plus lambda * reg_norm_sq.
inline double bpr_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                       double reg_norm_sq, double lambda) {
    if (pos_scores.size() != neg_scores.size()) throw Error("bpr_loss: score length mismatch");
    double loss = 0.0;
    for (std::size_t t = 0; t < pos_scores.size(); ++t) {
        if (!std::isfinite(pos_scores[t]) || !std::isfinite(neg_scores[t]))
            throw Error("bpr_loss: non-finite score");
        loss += detail::softplus(neg_scores[t] - pos_scores[t]);
    }
    if (!std::isfinite(reg_norm_sq)) throw Error("bpr_loss: non-finite regularizer");
    return loss + lambda * reg_norm_sq;
}

// Analytic gradients of the full objective, expressed on the layer-0 tables
// (and W/bias for the +W kind). Contributions from repeated triplets
// accumulate additively.
struct BatchGradients {
    DenseMatrix user0;
    DenseMatrix item0;
    std::vector<DenseMatrix> weight;        // +W only
    std::vector<std::vector<double>> bias;  // +W only
    double loss = 0.0;
};

namespace detail {

// Pushes a gradient on the readout one propagation step back:
// user side receives R_norm * A_i, item side R_norm^T * A_u plus the
// semantic adjoint when enabled.
inline std::pair<DenseMatrix, DenseMatrix> backward_step(const PropagationOperator& op,
                                                         const DenseMatrix& grad_user,
                                                         const DenseMatrix& grad_item,
                                                         bool semantic, SemanticSummand summand) {
    DenseMatrix prev_user = op.r_norm.multiply(grad_item);
    DenseMatrix prev_item = op.r_norm_t.multiply(grad_user);
    if (semantic && !op.b_norm.empty()) {
        if (summand == SemanticSummand::neighbor) {
            op.b_norm_t.multiply_add(grad_item, prev_item);
        } else {
            for (std::uint32_t i = 0; i < op.b_norm.rows; ++i) {
                double coeff = 0.0;
                for (std::uint64_t k = op.b_norm.row_offsets[i]; k < op.b_norm.row_offsets[i + 1];
                     ++k)
                    coeff += op.b_norm.values[k];
                if (coeff == 0.0) continue;
                auto out = prev_item.row(i);
                const auto in = grad_item.row(i);
                for (std::size_t j = 0; j < out.size(); ++j) out[j] += coeff * in[j];
            }
        }
    }
    return {std::move(prev_user), std::move(prev_item)};
}

}  // namespace detail

inline BatchGradients compute_gradients(const EmbeddingState& state,
                                        const PropagationOperator& op,
                                        const WeightedLayerParams* params,
                                        std::span<const BprTriplet> triplets,
                                        const ModelConfig& config, double lambda) {
    if (config.kind == ModelKind::simonly)
        throw Error("compute_gradients: simonly has no trainable parameters");
    const bool weighted = config.kind == ModelKind::belightrec_w;
    if (weighted && !params) throw Error("compute_gradients: +W kind requires params");

    ForwardTrace trace;
    const Readout readout = weighted ? forward_weighted(state, op, *params, config, &trace)
                                     : forward(state, op, config, &trace);

    // BPR term on the readout.
    DenseMatrix grad_user_out(readout.user.rows, readout.user.cols);
    DenseMatrix grad_item_out(readout.item.rows, readout.item.cols);
    double loss = 0.0;
    double reg_norm_sq = 0.0;
    for (const auto& t : triplets) {
        const auto eu = readout.user.row(t.user);
        const auto ei = readout.item.row(t.pos_item);
        const auto ej = readout.item.row(t.neg_item);
        const double margin = dot(eu, ei) - dot(eu, ej);
        loss += detail::softplus(-margin);
        const double dmargin = detail::sigmoid(margin) - 1.0;
        auto gu = grad_user_out.row(t.user);
        auto gi = grad_item_out.row(t.pos_item);
        auto gj = grad_item_out.row(t.neg_item);
        for (std::size_t c = 0; c < eu.size(); ++c) {
            gu[c] += dmargin * (ei[c] - ej[c]);
            gi[c] += dmargin * eu[c];
            gj[c] -= dmargin * eu[c];
        }
    }

    BatchGradients grads;
    const std::uint32_t layer_count =
        config.kind == ModelKind::mfbpr ? 0 : config.layers;
    if (layer_count == 0) {
        grads.user0 = std::move(grad_user_out);
        grads.item0 = std::move(grad_item_out);
    } else {
        const std::size_t first = config.include_layer0 ? 0 : 1;
        const double scale =
            1.0 / static_cast<double>(layer_count + 1 - first);
        const bool semantic = config.uses_semantic();
        // grad wrt E^K, then walk the layers back to E^0.
        DenseMatrix acc_user(grad_user_out.rows, grad_user_out.cols);
        DenseMatrix acc_item(grad_item_out.rows, grad_item_out.cols);
        add_scaled(acc_user, grad_user_out, scale);
        add_scaled(acc_item, grad_item_out, scale);
        if (weighted) {
            grads.weight.assign(layer_count, DenseMatrix(config.embed_dim, config.embed_dim));
            grads.bias.assign(layer_count, std::vector<double>(config.embed_dim, 0.0));
        }
        for (std::uint32_t k = layer_count; k >= 1; --k) {
            if (weighted) {
                const auto& pre_u = trace.user_pre[k - 1];
                const auto& pre_i = trace.item_pre[k - 1];
                DenseMatrix act_grad_u = acc_user;
                DenseMatrix act_grad_i = acc_item;
                for (std::size_t e = 0; e < act_grad_u.data.size(); ++e)
                    act_grad_u.data[e] *= leaky_relu_grad(pre_u.data[e]);
                for (std::size_t e = 0; e < act_grad_i.data.size(); ++e)
                    act_grad_i.data[e] *= leaky_relu_grad(pre_i.data[e]);
                add_scaled(grads.weight[k - 1], dense_atb(trace.user_z[k - 1], act_grad_u), 1.0);
                add_scaled(grads.weight[k - 1], dense_atb(trace.item_z[k - 1], act_grad_i), 1.0);
                auto& bias_grad = grads.bias[k - 1];
                for (std::size_t r = 0; r < act_grad_u.rows; ++r) {
                    const auto row = act_grad_u.row(r);
                    for (std::size_t c = 0; c < row.size(); ++c) bias_grad[c] += row[c];
                }
                for (std::size_t r = 0; r < act_grad_i.rows; ++r) {
                    const auto row = act_grad_i.row(r);
                    for (std::size_t c = 0; c < row.size(); ++c) bias_grad[c] += row[c];
                }
                const DenseMatrix z_grad_u = dense_abt(act_grad_u, params->weight[k - 1]);
                const DenseMatrix z_grad_i = dense_abt(act_grad_i, params->weight[k - 1]);
                auto [prev_u, prev_i] =
                    detail::backward_step(op, z_grad_u, z_grad_i, semantic, config.summand);
                acc_user = std::move(prev_u);
                acc_item = std::move(prev_i);
            } else {
                auto [prev_u, prev_i] =
                    detail::backward_step(op, acc_user, acc_item, semantic, config.summand);
                acc_user = std::move(prev_u);
                acc_item = std::move(prev_i);
            }
            if (k - 1 >= 1 || config.include_layer0) {
                add_scaled(acc_user, grad_user_out, scale);
                add_scaled(acc_item, grad_item_out, scale);
            }
        }
        grads.user0 = std::move(acc_user);
        grads.item0 = std::move(acc_item);
    }

    // L2 term over the batch's layer-0 rows; +W params once per batch.
    for (const auto& t : triplets) {
        const auto u0 = state.user0.row(t.user);
        const auto i0 = state.item0.row(t.pos_item);
        const auto j0 = state.item0.row(t.neg_item);
        auto gu = grads.user0.row(t.user);
        auto gi = grads.item0.row(t.pos_item);
        auto gj = grads.item0.row(t.neg_item);
        for (std::size_t c = 0; c < u0.size(); ++c) {
            reg_norm_sq += u0[c] * u0[c] + i0[c] * i0[c] + j0[c] * j0[c];
            gu[c] += 2.0 * lambda * u0[c];
            gi[c] += 2.0 * lambda * i0[c];
            gj[c] += 2.0 * lambda * j0[c];
        }
    }
    if (weighted) {
        for (std::uint32_t k = 0; k < config.layers; ++k) {
            for (std::size_t e = 0; e < params->weight[k].data.size(); ++e) {
                const double w = params->weight[k].data[e];
                reg_norm_sq += w * w;
                grads.weight[k].data[e] += 2.0 * lambda * w;
            }
            for (std::size_t c = 0; c < params->bias[k].size(); ++c) {
                const double b = params->bias[k][c];
                reg_norm_sq += b * b;
                grads.bias[k][c] += 2.0 * lambda * b;
            }
        }
    }
    grads.loss = loss + lambda * reg_norm_sq;

    for (const double g : grads.user0.data)
        if (!std::isfinite(g)) throw Error("non-finite gradient");
    for (const double g : grads.item0.data)
        if (!std::isfinite(g)) throw Error("non-finite gradient");
    return grads;
}

struct AdamState {
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double epsilon = 1e-8;

    DenseMatrix m_user, v_user, m_item, v_item;
    std::vector<DenseMatrix> m_weight, v_weight;
    std::vector<std::vector<double>> m_bias, v_bias;
    std::uint64_t step = 0;

    static AdamState like(const EmbeddingState& state, const WeightedLayerParams* params) {
        AdamState a;
        a.m_user = DenseMatrix(state.user0.rows, state.user0.cols);
        a.v_user = DenseMatrix(state.user0.rows, state.user0.cols);
        a.m_item = DenseMatrix(state.item0.rows, state.item0.cols);
        a.v_item = DenseMatrix(state.item0.rows, state.item0.cols);
        if (params) {
            for (const auto& w : params->weight) {
                a.m_weight.emplace_back(w.rows, w.cols);
                a.v_weight.emplace_back(w.rows, w.cols);
            }
            for (const auto& b : params->bias) {
                a.m_bias.emplace_back(b.size(), 0.0);
                a.v_bias.emplace_back(b.size(), 0.0);
            }
        }
        return a;
    }
};

namespace detail {

inline void adam_rows(DenseMatrix& param, DenseMatrix& m, DenseMatrix& v,
                      const DenseMatrix& grad, std::span<const std::uint32_t> rows, double lr,
                      double bias1, double bias2) {
    for (const std::uint32_t r : rows) {
        auto p = param.row(r);
        auto mm = m.row(r);
        auto vv = v.row(r);
        const auto g = grad.row(r);
        for (std::size_t c = 0; c < p.size(); ++c) {
            mm[c] = AdamState::beta1 * mm[c] + (1.0 - AdamState::beta1) * g[c];
            vv[c] = AdamState::beta2 * vv[c] + (1.0 - AdamState::beta2) * g[c] * g[c];
            const double m_hat = mm[c] / bias1;
            const double v_hat = vv[c] / bias2;
            p[c] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::epsilon);
        }
    }
}

inline void adam_dense(std::span<double> param, std::span<double> m, std::span<double> v,
                       std::span<const double> grad, double lr, double bias1, double bias2) {
    for (std::size_t c = 0; c < param.size(); ++c) {
        m[c] = AdamState::beta1 * m[c] + (1.0 - AdamState::beta1) * grad[c];
        v[c] = AdamState::beta2 * v[c] + (1.0 - AdamState::beta2) * grad[c] * grad[c];
        param[c] -= lr * (m[c] / bias1) / (std::sqrt(v[c] / bias2) + AdamState::epsilon);
    }
}

inline void mark_nonzero_rows(const DenseMatrix& grad, std::vector<char>& flags) {
    for (std::uint32_t r = 0; r < grad.rows; ++r) {
        for (const double g : grad.row(r)) {
            if (g != 0.0) {
                flags[r] = 1;
                break;
            }
        }
    }
}

inline std::vector<std::uint32_t> collect_rows(const std::vector<char>& flags) {
    std::vector<std::uint32_t> rows;
    for (std::uint32_t r = 0; r < flags.size(); ++r) {
        if (flags[r]) rows.push_back(r);
    }
    return rows;
}

}  // namespace detail

// One optimization step: analytic gradients for the batch, then a sparse
// Adam update restricted to the rows the batch actually touched (moment
// estimates of untouched rows do not advance).
inline double backward_and_step(EmbeddingState& state, WeightedLayerParams* params,
                                AdamState& adam, const PropagationOperator& op,
                                std::span<const BprTriplet> triplets, const ModelConfig& config,
                                const TrainConfig& train_config) {
    BatchGradients grads = compute_gradients(state, op, params, triplets, config,
                                             train_config.l2_lambda);

    // Touched rows: anything with a nonzero gradient plus the batch rows
    // themselves (whose moments must advance even at zero gradient).
    std::vector<char> user_flags(state.user0.rows, 0), item_flags(state.item0.rows, 0);
    detail::mark_nonzero_rows(grads.user0, user_flags);
    detail::mark_nonzero_rows(grads.item0, item_flags);
    for (const auto& t : triplets) {
        user_flags[t.user] = 1;
        item_flags[t.pos_item] = 1;
        item_flags[t.neg_item] = 1;
    }
    const auto user_rows = detail::collect_rows(user_flags);
    const auto item_rows = detail::collect_rows(item_flags);

    adam.step += 1;
    const double bias1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(adam.step));
    const double bias2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(adam.step));
    const double lr = train_config.learning_rate;
    detail::adam_rows(state.user0, adam.m_user, adam.v_user, grads.user0, user_rows, lr, bias1,
                      bias2);
    detail::adam_rows(state.item0, adam.m_item, adam.v_item, grads.item0, item_rows, lr, bias1,
                      bias2);
    if (params && config.kind == ModelKind::belightrec_w) {
        for (std::uint32_t k = 0; k < config.layers; ++k) {
            detail::adam_dense(params->weight[k].data, adam.m_weight[k].data,
                               adam.v_weight[k].data, grads.weight[k].data, lr, bias1, bias2);
            detail::adam_dense(params->bias[k], adam.m_bias[k], adam.v_bias[k], grads.bias[k], lr,
                               bias1, bias2);
        }
    }
    return grads.loss;
}

struct EvalRecord {
    std::uint32_t epoch = 0;
    RankingMetrics metrics;
    bool is_best = false;
};

struct TrainHistory {
    std::vector<double> epoch_mean_loss;  // mean loss per triplet, one entry per epoch
    std::vector<EvalRecord> evals;
    double best_metric = -1.0;
    std::uint32_t best_epoch = 0;
};

struct TrainResult {
    TrainHistory history;
    EmbeddingState best_state;
    std::optional<WeightedLayerParams> best_params;
};

namespace detail {

inline void log_json_metrics(std::ostream& out, std::uint32_t epoch, const RankingMetrics& metrics,
                             bool best) {
    char buf[64];
    out << "{\"epoch\":" << epoch;
    for (const auto& [k, at] : metrics.per_k) {
        std::snprintf(buf, sizeof buf, "%.17g", at.recall);
        out << ",\"recall@" << k << "\":" << buf;
        std::snprintf(buf, sizeof buf, "%.17g", at.ndcg);
        out << ",\"ndcg@" << k << "\":" << buf;
    }
    out << ",\"best_flag\":" << (best ? "true" : "false") << "}\n";
}

}  // namespace detail

// BPR training loop with periodic ranking evaluation and early stopping on
// recall@20. Returns the best state seen (the final state when no evaluation
// ever ran). The optional stream receives the line-delimited JSON history.
inline TrainResult train(EmbeddingState initial_state,
                         std::optional<WeightedLayerParams> initial_params,
                         const InteractionMatrix& r, const PropagationOperator& op,
                         const std::vector<std::vector<std::uint32_t>>& eval_items,
                         const ModelConfig& config, const TrainConfig& train_config,
                         std::vector<std::uint32_t> eval_ks = {20},
                         std::ostream* log = nullptr,
                         const std::string& early_stop_label = "test") {
    if (!config.trainable()) throw Error("train: model kind has no trainable parameters");
    if (train_config.patience < 1) throw Error("train: patience must be >= 1");
    if (train_config.eval_every < 1) throw Error("train: eval_every must be >= 1");
    if (std::find(eval_ks.begin(), eval_ks.end(), 20u) == eval_ks.end()) eval_ks.push_back(20);

    const bool weighted = config.kind == ModelKind::belightrec_w;
    WeightedLayerParams* params = initial_params ? &*initial_params : nullptr;
    if (weighted && !params) throw Error("train: +W kind requires initial params");

    TrainResult result;
    result.best_state = initial_state;
    result.best_params = initial_params;

    if (train_config.max_epochs == 0) {
        result.best_state = std::move(initial_state);
        result.best_params = std::move(initial_params);
        return result;
    }

    if (log) *log << "{\"early_stop_on\":\"" << early_stop_label << "\"}\n";

    EmbeddingState state = std::move(initial_state);
    AdamState adam = AdamState::like(state, params);
    Rng rng(substream_seed(train_config.seed, "sampling"));
    const std::size_t batches =
        (r.nnz() + train_config.batch_size - 1) / train_config.batch_size;
    std::uint32_t evals_without_improvement = 0;
    bool stopped = false;
    bool ever_evaluated = false;

    for (std::uint32_t epoch = 1; epoch <= train_config.max_epochs && !stopped; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        std::size_t pair_count = 0;
        for (std::size_t b = 0; b < batches; ++b) {
            const auto triplets = sample_triplets(r, train_config.batch_size, rng);
            loss_sum += backward_and_step(state, params, adam, op, triplets, config, train_config);
            pair_count += triplets.size();
        }
        const double mean_loss = loss_sum / static_cast<double>(pair_count);
        result.history.epoch_mean_loss.push_back(mean_loss);
        if (log) {
            const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - started)
                                  .count();
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", mean_loss);
            *log << "{\"epoch\":" << epoch << ",\"mean_loss\":" << buf << ",\"wall_ms\":" << wall
                 << "}\n";
        }

        if (epoch % train_config.eval_every != 0) continue;
        const Readout readout = weighted ? forward_weighted(state, op, *params, config)
                                         : forward(state, op, config);
        const Scorer scorer = [&](std::uint32_t u) {
            return predict_scores(readout.user.row(u), readout.item);
        };
        EvalRecord record;
        record.epoch = epoch;
        record.metrics = evaluate_model(scorer, r, eval_items, eval_ks);
        const double recall20 = record.metrics.at(20).recall;
        record.is_best = recall20 > result.history.best_metric;
        ever_evaluated = true;
        if (record.is_best) {
            result.history.best_metric = recall20;
            result.history.best_epoch = epoch;
            result.best_state = state;
            if (params) result.best_params = *params;
            evals_without_improvement = 0;
        } else {
            ++evals_without_improvement;
            if (evals_without_improvement >= train_config.patience) stopped = true;
        }
        if (log) detail::log_json_metrics(*log, epoch, record.metrics, record.is_best);
        result.history.evals.push_back(std::move(record));
    }

    if (!ever_evaluated) {
        result.best_state = std::move(state);
        if (params) result.best_params = *params;
    }
    return result;
}

}  // namespace belightrec
