#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "belightrec/core.hpp"
#include "belightrec/graph.hpp"
#include "belightrec/semantic.hpp"
#include "belightrec/sparse.hpp"

namespace belightrec {

enum class ModelKind : std::uint32_t {
    belightrec = 0,
    lightgcn = 1,
    mfbpr = 2,
    simonly = 3,
    belightrec_w = 4,
};

inline const char* to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::belightrec: return "belightrec";
        case ModelKind::lightgcn: return "lightgcn";
        case ModelKind::mfbpr: return "mfbpr";
        case ModelKind::simonly: return "simonly";
        case ModelKind::belightrec_w: return "belightrec_w";
    }
    throw Error("unknown model kind");
}

inline ModelKind parse_model_kind(const std::string& name) {
    if (name == "belightrec") return ModelKind::belightrec;
    if (name == "lightgcn") return ModelKind::lightgcn;
    if (name == "mfbpr") return ModelKind::mfbpr;
    if (name == "simonly") return ModelKind::simonly;
    if (name == "belightrec_w") return ModelKind::belightrec_w;
    throw Error("unknown model kind '" + name + "'");
}

struct ModelConfig {
    ModelKind kind = ModelKind::belightrec;
    std::uint32_t embed_dim = 64;
    std::uint32_t layers = 3;
    std::uint64_t seed = 42;
    double init_scale = 0.1;
    bool include_layer0 = false;  // restores the k = 0..K readout convention
    SemanticSummand summand = SemanticSummand::neighbor;

    bool uses_semantic() const {
        return kind == ModelKind::belightrec || kind == ModelKind::belightrec_w;
    }
    bool uses_propagation() const {
        return kind == ModelKind::belightrec || kind == ModelKind::lightgcn ||
               kind == ModelKind::belightrec_w;
    }
    bool trainable() const { return kind != ModelKind::simonly; }
};

// Trainable layer-0 embedding tables.
struct EmbeddingState {
    DenseMatrix user0;  // n x d
    DenseMatrix item0;  // m x d
};

// Per-layer transform of the +W variant.
struct WeightedLayerParams {
    std::vector<DenseMatrix> weight;            // K matrices, d x d
    std::vector<std::vector<double>> bias;      // K vectors, length d

    std::uint32_t layer_count() const { return static_cast<std::uint32_t>(weight.size()); }
};

inline EmbeddingState init_embeddings(std::uint32_t n, std::uint32_t m,
                                      const ModelConfig& config) {
    if (n < 1 || m < 1 || config.embed_dim < 1)
        throw Error("init_embeddings: n, m and d must be >= 1");
    EmbeddingState state;
    state.user0 = DenseMatrix(n, config.embed_dim);
    state.item0 = DenseMatrix(m, config.embed_dim);
    Rng rng(substream_seed(config.seed, "init"));
    for (double& v : state.user0.data) v = config.init_scale * rng.gaussian();
    for (double& v : state.item0.data) v = config.init_scale * rng.gaussian();
    return state;
}

// Xavier-style weights, zero bias, one set per layer.
inline WeightedLayerParams init_weighted_params(const ModelConfig& config) {
    WeightedLayerParams params;
    const auto d = config.embed_dim;
    const double scale = std::sqrt(2.0 / (static_cast<double>(d) + static_cast<double>(d)));
    Rng rng(substream_seed(config.seed, "weights"));
    for (std::uint32_t k = 0; k < config.layers; ++k) {
        DenseMatrix w(d, d);
        for (double& v : w.data) v = scale * rng.gaussian();
        params.weight.push_back(std::move(w));
        params.bias.emplace_back(d, 0.0);
    }
    return params;
}

constexpr double kLeakySlope = 0.2;

inline double leaky_relu(double x) { return x > 0.0 ? x : kLeakySlope * x; }
inline double leaky_relu_grad(double x) { return x > 0.0 ? 1.0 : kLeakySlope; }

// Per-layer intermediates kept for the backward pass.
struct ForwardTrace {
    std::vector<DenseMatrix> user_layers;  // E^0..E^K
    std::vector<DenseMatrix> item_layers;
    std::vector<DenseMatrix> user_z;    // +W only: propagated inputs, layers 1..K
    std::vector<DenseMatrix> item_z;
    std::vector<DenseMatrix> user_pre;  // +W only: pre-activations, layers 1..K
    std::vector<DenseMatrix> item_pre;
};

struct Readout {
    DenseMatrix user;  // n x d
    DenseMatrix item;  // m x d
};

namespace detail {

inline Readout average_layers(const ForwardTrace& trace, const ModelConfig& config) {
    const std::size_t first = config.include_layer0 ? 0 : 1;
    const double scale = 1.0 / static_cast<double>(trace.user_layers.size() - first);
    Readout out;
    out.user = DenseMatrix(trace.user_layers[0].rows, trace.user_layers[0].cols);
    out.item = DenseMatrix(trace.item_layers[0].rows, trace.item_layers[0].cols);
    for (std::size_t k = first; k < trace.user_layers.size(); ++k) {
        add_scaled(out.user, trace.user_layers[k], scale);
        add_scaled(out.item, trace.item_layers[k], scale);
    }
    return out;
}

}  // namespace detail

// Runs K propagation steps and averages the layer outputs into the final
// characteristic vectors. For mfbpr the readout is the layer-0 tables
// unchanged. Pass a trace to keep per-layer values for backprop.
inline Readout forward(const EmbeddingState& state, const PropagationOperator& op,
                       const ModelConfig& config, ForwardTrace* trace = nullptr) {
    if (config.kind == ModelKind::simonly)
        throw Error("forward: simonly has no embedding forward pass");
    if (config.kind == ModelKind::mfbpr) {
        if (trace) {
            trace->user_layers = {state.user0};
            trace->item_layers = {state.item0};
        }
        return {state.user0, state.item0};
    }
    if (config.layers < 1) throw Error("forward: layer count must be >= 1 for GCN kinds");
    if (state.user0.rows != op.n_users() || state.item0.rows != op.n_items() ||
        state.user0.cols != state.item0.cols)
        throw Error("forward: shape mismatch between state and operator");

    ForwardTrace local;
    ForwardTrace& t = trace ? *trace : local;
    t.user_layers = {state.user0};
    t.item_layers = {state.item0};
    const bool semantic = config.uses_semantic();
    for (std::uint32_t k = 0; k < config.layers; ++k) {
        auto [next_u, next_i] =
            propagate_once(op, t.user_layers.back(), t.item_layers.back(), semantic,
                           config.summand);
        t.user_layers.push_back(std::move(next_u));
        t.item_layers.push_back(std::move(next_i));
    }
    return detail::average_layers(t, config);
}

// +W variant: every layer applies E <- LeakyReLU(propagate(E) * W + bias).
inline Readout forward_weighted(const EmbeddingState& state, const PropagationOperator& op,
                                const WeightedLayerParams& params, const ModelConfig& config,
                                ForwardTrace* trace = nullptr) {
    if (params.layer_count() != config.layers)
        throw Error("forward_weighted: params sized for wrong layer count");
    if (state.user0.rows != op.n_users() || state.item0.rows != op.n_items())
        throw Error("forward_weighted: shape mismatch between state and operator");

    ForwardTrace local;
    ForwardTrace& t = trace ? *trace : local;
    t.user_layers = {state.user0};
    t.item_layers = {state.item0};
    const bool semantic = config.uses_semantic();
    for (std::uint32_t k = 0; k < config.layers; ++k) {
        auto [z_u, z_i] =
            propagate_once(op, t.user_layers.back(), t.item_layers.back(), semantic,
                           config.summand);
        DenseMatrix pre_u = dense_ab(z_u, params.weight[k]);
        DenseMatrix pre_i = dense_ab(z_i, params.weight[k]);
        const auto& bias = params.bias[k];
        for (std::size_t r = 0; r < pre_u.rows; ++r) {
            auto row = pre_u.row(r);
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
        }
        for (std::size_t r = 0; r < pre_i.rows; ++r) {
            auto row = pre_i.row(r);
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
        }
        DenseMatrix act_u = pre_u, act_i = pre_i;
        for (double& v : act_u.data) v = leaky_relu(v);
        for (double& v : act_i.data) v = leaky_relu(v);
        t.user_z.push_back(std::move(z_u));
        t.item_z.push_back(std::move(z_i));
        t.user_pre.push_back(std::move(pre_u));
        t.item_pre.push_back(std::move(pre_i));
        t.user_layers.push_back(std::move(act_u));
        t.item_layers.push_back(std::move(act_i));
    }
    return detail::average_layers(t, config);
}

// score(u, i) = dot(e_u, e_i) for every item.
inline std::vector<double> predict_scores(std::span<const double> user_row,
                                          const DenseMatrix& item_readout) {
    std::vector<double> scores(item_readout.rows);
    for (std::size_t i = 0; i < item_readout.rows; ++i) scores[i] = dot(user_row, item_readout.row(i));
    return scores;
}

// Propagation-free baseline: score(u, j) = sum of B[a, j] over the user's
// train items a, using B's raw L1-normalized weights.
inline std::vector<double> similarity_only_scores(std::span<const std::uint32_t> train_items,
                                                  const SimilarityMatrix& b) {
    std::vector<double> scores(b.m, 0.0);
    for (const std::uint32_t a : train_items) {
        for (std::uint64_t k = b.row_offsets[a]; k < b.row_offsets[a + 1]; ++k)
            scores[b.col_indices[k]] += b.values[k];
    }
    return scores;
}

// Model checkpoint: magic "BLCK", version, kind tag, n, m, d, K, float32
// tables row-major, then per-layer W and bias for the +W variant.
struct Checkpoint {
    ModelKind kind = ModelKind::belightrec;
    std::uint32_t n = 0, m = 0, d = 0, layers = 0;
    EmbeddingState state;
    std::optional<WeightedLayerParams> params;
};

namespace detail {

inline void write_f32(std::ofstream& out, std::span<const double> values) {
    std::vector<float> buffer(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) buffer[i] = static_cast<float>(values[i]);
    out.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(float)));
}

inline void read_f32(std::ifstream& in, std::span<double> values) {
    std::vector<float> buffer(values.size());
    in.read(reinterpret_cast<char*>(buffer.data()),
            static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(buffer[i]);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out.write("BLCK", 4);
    const std::uint32_t version = 1;
    const auto kind = static_cast<std::uint32_t>(ckpt.kind);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&kind), sizeof kind);
    out.write(reinterpret_cast<const char*>(&ckpt.n), sizeof ckpt.n);
    out.write(reinterpret_cast<const char*>(&ckpt.m), sizeof ckpt.m);
    out.write(reinterpret_cast<const char*>(&ckpt.d), sizeof ckpt.d);
    out.write(reinterpret_cast<const char*>(&ckpt.layers), sizeof ckpt.layers);
    detail::write_f32(out, ckpt.state.user0.data);
    detail::write_f32(out, ckpt.state.item0.data);
    if (ckpt.kind == ModelKind::belightrec_w) {
        if (!ckpt.params || ckpt.params->layer_count() != ckpt.layers)
            throw Error("save_checkpoint: missing +W params");
        for (std::uint32_t k = 0; k < ckpt.layers; ++k) {
            detail::write_f32(out, ckpt.params->weight[k].data);
            detail::write_f32(out, ckpt.params->bias[k]);
        }
    }
    if (!out) throw Error("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "BLCK", 4) != 0) throw Error(path + ": not a BLCK checkpoint");
    std::uint32_t version = 0, kind = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != 1) throw Error(path + ": unsupported checkpoint version");
    Checkpoint ckpt;
    in.read(reinterpret_cast<char*>(&kind), sizeof kind);
    ckpt.kind = static_cast<ModelKind>(kind);
    in.read(reinterpret_cast<char*>(&ckpt.n), sizeof ckpt.n);
    in.read(reinterpret_cast<char*>(&ckpt.m), sizeof ckpt.m);
    in.read(reinterpret_cast<char*>(&ckpt.d), sizeof ckpt.d);
    in.read(reinterpret_cast<char*>(&ckpt.layers), sizeof ckpt.layers);
    if (!in) throw Error(path + ": truncated checkpoint header");
    ckpt.state.user0 = DenseMatrix(ckpt.n, ckpt.d);
    ckpt.state.item0 = DenseMatrix(ckpt.m, ckpt.d);
    detail::read_f32(in, ckpt.state.user0.data);
    detail::read_f32(in, ckpt.state.item0.data);
    if (ckpt.kind == ModelKind::belightrec_w) {
        WeightedLayerParams params;
        for (std::uint32_t k = 0; k < ckpt.layers; ++k) {
            DenseMatrix w(ckpt.d, ckpt.d);
            std::vector<double> bias(ckpt.d);
            detail::read_f32(in, w.data);
            detail::read_f32(in, bias);
            params.weight.push_back(std::move(w));
            params.bias.push_back(std::move(bias));
        }
        ckpt.params = std::move(params);
    }
    if (!in) throw Error(path + ": truncated checkpoint payload");
    return ckpt;
}

}  // namespace belightrec
