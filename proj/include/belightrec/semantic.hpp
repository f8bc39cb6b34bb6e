#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "belightrec/core.hpp"
#include "belightrec/dataset.hpp"
#include "belightrec/sparse.hpp"

namespace belightrec {

enum class VectorSource { tfidf, external, blended };

// Dense per-item text vectors, one row per item. Rows may be all-zero
// (items with no text).
struct ItemVectorTable {
    std::uint32_t n_items = 0;
    std::uint32_t dim = 0;
    std::vector<double> data;  // row-major
    VectorSource source = VectorSource::tfidf;

    std::span<const double> row(std::uint32_t i) const {
        return {data.data() + static_cast<std::size_t>(i) * dim, dim};
    }
    std::span<double> row(std::uint32_t i) {
        return {data.data() + static_cast<std::size_t>(i) * dim, dim};
    }
};

struct TfidfVocabulary {
    std::vector<std::string> terms;                         // column -> term, sorted
    std::unordered_map<std::string, std::uint32_t> column;  // term -> column
    std::vector<std::uint32_t> doc_freq;                    // per column
    std::uint32_t n_docs = 0;

    double idf(std::uint32_t col) const {
        return std::log((1.0 + n_docs) / (1.0 + doc_freq[col])) + 1.0;
    }
};

struct TfidfConfig {
    bool lowercase = true;
    std::uint32_t min_df = 1;
    std::uint32_t max_features = 0;  // 0 = unlimited
};

namespace detail {

inline std::vector<std::string> tokenize(std::string_view text, bool lowercase) {
    std::vector<std::string> tokens;
    std::string current;
    for (const char ch : text) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isalnum(uc)) {
            current.push_back(lowercase ? static_cast<char>(std::tolower(uc)) : ch);
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

}  // namespace detail

// tf = raw count in the document, idf = ln((1 + N) / (1 + df)) + 1, rows
// L2-normalized (all-zero rows stay zero). Vocabulary columns are assigned
// in lexicographic term order so fits are reproducible everywhere.
inline std::pair<TfidfVocabulary, ItemVectorTable> fit_tfidf_vectors(const ItemTextTable& texts,
                                                                     const TfidfConfig& config = {}) {
    if (texts.texts.empty()) throw Error("fit_tfidf_vectors: empty corpus");

    const auto n_docs = static_cast<std::uint32_t>(texts.texts.size());
    std::vector<std::unordered_map<std::string, std::uint32_t>> counts(n_docs);
    std::map<std::string, std::uint32_t> df;  // ordered: fixes column assignment
    for (std::uint32_t d = 0; d < n_docs; ++d) {
        for (auto& tok : detail::tokenize(texts.texts[d], config.lowercase)) ++counts[d][tok];
        for (const auto& [term, tf] : counts[d]) ++df[term];
    }
    if (df.empty()) throw Error("fit_tfidf_vectors: no tokens");

    std::vector<std::pair<std::string, std::uint32_t>> kept;
    for (const auto& [term, freq] : df) {
        if (freq >= config.min_df) kept.emplace_back(term, freq);
    }
    if (config.max_features > 0 && kept.size() > config.max_features) {
        std::stable_sort(kept.begin(), kept.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        kept.resize(config.max_features);
        std::sort(kept.begin(), kept.end());
    }
    if (kept.empty()) throw Error("fit_tfidf_vectors: no tokens");

    TfidfVocabulary vocab;
    vocab.n_docs = n_docs;
    vocab.terms.reserve(kept.size());
    vocab.doc_freq.reserve(kept.size());
    for (const auto& [term, freq] : kept) {
        vocab.column.emplace(term, static_cast<std::uint32_t>(vocab.terms.size()));
        vocab.terms.push_back(term);
        vocab.doc_freq.push_back(freq);
    }

    ItemVectorTable table;
    table.n_items = n_docs;
    table.dim = static_cast<std::uint32_t>(vocab.terms.size());
    table.data.assign(static_cast<std::size_t>(table.n_items) * table.dim, 0.0);
    table.source = VectorSource::tfidf;
    for (std::uint32_t d = 0; d < n_docs; ++d) {
        auto row = table.row(d);
        for (const auto& [term, tf] : counts[d]) {
            const auto it = vocab.column.find(term);
            if (it == vocab.column.end()) continue;
            row[it->second] = static_cast<double>(tf) * vocab.idf(it->second);
        }
        double norm_sq = 0.0;
        for (const double v : row) norm_sq += v * v;
        if (norm_sq > 0.0) {
            const double inv = 1.0 / std::sqrt(norm_sq);
            for (double& v : row) v *= inv;
        }
    }
    return {std::move(vocab), std::move(table)};
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("cosine_similarity: dimension mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline double blend_similarities(double s1, double s2, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("blend_similarities: alpha must be in [0, 1]");
    return alpha * s1 + (1.0 - alpha) * s2;
}

// Item-item semantic similarity matrix B: per-row top-N strongest neighbors
// (self excluded), entries L1-normalized so every nonempty row sums to 1.
// Top-N selection is per row, so B need not be symmetric.
struct SimilarityMatrix {
    std::uint32_t m = 0;
    std::vector<std::uint64_t> row_offsets;
    std::vector<std::uint32_t> col_indices;  // sorted within each row
    std::vector<double> values;

    std::size_t nnz() const { return col_indices.size(); }
    bool empty() const { return col_indices.empty(); }

    std::size_t row_degree(std::uint32_t i) const {
        return static_cast<std::size_t>(row_offsets[i + 1] - row_offsets[i]);
    }

    static SimilarityMatrix empty_matrix(std::uint32_t m) {
        SimilarityMatrix b;
        b.m = m;
        b.row_offsets.assign(static_cast<std::size_t>(m) + 1, 0);
        return b;
    }

    SparseOperator as_operator() const {
        SparseOperator op(m, m);
        op.row_offsets = row_offsets;
        op.col_indices = col_indices;
        op.values = values;
        return op;
    }

    static SimilarityMatrix from_operator(const SparseOperator& op) {
        if (op.rows != op.cols) throw Error("similarity matrix must be square");
        SimilarityMatrix b;
        b.m = op.rows;
        b.row_offsets = op.row_offsets;
        b.col_indices = op.col_indices;
        b.values = op.values;
        return b;
    }
};

namespace detail {

// Shared row builder: scores come from a callback so the plain and blended
// variants select and normalize identically.
inline SimilarityMatrix build_similarity_rows(
    std::uint32_t m, std::uint32_t top_n, double threshold,
    const std::function<double(std::uint32_t, std::uint32_t)>& score) {
    if (top_n < 1) throw Error("build_similarity_matrix: top_n must be >= 1");
    if (!(threshold >= 0.0 && threshold < 1.0))
        throw Error("build_similarity_matrix: threshold must be in [0, 1)");

    SimilarityMatrix b;
    b.m = m;
    b.row_offsets.assign(static_cast<std::size_t>(m) + 1, 0);
    std::vector<std::pair<double, std::uint32_t>> candidates;
    for (std::uint32_t i = 0; i < m; ++i) {
        candidates.clear();
        for (std::uint32_t j = 0; j < m; ++j) {
            if (j == i) continue;
            const double raw = std::max(0.0, score(i, j));
            if (raw > threshold) candidates.emplace_back(raw, j);
        }
        if (candidates.size() > top_n) {
            // ties broken in favor of the smaller item index
            std::partial_sort(candidates.begin(), candidates.begin() + top_n, candidates.end(),
                              [](const auto& a, const auto& b) {
                                  if (a.first != b.first) return a.first > b.first;
                                  return a.second < b.second;
                              });
            candidates.resize(top_n);
        }
        std::sort(candidates.begin(), candidates.end(),
                  [](const auto& a, const auto& b) { return a.second < b.second; });
        double sum = 0.0;
        for (const auto& [s, j] : candidates) sum += s;
        for (const auto& [s, j] : candidates) {
            b.col_indices.push_back(j);
            b.values.push_back(s / sum);
        }
        b.row_offsets[i + 1] = b.col_indices.size();
    }
    return b;
}

}  // namespace detail

inline SimilarityMatrix build_similarity_matrix(const ItemVectorTable& vectors, std::uint32_t top_n,
                                                double threshold = 0.0) {
    std::vector<double> norms(vectors.n_items, 0.0);
    for (std::uint32_t i = 0; i < vectors.n_items; ++i) {
        double acc = 0.0;
        for (const double v : vectors.row(i)) acc += v * v;
        norms[i] = std::sqrt(acc);
    }
    return detail::build_similarity_rows(
        vectors.n_items, top_n, threshold, [&](std::uint32_t i, std::uint32_t j) {
            if (norms[i] == 0.0 || norms[j] == 0.0) return 0.0;
            return dot(vectors.row(i), vectors.row(j)) / (norms[i] * norms[j]);
        });
}

// Blends two measures per pair (negatives clamped before blending), then
// applies the same top-N selection and row normalization.
inline SimilarityMatrix build_similarity_matrix_blended(const ItemVectorTable& first,
                                                        const ItemVectorTable& second, double alpha,
                                                        std::uint32_t top_n,
                                                        double threshold = 0.0) {
    if (first.n_items != second.n_items)
        throw Error("build_similarity_matrix_blended: item count mismatch");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw Error("build_similarity_matrix_blended: alpha must be in [0, 1]");
    return detail::build_similarity_rows(
        first.n_items, top_n, threshold, [&](std::uint32_t i, std::uint32_t j) {
            const double s1 = std::max(0.0, cosine_similarity(first.row(i), first.row(j)));
            const double s2 = std::max(0.0, cosine_similarity(second.row(i), second.row(j)));
            return blend_similarities(s1, s2, alpha);
        });
}

struct LoadVectorsResult {
    ItemVectorTable table;
    std::size_t missing_items = 0;  // known items absent from the file (zero rows)
    std::size_t unknown_rows = 0;   // file rows whose id is not in the log
};

namespace detail {

inline void assign_vector_row(ItemVectorTable& table, std::vector<char>& present,
                              const InteractionLog& log, const std::string& id,
                              std::span<const double> values, LoadVectorsResult& result) {
    for (const double v : values) {
        if (!std::isfinite(v))
            throw Error("load_external_vectors: non-finite value for item '" + id + "'");
    }
    const auto it = log.item_index.find(id);
    if (it == log.item_index.end()) {
        ++result.unknown_rows;
        return;
    }
    auto row = table.row(it->second);
    std::copy(values.begin(), values.end(), row.begin());
    present[it->second] = 1;
}

}  // namespace detail

// Reads per-item embedding vectors, either CSV `item_id,v0,v1,...` or the
// binary BLVE container (magic "BLVE", u32 count, u32 dim, then per record
// u32 id length + id bytes + dim float32 values, little-endian). Items not
// covered by the file get zero rows and are counted.
inline LoadVectorsResult load_external_vectors(const std::string& path, const InteractionLog& log) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path);

    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    const bool binary = in.gcount() == 4 && std::memcmp(magic, "BLVE", 4) == 0;
    LoadVectorsResult result;
    result.table.n_items = log.n_items();
    result.table.source = VectorSource::external;
    std::vector<char> present(log.n_items(), 0);

    if (binary) {
        std::uint32_t count = 0, dim = 0;
        in.read(reinterpret_cast<char*>(&count), sizeof count);
        in.read(reinterpret_cast<char*>(&dim), sizeof dim);
        if (!in || dim == 0) throw Error(path + ": corrupt BLVE header");
        result.table.dim = dim;
        result.table.data.assign(static_cast<std::size_t>(log.n_items()) * dim, 0.0);
        std::vector<float> buffer(dim);
        std::vector<double> values(dim);
        for (std::uint32_t r = 0; r < count; ++r) {
            std::uint32_t id_len = 0;
            in.read(reinterpret_cast<char*>(&id_len), sizeof id_len);
            std::string id(id_len, '\0');
            in.read(id.data(), id_len);
            in.read(reinterpret_cast<char*>(buffer.data()),
                    static_cast<std::streamsize>(dim * sizeof(float)));
            if (!in) throw Error(path + ": truncated BLVE record");
            for (std::uint32_t k = 0; k < dim; ++k) values[k] = static_cast<double>(buffer[k]);
            detail::assign_vector_row(result.table, present, log, id, values, result);
        }
    } else {
        in.clear();
        in.seekg(0);
        std::string line;
        std::size_t line_no = 0;
        std::vector<double> values;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line == "\r") continue;
            auto fields = detail::split_delimited(line, ',');
            if (fields.size() < 2)
                throw Error(path + ": malformed vector row at line " + std::to_string(line_no));
            const std::size_t dim = fields.size() - 1;
            if (result.table.dim == 0) {
                result.table.dim = static_cast<std::uint32_t>(dim);
                result.table.data.assign(static_cast<std::size_t>(log.n_items()) * dim, 0.0);
            } else if (dim != result.table.dim) {
                throw Error(path + ": ragged vector dimensions at line " + std::to_string(line_no));
            }
            values.clear();
            for (std::size_t k = 1; k < fields.size(); ++k) {
                try {
                    values.push_back(std::stod(fields[k]));
                } catch (const std::exception&) {
                    throw Error(path + ": bad number at line " + std::to_string(line_no));
                }
            }
            detail::assign_vector_row(result.table, present, log, fields[0], values, result);
        }
        if (result.table.dim == 0) throw Error(path + ": no vectors");
    }

    for (const char p : present) {
        if (!p) ++result.missing_items;
    }
    return result;
}

// Writers for the two external-vector formats. Values pass through float32
// in both so the formats carry identical data.
inline void write_vectors_blve(const std::string& path, const ItemVectorTable& table,
                               const std::vector<std::string>& item_ids) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out.write("BLVE", 4);
    const auto count = table.n_items;
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(&table.dim), sizeof table.dim);
    std::vector<float> buffer(table.dim);
    for (std::uint32_t i = 0; i < table.n_items; ++i) {
        const auto& id = item_ids[i];
        const auto id_len = static_cast<std::uint32_t>(id.size());
        out.write(reinterpret_cast<const char*>(&id_len), sizeof id_len);
        out.write(id.data(), id_len);
        const auto row = table.row(i);
        for (std::uint32_t k = 0; k < table.dim; ++k) buffer[k] = static_cast<float>(row[k]);
        out.write(reinterpret_cast<const char*>(buffer.data()),
                  static_cast<std::streamsize>(table.dim * sizeof(float)));
    }
    if (!out) throw Error("short write to " + path);
}

inline void write_vectors_csv(const std::string& path, const ItemVectorTable& table,
                              const std::vector<std::string>& item_ids) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    char buffer[64];
    for (std::uint32_t i = 0; i < table.n_items; ++i) {
        out << item_ids[i];
        for (const double v : table.row(i)) {
            std::snprintf(buffer, sizeof buffer, "%.9g", static_cast<double>(static_cast<float>(v)));
            out << ',' << buffer;
        }
        out << '\n';
    }
    if (!out) throw Error("short write to " + path);
}

}  // namespace belightrec
