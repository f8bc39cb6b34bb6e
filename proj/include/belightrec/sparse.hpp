#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <vector>

#include "belightrec/core.hpp"

namespace belightrec {

// Row-major dense matrix of doubles. Embedding tables, layer outputs and
// gradients all live in this shape.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    void fill(double value) { std::fill(data.begin(), data.end(), value); }

    bool same_shape(const DenseMatrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

inline void add_scaled(DenseMatrix& dst, const DenseMatrix& src, double factor) {
    if (!dst.same_shape(src)) throw Error("add_scaled: shape mismatch");
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += factor * src.data[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("dot: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// C = A^T * B with A: n x p, B: n x q -> C: p x q.
inline DenseMatrix dense_atb(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows != b.rows) throw Error("dense_atb: row mismatch");
    DenseMatrix c(a.cols, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const auto ra = a.row(i);
        const auto rb = b.row(i);
        for (std::size_t p = 0; p < a.cols; ++p) {
            const double ap = ra[p];
            if (ap == 0.0) continue;
            auto rc = c.row(p);
            for (std::size_t q = 0; q < b.cols; ++q) rc[q] += ap * rb[q];
        }
    }
    return c;
}

// C = A * B with A: n x p, B: p x q -> C: n x q.
inline DenseMatrix dense_ab(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows) throw Error("dense_ab: inner dimension mismatch");
    DenseMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const auto ra = a.row(i);
        auto rc = c.row(i);
        for (std::size_t p = 0; p < a.cols; ++p) {
            const double ap = ra[p];
            if (ap == 0.0) continue;
            const auto rb = b.row(p);
            for (std::size_t q = 0; q < b.cols; ++q) rc[q] += ap * rb[q];
        }
    }
    return c;
}

// C = A * B^T with A: n x p, B: q x p -> C: n x q.
inline DenseMatrix dense_abt(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.cols) throw Error("dense_abt: inner dimension mismatch");
    DenseMatrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const auto ra = a.row(i);
        auto rc = c.row(i);
        for (std::size_t q = 0; q < b.rows; ++q) rc[q] = dot(ra, b.row(q));
    }
    return c;
}

// Compressed-row sparse matrix with nonnegative weights. Column indices are
// strictly increasing within each row, which fixes the accumulation order and
// keeps every product bitwise reproducible.
struct SparseOperator {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint64_t> row_offsets;  // size rows + 1
    std::vector<std::uint32_t> col_indices;
    std::vector<double> values;

    SparseOperator() = default;
    SparseOperator(std::uint32_t r, std::uint32_t c)
        : rows(r), cols(c), row_offsets(static_cast<std::size_t>(r) + 1, 0) {}

    std::size_t nnz() const { return col_indices.size(); }
    bool empty() const { return col_indices.empty(); }

    std::size_t row_degree(std::uint32_t r) const {
        return static_cast<std::size_t>(row_offsets[r + 1] - row_offsets[r]);
    }

    void validate() const {
        if (row_offsets.size() != static_cast<std::size_t>(rows) + 1)
            throw Error("sparse operator: bad row offsets");
        if (row_offsets.front() != 0 || row_offsets.back() != nnz())
            throw Error("sparse operator: offset bounds");
        for (std::uint32_t r = 0; r < rows; ++r) {
            for (std::uint64_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
                if (col_indices[k] >= cols) throw Error("sparse operator: column out of range");
                if (k > row_offsets[r] && col_indices[k] <= col_indices[k - 1])
                    throw Error("sparse operator: columns not strictly increasing");
                if (!std::isfinite(values[k]) || values[k] < 0.0)
                    throw Error("sparse operator: invalid weight");
            }
        }
    }

    // y += this * x, x: cols x d, y: rows x d.
    void multiply_add(const DenseMatrix& x, DenseMatrix& y) const {
        if (x.rows != cols || y.rows != rows || x.cols != y.cols)
            throw Error("sparse multiply: dimension mismatch");
        for (std::uint32_t r = 0; r < rows; ++r) {
            auto out = y.row(r);
            for (std::uint64_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
                const double w = values[k];
                const auto in = x.row(col_indices[k]);
                for (std::size_t j = 0; j < out.size(); ++j) out[j] += w * in[j];
            }
        }
    }

    DenseMatrix multiply(const DenseMatrix& x) const {
        DenseMatrix y(rows, x.cols);
        multiply_add(x, y);
        return y;
    }

    SparseOperator transposed() const {
        SparseOperator t(cols, rows);
        t.col_indices.resize(nnz());
        t.values.resize(nnz());
        std::vector<std::uint64_t> counts(cols, 0);
        for (const std::uint32_t c : col_indices) ++counts[c];
        for (std::uint32_t c = 0; c < cols; ++c) t.row_offsets[c + 1] = t.row_offsets[c] + counts[c];
        std::vector<std::uint64_t> cursor(t.row_offsets.begin(), t.row_offsets.end() - 1);
        for (std::uint32_t r = 0; r < rows; ++r) {
            for (std::uint64_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
                const std::uint32_t c = col_indices[k];
                t.col_indices[cursor[c]] = r;
                t.values[cursor[c]] = values[k];
                ++cursor[c];
            }
        }
        return t;
    }
};

// Binary container for sparse matrices cached on disk: magic "BLSP", row and
// column counts, nnz, a caller-supplied content hash of the inputs, then the
// CSR arrays. Little-endian throughout.
inline void save_sparse(const std::string& path, const SparseOperator& op,
                        std::uint64_t content_hash) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    const char magic[4] = {'B', 'L', 'S', 'P'};
    out.write(magic, 4);
    const std::uint32_t rows = op.rows, cols = op.cols;
    const std::uint64_t nnz = op.nnz();
    out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
    out.write(reinterpret_cast<const char*>(&nnz), sizeof nnz);
    out.write(reinterpret_cast<const char*>(&content_hash), sizeof content_hash);
    out.write(reinterpret_cast<const char*>(op.row_offsets.data()),
              static_cast<std::streamsize>(op.row_offsets.size() * sizeof(std::uint64_t)));
    out.write(reinterpret_cast<const char*>(op.col_indices.data()),
              static_cast<std::streamsize>(op.col_indices.size() * sizeof(std::uint32_t)));
    out.write(reinterpret_cast<const char*>(op.values.data()),
              static_cast<std::streamsize>(op.values.size() * sizeof(double)));
    if (!out) throw Error("short write to " + path);
}

struct LoadedSparse {
    SparseOperator op;
    std::uint64_t content_hash = 0;
};

inline LoadedSparse load_sparse(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "BLSP", 4) != 0) throw Error(path + ": not a BLSP file");
    LoadedSparse result;
    std::uint32_t rows = 0, cols = 0;
    std::uint64_t nnz = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof rows);
    in.read(reinterpret_cast<char*>(&cols), sizeof cols);
    in.read(reinterpret_cast<char*>(&nnz), sizeof nnz);
    in.read(reinterpret_cast<char*>(&result.content_hash), sizeof result.content_hash);
    result.op = SparseOperator(rows, cols);
    result.op.col_indices.resize(nnz);
    result.op.values.resize(nnz);
    in.read(reinterpret_cast<char*>(result.op.row_offsets.data()),
            static_cast<std::streamsize>(result.op.row_offsets.size() * sizeof(std::uint64_t)));
    in.read(reinterpret_cast<char*>(result.op.col_indices.data()),
            static_cast<std::streamsize>(nnz * sizeof(std::uint32_t)));
    in.read(reinterpret_cast<char*>(result.op.values.data()),
            static_cast<std::streamsize>(nnz * sizeof(double)));
    if (!in) throw Error(path + ": truncated BLSP file");
    result.op.validate();
    return result;
}

}  // namespace belightrec
