#include "protolab/geometry.hpp"

#include <cmath>
#include <string>

namespace protolab {

Vector l2_normalize(const Vector& v) {
    const double norm = v.norm();
    if (norm <= kDegenerateNorm) {
        throw DegenerateVector("l2_normalize: norm " + std::to_string(norm) +
                               " below 1e-12");
    }
    return v / norm;
}

Matrix l2_normalize_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        const double norm = m.row(i).norm();
        if (norm <= kDegenerateNorm) {
            throw DegenerateVector("l2_normalize_rows: row " + std::to_string(i) +
                                   " has norm below 1e-12");
        }
        out.row(i) = m.row(i) / norm;
    }
    return out;
}

bool is_unit(const Vector& v, double tol) {
    return std::abs(v.norm() - 1.0) <= tol;
}

EmbeddingBatch::EmbeddingBatch(Matrix m) : rows(std::move(m)) {
    if (rows.rows() < 1) {
        throw ShapeMismatch("EmbeddingBatch: needs at least one row");
    }
    if (rows.cols() < 2) {
        throw ShapeMismatch("EmbeddingBatch: dimension must be >= 2");
    }
    for (Index i = 0; i < rows.rows(); ++i) {
        const double norm = rows.row(i).norm();
        if (std::abs(norm - 1.0) > kUnitNormTol) {
            throw DegenerateVector("EmbeddingBatch: row " + std::to_string(i) +
                                   " has norm " + std::to_string(norm));
        }
    }
}

double cosine_distance(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw DimensionMismatch("cosine_distance: " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
    }
    return 1.0 - a.dot(b);
}

NearestNeighbor min_pairwise_euclidean(const Matrix& rows, Index k) {
    const Index n = rows.rows();
    if (n < 2) {
        throw SingletonBatch("min_pairwise_euclidean: needs at least two rows");
    }
    double best = std::numeric_limits<double>::infinity();
    Index arg = -1;
    for (Index i = 0; i < n; ++i) {
        if (i == k) continue;
        const double d = (rows.row(k) - rows.row(i)).norm();
        if (d < best) {
            best = d;
            arg = i;
        }
    }
    return {best, arg};
}

}  // namespace protolab
