#pragma once

#include <Eigen/Dense>

#include "protolab/errors.hpp"

namespace protolab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kUnitNormTol = 1e-6;
inline constexpr double kDegenerateNorm = 1e-12;

// v / ||v||. Throws DegenerateVector when ||v|| <= 1e-12.
Vector l2_normalize(const Vector& v);

// Row-wise normalization; same degeneracy rule per row.
Matrix l2_normalize_rows(const Matrix& m);

bool is_unit(const Vector& v, double tol = kUnitNormTol);

// B unit vectors stacked row-wise. Validates on construction.
struct EmbeddingBatch {
    Matrix rows;

    explicit EmbeddingBatch(Matrix m);

    Index size() const { return rows.rows(); }
    Index dim() const { return rows.cols(); }
};

// 1 - a.b for unit a, b; range [0, 2]. Throws DimensionMismatch.
double cosine_distance(const Vector& a, const Vector& b);

struct NearestNeighbor {
    double distance;
    Index index;
};

// min over i != k of ||row_k - row_i||, ties broken by lowest index.
// Throws SingletonBatch when fewer than two rows.
NearestNeighbor min_pairwise_euclidean(const Matrix& rows, Index k);

}  // namespace protolab
