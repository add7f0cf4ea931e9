#include "protolab/encoder.hpp"

#include <cmath>
#include <string>

namespace protolab {

Encoder Encoder::init(EncoderKind kind, int d_in, int hidden, int out, Rng& rng) {
    Encoder enc;
    enc.kind = kind;
    const auto fill = [&rng](Matrix& m, Index rows, Index cols) {
        m.resize(rows, cols);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (Index i = 0; i < rows; ++i) {
            for (Index j = 0; j < cols; ++j) m(i, j) = scale * rng.gaussian();
        }
    };
    if (kind == EncoderKind::Linear) {
        fill(enc.w1, out, d_in);
        enc.b1 = Vector::Zero(out);
    } else {
        fill(enc.w1, hidden, d_in);
        enc.b1 = Vector::Zero(hidden);
        fill(enc.w2, out, hidden);
        enc.b2 = Vector::Zero(out);
    }
    return enc;
}

Encoder Encoder::zeros_like(const Encoder& other) {
    Encoder enc;
    enc.kind = other.kind;
    enc.w1 = Matrix::Zero(other.w1.rows(), other.w1.cols());
    enc.b1 = Vector::Zero(other.b1.size());
    enc.w2 = Matrix::Zero(other.w2.rows(), other.w2.cols());
    enc.b2 = Vector::Zero(other.b2.size());
    return enc;
}

Matrix Encoder::forward(const Matrix& x) const {
    Cache cache;
    return forward_cached(x, cache);
}

Matrix Encoder::forward_cached(const Matrix& x, Cache& cache) const {
    if (x.cols() != w1.cols()) {
        throw DimensionMismatch("Encoder: input dim " + std::to_string(x.cols()) +
                                " vs " + std::to_string(w1.cols()));
    }
    Matrix ypre;
    if (kind == EncoderKind::Linear) {
        ypre = (x * w1.transpose()).rowwise() + b1.transpose();
    } else {
        cache.hact =
            ((x * w1.transpose()).rowwise() + b1.transpose()).array().tanh();
        ypre = (cache.hact * w2.transpose()).rowwise() + b2.transpose();
    }
    cache.y.resize(ypre.rows(), ypre.cols());
    cache.inv_norm.resize(ypre.rows());
    for (Index b = 0; b < ypre.rows(); ++b) {
        const double norm = ypre.row(b).norm();
        if (norm <= kDegenerateNorm) {
            throw DegenerateVector("Encoder: output row " + std::to_string(b) +
                                   " collapsed to zero before normalization");
        }
        cache.inv_norm(b) = 1.0 / norm;
        cache.y.row(b) = ypre.row(b) * cache.inv_norm(b);
    }
    return cache.y;
}

void Encoder::backward(const Matrix& x, const Cache& cache, const Matrix& dy,
                       Encoder& grad) const {
    // Through y = ypre/||ypre||: dypre = (dy - (dy.y) y) / ||ypre||.
    Matrix dypre(dy.rows(), dy.cols());
    for (Index b = 0; b < dy.rows(); ++b) {
        const double along = dy.row(b).dot(cache.y.row(b));
        dypre.row(b) = (dy.row(b) - along * cache.y.row(b)) * cache.inv_norm(b);
    }
    if (kind == EncoderKind::Linear) {
        grad.w1 += dypre.transpose() * x;
        grad.b1 += dypre.colwise().sum().transpose();
        return;
    }
    grad.w2 += dypre.transpose() * cache.hact;
    grad.b2 += dypre.colwise().sum().transpose();
    const Matrix dhact = dypre * w2;
    const Matrix dhpre =
        dhact.array() * (1.0 - cache.hact.array() * cache.hact.array());
    grad.w1 += dhpre.transpose() * x;
    grad.b1 += dhpre.colwise().sum().transpose();
}

void Encoder::set_zero() {
    w1.setZero();
    b1.setZero();
    w2.setZero();
    b2.setZero();
}

}  // namespace protolab
