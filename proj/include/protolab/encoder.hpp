#pragma once

#include "protolab/geometry.hpp"
#include "protolab/rng.hpp"

namespace protolab {

enum class EncoderKind { Linear, Mlp };

// Map from the input sphere to unit output vectors:
// Linear: y = normalize(x W1^T + b1); Mlp: y = normalize(tanh(x W1^T + b1) W2^T + b2).
// The bias terms matter: without them the map is odd (y(-x) = -y(x)) and the
// constant function — the trivial collapse solution — is not representable.
struct Encoder {
    EncoderKind kind = EncoderKind::Linear;
    Matrix w1;  // Linear: D x d_in ; Mlp: H x d_in
    Vector b1;  // Linear: D ; Mlp: H
    Matrix w2;  // Mlp: D x H ; Linear unused (0 x 0)
    Vector b2;  // Mlp: D ; Linear unused

    static Encoder init(EncoderKind kind, int d_in, int hidden, int out, Rng& rng);
    static Encoder zeros_like(const Encoder& other);

    int in_dim() const { return static_cast<int>(w1.cols()); }
    int out_dim() const {
        return static_cast<int>(kind == EncoderKind::Linear ? w1.rows() : w2.rows());
    }

    struct Cache {
        Matrix hact;      // B x H (Mlp only)
        Matrix y;         // B x D, unit rows
        Vector inv_norm;  // B, 1/||row before normalization||
    };

    // Forward pass; cache retains what backward needs.
    Matrix forward(const Matrix& x) const;
    Matrix forward_cached(const Matrix& x, Cache& cache) const;

    // Accumulates d(loss)/d(weights) into `grad` given dy = d(loss)/dy.
    void backward(const Matrix& x, const Cache& cache, const Matrix& dy,
                  Encoder& grad) const;

    void set_zero();
};

}  // namespace protolab
