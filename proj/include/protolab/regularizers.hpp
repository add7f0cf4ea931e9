#pragma once

#include <cstdint>
#include <vector>

#include "protolab/geometry.hpp"
#include "protolab/prototype_head.hpp"

namespace protolab {

enum class CenterSpace { Logit, Probability };

// EMA centering statistics subtracted from teacher logits before softmax.
struct CenterState {
    Vector c;
    double momentum = 0.9;
    CenterSpace space = CenterSpace::Probability;

    // Probability space starts at -log K (neutral for a uniform MLCD),
    // logit space at zero.
    static CenterState make(Index k, double momentum, CenterSpace space);
};

struct PriorDistribution {
    Vector probs;

    static PriorDistribution uniform(Index k);
    // pi_k proportional to k^-alpha, k = 1..K.
    static PriorDistribution power_law(Index k, double alpha);
};

// Alternating batch-axis / class-axis normalization of exp(logits) for
// `iters` rounds, ending on the class axis so each row is a distribution.
// Runs in the log domain.
LatentDistribution sinkhorn_adjust(const Matrix& logits, int iters);

// c' = m c + (1-m) log(column means of probs); means clamped at 1e-30.
CenterState probability_center_update(const CenterState& state,
                                      const LatentDistribution& dist);

// c' = m c + (1-m) (column means of logits).
CenterState logit_center_update(const CenterState& state, const Matrix& logits);

// Row-softmax of (logits - c).
LatentDistribution apply_center(const CenterState& state, const Matrix& logits);

// KL(mean_probs || prior), 0 log 0 := 0. Uniform prior gives log K - H.
double me_max_penalty(const Vector& mean_probs, const PriorDistribution& prior);

// Negative Kozachenko-Leonenko estimate -(1/N) sum_k log d_k with
// d_k the nearest-neighbour distance; minimizing it spreads the vectors.
// Throws DuplicateVectors when some d_k <= 1e-12.
double koleo_entropy(const Matrix& vectors);

// Sum of per-chunk estimates over a seeded random partition into contiguous
// chunks of `partition_size` (a trailing remainder of one is folded into the
// previous chunk).
double koleo_entropy_batched(const Matrix& vectors, Index partition_size,
                             std::uint64_t seed);

struct KoleoGradient {
    double value = 0.0;
    Matrix grad;                // N x D
    bool tie_detected = false;  // flag, not a failure
    std::vector<Index> tied;    // vectors whose two nearest distances coincide
};

// Exact gradient of koleo_entropy treating each min as locally smooth;
// argmin ties broken by lowest index and reported through the flag.
KoleoGradient koleo_gradient(const Matrix& vectors);

// Gradient of koleo_entropy_batched under the same seeded partition.
KoleoGradient koleo_gradient_batched(const Matrix& vectors, Index partition_size,
                                     std::uint64_t seed);

// Same estimator applied to data representations instead of prototypes.
double koleo_data_loss(const EmbeddingBatch& batch);

}  // namespace protolab
