#include "protolab/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "protolab/rng.hpp"

namespace protolab {

namespace {
constexpr double kColumnMeanClamp = 1e-30;
constexpr double kDuplicateDist = 1e-12;
constexpr double kTieGap = 1e-9;
}  // namespace

CenterState CenterState::make(Index k, double momentum, CenterSpace space) {
    if (k < 1) throw ShapeMismatch("CenterState: K must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0 + 1e-15)) {
        throw NumericalRange("CenterState: momentum must be in [0, 1]");
    }
    CenterState s;
    s.momentum = momentum;
    s.space = space;
    s.c = space == CenterSpace::Probability
              ? Vector::Constant(k, -std::log(static_cast<double>(k)))
              : Vector::Zero(k);
    return s;
}

PriorDistribution PriorDistribution::uniform(Index k) {
    if (k < 1) throw ShapeMismatch("PriorDistribution: K must be >= 1");
    return {Vector::Constant(k, 1.0 / static_cast<double>(k))};
}

PriorDistribution PriorDistribution::power_law(Index k, double alpha) {
    if (k < 1) throw ShapeMismatch("PriorDistribution: K must be >= 1");
    if (!(alpha > 0.0)) throw NumericalRange("PriorDistribution: alpha must be > 0");
    Vector p(k);
    for (Index i = 0; i < k; ++i) {
        p(i) = std::pow(static_cast<double>(i + 1), -alpha);
    }
    return {p / p.sum()};
}

LatentDistribution sinkhorn_adjust(const Matrix& logits, int iters) {
    if (iters < 1) throw NumericalRange("sinkhorn_adjust: iters must be >= 1");
    if (!logits.allFinite()) throw NonFinite("sinkhorn_adjust: non-finite logits");

    Matrix a = logits;  // log of the transport matrix, up to constants
    const Index b_count = a.rows();
    const Index k_count = a.cols();
    for (int it = 0; it < iters; ++it) {
        // Batch axis: each class column of exp(a) sums to 1.
        for (Index k = 0; k < k_count; ++k) {
            const double m = a.col(k).maxCoeff();
            const double lse = std::log((a.col(k).array() - m).exp().sum()) + m;
            a.col(k).array() -= lse;
        }
        // Class axis: each row of exp(a) sums to 1.
        for (Index b = 0; b < b_count; ++b) {
            const double m = a.row(b).maxCoeff();
            const double lse = std::log((a.row(b).array() - m).exp().sum()) + m;
            a.row(b).array() -= lse;
        }
        if (!a.allFinite()) throw NonFinite("sinkhorn_adjust: iteration overflowed");
    }
    return LatentDistribution(a.array().exp());
}

CenterState probability_center_update(const CenterState& state,
                                      const LatentDistribution& dist) {
    if (state.space != CenterSpace::Probability) {
        throw ShapeMismatch("probability_center_update: state is not probability-space");
    }
    if (dist.classes() != state.c.size()) {
        throw DimensionMismatch("probability_center_update: K mismatch");
    }
    const Vector mean = dist.probs.colwise().mean();
    CenterState out = state;
    for (Index k = 0; k < mean.size(); ++k) {
        const double clamped = std::max(mean(k), kColumnMeanClamp);
        out.c(k) = state.momentum * state.c(k) +
                   (1.0 - state.momentum) * std::log(clamped);
    }
    return out;
}

CenterState logit_center_update(const CenterState& state, const Matrix& logits) {
    if (state.space != CenterSpace::Logit) {
        throw ShapeMismatch("logit_center_update: state is not logit-space");
    }
    if (logits.cols() != state.c.size()) {
        throw DimensionMismatch("logit_center_update: K mismatch");
    }
    CenterState out = state;
    out.c = state.momentum * state.c +
            (1.0 - state.momentum) * logits.colwise().mean().transpose();
    return out;
}

LatentDistribution apply_center(const CenterState& state, const Matrix& logits) {
    if (logits.cols() != state.c.size()) {
        throw DimensionMismatch("apply_center: K mismatch");
    }
    if (!logits.allFinite()) throw NonFinite("apply_center: non-finite logits");
    return LatentDistribution(
        softmax_rows(logits.rowwise() - state.c.transpose()));
}

double me_max_penalty(const Vector& mean_probs, const PriorDistribution& prior) {
    if (mean_probs.size() != prior.probs.size()) {
        throw DimensionMismatch("me_max_penalty: K mismatch");
    }
    const double total = mean_probs.sum();
    if (std::abs(total - 1.0) > 1e-9) {
        throw NumericalRange("me_max_penalty: mean_probs sums to " +
                             std::to_string(total));
    }
    double kl = 0.0;
    for (Index k = 0; k < mean_probs.size(); ++k) {
        const double p = mean_probs(k);
        if (p <= 0.0) continue;  // 0 log 0 := 0
        const double q = prior.probs(k);
        if (q <= 0.0) {
            throw InfinitePenalty("me_max_penalty: mass on a zero-prior class");
        }
        kl += p * std::log(p / q);
    }
    return std::max(kl, 0.0);
}

double koleo_entropy(const Matrix& vectors) {
    const Index n = vectors.rows();
    if (n < 2) throw SingletonBatch("koleo_entropy: needs at least two vectors");
    double sum_log = 0.0;
    for (Index k = 0; k < n; ++k) {
        const NearestNeighbor nn = min_pairwise_euclidean(vectors, k);
        if (nn.distance <= kDuplicateDist) {
            throw DuplicateVectors("koleo_entropy: vectors " + std::to_string(k) +
                                   " and " + std::to_string(nn.index) +
                                   " coincide");
        }
        sum_log += std::log(nn.distance);
    }
    return -sum_log / static_cast<double>(n);
}

namespace {

std::vector<std::vector<Index>> partition_indices(Index n, Index partition_size,
                                                  std::uint64_t seed) {
    if (partition_size < 2) {
        throw NumericalRange("koleo_entropy_batched: partition_size must be >= 2");
    }
    if (n < 2) {
        throw SingletonBatch("koleo_entropy_batched: needs at least two vectors");
    }
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    if (partition_size >= n) {
        // Single chunk in original order: exactly the plain estimator.
        return {perm};
    }
    Rng rng(seed);
    rng.shuffle(perm);

    std::vector<std::vector<Index>> chunks;
    for (Index start = 0; start < n; start += partition_size) {
        const Index end = std::min(start + partition_size, n);
        chunks.emplace_back(perm.begin() + start, perm.begin() + end);
    }
    // A trailing remainder of one cannot host a nearest-neighbour distance;
    // fold it into the previous chunk.
    if (chunks.size() > 1 && chunks.back().size() == 1) {
        chunks[chunks.size() - 2].push_back(chunks.back().front());
        chunks.pop_back();
    }
    return chunks;
}

Matrix gather_rows(const Matrix& m, const std::vector<Index>& idx) {
    Matrix out(static_cast<Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.row(static_cast<Index>(i)) = m.row(idx[i]);
    }
    return out;
}

}  // namespace

double koleo_entropy_batched(const Matrix& vectors, Index partition_size,
                             std::uint64_t seed) {
    double total = 0.0;
    for (const auto& chunk : partition_indices(vectors.rows(), partition_size, seed)) {
        total += koleo_entropy(gather_rows(vectors, chunk));
    }
    return total;
}

KoleoGradient koleo_gradient(const Matrix& vectors) {
    const Index n = vectors.rows();
    if (n < 2) throw SingletonBatch("koleo_gradient: needs at least two vectors");

    KoleoGradient out;
    out.grad = Matrix::Zero(n, vectors.cols());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Index j = 0; j < n; ++j) {
        // Nearest and second-nearest distances; ties flagged when they
        // coincide within the gap tolerance.
        double best = std::numeric_limits<double>::infinity();
        double second = std::numeric_limits<double>::infinity();
        Index arg = -1;
        Index arg2 = -1;
        for (Index i = 0; i < n; ++i) {
            if (i == j) continue;
            const double d = (vectors.row(j) - vectors.row(i)).norm();
            if (d < best) {
                second = best;
                arg2 = arg;
                best = d;
                arg = i;
            } else if (d < second) {
                second = d;
                arg2 = i;
            }
        }
        if (best <= kDuplicateDist) {
            throw DuplicateVectors("koleo_gradient: vectors " + std::to_string(j) +
                                   " and " + std::to_string(arg) + " coincide");
        }
        if (second - best < kTieGap) {
            // The subgradient choice is a kink in j, the winner and the
            // runner-up; record all three so callers can excise them.
            out.tie_detected = true;
            out.tied.push_back(j);
            out.tied.push_back(arg);
            if (arg2 >= 0) out.tied.push_back(arg2);
        }
        out.value += -inv_n * std::log(best);
        const Vector diff = (vectors.row(j) - vectors.row(arg)).transpose();
        const Vector term = inv_n / (best * best) * diff;
        out.grad.row(j) -= term.transpose();
        out.grad.row(arg) += term.transpose();
    }
    std::sort(out.tied.begin(), out.tied.end());
    out.tied.erase(std::unique(out.tied.begin(), out.tied.end()), out.tied.end());
    return out;
}

KoleoGradient koleo_gradient_batched(const Matrix& vectors, Index partition_size,
                                     std::uint64_t seed) {
    KoleoGradient out;
    out.grad = Matrix::Zero(vectors.rows(), vectors.cols());
    for (const auto& chunk : partition_indices(vectors.rows(), partition_size, seed)) {
        const KoleoGradient g = koleo_gradient(gather_rows(vectors, chunk));
        out.value += g.value;
        out.tie_detected = out.tie_detected || g.tie_detected;
        for (const Index local : g.tied) out.tied.push_back(chunk[local]);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            out.grad.row(chunk[i]) += g.grad.row(static_cast<Index>(i));
        }
    }
    return out;
}

double koleo_data_loss(const EmbeddingBatch& batch) {
    if (batch.size() < 2) {
        throw SingletonBatch("koleo_data_loss: batch of one");
    }
    return koleo_entropy(batch.rows);
}

}  // namespace protolab
