#pragma once

#include "protolab/geometry.hpp"

namespace protolab {

enum class HeadMode { Plain, VmfNormalized };

// Learnable assignment head: K raw weight rows w_k whose directions are the
// prototypes mu_k = w_k/||w_k||. Plain mode drops the per-component
// normalization constant (it cancels when all norms are equal);
// VmfNormalized keeps it and lets ||w_k|| modulate the concentration
// kappa_k = kappa_scale * ||w_k|| / temp.
struct PrototypeBank {
    Matrix raw_weights;  // K x D
    HeadMode mode = HeadMode::Plain;
    double kappa_scale = 1.0;
    double student_temp = 0.1;
    double teacher_temp = 0.07;

    Index num_prototypes() const { return raw_weights.rows(); }
    Index dim() const { return raw_weights.cols(); }

    // Enforces K >= 2, D >= 2, non-degenerate rows, teacher_temp <= student_temp.
    void validate() const;
};

// Teacher temperature ramps linearly start -> end over warmup_steps, then
// stays at end. Student temperature is constant.
struct TemperatureSchedule {
    double teacher_start = 0.04;
    double teacher_end = 0.07;
    long warmup_steps = 0;
    double student_temp = 0.1;

    double teacher_at(long step) const;
};

// B x K matrix of per-sample probability rows.
struct LatentDistribution {
    Matrix probs;

    explicit LatentDistribution(Matrix p);

    Index batch() const { return probs.rows(); }
    Index classes() const { return probs.cols(); }
};

// Row-wise stable softmax (max-subtracted) and its log.
Matrix softmax_rows(const Matrix& logits);
Matrix log_softmax_rows(const Matrix& logits);

// K x D matrix of unit prototype rows.
Matrix normalized_prototypes(const PrototypeBank& bank);

// Concentration of component k at the given temperature.
double kappa_of(const PrototypeBank& bank, Index k, double temp);

// log C_D(kappa) = (D/2-1) log kappa - (D/2) log 2pi - log I_{D/2-1}(kappa).
// log I_nu is evaluated by the uniform asymptotic expansion in the order nu
// with five correction terms; requires nu = D/2-1 >= 5, i.e. D >= 12
// (NumericalRange otherwise).
double log_vmf_norm_const(double kappa, int dim);

// d/dkappa of log_vmf_norm_const; differentiates the same expansion so that
// analytic gradients match finite differences of the evaluated function.
double log_vmf_norm_const_dkappa(double kappa, int dim);

// Pre-softmax scores: kappa_k * <mu_k, y_b> (+ log C_D(kappa_k) in
// VmfNormalized mode). B x K.
Matrix head_logits(const PrototypeBank& bank, const EmbeddingBatch& batch,
                   double temp);

LatentDistribution posterior(const PrototypeBank& bank,
                             const EmbeddingBatch& batch, double temp);

// Marginal latent class distribution: column means of the probability rows.
Vector mlcd(const LatentDistribution& dist);

}  // namespace protolab
