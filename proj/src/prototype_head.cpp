#include "protolab/prototype_head.hpp"

#include <cmath>
#include <string>

namespace protolab {

void PrototypeBank::validate() const {
    if (num_prototypes() < 2) {
        throw ShapeMismatch("PrototypeBank: K must be >= 2");
    }
    if (dim() < 2) {
        throw ShapeMismatch("PrototypeBank: D must be >= 2");
    }
    for (Index k = 0; k < num_prototypes(); ++k) {
        if (raw_weights.row(k).norm() <= kDegenerateNorm) {
            throw DegenerateVector("PrototypeBank: weight row " +
                                   std::to_string(k) + " is degenerate");
        }
    }
    if (!(kappa_scale > 0.0)) {
        throw NumericalRange("PrototypeBank: kappa_scale must be positive");
    }
    if (!(student_temp > 0.0) || !(teacher_temp > 0.0)) {
        throw NumericalRange("PrototypeBank: temperatures must be positive");
    }
    if (teacher_temp > student_temp) {
        throw NumericalRange("PrototypeBank: teacher_temp must be <= student_temp");
    }
}

double TemperatureSchedule::teacher_at(long step) const {
    if (warmup_steps <= 0 || step >= warmup_steps) return teacher_end;
    if (step <= 0) return teacher_start;
    const double t = static_cast<double>(step) / static_cast<double>(warmup_steps);
    return teacher_start + t * (teacher_end - teacher_start);
}

LatentDistribution::LatentDistribution(Matrix p) : probs(std::move(p)) {
    for (Index b = 0; b < probs.rows(); ++b) {
        double sum = 0.0;
        for (Index k = 0; k < probs.cols(); ++k) {
            const double v = probs(b, k);
            if (!(v >= 0.0 && v <= 1.0 + 1e-12)) {
                throw NumericalRange("LatentDistribution: entry out of [0,1] at row " +
                                     std::to_string(b));
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw NumericalRange("LatentDistribution: row " + std::to_string(b) +
                                 " sums to " + std::to_string(sum));
        }
    }
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Index b = 0; b < logits.rows(); ++b) {
        const double m = logits.row(b).maxCoeff();
        out.row(b) = (logits.row(b).array() - m).exp();
        out.row(b) /= out.row(b).sum();
    }
    return out;
}

Matrix log_softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Index b = 0; b < logits.rows(); ++b) {
        const double m = logits.row(b).maxCoeff();
        const double lse = std::log((logits.row(b).array() - m).exp().sum()) + m;
        out.row(b) = logits.row(b).array() - lse;
    }
    return out;
}

Matrix normalized_prototypes(const PrototypeBank& bank) {
    bank.validate();
    return l2_normalize_rows(bank.raw_weights);
}

double kappa_of(const PrototypeBank& bank, Index k, double temp) {
    if (!(temp > 0.0)) {
        throw NumericalRange("kappa_of: temperature must be positive");
    }
    if (bank.mode == HeadMode::Plain) return 1.0 / temp;
    return bank.kappa_scale * bank.raw_weights.row(k).norm() / temp;
}

namespace {

// Polynomials u_1..u_5 of the uniform asymptotic expansion of I_nu(nu z)
// (DLMF 10.41.3), as functions of t = 1/sqrt(1+z^2).
double debye_sum(double t, double nu) {
    const double t2 = t * t;
    const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
    const double u2 = t2 * (81.0 + t2 * (-462.0 + 385.0 * t2)) / 1152.0;
    const double u3 =
        t * t2 * (30375.0 + t2 * (-369603.0 + t2 * (765765.0 - 425425.0 * t2))) /
        414720.0;
    const double u4 = t2 * t2 *
                      (4465125.0 +
                       t2 * (-94121676.0 +
                             t2 * (349922430.0 +
                                   t2 * (-446185740.0 + 185910725.0 * t2)))) /
                      39813120.0;
    const double u5 =
        t * t2 * t2 *
        (1519035525.0 +
         t2 * (-49286948607.0 +
               t2 * (284499769554.0 +
                     t2 * (-614135872350.0 +
                           t2 * (566098157625.0 - 188699385875.0 * t2))))) /
        6688604160.0;
    const double inv = 1.0 / nu;
    return 1.0 + inv * (u1 + inv * (u2 + inv * (u3 + inv * (u4 + inv * u5))));
}

double debye_sum_dt(double t, double nu) {
    const double t2 = t * t;
    const double du1 = (3.0 - 15.0 * t2) / 24.0;
    const double du2 = t * (162.0 + t2 * (-1848.0 + 2310.0 * t2)) / 1152.0;
    const double du3 =
        t2 * (91125.0 + t2 * (-1848015.0 + t2 * (5360355.0 - 3828825.0 * t2))) /
        414720.0;
    const double du4 =
        t * t2 *
        (17860500.0 +
         t2 * (-564730056.0 +
               t2 * (2799379440.0 + t2 * (-4461857400.0 + 2230928700.0 * t2)))) /
        39813120.0;
    const double du5 =
        t2 * t2 *
        (7595177625.0 +
         t2 * (-345008640249.0 +
               t2 * (2560497925986.0 +
                     t2 * (-6755494595850.0 +
                           t2 * (7359276049125.0 - 2830490788125.0 * t2))))) /
        6688604160.0;
    const double inv = 1.0 / nu;
    return inv * (du1 + inv * (du2 + inv * (du3 + inv * (du4 + inv * du5))));
}

double order_of(int dim) {
    return 0.5 * static_cast<double>(dim) - 1.0;
}

void check_vmf_domain(double kappa, int dim) {
    if (!(kappa > 0.0)) {
        throw NumericalRange("log_vmf_norm_const: kappa must be positive");
    }
    if (dim < 12) {
        throw NumericalRange(
            "log_vmf_norm_const: expansion requires order nu >= 5, i.e. D >= 12 "
            "(got D = " +
            std::to_string(dim) + ")");
    }
}

}  // namespace

double log_vmf_norm_const(double kappa, int dim) {
    check_vmf_domain(kappa, dim);
    const double nu = order_of(dim);
    const double z = kappa / nu;
    const double root = std::sqrt(1.0 + z * z);
    const double t = 1.0 / root;
    const double eta = root + std::log(z / (1.0 + root));
    const double log_i = -0.5 * std::log(2.0 * M_PI * nu) + nu * eta -
                         0.5 * std::log(root) + std::log(debye_sum(t, nu));
    return nu * std::log(kappa) - 0.5 * dim * std::log(2.0 * M_PI) - log_i;
}

double log_vmf_norm_const_dkappa(double kappa, int dim) {
    check_vmf_domain(kappa, dim);
    const double nu = order_of(dim);
    const double z = kappa / nu;
    const double root = std::sqrt(1.0 + z * z);
    const double t = 1.0 / root;
    // d(nu*eta)/dkappa = root/z; d(-log(root)/2)/dkappa = -z t^2 / (2 nu).
    const double dlog_i = root / z - 0.5 * z * t * t / nu +
                          debye_sum_dt(t, nu) / debye_sum(t, nu) *
                              (-z * t * t * t / nu);
    return nu / kappa - dlog_i;
}

Matrix head_logits(const PrototypeBank& bank, const EmbeddingBatch& batch,
                   double temp) {
    bank.validate();
    if (batch.dim() != bank.dim()) {
        throw DimensionMismatch("head_logits: batch dim " +
                                std::to_string(batch.dim()) + " vs bank dim " +
                                std::to_string(bank.dim()));
    }
    if (bank.mode == HeadMode::Plain) {
        const Matrix mu = l2_normalize_rows(bank.raw_weights);
        return batch.rows * mu.transpose() / temp;
    }
    // kappa_k <mu_k, y> = (s/temp) <w_k, y>, plus the normalizer.
    const double scale = bank.kappa_scale / temp;
    Matrix logits = scale * (batch.rows * bank.raw_weights.transpose());
    for (Index k = 0; k < bank.num_prototypes(); ++k) {
        const double kappa = kappa_of(bank, k, temp);
        logits.col(k).array() += log_vmf_norm_const(kappa, static_cast<int>(bank.dim()));
    }
    return logits;
}

LatentDistribution posterior(const PrototypeBank& bank,
                             const EmbeddingBatch& batch, double temp) {
    return LatentDistribution(softmax_rows(head_logits(bank, batch, temp)));
}

Vector mlcd(const LatentDistribution& dist) {
    return dist.probs.colwise().mean();
}

}  // namespace protolab
