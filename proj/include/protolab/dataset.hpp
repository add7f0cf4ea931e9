#pragma once

#include <cstdint>
#include <vector>

#include "protolab/geometry.hpp"
#include "protolab/rng.hpp"

namespace protolab {

enum class MixingLaw { Uniform, PowerLaw };

// N unit points on the input sphere drawn from a C-component vMF mixture,
// with the generating component id kept as the ground-truth label.
struct SyntheticDataset {
    Matrix points;            // N x d_in, unit rows
    std::vector<int> labels;  // size N, values in [0, C)
    Matrix means;             // C x d_in, component mean directions
    int num_clusters = 0;
};

// Component sizes under the mixing law (largest-remainder rounding; every
// component keeps at least one point).
std::vector<int> mixing_counts(int c, int n, MixingLaw law, double alpha);

Vector sample_unit_sphere(int dim, Rng& rng);

// Wood's rejection sampler for vMF(mean, kappa) on S^{dim-1}.
Vector sample_vmf(const Vector& mean, double kappa, Rng& rng);

SyntheticDataset generate_dataset(int c, int n, int d_in, double cluster_kappa,
                                  MixingLaw law, double alpha, std::uint64_t seed);

// l2_normalize(point + sigma * gaussian per coordinate); sigma = 0 returns
// the point unchanged (and draws nothing).
Vector augment(const Vector& point, double noise_sigma, Rng& rng);

// Row-wise augmentation of a batch; draw order is row-major.
Matrix augment_rows(const Matrix& points, double noise_sigma, Rng& rng);

}  // namespace protolab
