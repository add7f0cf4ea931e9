#include "protolab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace protolab {

std::vector<int> mixing_counts(int c, int n, MixingLaw law, double alpha) {
    if (c < 2) throw NumericalRange("mixing_counts: C must be >= 2");
    if (n < c) throw NumericalRange("mixing_counts: N must be >= C");

    Vector weights(c);
    if (law == MixingLaw::Uniform) {
        weights.setConstant(1.0 / static_cast<double>(c));
    } else {
        for (int i = 0; i < c; ++i) {
            weights(i) = std::pow(static_cast<double>(i + 1), -alpha);
        }
        weights /= weights.sum();
    }

    // Largest-remainder apportionment with a floor of one point per component.
    std::vector<int> counts(c);
    std::vector<std::pair<double, int>> remainders(c);
    int assigned = 0;
    for (int i = 0; i < c; ++i) {
        const double exact = weights(i) * n;
        counts[i] = std::max(1, static_cast<int>(std::floor(exact)));
        assigned += counts[i];
        remainders[i] = {exact - std::floor(exact), i};
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; assigned < n; i = (i + 1) % c) {
        ++counts[remainders[static_cast<std::size_t>(i)].second];
        ++assigned;
    }
    while (assigned > n) {
        auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --assigned;
    }
    return counts;
}

Vector sample_unit_sphere(int dim, Rng& rng) {
    Vector v(dim);
    do {
        for (int i = 0; i < dim; ++i) v(i) = rng.gaussian();
    } while (v.norm() <= kDegenerateNorm);
    return v / v.norm();
}

Vector sample_vmf(const Vector& mean, double kappa, Rng& rng) {
    const int dim = static_cast<int>(mean.size());
    if (dim < 2) throw ShapeMismatch("sample_vmf: dim must be >= 2");
    if (!(kappa > 0.0)) throw NumericalRange("sample_vmf: kappa must be > 0");

    // Wood (1994), algorithm VM*: rejection-sample the component along the
    // mean, then attach a uniform tangent direction.
    const double dm1 = static_cast<double>(dim - 1);
    const double b = dm1 / (std::sqrt(4.0 * kappa * kappa + dm1 * dm1) + 2.0 * kappa);
    const double x0 = (1.0 - b) / (1.0 + b);
    const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);

    double w;
    for (;;) {
        const double z = rng.beta(0.5 * dm1, 0.5 * dm1);
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        const double u = rng.uniform_pos();
        if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
    }

    Vector tangent(dim - 1);
    do {
        for (int i = 0; i + 1 < dim; ++i) tangent(i) = rng.gaussian();
    } while (tangent.norm() <= kDegenerateNorm);
    tangent /= tangent.norm();

    Vector sample(dim);
    sample(0) = w;
    const double radial = std::sqrt(std::max(0.0, 1.0 - w * w));
    sample.tail(dim - 1) = radial * tangent;

    // Householder reflection taking e1 to the mean direction.
    Vector u = -mean;
    u(0) += 1.0;
    const double un = u.norm();
    if (un > kDegenerateNorm) {
        u /= un;
        sample -= 2.0 * u.dot(sample) * u;
    }
    return sample / sample.norm();
}

SyntheticDataset generate_dataset(int c, int n, int d_in, double cluster_kappa,
                                  MixingLaw law, double alpha, std::uint64_t seed) {
    const std::vector<int> counts = mixing_counts(c, n, law, alpha);
    Rng rng(seed);

    SyntheticDataset ds;
    ds.num_clusters = c;
    ds.means.resize(c, d_in);
    for (int i = 0; i < c; ++i) {
        ds.means.row(i) = sample_unit_sphere(d_in, rng).transpose();
    }

    ds.points.resize(n, d_in);
    ds.labels.resize(n);
    Index row = 0;
    for (int i = 0; i < c; ++i) {
        const Vector mean = ds.means.row(i).transpose();
        for (int j = 0; j < counts[i]; ++j, ++row) {
            ds.points.row(row) = sample_vmf(mean, cluster_kappa, rng).transpose();
            ds.labels[static_cast<std::size_t>(row)] = i;
        }
    }
    return ds;
}

Vector augment(const Vector& point, double noise_sigma, Rng& rng) {
    if (noise_sigma < 0.0) {
        throw NumericalRange("augment: noise_sigma must be >= 0");
    }
    if (noise_sigma == 0.0) return point;
    Vector noisy = point;
    for (Index i = 0; i < noisy.size(); ++i) noisy(i) += noise_sigma * rng.gaussian();
    return l2_normalize(noisy);
}

Matrix augment_rows(const Matrix& points, double noise_sigma, Rng& rng) {
    Matrix out(points.rows(), points.cols());
    for (Index i = 0; i < points.rows(); ++i) {
        out.row(i) = augment(points.row(i).transpose(), noise_sigma, rng).transpose();
    }
    return out;
}

}  // namespace protolab
