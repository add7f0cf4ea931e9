#include <doctest.h>

#include "oracles.hpp"
#include "protolab/geometry.hpp"

using namespace protolab;

TEST_SUITE("geometry") {

TEST_CASE("l2_normalize scales a 3-4-5 triple") {
    Vector v(2);
    v << 3.0, 4.0;
    const Vector u = l2_normalize(v);
    CHECK(u(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(u(1) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("l2_normalize keeps an already-unit vector") {
    Vector v(3);
    v << 1.0, 0.0, 0.0;
    CHECK((l2_normalize(v) - v).norm() == 0.0);
}

TEST_CASE("l2_normalize rejects the zero vector") {
    CHECK_THROWS_AS(l2_normalize(Vector::Zero(2)), DegenerateVector);
}

TEST_CASE("l2_normalize is idempotent and unit-norm") {
    for (unsigned seed = 0; seed < 20; ++seed) {
        const Vector v = oracles::random_matrix(7, 1, seed, 3.0).col(0);
        const Vector once = l2_normalize(v);
        CHECK(std::abs(once.norm() - 1.0) <= 1e-9);
        CHECK((l2_normalize(once) - once).norm() <= 1e-12);
    }
}

TEST_CASE("cosine_distance on identical, antipodal and orthogonal pairs") {
    Vector a(2), b(2), c(2);
    a << 1.0, 0.0;
    b << -1.0, 0.0;
    c << 0.0, 1.0;
    CHECK(cosine_distance(a, a) == 0.0);
    CHECK(cosine_distance(a, b) == 2.0);
    CHECK(cosine_distance(a, c) == 1.0);
    CHECK(cosine_distance(a, c) == cosine_distance(c, a));
}

TEST_CASE("cosine_distance rejects dimension mismatch") {
    CHECK_THROWS_AS(cosine_distance(Vector::Ones(2), Vector::Ones(3)),
                    DimensionMismatch);
}

TEST_CASE("cosine_distance equals half squared euclidean for unit vectors") {
    const Matrix rows = oracles::random_unit_rows(30, 6, 11);
    for (Index i = 0; i < rows.rows(); ++i) {
        for (Index j = 0; j < rows.rows(); ++j) {
            const double cd = cosine_distance(rows.row(i), rows.row(j));
            const double sq = (rows.row(i) - rows.row(j)).squaredNorm() / 2.0;
            CHECK(std::abs(cd - sq) <= 1e-9);
        }
    }
}

TEST_CASE("min_pairwise_euclidean on axis vectors") {
    Matrix rows(3, 2);
    rows << 1, 0, 0, 1, -1, 0;
    const NearestNeighbor nn = min_pairwise_euclidean(rows, 0);
    CHECK(nn.distance == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(nn.index == 1);
}

TEST_CASE("min_pairwise_euclidean finds exact duplicates") {
    Matrix rows(3, 2);
    rows << 1, 0, 0, 1, 1, 0;
    const NearestNeighbor nn = min_pairwise_euclidean(rows, 0);
    CHECK(nn.distance == 0.0);
    CHECK(nn.index == 2);
}

TEST_CASE("min_pairwise_euclidean matches the brute-force oracle") {
    const Matrix rows = oracles::random_unit_rows(5, 4, 3);
    const std::vector<double> expected = oracles::nn_distances_bruteforce(rows);
    for (Index k = 0; k < rows.rows(); ++k) {
        CHECK(min_pairwise_euclidean(rows, k).distance ==
              doctest::Approx(expected[static_cast<std::size_t>(k)]).epsilon(1e-14));
    }
}

TEST_CASE("min_pairwise_euclidean rejects singleton batches") {
    CHECK_THROWS_AS(min_pairwise_euclidean(Matrix::Ones(1, 3), 0), SingletonBatch);
}

TEST_CASE("min_pairwise_euclidean is permutation-equivariant") {
    const Matrix rows = oracles::random_unit_rows(8, 5, 7);
    std::vector<Index> perm = {3, 1, 7, 0, 5, 2, 6, 4};
    Matrix shuffled(rows.rows(), rows.cols());
    std::vector<Index> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        shuffled.row(static_cast<Index>(i)) = rows.row(perm[i]);
        inverse[static_cast<std::size_t>(perm[i])] = static_cast<Index>(i);
    }
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const NearestNeighbor base = min_pairwise_euclidean(rows, perm[i]);
        const NearestNeighbor moved = min_pairwise_euclidean(shuffled, static_cast<Index>(i));
        CHECK(moved.distance == base.distance);
        CHECK(moved.index == inverse[static_cast<std::size_t>(base.index)]);
    }
}

TEST_CASE("EmbeddingBatch validates unit rows") {
    CHECK_THROWS_AS(EmbeddingBatch(Matrix::Ones(2, 3)), DegenerateVector);
    CHECK_NOTHROW(EmbeddingBatch(oracles::random_unit_rows(4, 3, 1)));
}

}  // TEST_SUITE
