#include <doctest.h>

#include <numeric>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "protolab/collapse.hpp"

using namespace protolab;

namespace {

PrototypeBank bank_of(Matrix weights) {
    PrototypeBank bank;
    bank.raw_weights = std::move(weights);
    return bank;
}

void check_soundness(const Matrix& mu, const CollapseReport& report) {
    CHECK(std::accumulate(report.redundancy.begin(), report.redundancy.end(),
                          Index{0}) == report.k);
    for (Index j = 0; j < report.k; ++j) {
        const Index part = report.assignment[static_cast<std::size_t>(j)];
        const Index rep = report.representatives[static_cast<std::size_t>(part)];
        if (rep == j) continue;
        CHECK(cosine_distance(mu.row(rep).transpose(), mu.row(j).transpose()) <
              report.epsilon);
    }
}

}  // namespace

TEST_SUITE("collapse") {

TEST_CASE("strict epsilon keeps every distinct prototype unique") {
    const Matrix mu = oracles::random_unit_rows(12, 6, 1);
    const CollapseReport report = detect_partial_collapse(mu, 0.0);
    CHECK(report.m == 12);
    for (const Index r : report.redundancy) CHECK(r == 1);
}

TEST_CASE("exact duplicates group together") {
    Matrix mu(3, 4);
    const Matrix ab = oracles::random_unit_rows(2, 4, 2);
    mu.row(0) = ab.row(0);
    mu.row(1) = ab.row(0);
    mu.row(2) = ab.row(1);
    REQUIRE(cosine_distance(ab.row(0).transpose(), ab.row(1).transpose()) >= 0.025);
    const CollapseReport report = detect_partial_collapse(mu, 0.025);
    CHECK(report.m == 2);
    CHECK(report.redundancy[0] == 2);
    CHECK(report.redundancy[1] == 1);
    CHECK(report.representatives[0] == 0);
    CHECK(report.representatives[1] == 2);
    check_soundness(mu, report);
}

TEST_CASE("planted clusters are recovered with their sizes") {
    const std::vector<int> sizes = {31, 25, 17, 11, 9, 5, 2};
    const Matrix mu = oracles::planted_clusters(sizes, 16, 0.01, 3);
    const CollapseReport report = detect_partial_collapse(mu, 0.025);
    REQUIRE(report.m == 7);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        CHECK(report.redundancy[i] == sizes[i]);
    }
    check_soundness(mu, report);
}

TEST_CASE("unique count is monotone in epsilon") {
    const Matrix mu = oracles::random_unit_rows(40, 4, 5);
    const std::vector<double> eps = {0.0, 0.01, 0.05, 0.2, 0.5, 1.0, 1.9, 2.0};
    const auto curve = unique_count_curve(mu, eps);
    for (std::size_t i = 1; i < curve.size(); ++i) {
        CHECK(curve[i].second <= curve[i - 1].second);
    }
}

TEST_CASE("unique count curve extremes") {
    const Matrix mu = oracles::random_unit_rows(10, 5, 6);
    const auto curve = unique_count_curve(mu, {0.0, 2.0});
    CHECK(curve[0].second == 10);
    CHECK(curve[1].second == 1);

    const auto tiny = unique_count_curve(mu, {1e-9});
    CHECK(tiny[0].second == 10);

    CHECK_THROWS_AS(unique_count_curve(mu, {0.5, 0.1}), NumericalRange);
}

TEST_CASE("planted clusters stay at seven across the epsilon gap") {
    const std::vector<int> sizes = {20, 18, 16, 14, 12, 10, 10};
    const Matrix mu = oracles::planted_clusters(sizes, 16, 0.01, 7);
    for (const double eps : {0.02, 0.025, 0.1, 0.3}) {
        CHECK(detect_partial_collapse(mu, eps).m == 7);
    }
}

TEST_CASE("negative epsilon is rejected") {
    CHECK_THROWS_AS(detect_partial_collapse(Matrix::Identity(3, 3), -0.1),
                    EpsilonNegative);
}

TEST_CASE("reassignment with no collapse is the full posterior") {
    const Matrix mu = oracles::random_unit_rows(6, 5, 8);
    const PrototypeBank bank = bank_of(mu);
    const CollapseReport report = detect_partial_collapse(mu, 1e-9);
    REQUIRE(report.m == 6);
    const EmbeddingBatch batch(oracles::random_unit_rows(9, 5, 9));
    const LatentDistribution full = posterior(bank, batch, 0.1);
    const LatentDistribution reduced = reassign_to_unique(bank, report, batch, 0.1);
    CHECK((full.probs - reduced.probs).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("two identical prototypes collapse to a single certain class") {
    Matrix mu(2, 4);
    const Matrix base = oracles::random_unit_rows(1, 4, 10);
    mu.row(0) = base.row(0);
    mu.row(1) = base.row(0);
    const PrototypeBank bank = bank_of(mu);
    const CollapseReport report = detect_partial_collapse(mu, 0.025);
    REQUIRE(report.m == 1);
    const EmbeddingBatch batch(oracles::random_unit_rows(4, 4, 11));
    const LatentDistribution reduced = reassign_to_unique(bank, report, batch, 0.1);
    for (Index b = 0; b < reduced.batch(); ++b) {
        CHECK(reduced.probs(b, 0) == 1.0);
    }
}

TEST_CASE("symmetric data point splits evenly over two duplicate pairs") {
    Matrix mu(4, 2);
    mu << 1, 0, 1, 0, 0, 1, 0, 1;
    const PrototypeBank bank = bank_of(mu);
    const CollapseReport report = detect_partial_collapse(mu, 0.025);
    REQUIRE(report.m == 2);
    Matrix point(1, 2);
    point << std::sqrt(0.5), std::sqrt(0.5);
    const LatentDistribution reduced =
        reassign_to_unique(bank, report, EmbeddingBatch(point), 0.1);
    CHECK(reduced.probs(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(reduced.probs(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("reassignment rows sum to one") {
    const std::vector<int> sizes = {9, 5, 3, 3};
    const Matrix mu = oracles::planted_clusters(sizes, 16, 0.01, 12);
    const PrototypeBank bank = bank_of(mu);
    const CollapseReport report = detect_partial_collapse(mu, 0.025);
    const EmbeddingBatch batch(oracles::random_unit_rows(7, 16, 13));
    const LatentDistribution reduced = reassign_to_unique(bank, report, batch, 0.1);
    for (Index b = 0; b < reduced.batch(); ++b) {
        CHECK(std::abs(reduced.probs.row(b).sum() - 1.0) <= 1e-9);
    }
}

TEST_CASE("stale reports are rejected") {
    const Matrix mu = oracles::random_unit_rows(5, 4, 14);
    const CollapseReport report = detect_partial_collapse(mu, 0.025);
    const PrototypeBank smaller = bank_of(oracles::random_unit_rows(4, 4, 15));
    const EmbeddingBatch batch(oracles::random_unit_rows(3, 4, 16));
    CHECK_THROWS_AS(reassign_to_unique(smaller, report, batch, 0.1), StaleReport);
}

TEST_CASE("mass_by_redundancy on worked examples") {
    CollapseReport report;
    report.epsilon = 0.025;
    report.k = 4;
    report.m = 2;
    report.representatives = {0, 3};
    report.assignment = {0, 0, 0, 1};
    report.redundancy = {3, 1};
    Matrix probs(2, 2);
    probs << 0.75, 0.25, 0.75, 0.25;
    const auto mass = mass_by_redundancy(LatentDistribution(probs), report);
    CHECK(mass.at(3) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(mass.at(1) == doctest::Approx(0.25).epsilon(1e-12));

    CollapseReport all_unique;
    all_unique.epsilon = 0.025;
    all_unique.k = 4;
    all_unique.m = 4;
    all_unique.representatives = {0, 1, 2, 3};
    all_unique.assignment = {0, 1, 2, 3};
    all_unique.redundancy = {1, 1, 1, 1};
    const Matrix uniform = Matrix::Constant(3, 4, 0.25);
    const auto flat = mass_by_redundancy(LatentDistribution(uniform), all_unique);
    CHECK(flat.size() == 1);
    CHECK(flat.at(1) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("report json round-trips") {
    const Matrix mu = oracles::planted_clusters({5, 3, 2}, 16, 0.01, 17);
    const CollapseReport report = detect_partial_collapse(mu, 0.025);
    const CollapseReport back = report_from_json(report_to_json(report));
    CHECK(back.epsilon == report.epsilon);
    CHECK(back.k == report.k);
    CHECK(back.m == report.m);
    CHECK(back.representatives == report.representatives);
    CHECK(back.assignment == report.assignment);
    CHECK(back.redundancy == report.redundancy);
}

}  // TEST_SUITE
