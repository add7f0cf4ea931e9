#pragma once

#include <map>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "protolab/geometry.hpp"
#include "protolab/prototype_head.hpp"

namespace protolab {

// Partial-prototype-collapse report: M representatives, a disjoint partition
// of all K prototypes, and per-partition redundancy factors r_m (sum K).
struct CollapseReport {
    double epsilon = 0.0;
    Index k = 0;
    Index m = 0;
    std::vector<Index> representatives;  // size M, prototype indices
    std::vector<Index> assignment;       // size K, partition index in [0, M)
    std::vector<Index> redundancy;       // size M
};

// Greedy first-fit scan in index order: prototype j joins the first
// representative v with 1 - v.mu_j < epsilon, else opens a new partition.
// Deterministic; the scan order is the row order.
CollapseReport detect_partial_collapse(const Matrix& prototypes, double epsilon);

// Posterior recomputed over only the M representative prototypes
// (fresh softmax over M entries). Throws StaleReport on K mismatch.
LatentDistribution reassign_to_unique(const PrototypeBank& bank,
                                      const CollapseReport& report,
                                      const EmbeddingBatch& batch, double temp);

// Mean reassigned MLCD mass per distinct redundancy factor.
std::map<Index, double> mass_by_redundancy(const LatentDistribution& reassigned,
                                           const CollapseReport& report);

// (epsilon, M) pairs for an ascending epsilon grid.
std::vector<std::pair<double, Index>> unique_count_curve(
    const Matrix& prototypes, const std::vector<double>& epsilons);

nlohmann::json report_to_json(const CollapseReport& report);
CollapseReport report_from_json(const nlohmann::json& j);

}  // namespace protolab
