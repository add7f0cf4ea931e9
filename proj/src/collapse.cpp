#include "protolab/collapse.hpp"

#include <algorithm>
#include <string>

#include <nlohmann/json.hpp>

namespace protolab {

CollapseReport detect_partial_collapse(const Matrix& prototypes, double epsilon) {
    if (epsilon < 0.0) {
        throw EpsilonNegative("detect_partial_collapse: epsilon must be >= 0");
    }
    const Index k_count = prototypes.rows();
    CollapseReport report;
    report.epsilon = epsilon;
    report.k = k_count;
    report.assignment.resize(k_count);

    for (Index j = 0; j < k_count; ++j) {
        Index found = -1;
        for (std::size_t m = 0; m < report.representatives.size(); ++m) {
            const Index rep = report.representatives[m];
            if (1.0 - prototypes.row(rep).dot(prototypes.row(j)) < epsilon) {
                found = static_cast<Index>(m);
                break;
            }
        }
        if (found < 0) {
            found = static_cast<Index>(report.representatives.size());
            report.representatives.push_back(j);
            report.redundancy.push_back(0);
        }
        report.assignment[j] = found;
        ++report.redundancy[found];
    }
    report.m = static_cast<Index>(report.representatives.size());
    return report;
}

LatentDistribution reassign_to_unique(const PrototypeBank& bank,
                                      const CollapseReport& report,
                                      const EmbeddingBatch& batch, double temp) {
    if (report.k != bank.num_prototypes()) {
        throw StaleReport("reassign_to_unique: report K " + std::to_string(report.k) +
                          " vs bank K " + std::to_string(bank.num_prototypes()));
    }
    const Matrix full = head_logits(bank, batch, temp);
    Matrix reduced(full.rows(), report.m);
    for (Index m = 0; m < report.m; ++m) {
        reduced.col(m) = full.col(report.representatives[m]);
    }
    return LatentDistribution(softmax_rows(reduced));
}

std::map<Index, double> mass_by_redundancy(const LatentDistribution& reassigned,
                                           const CollapseReport& report) {
    if (reassigned.classes() != report.m) {
        throw StaleReport("mass_by_redundancy: column count != M");
    }
    const Vector mean = mlcd(reassigned);
    std::map<Index, double> sums;
    std::map<Index, Index> counts;
    for (Index m = 0; m < report.m; ++m) {
        sums[report.redundancy[m]] += mean(m);
        counts[report.redundancy[m]] += 1;
    }
    std::map<Index, double> out;
    for (const auto& [r, s] : sums) out[r] = s / static_cast<double>(counts[r]);
    return out;
}

std::vector<std::pair<double, Index>> unique_count_curve(
    const Matrix& prototypes, const std::vector<double>& epsilons) {
    if (!std::is_sorted(epsilons.begin(), epsilons.end())) {
        throw NumericalRange("unique_count_curve: epsilon list must be ascending");
    }
    std::vector<std::pair<double, Index>> curve;
    curve.reserve(epsilons.size());
    for (const double eps : epsilons) {
        curve.emplace_back(eps, detect_partial_collapse(prototypes, eps).m);
    }
    return curve;
}

nlohmann::json report_to_json(const CollapseReport& report) {
    return nlohmann::json{{"epsilon", report.epsilon},
                          {"k", report.k},
                          {"m", report.m},
                          {"representatives", report.representatives},
                          {"assignment", report.assignment},
                          {"redundancy", report.redundancy}};
}

CollapseReport report_from_json(const nlohmann::json& j) {
    CollapseReport report;
    report.epsilon = j.at("epsilon").get<double>();
    report.k = j.at("k").get<Index>();
    report.m = j.at("m").get<Index>();
    report.representatives = j.at("representatives").get<std::vector<Index>>();
    report.assignment = j.at("assignment").get<std::vector<Index>>();
    report.redundancy = j.at("redundancy").get<std::vector<Index>>();
    return report;
}

}  // namespace protolab
