#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "protolab/config.hpp"

namespace protolab {

struct RunResult {
    std::filesystem::path dir;
    StepMetrics final_metrics;
    CollapseReport final_report;
    double purity = 0.0;
};

// Full experiment: train, then write metrics.csv, report.json,
// prototypes.pbank, model.bin and the resolved config into out_dir.
RunResult run_experiment(const ExperimentConfig& cfg);

// Fraction of points whose nearest representative prototype carries the same
// majority ground-truth label as the point itself.
double purity_score(const Matrix& embeddings, const std::vector<int>& labels,
                    const Matrix& prototypes, const CollapseReport& report);

struct AblationRow {
    Index k = 0;
    std::string variant;
    Index final_m = 0;
    double final_mlcd_entropy = 0.0;
    double purity = 0.0;
};

// One run per (K, variant); rows land in <out>/ablation.csv in sweep order.
// Failed runs are reported after completed rows are preserved.
std::vector<AblationRow> ablate_k(const ExperimentConfig& base,
                                  const std::vector<Index>& k_list,
                                  const std::vector<std::string>& variants,
                                  int workers);

// Number of parallel ablation workers: PROTO_LAB_THREADS, default 1.
int ablation_workers_from_env();

// Normalizes the stored weights, evaluates the unique-count curve and a
// redundancy histogram per epsilon; returns the report JSON.
nlohmann::json audit_pbank(const std::filesystem::path& pbank_path,
                           const std::vector<double>& epsilons);

// Writes embeddings.csv and prototypes.csv beside the run's other outputs.
void export_run(const std::filesystem::path& run_dir);

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

}  // namespace protolab
