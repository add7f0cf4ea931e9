#include "protolab/runner.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "protolab/pbank_io.hpp"

namespace protolab {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Deterministic sub-streams of the run seed.
constexpr std::uint64_t kDatasetStream = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t kBatchStream = 0xbf58476d1ce4e5b9ull;

Matrix gather_points(const SyntheticDataset& ds, const std::vector<int>& idx) {
    Matrix out(static_cast<Index>(idx.size()), ds.points.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.row(static_cast<Index>(i)) = ds.points.row(idx[i]);
    }
    return out;
}

}  // namespace

std::string metrics_csv_header() {
    return "step,total_loss,distill_loss,koleo_value,me_max_value,mlcd_entropy,"
           "kl_to_prior,unique_m,lr,teacher_temp";
}

std::string metrics_csv_row(const StepMetrics& m) {
    std::ostringstream out;
    out << m.step << ',' << fmt(m.total_loss) << ',' << fmt(m.distill_loss) << ','
        << fmt(m.koleo_value) << ',' << fmt(m.me_max_value) << ','
        << fmt(m.mlcd_entropy) << ',' << fmt(m.kl_to_prior) << ',' << m.unique_m
        << ',' << fmt(m.lr) << ',' << fmt(m.teacher_temp);
    return out.str();
}

double purity_score(const Matrix& embeddings, const std::vector<int>& labels,
                    const Matrix& prototypes, const CollapseReport& report) {
    if (embeddings.rows() != static_cast<Index>(labels.size())) {
        throw ShapeMismatch("purity_score: labels/embeddings size mismatch");
    }
    const Index n = embeddings.rows();
    const Index m = report.m;

    Matrix reps(m, prototypes.cols());
    for (Index i = 0; i < m; ++i) reps.row(i) = prototypes.row(report.representatives[i]);

    // Nearest representative per point by max dot product.
    const Matrix scores = embeddings * reps.transpose();
    std::vector<Index> nearest(static_cast<std::size_t>(n));
    for (Index b = 0; b < n; ++b) {
        Index arg = 0;
        scores.row(b).maxCoeff(&arg);
        nearest[static_cast<std::size_t>(b)] = arg;
    }

    // Majority label per representative (ties to the smaller label id).
    const int num_labels = 1 + *std::max_element(labels.begin(), labels.end());
    Matrix counts = Matrix::Zero(m, num_labels);
    for (Index b = 0; b < n; ++b) {
        counts(nearest[static_cast<std::size_t>(b)], labels[static_cast<std::size_t>(b)]) += 1.0;
    }
    std::vector<int> majority(static_cast<std::size_t>(m), -1);
    for (Index i = 0; i < m; ++i) {
        Index arg = 0;
        counts.row(i).maxCoeff(&arg);
        majority[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }

    Index hits = 0;
    for (Index b = 0; b < n; ++b) {
        if (labels[static_cast<std::size_t>(b)] ==
            majority[static_cast<std::size_t>(nearest[static_cast<std::size_t>(b)])]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

RunResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    const fs::path dir(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output dir " + dir.string() + ": " + ec.message());

    atomic_write_text(dir / "config.toml", cfg.to_toml());

    const SyntheticDataset ds =
        generate_dataset(cfg.clusters, cfg.points, cfg.input_dim, cfg.cluster_kappa,
                         cfg.mixing, cfg.mixing_alpha, cfg.seed ^ kDatasetStream);

    const TrainerOptions opt = cfg.trainer_options();
    TrainState state = make_train_state(cfg.geometry(), opt,
                                        cfg.temperature_schedule(), cfg.seed);

    Rng batch_rng(cfg.seed ^ kBatchStream);
    std::vector<int> order(static_cast<std::size_t>(cfg.points));
    std::iota(order.begin(), order.end(), 0);
    batch_rng.shuffle(order);
    std::size_t cursor = 0;

    std::ostringstream metrics;
    metrics << metrics_csv_header() << "\n";
    StepMetrics last{};
    for (long step = 0; step < cfg.steps; ++step) {
        if (cursor + static_cast<std::size_t>(cfg.batch) > order.size()) {
            batch_rng.shuffle(order);
            cursor = 0;
        }
        const std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   order.begin() + static_cast<std::ptrdiff_t>(cursor) +
                                       cfg.batch);
        cursor += static_cast<std::size_t>(cfg.batch);
        last = train_step(state, gather_points(ds, idx), opt);
        metrics << metrics_csv_row(last) << "\n";
    }
    atomic_write_text(dir / "metrics.csv", metrics.str());

    const Matrix mu = normalized_prototypes(state.student_bank);
    const CollapseReport report = detect_partial_collapse(mu, cfg.epsilon);

    const Matrix embeddings = state.student_enc.forward(ds.points);
    const double purity = purity_score(embeddings, ds.labels, mu, report);

    write_pbank(dir / "prototypes.pbank", state.student_bank.raw_weights);
    write_model(dir / "model.bin", {state.student_enc, state.student_bank});

    nlohmann::json summary;
    summary["collapse"] = report_to_json(report);
    summary["purity"] = purity;
    summary["final_step"] = last.step;
    summary["final_total_loss"] = last.total_loss;
    summary["final_distill_loss"] = last.distill_loss;
    summary["final_koleo_value"] = last.koleo_value;
    summary["final_me_max_value"] = last.me_max_value;
    summary["final_mlcd_entropy"] = last.mlcd_entropy;
    summary["final_kl_to_prior"] = last.kl_to_prior;
    summary["final_unique_m"] = last.unique_m;
    atomic_write_text(dir / "report.json", summary.dump(2) + "\n");

    return {dir, last, report, purity};
}

int ablation_workers_from_env() {
    const char* env = std::getenv("PROTO_LAB_THREADS");
    if (env == nullptr) return 1;
    const int v = std::atoi(env);
    return v >= 1 ? v : 1;
}

std::vector<AblationRow> ablate_k(const ExperimentConfig& base,
                                  const std::vector<Index>& k_list,
                                  const std::vector<std::string>& variants,
                                  int workers) {
    if (!std::is_sorted(k_list.begin(), k_list.end())) {
        throw ConfigInvalid("ablate_k: K list must be ascending");
    }
    struct Job {
        ExperimentConfig cfg;
        Index k;
        std::string variant;
    };
    std::vector<Job> jobs;
    for (const Index k : k_list) {
        for (const std::string& variant : variants) {
            ExperimentConfig cfg = base;
            cfg.prototypes = static_cast<int>(k);
            cfg.koleo_partition = std::min(cfg.koleo_partition, cfg.prototypes);
            if (variant == "baseline") {
                cfg.koleo = KoleoKind::None;
            } else if (variant == "kd") {
                cfg.koleo = KoleoKind::Data;
            } else if (variant == "kp") {
                cfg.koleo = KoleoKind::Proto;
            } else {
                throw ConfigInvalid("ablate_k: unknown variant '" + variant + "'");
            }
            cfg.out_dir = base.out_dir + "/k" + std::to_string(k) + "_" + variant;
            cfg.validate();
            jobs.push_back({cfg, k, variant});
        }
    }

    std::vector<AblationRow> rows(jobs.size());
    std::vector<std::string> failures;
    std::mutex failures_mutex;
    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                const RunResult res = run_experiment(jobs[i].cfg);
                rows[i] = {jobs[i].k, jobs[i].variant, res.final_report.m,
                           res.final_metrics.mlcd_entropy, res.purity};
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(failures_mutex);
                failures.push_back(jobs[i].cfg.out_dir + ": " + e.what());
                rows[i].k = -1;
            }
        }
    };
    const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_workers));
        for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::ostringstream csv;
    csv << "k,variant,final_m,final_mlcd_entropy,purity\n";
    std::vector<AblationRow> ok;
    for (const AblationRow& row : rows) {
        if (row.k < 0) continue;
        csv << row.k << ',' << row.variant << ',' << row.final_m << ','
            << fmt(row.final_mlcd_entropy) << ',' << fmt(row.purity) << "\n";
        ok.push_back(row);
    }
    std::error_code ec;
    std::filesystem::create_directories(base.out_dir, ec);
    atomic_write_text(std::filesystem::path(base.out_dir) / "ablation.csv", csv.str());

    if (!failures.empty()) {
        std::string msg = "ablate_k: " + std::to_string(failures.size()) + " run(s) failed";
        for (const std::string& f : failures) msg += "\n  " + f;
        throw Error(msg);
    }
    return ok;
}

nlohmann::json audit_pbank(const std::filesystem::path& pbank_path,
                           const std::vector<double>& epsilons) {
    const Matrix raw = read_pbank(pbank_path);
    const Matrix mu = l2_normalize_rows(raw);

    nlohmann::json out;
    out["pbank"] = pbank_path.string();
    out["k"] = raw.rows();
    out["dim"] = raw.cols();
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [eps, m] : unique_count_curve(mu, epsilons)) {
        const CollapseReport report = detect_partial_collapse(mu, eps);
        std::map<Index, Index> histogram;
        for (const Index r : report.redundancy) ++histogram[r];
        nlohmann::json hist;
        for (const auto& [r, count] : histogram) hist[std::to_string(r)] = count;
        entries.push_back({{"epsilon", eps}, {"m", m}, {"redundancy_histogram", hist}});
    }
    out["curve"] = entries;
    return out;
}

void export_run(const std::filesystem::path& run_dir) {
    const ExperimentConfig cfg = load_config(run_dir / "config.toml");
    const ModelCheckpoint model = read_model(run_dir / "model.bin");

    const SyntheticDataset ds =
        generate_dataset(cfg.clusters, cfg.points, cfg.input_dim, cfg.cluster_kappa,
                         cfg.mixing, cfg.mixing_alpha, cfg.seed ^ kDatasetStream);

    const Matrix y = model.encoder.forward(ds.points);
    const LatentDistribution dist =
        posterior(model.bank, EmbeddingBatch(y), cfg.student_temp);

    std::ostringstream embeddings;
    for (Index d = 0; d < y.cols(); ++d) embeddings << "y" << d << ',';
    embeddings << "label,latent\n";
    for (Index b = 0; b < y.rows(); ++b) {
        for (Index d = 0; d < y.cols(); ++d) embeddings << fmt(y(b, d)) << ',';
        Index arg = 0;
        dist.probs.row(b).maxCoeff(&arg);
        embeddings << ds.labels[static_cast<std::size_t>(b)] << ',' << arg << "\n";
    }
    atomic_write_text(run_dir / "embeddings.csv", embeddings.str());

    const Matrix mu = normalized_prototypes(model.bank);
    const CollapseReport report = detect_partial_collapse(mu, cfg.epsilon);
    std::ostringstream protos;
    for (Index d = 0; d < mu.cols(); ++d) protos << "mu" << d << ',';
    protos << "partition,redundancy\n";
    for (Index k = 0; k < mu.rows(); ++k) {
        for (Index d = 0; d < mu.cols(); ++d) protos << fmt(mu(k, d)) << ',';
        const Index part = report.assignment[static_cast<std::size_t>(k)];
        protos << (part + 1) << ',' << report.redundancy[static_cast<std::size_t>(part)]
               << "\n";
    }
    atomic_write_text(run_dir / "prototypes.csv", protos.str());
}

}  // namespace protolab
