#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "protolab/pbank_io.hpp"
#include "protolab/runner.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream stream(s);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

protolab::ExperimentConfig load_with_overrides(const std::string& config_path,
                                               const std::optional<std::uint64_t>& seed,
                                               const std::optional<std::string>& out) {
    protolab::ExperimentConfig cfg = protolab::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out_dir = *out;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prototype-collapse laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string pbank_path;
    std::string run_dir;
    std::string k_spec = "64,128,256,512";
    std::string variants_spec = "baseline,kd,kp";
    std::string eps_spec = "0.025";
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;

    CLI::App* run = app.add_subcommand("run", "train one configured experiment");
    run->add_option("--config", config_path, "config file")->required();
    run->add_option("--seed", seed_override, "override config seed");
    run->add_option("--out", out_override, "override output directory");

    CLI::App* ablate = app.add_subcommand("ablate-k", "K-sweep over regularizer variants");
    ablate->add_option("--config", config_path, "base config file")->required();
    ablate->add_option("--k", k_spec, "comma-separated ascending K list");
    ablate->add_option("--variants", variants_spec, "subset of baseline,kd,kp");
    ablate->add_option("--seed", seed_override, "override config seed");
    ablate->add_option("--out", out_override, "override output directory");

    CLI::App* audit = app.add_subcommand("audit", "unique-prototype audit of a .pbank file");
    audit->add_option("--pbank", pbank_path, "prototype bank file")->required();
    audit->add_option("--eps", eps_spec, "comma-separated ascending epsilon list");
    audit->add_option("--out", out_override, "directory for report.json (default: cwd)");

    CLI::App* export_cmd = app.add_subcommand("export", "dump embeddings/prototypes CSVs");
    export_cmd->add_option("--run", run_dir, "completed run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const auto cfg = load_with_overrides(config_path, seed_override, out_override);
            const protolab::RunResult res = protolab::run_experiment(cfg);
            std::cout << "run complete: " << res.dir.string() << "\n"
                      << "  final M(eps=" << cfg.epsilon << ") = " << res.final_report.m
                      << " of K = " << cfg.prototypes << "\n"
                      << "  final MLCD entropy = " << res.final_metrics.mlcd_entropy
                      << ", purity = " << res.purity << "\n";
        } else if (ablate->parsed()) {
            const auto cfg = load_with_overrides(config_path, seed_override, out_override);
            std::vector<protolab::Index> ks;
            for (const std::string& s : split_csv(k_spec)) ks.push_back(std::stol(s));
            const auto rows = protolab::ablate_k(cfg, ks, split_csv(variants_spec),
                                                 protolab::ablation_workers_from_env());
            std::cout << "ablation complete: " << rows.size() << " rows -> "
                      << cfg.out_dir << "/ablation.csv\n";
        } else if (audit->parsed()) {
            std::vector<double> eps;
            for (const std::string& s : split_csv(eps_spec)) eps.push_back(std::stod(s));
            const nlohmann::json report = protolab::audit_pbank(pbank_path, eps);
            std::printf("%12s %8s\n", "epsilon", "M");
            for (const auto& entry : report.at("curve")) {
                std::printf("%12g %8ld\n", entry.at("epsilon").get<double>(),
                            entry.at("m").get<long>());
            }
            const std::filesystem::path out_dir = out_override.value_or(".");
            std::filesystem::create_directories(out_dir);
            protolab::atomic_write_text(out_dir / "report.json", report.dump(2) + "\n");
        } else if (export_cmd->parsed()) {
            protolab::export_run(run_dir);
            std::cout << "exported embeddings.csv and prototypes.csv to " << run_dir
                      << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
