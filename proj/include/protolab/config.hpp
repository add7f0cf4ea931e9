#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "protolab/dataset.hpp"
#include "protolab/trainer.hpp"

namespace protolab {

// Resolved experiment configuration. Parsed from a flat "section.key = value"
// document; unknown or duplicate keys are hard errors so typos cannot be
// silently absorbed.
struct ExperimentConfig {
    // dataset
    int clusters = 16;
    int points = 4096;
    int input_dim = 16;
    double cluster_kappa = 40.0;
    MixingLaw mixing = MixingLaw::PowerLaw;
    double mixing_alpha = 0.8;

    // encoder
    EncoderKind encoder = EncoderKind::Mlp;
    int hidden = 64;

    // head
    int prototypes = 256;
    int embed_dim = 16;
    HeadMode head_mode = HeadMode::Plain;
    double kappa_scale = 1.0;

    // mlcd
    MlcdMechanism mechanism = MlcdMechanism::CenterProb;
    double center_momentum = 0.9;
    int sinkhorn_iters = 3;
    double me_max_lambda = 1.0;
    bool prior_power_law = false;
    double prior_alpha = 1.0;

    // koleo
    KoleoKind koleo = KoleoKind::None;
    double koleo_lambda = 0.1;
    int koleo_partition = 64;

    // optim
    double lr = 0.6;
    double sgd_momentum = 0.9;
    double warmup_frac = 0.1;

    // train
    long steps = 3000;
    int batch = 128;
    double noise_sigma = 0.08;

    // schedule
    double teacher_temp_start = 0.04;
    double teacher_temp_end = 0.07;
    double temp_warmup_frac = 0.1;
    double student_temp = 0.1;
    double ema_start = 0.996;
    double ema_end = 1.0;

    // run
    std::uint64_t seed = 1;
    std::string out_dir = "runs/run";
    long unique_every = 50;
    double epsilon = 0.025;

    void validate() const;  // throws ConfigInvalid

    TrainerOptions trainer_options() const;
    HeadGeometry geometry() const;
    TemperatureSchedule temperature_schedule() const;
    PriorDistribution prior() const;

    // Canonical serialization: every key, fixed order, reparses identically.
    std::string to_toml() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace protolab
