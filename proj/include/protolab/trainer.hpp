#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "protolab/collapse.hpp"
#include "protolab/dataset.hpp"
#include "protolab/encoder.hpp"
#include "protolab/prototype_head.hpp"
#include "protolab/regularizers.hpp"

namespace protolab {

enum class MlcdMechanism { None, CenterLogit, CenterProb, Sinkhorn, MeMax };
enum class KoleoKind { None, Proto, Data };

// Everything train_step needs beyond the mutable state.
struct TrainerOptions {
    MlcdMechanism mechanism = MlcdMechanism::CenterProb;
    double center_momentum = 0.9;
    int sinkhorn_iters = 3;
    double me_max_lambda = 1.0;
    PriorDistribution prior{Vector()};

    KoleoKind koleo = KoleoKind::None;
    double koleo_lambda = 0.1;
    Index koleo_partition = 64;

    double noise_sigma = 0.1;
    long total_steps = 3000;
    int batch_size = 128;

    double lr = 1.0;
    double sgd_momentum = 0.9;
    double warmup_frac = 0.1;

    double ema_start = 0.996;
    double ema_end = 1.0;

    double collapse_epsilon = 0.025;
    long unique_every = 50;
};

struct SgdState {
    Encoder enc_velocity;
    Matrix proto_velocity;
};

// Student/teacher pair plus everything needed to reproduce a trajectory
// bit-for-bit from (config, seed). The optimizer only ever touches the
// student; the teacher moves by EMA.
struct TrainState {
    Encoder student_enc;
    PrototypeBank student_bank;
    Encoder teacher_enc;
    PrototypeBank teacher_bank;
    CenterState center{};
    TemperatureSchedule temps{};
    SgdState velocity;
    long step = 0;
    Index last_unique_m = 0;
    Rng rng{0};
};

struct StepMetrics {
    long step = 0;
    double total_loss = 0.0;
    double distill_loss = 0.0;
    double koleo_value = 0.0;
    double me_max_value = 0.0;
    double mlcd_entropy = 0.0;
    double kl_to_prior = 0.0;
    Index unique_m = 0;
    double lr = 0.0;
    double teacher_temp = 0.0;
    bool tie_detected = false;
};

struct HeadGeometry {
    int d_in = 16;
    int hidden = 64;
    int embed_dim = 16;
    Index num_prototypes = 256;
    EncoderKind encoder = EncoderKind::Mlp;
    HeadMode mode = HeadMode::Plain;
    double kappa_scale = 1.0;
};

TrainState make_train_state(const HeadGeometry& geom, const TrainerOptions& opt,
                            const TemperatureSchedule& temps, std::uint64_t seed);

// Two stochastic views of the same batch.
struct ViewPair {
    Matrix view1;  // B x d_in, unit rows
    Matrix view2;
};

ViewPair make_views(const Matrix& batch_points, double noise_sigma, Rng& rng);

// Teacher probability targets per view after the configured MLCD adjustment.
// pre_center_probs/pre_logits (2B x K, view1 stacked on view2) feed the
// end-of-step center update.
struct TeacherTargets {
    Matrix t1;  // B x K probability rows
    Matrix t2;
    Matrix pre_center_probs;
    Matrix pre_logits;
};

TeacherTargets teacher_targets(const Encoder& enc, const PrototypeBank& bank,
                               const ViewPair& views, const CenterState& center,
                               const TrainerOptions& opt, double teacher_temp);

struct StudentGrads {
    Encoder enc;
    Matrix proto;
};

struct LossBreakdown {
    double total = 0.0;
    double distill = 0.0;
    double koleo = 0.0;
    double me_max = 0.0;
    Vector student_mlcd;
    bool tie_detected = false;
    std::vector<Index> tied_protos;  // raw-weight rows involved in KoLeo ties
    bool data_tie = false;
};

// Forward (+ optional analytic gradient) of the full student loss:
// distill + lambda_kp * koleo(prototypes) + lambda_kd * koleo(embeddings)
// + lambda_me * me_max(batch MLCD). One code path serves both the training
// step and the finite-difference oracle.
LossBreakdown student_loss(const Encoder& enc, const PrototypeBank& bank,
                           const ViewPair& views, const TeacherTargets& targets,
                           const TrainerOptions& opt, double student_temp,
                           std::uint64_t partition_seed, StudentGrads* grads);

// Mean over the batch of -sum_k t_k log max(s_k, 1e-30); teacher rows carry
// no gradient.
double distill_loss(const LatentDistribution& teacher,
                    const LatentDistribution& student);

void ema_update(Encoder& teacher, const Encoder& student, double momentum);
void ema_update(PrototypeBank& teacher, const PrototypeBank& student,
                double momentum);

double learning_rate_at(const TrainerOptions& opt, long step);
double ema_momentum_at(const TrainerOptions& opt, long step);

// One optimization step; mutates state, returns the step's metrics.
// Throws NonFiniteLoss with a diagnostic message if the loss diverges.
StepMetrics train_step(TrainState& state, const Matrix& batch_points,
                       const TrainerOptions& opt);

struct GradCheckResult {
    double max_rel_error = 0.0;
    long checked = 0;
    long excluded = 0;
    bool tie_detected = false;
};

// Central finite differences of the total loss against the analytic gradient
// over every student parameter. Coordinates affected by KoLeo nearest-
// neighbour ties are excluded and counted.
GradCheckResult finite_diff_check(TrainState& state, const Matrix& batch_points,
                                  const TrainerOptions& opt, double h);

}  // namespace protolab
