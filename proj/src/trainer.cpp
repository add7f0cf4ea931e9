#include "protolab/trainer.hpp"

#include <cmath>
#include <sstream>

namespace protolab {

namespace {

double entropy(const Vector& p) {
    double h = 0.0;
    for (Index k = 0; k < p.size(); ++k) {
        if (p(k) > 0.0) h -= p(k) * std::log(p(k));
    }
    return h;
}

// dL/dw_k for a gradient g expressed against mu_k = w_k/||w_k||.
void project_into_raw(const Matrix& raw, const Matrix& mu, const Matrix& d_mu,
                      Matrix& d_raw) {
    for (Index k = 0; k < raw.rows(); ++k) {
        const double norm = raw.row(k).norm();
        const double along = d_mu.row(k).dot(mu.row(k));
        d_raw.row(k) += (d_mu.row(k) - along * mu.row(k)) / norm;
    }
}

}  // namespace

TrainState make_train_state(const HeadGeometry& geom, const TrainerOptions& opt,
                            const TemperatureSchedule& temps, std::uint64_t seed) {
    TrainState state;
    state.rng = Rng(seed);
    state.temps = temps;

    state.student_enc = Encoder::init(geom.encoder, geom.d_in, geom.hidden,
                                      geom.embed_dim, state.rng);

    PrototypeBank bank;
    bank.mode = geom.mode;
    bank.kappa_scale = geom.kappa_scale;
    bank.student_temp = temps.student_temp;
    bank.teacher_temp = std::min(temps.teacher_start, temps.teacher_end);
    bank.raw_weights.resize(geom.num_prototypes, geom.embed_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(geom.embed_dim));
    for (Index k = 0; k < bank.raw_weights.rows(); ++k) {
        for (Index d = 0; d < bank.raw_weights.cols(); ++d) {
            bank.raw_weights(k, d) = scale * state.rng.gaussian();
        }
    }
    bank.validate();
    state.student_bank = bank;

    state.teacher_enc = state.student_enc;
    state.teacher_bank = state.student_bank;

    const CenterSpace space = opt.mechanism == MlcdMechanism::CenterLogit
                                  ? CenterSpace::Logit
                                  : CenterSpace::Probability;
    state.center = CenterState::make(geom.num_prototypes, opt.center_momentum, space);

    state.velocity.enc_velocity = Encoder::zeros_like(state.student_enc);
    state.velocity.proto_velocity =
        Matrix::Zero(bank.raw_weights.rows(), bank.raw_weights.cols());
    state.step = 0;
    state.last_unique_m = geom.num_prototypes;
    return state;
}

ViewPair make_views(const Matrix& batch_points, double noise_sigma, Rng& rng) {
    ViewPair views;
    views.view1 = augment_rows(batch_points, noise_sigma, rng);
    views.view2 = augment_rows(batch_points, noise_sigma, rng);
    return views;
}

TeacherTargets teacher_targets(const Encoder& enc, const PrototypeBank& bank,
                               const ViewPair& views, const CenterState& center,
                               const TrainerOptions& opt, double teacher_temp) {
    const EmbeddingBatch y1(enc.forward(views.view1));
    const EmbeddingBatch y2(enc.forward(views.view2));
    const Matrix l1 = head_logits(bank, y1, teacher_temp);
    const Matrix l2 = head_logits(bank, y2, teacher_temp);

    TeacherTargets out;
    out.pre_logits.resize(l1.rows() + l2.rows(), l1.cols());
    out.pre_logits << l1, l2;
    out.pre_center_probs = softmax_rows(out.pre_logits);

    switch (opt.mechanism) {
        case MlcdMechanism::CenterLogit:
        case MlcdMechanism::CenterProb:
            out.t1 = apply_center(center, l1).probs;
            out.t2 = apply_center(center, l2).probs;
            break;
        case MlcdMechanism::Sinkhorn:
            out.t1 = sinkhorn_adjust(l1, opt.sinkhorn_iters).probs;
            out.t2 = sinkhorn_adjust(l2, opt.sinkhorn_iters).probs;
            break;
        case MlcdMechanism::None:
        case MlcdMechanism::MeMax:
            out.t1 = softmax_rows(l1);
            out.t2 = softmax_rows(l2);
            break;
    }
    return out;
}

double distill_loss(const LatentDistribution& teacher,
                    const LatentDistribution& student) {
    if (teacher.batch() != student.batch() || teacher.classes() != student.classes()) {
        throw ShapeMismatch("distill_loss: teacher and student shapes differ");
    }
    double total = 0.0;
    for (Index b = 0; b < teacher.batch(); ++b) {
        for (Index k = 0; k < teacher.classes(); ++k) {
            total -= teacher.probs(b, k) *
                     std::log(std::max(student.probs(b, k), 1e-30));
        }
    }
    return total / static_cast<double>(teacher.batch());
}

LossBreakdown student_loss(const Encoder& enc, const PrototypeBank& bank,
                           const ViewPair& views, const TeacherTargets& targets,
                           const TrainerOptions& opt, double student_temp,
                           std::uint64_t partition_seed, StudentGrads* grads) {
    const Index batch = views.view1.rows();
    const Index k_count = bank.num_prototypes();
    const double inv_b = 1.0 / static_cast<double>(batch);

    Encoder::Cache cache1, cache2;
    const Matrix y1 = enc.forward_cached(views.view1, cache1);
    const Matrix y2 = enc.forward_cached(views.view2, cache2);

    const Matrix mu = l2_normalize_rows(bank.raw_weights);
    const double vmf_scale = bank.kappa_scale / student_temp;

    Matrix l1, l2;
    Vector log_norm_const(k_count);
    if (bank.mode == HeadMode::Plain) {
        l1 = y1 * mu.transpose() / student_temp;
        l2 = y2 * mu.transpose() / student_temp;
    } else {
        l1 = vmf_scale * (y1 * bank.raw_weights.transpose());
        l2 = vmf_scale * (y2 * bank.raw_weights.transpose());
        for (Index k = 0; k < k_count; ++k) {
            const double kappa = kappa_of(bank, k, student_temp);
            log_norm_const(k) =
                log_vmf_norm_const(kappa, static_cast<int>(bank.dim()));
            l1.col(k).array() += log_norm_const(k);
            l2.col(k).array() += log_norm_const(k);
        }
    }

    const Matrix s1 = softmax_rows(l1);
    const Matrix s2 = softmax_rows(l2);
    const Matrix log_s1 = log_softmax_rows(l1);
    const Matrix log_s2 = log_softmax_rows(l2);

    LossBreakdown bd;
    // Cross-view distillation, symmetrized over the two pairings.
    bd.distill = -0.5 * inv_b *
                 ((targets.t1.array() * log_s2.array()).sum() +
                  (targets.t2.array() * log_s1.array()).sum());
    bd.student_mlcd = 0.5 * (s1.colwise().mean() + s2.colwise().mean());
    bd.total = bd.distill;

    // Upstream gradient wrt the student logits per view.
    Matrix g1 = 0.5 * inv_b * (s1 - targets.t2);
    Matrix g2 = 0.5 * inv_b * (s2 - targets.t1);

    if (opt.mechanism == MlcdMechanism::MeMax) {
        bd.me_max = me_max_penalty(bd.student_mlcd, opt.prior);
        bd.total += opt.me_max_lambda * bd.me_max;
        if (grads != nullptr) {
            // The MLCD averages the 2B student rows, so each row sees 1/(2B).
            Vector upstream(k_count);
            for (Index k = 0; k < k_count; ++k) {
                const double p = std::max(bd.student_mlcd(k), 1e-300);
                upstream(k) = opt.me_max_lambda * 0.5 * inv_b *
                              (std::log(p / opt.prior.probs(k)) + 1.0);
            }
            const auto add_softmax_chain = [&](const Matrix& s, Matrix& g) {
                for (Index b = 0; b < s.rows(); ++b) {
                    const double dot = s.row(b).dot(upstream.transpose());
                    g.row(b) +=
                        s.row(b).cwiseProduct(upstream.transpose() -
                                              Vector::Constant(k_count, dot).transpose());
                }
            };
            add_softmax_chain(s1, g1);
            add_softmax_chain(s2, g2);
        }
    }

    Matrix d_mu = Matrix::Zero(k_count, bank.dim());
    Matrix d_y1 = Matrix::Zero(batch, bank.dim());
    Matrix d_y2 = Matrix::Zero(batch, bank.dim());

    if (opt.koleo == KoleoKind::Proto) {
        const KoleoGradient kg =
            koleo_gradient_batched(mu, opt.koleo_partition, partition_seed);
        bd.koleo = kg.value;
        bd.total += opt.koleo_lambda * kg.value;
        bd.tie_detected = kg.tie_detected;
        bd.tied_protos = kg.tied;
        if (grads != nullptr) d_mu += opt.koleo_lambda * kg.grad;
    } else if (opt.koleo == KoleoKind::Data) {
        const KoleoGradient kg1 = koleo_gradient(y1);
        const KoleoGradient kg2 = koleo_gradient(y2);
        bd.koleo = 0.5 * (kg1.value + kg2.value);
        bd.total += opt.koleo_lambda * bd.koleo;
        bd.tie_detected = kg1.tie_detected || kg2.tie_detected;
        bd.data_tie = bd.tie_detected;
        if (grads != nullptr) {
            d_y1 += 0.5 * opt.koleo_lambda * kg1.grad;
            d_y2 += 0.5 * opt.koleo_lambda * kg2.grad;
        }
    }

    if (grads == nullptr) return bd;

    if (bank.mode == HeadMode::Plain) {
        d_y1 += g1 * mu / student_temp;
        d_y2 += g2 * mu / student_temp;
        d_mu += (g1.transpose() * y1 + g2.transpose() * y2) / student_temp;
        project_into_raw(bank.raw_weights, mu, d_mu, grads->proto);
    } else {
        d_y1 += vmf_scale * (g1 * bank.raw_weights);
        d_y2 += vmf_scale * (g2 * bank.raw_weights);
        grads->proto += vmf_scale * (g1.transpose() * y1 + g2.transpose() * y2);
        const Vector col_g = (g1.colwise().sum() + g2.colwise().sum()).transpose();
        for (Index k = 0; k < k_count; ++k) {
            const double kappa = kappa_of(bank, k, student_temp);
            const double dlogc =
                log_vmf_norm_const_dkappa(kappa, static_cast<int>(bank.dim()));
            grads->proto.row(k) += col_g(k) * dlogc * vmf_scale * mu.row(k);
        }
        project_into_raw(bank.raw_weights, mu, d_mu, grads->proto);
    }

    enc.backward(views.view1, cache1, d_y1, grads->enc);
    enc.backward(views.view2, cache2, d_y2, grads->enc);
    return bd;
}

void ema_update(Encoder& teacher, const Encoder& student, double momentum) {
    if (teacher.w1.rows() != student.w1.rows() ||
        teacher.w1.cols() != student.w1.cols() ||
        teacher.w2.rows() != student.w2.rows() ||
        teacher.w2.cols() != student.w2.cols()) {
        throw ShapeMismatch("ema_update: encoder shapes differ");
    }
    if (!(momentum >= 0.0 && momentum <= 1.0)) {
        throw NumericalRange("ema_update: momentum must be in [0, 1]");
    }
    teacher.w1 = momentum * teacher.w1 + (1.0 - momentum) * student.w1;
    teacher.b1 = momentum * teacher.b1 + (1.0 - momentum) * student.b1;
    teacher.w2 = momentum * teacher.w2 + (1.0 - momentum) * student.w2;
    teacher.b2 = momentum * teacher.b2 + (1.0 - momentum) * student.b2;
}

void ema_update(PrototypeBank& teacher, const PrototypeBank& student,
                double momentum) {
    if (teacher.raw_weights.rows() != student.raw_weights.rows() ||
        teacher.raw_weights.cols() != student.raw_weights.cols()) {
        throw ShapeMismatch("ema_update: bank shapes differ");
    }
    if (!(momentum >= 0.0 && momentum <= 1.0)) {
        throw NumericalRange("ema_update: momentum must be in [0, 1]");
    }
    teacher.raw_weights =
        momentum * teacher.raw_weights + (1.0 - momentum) * student.raw_weights;
}

double learning_rate_at(const TrainerOptions& opt, long step) {
    const long warmup =
        std::max<long>(1, static_cast<long>(opt.warmup_frac * opt.total_steps));
    if (step < warmup) {
        return opt.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const double progress = static_cast<double>(step - warmup) /
                            std::max(1.0, static_cast<double>(opt.total_steps - warmup));
    return 0.5 * opt.lr * (1.0 + std::cos(M_PI * std::min(1.0, progress)));
}

double ema_momentum_at(const TrainerOptions& opt, long step) {
    const double progress =
        std::min(1.0, static_cast<double>(step) /
                          std::max(1.0, static_cast<double>(opt.total_steps)));
    return opt.ema_end -
           (opt.ema_end - opt.ema_start) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

StepMetrics train_step(TrainState& state, const Matrix& batch_points,
                       const TrainerOptions& opt) {
    const double teacher_temp = state.temps.teacher_at(state.step);
    const double student_temp = state.temps.student_temp;

    const ViewPair views = make_views(batch_points, opt.noise_sigma, state.rng);
    const std::uint64_t partition_seed =
        opt.koleo == KoleoKind::Proto ? state.rng.next_u64() : 0;

    const TeacherTargets targets =
        teacher_targets(state.teacher_enc, state.teacher_bank, views, state.center,
                        opt, teacher_temp);

    StudentGrads grads;
    grads.enc = Encoder::zeros_like(state.student_enc);
    grads.proto = Matrix::Zero(state.student_bank.raw_weights.rows(),
                               state.student_bank.raw_weights.cols());
    const LossBreakdown bd =
        student_loss(state.student_enc, state.student_bank, views, targets, opt,
                     student_temp, partition_seed, &grads);

    if (!std::isfinite(bd.total) || !grads.proto.allFinite() ||
        !grads.enc.w1.allFinite() || !grads.enc.w2.allFinite() ||
        !grads.enc.b1.allFinite() || !grads.enc.b2.allFinite()) {
        std::ostringstream oss;
        oss << "train_step: non-finite loss at step " << state.step
            << " (total=" << bd.total << ", distill=" << bd.distill
            << ", koleo=" << bd.koleo << ", me_max=" << bd.me_max << ")";
        throw NonFiniteLoss(oss.str());
    }

    const double lr = learning_rate_at(opt, state.step);
    SgdState& vel = state.velocity;
    vel.enc_velocity.w1 = opt.sgd_momentum * vel.enc_velocity.w1 + grads.enc.w1;
    vel.enc_velocity.b1 = opt.sgd_momentum * vel.enc_velocity.b1 + grads.enc.b1;
    state.student_enc.w1 -= lr * vel.enc_velocity.w1;
    state.student_enc.b1 -= lr * vel.enc_velocity.b1;
    if (state.student_enc.kind == EncoderKind::Mlp) {
        vel.enc_velocity.w2 = opt.sgd_momentum * vel.enc_velocity.w2 + grads.enc.w2;
        vel.enc_velocity.b2 = opt.sgd_momentum * vel.enc_velocity.b2 + grads.enc.b2;
        state.student_enc.w2 -= lr * vel.enc_velocity.w2;
        state.student_enc.b2 -= lr * vel.enc_velocity.b2;
    }
    vel.proto_velocity = opt.sgd_momentum * vel.proto_velocity + grads.proto;
    state.student_bank.raw_weights -= lr * vel.proto_velocity;

    const double m = ema_momentum_at(opt, state.step);
    ema_update(state.teacher_enc, state.student_enc, m);
    ema_update(state.teacher_bank, state.student_bank, m);

    if (opt.mechanism == MlcdMechanism::CenterProb) {
        state.center = probability_center_update(
            state.center, LatentDistribution(targets.pre_center_probs));
    } else if (opt.mechanism == MlcdMechanism::CenterLogit) {
        state.center = logit_center_update(state.center, targets.pre_logits);
    }

    StepMetrics metrics;
    metrics.step = state.step;
    metrics.total_loss = bd.total;
    metrics.distill_loss = bd.distill;
    metrics.koleo_value = bd.koleo;
    metrics.me_max_value = bd.me_max;
    metrics.mlcd_entropy = entropy(bd.student_mlcd);
    metrics.kl_to_prior = me_max_penalty(bd.student_mlcd, opt.prior);
    metrics.lr = lr;
    metrics.teacher_temp = teacher_temp;
    metrics.tie_detected = bd.tie_detected;

    if (state.step % opt.unique_every == 0 || state.step + 1 == opt.total_steps) {
        state.last_unique_m =
            detect_partial_collapse(normalized_prototypes(state.student_bank),
                                    opt.collapse_epsilon)
                .m;
    }
    metrics.unique_m = state.last_unique_m;

    ++state.step;
    return metrics;
}

GradCheckResult finite_diff_check(TrainState& state, const Matrix& batch_points,
                                  const TrainerOptions& opt, double h) {
    if (!(h >= 1e-7 && h <= 1e-3)) {
        throw NumericalRange("finite_diff_check: h must be in [1e-7, 1e-3]");
    }
    Rng local = state.rng;  // do not disturb the training stream
    const ViewPair views = make_views(batch_points, opt.noise_sigma, local);
    const std::uint64_t partition_seed =
        opt.koleo == KoleoKind::Proto ? local.next_u64() : 0;
    const double teacher_temp = state.temps.teacher_at(state.step);
    const double student_temp = state.temps.student_temp;
    const TeacherTargets targets =
        teacher_targets(state.teacher_enc, state.teacher_bank, views, state.center,
                        opt, teacher_temp);

    StudentGrads grads;
    grads.enc = Encoder::zeros_like(state.student_enc);
    grads.proto = Matrix::Zero(state.student_bank.raw_weights.rows(),
                               state.student_bank.raw_weights.cols());
    const LossBreakdown bd =
        student_loss(state.student_enc, state.student_bank, views, targets, opt,
                     student_temp, partition_seed, &grads);

    Encoder enc = state.student_enc;
    PrototypeBank bank = state.student_bank;
    const auto eval = [&]() {
        return student_loss(enc, bank, views, targets, opt, student_temp,
                            partition_seed, nullptr)
            .total;
    };

    GradCheckResult result;
    result.tie_detected = bd.tie_detected;
    std::vector<bool> proto_row_excluded(
        static_cast<std::size_t>(bank.raw_weights.rows()), false);
    for (const Index k : bd.tied_protos) {
        proto_row_excluded[static_cast<std::size_t>(k)] = true;
    }

    const auto check_one = [&](double& coeff, double analytic) {
        const double saved = coeff;
        coeff = saved + h;
        const double up = eval();
        coeff = saved - h;
        const double down = eval();
        coeff = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        result.max_rel_error = std::max(result.max_rel_error, rel);
        ++result.checked;
    };
    const auto check_matrix = [&](Matrix& m, const Matrix& analytic,
                                  const std::vector<bool>* excluded_rows) {
        for (Index i = 0; i < m.rows(); ++i) {
            if (excluded_rows != nullptr &&
                (*excluded_rows)[static_cast<std::size_t>(i)]) {
                result.excluded += m.cols();
                continue;
            }
            for (Index j = 0; j < m.cols(); ++j) check_one(m(i, j), analytic(i, j));
        }
    };
    const auto check_vector = [&](Vector& v, const Vector& analytic) {
        for (Index i = 0; i < v.size(); ++i) check_one(v(i), analytic(i));
    };

    if (bd.data_tie) {
        result.excluded +=
            enc.w1.size() + enc.b1.size() + enc.w2.size() + enc.b2.size();
    } else {
        check_matrix(enc.w1, grads.enc.w1, nullptr);
        check_vector(enc.b1, grads.enc.b1);
        if (enc.kind == EncoderKind::Mlp) {
            check_matrix(enc.w2, grads.enc.w2, nullptr);
            check_vector(enc.b2, grads.enc.b2);
        }
    }
    check_matrix(bank.raw_weights, grads.proto, &proto_row_excluded);
    return result;
}

}  // namespace protolab
