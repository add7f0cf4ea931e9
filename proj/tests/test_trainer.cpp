#include <doctest.h>

#include "oracles.hpp"
#include "protolab/trainer.hpp"

using namespace protolab;

namespace {

HeadGeometry tiny_geometry(EncoderKind enc = EncoderKind::Mlp,
                           HeadMode mode = HeadMode::Plain) {
    HeadGeometry geom;
    geom.d_in = 4;
    geom.hidden = 5;
    geom.embed_dim = mode == HeadMode::Plain ? 4 : 12;
    geom.num_prototypes = 6;
    geom.encoder = enc;
    geom.mode = mode;
    return geom;
}

TrainerOptions tiny_options(MlcdMechanism mechanism, KoleoKind koleo, Index k) {
    TrainerOptions opt;
    opt.mechanism = mechanism;
    opt.prior = PriorDistribution::uniform(k);
    opt.koleo = koleo;
    opt.koleo_lambda = 0.1;
    opt.koleo_partition = 4;
    opt.me_max_lambda = 1.0;
    opt.noise_sigma = 0.05;
    opt.total_steps = 100;
    opt.batch_size = 8;
    opt.lr = 0.2;
    opt.unique_every = 10;
    return opt;
}

TemperatureSchedule tiny_temps() { return {0.04, 0.07, 10, 0.1}; }

Matrix tiny_batch(int b, int d_in, unsigned seed) {
    return oracles::random_unit_rows(b, d_in, seed);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("distill loss worked examples") {
    Matrix onehot(1, 2);
    onehot << 1, 0;
    CHECK(distill_loss(LatentDistribution(onehot), LatentDistribution(onehot)) <=
          1e-12);

    const Index k = 5;
    const Matrix uniform = Matrix::Constant(3, k, 1.0 / k);
    CHECK(distill_loss(LatentDistribution(uniform), LatentDistribution(uniform)) ==
          doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-12));

    Matrix teacher(1, 2), student(1, 2);
    teacher << 0.9, 0.1;
    student << 0.5, 0.5;
    CHECK(distill_loss(LatentDistribution(teacher), LatentDistribution(student)) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("ema update endpoints and midpoint") {
    Rng rng(5);
    Encoder teacher = Encoder::init(EncoderKind::Mlp, 4, 5, 4, rng);
    const Encoder frozen = teacher;
    Encoder student = Encoder::init(EncoderKind::Mlp, 4, 5, 4, rng);

    ema_update(teacher, student, 1.0);
    CHECK((teacher.w1 - frozen.w1).norm() == 0.0);

    ema_update(teacher, student, 0.0);
    CHECK((teacher.w1 - student.w1).norm() == 0.0);
    CHECK((teacher.w2 - student.w2).norm() == 0.0);

    PrototypeBank t_bank;
    t_bank.raw_weights = Matrix::Constant(2, 4, 2.0);
    PrototypeBank s_bank;
    s_bank.raw_weights = Matrix::Zero(2, 4);
    ema_update(t_bank, s_bank, 0.5);
    CHECK(t_bank.raw_weights(0, 0) == 1.0);

    Encoder mismatched = Encoder::init(EncoderKind::Mlp, 4, 6, 4, rng);
    CHECK_THROWS_AS(ema_update(teacher, mismatched, 0.5), ShapeMismatch);
}

TEST_CASE("zero learning rate leaves both networks unchanged") {
    const HeadGeometry geom = tiny_geometry();
    TrainerOptions opt = tiny_options(MlcdMechanism::CenterProb, KoleoKind::None,
                                      geom.num_prototypes);
    opt.lr = 0.0;
    TrainState state = make_train_state(geom, opt, tiny_temps(), 7);
    const Matrix w1 = state.student_enc.w1;
    const Matrix proto = state.student_bank.raw_weights;
    train_step(state, tiny_batch(8, geom.d_in, 1), opt);
    CHECK((state.student_enc.w1 - w1).norm() == 0.0);
    CHECK((state.student_bank.raw_weights - proto).norm() == 0.0);
    // Teacher EMA pulls toward an identical student: no motion either.
    CHECK((state.teacher_enc.w1 - w1).norm() == 0.0);
    CHECK((state.teacher_bank.raw_weights - proto).norm() == 0.0);
}

TEST_CASE("teacher moves only through EMA") {
    const HeadGeometry geom = tiny_geometry();
    const TrainerOptions opt = tiny_options(MlcdMechanism::CenterProb,
                                            KoleoKind::None, geom.num_prototypes);
    TrainState state = make_train_state(geom, opt, tiny_temps(), 8);
    const Matrix teacher_before = state.teacher_bank.raw_weights;
    const double m = ema_momentum_at(opt, state.step);
    train_step(state, tiny_batch(8, geom.d_in, 2), opt);
    const Matrix expected =
        m * teacher_before + (1.0 - m) * state.student_bank.raw_weights;
    CHECK((state.teacher_bank.raw_weights - expected).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("training keeps embeddings on the unit sphere") {
    const HeadGeometry geom = tiny_geometry();
    const TrainerOptions opt = tiny_options(MlcdMechanism::CenterProb,
                                            KoleoKind::Proto, geom.num_prototypes);
    TrainState state = make_train_state(geom, opt, tiny_temps(), 9);
    const Matrix batch = tiny_batch(8, geom.d_in, 3);
    for (int step = 0; step < 30; ++step) {
        train_step(state, batch, opt);
        const Matrix y = state.student_enc.forward(batch);
        for (Index b = 0; b < y.rows(); ++b) {
            CHECK(std::abs(y.row(b).norm() - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("identical seeds give identical metric streams") {
    const HeadGeometry geom = tiny_geometry();
    const TrainerOptions opt = tiny_options(MlcdMechanism::CenterProb,
                                            KoleoKind::Proto, geom.num_prototypes);
    TrainState a = make_train_state(geom, opt, tiny_temps(), 10);
    TrainState b = make_train_state(geom, opt, tiny_temps(), 10);
    for (int step = 0; step < 25; ++step) {
        const Matrix batch = tiny_batch(8, geom.d_in, 100 + step);
        const StepMetrics ma = train_step(a, batch, opt);
        const StepMetrics mb = train_step(b, batch, opt);
        CHECK(ma.total_loss == mb.total_loss);
        CHECK(ma.distill_loss == mb.distill_loss);
        CHECK(ma.koleo_value == mb.koleo_value);
        CHECK(ma.mlcd_entropy == mb.mlcd_entropy);
        CHECK(ma.unique_m == mb.unique_m);
    }
}

TEST_CASE("non-finite student state aborts with a diagnostic") {
    const HeadGeometry geom = tiny_geometry();
    const TrainerOptions opt = tiny_options(MlcdMechanism::CenterProb,
                                            KoleoKind::None, geom.num_prototypes);
    TrainState state = make_train_state(geom, opt, tiny_temps(), 11);
    state.student_enc.w1(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train_step(state, tiny_batch(8, geom.d_in, 4), opt),
                    NonFiniteLoss);
}

TEST_CASE("learning rate warms up then decays to zero") {
    TrainerOptions opt;
    opt.lr = 1.0;
    opt.total_steps = 1000;
    opt.warmup_frac = 0.1;
    CHECK(learning_rate_at(opt, 0) == doctest::Approx(0.01));
    CHECK(learning_rate_at(opt, 99) == doctest::Approx(1.0));
    CHECK(learning_rate_at(opt, 100) == doctest::Approx(1.0));
    CHECK(learning_rate_at(opt, 999) < 0.01);
    for (long s = 100; s < 999; s += 90) {
        CHECK(learning_rate_at(opt, s) >= learning_rate_at(opt, s + 1));
    }
}

TEST_CASE("EMA momentum ramps from start to end") {
    TrainerOptions opt;
    opt.ema_start = 0.996;
    opt.ema_end = 1.0;
    opt.total_steps = 500;
    CHECK(ema_momentum_at(opt, 0) == doctest::Approx(0.996));
    CHECK(ema_momentum_at(opt, 500) == doctest::Approx(1.0));
    CHECK(ema_momentum_at(opt, 250) > 0.996);
    CHECK(ema_momentum_at(opt, 250) < 1.0);
}

TEST_CASE("analytic gradient matches finite differences across configurations") {
    struct Scenario {
        MlcdMechanism mechanism;
        KoleoKind koleo;
        EncoderKind encoder;
        HeadMode mode;
    };
    const std::vector<Scenario> scenarios = {
        {MlcdMechanism::CenterProb, KoleoKind::None, EncoderKind::Linear, HeadMode::Plain},
        {MlcdMechanism::CenterProb, KoleoKind::Proto, EncoderKind::Mlp, HeadMode::Plain},
        {MlcdMechanism::Sinkhorn, KoleoKind::Data, EncoderKind::Mlp, HeadMode::Plain},
        {MlcdMechanism::MeMax, KoleoKind::Proto, EncoderKind::Mlp, HeadMode::Plain},
        {MlcdMechanism::None, KoleoKind::None, EncoderKind::Linear, HeadMode::Plain},
        {MlcdMechanism::CenterProb, KoleoKind::Proto, EncoderKind::Mlp,
         HeadMode::VmfNormalized},
        {MlcdMechanism::MeMax, KoleoKind::Data, EncoderKind::Linear,
         HeadMode::VmfNormalized},
    };
    unsigned seed = 600;
    for (const Scenario& sc : scenarios) {
        CAPTURE(static_cast<int>(sc.mechanism));
        CAPTURE(static_cast<int>(sc.koleo));
        const HeadGeometry geom = tiny_geometry(sc.encoder, sc.mode);
        const TrainerOptions opt =
            tiny_options(sc.mechanism, sc.koleo, geom.num_prototypes);
        TrainState state = make_train_state(geom, opt, tiny_temps(), ++seed);
        // A couple of steps away from the symmetric init.
        for (int s = 0; s < 3; ++s) {
            train_step(state, tiny_batch(opt.batch_size, geom.d_in, seed + 7), opt);
        }
        const GradCheckResult res =
            finite_diff_check(state, tiny_batch(opt.batch_size, geom.d_in, seed), opt,
                              1e-5);
        CHECK(res.checked > 0);
        CHECK(res.max_rel_error <= 1e-4);
    }
}

TEST_CASE("distill-only gradient is tight") {
    const HeadGeometry geom = tiny_geometry(EncoderKind::Mlp, HeadMode::Plain);
    TrainerOptions opt = tiny_options(MlcdMechanism::CenterProb, KoleoKind::None,
                                      geom.num_prototypes);
    opt.me_max_lambda = 0.0;
    opt.koleo_lambda = 0.0;
    TrainState state = make_train_state(geom, opt, tiny_temps(), 77);
    const GradCheckResult res =
        finite_diff_check(state, tiny_batch(opt.batch_size, geom.d_in, 78), opt, 1e-5);
    CHECK(res.max_rel_error <= 1e-5);
}

TEST_CASE("finite difference check reports and excludes koleo ties") {
    const HeadGeometry geom = tiny_geometry(EncoderKind::Linear, HeadMode::Plain);
    TrainerOptions opt =
        tiny_options(MlcdMechanism::CenterProb, KoleoKind::Proto, geom.num_prototypes);
    opt.koleo_partition = 64;  // single chunk: the planted tie survives intact
    TrainState state = make_train_state(geom, opt, tiny_temps(), 91);
    // Prototypes 1 and 2 mirror each other about prototype 0's direction;
    // the rest stay generic so only rows {0, 1, 2} sit on the kink.
    Matrix& w = state.student_bank.raw_weights;
    w.topRows(3).setZero();
    const double c = std::cos(0.6), s = std::sin(0.6);
    w(0, 0) = 1.0;
    w(1, 0) = c;
    w(1, 1) = s;
    w(2, 0) = c;
    w(2, 1) = -s;
    const GradCheckResult res =
        finite_diff_check(state, tiny_batch(opt.batch_size, geom.d_in, 92), opt, 1e-5);
    CHECK(res.tie_detected);
    CHECK(res.excluded > 0);
    CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("finite difference check validates the step size") {
    const HeadGeometry geom = tiny_geometry();
    const TrainerOptions opt = tiny_options(MlcdMechanism::CenterProb,
                                            KoleoKind::None, geom.num_prototypes);
    TrainState state = make_train_state(geom, opt, tiny_temps(), 93);
    CHECK_THROWS_AS(
        finite_diff_check(state, tiny_batch(opt.batch_size, geom.d_in, 94), opt, 1e-2),
        NumericalRange);
}

TEST_CASE("metrics stay finite and sample unique_m on the configured cadence") {
    const HeadGeometry geom = tiny_geometry();
    TrainerOptions opt = tiny_options(MlcdMechanism::CenterProb, KoleoKind::Proto,
                                      geom.num_prototypes);
    opt.unique_every = 5;
    TrainState state = make_train_state(geom, opt, tiny_temps(), 95);
    for (int step = 0; step < 12; ++step) {
        const StepMetrics m = train_step(state, tiny_batch(8, geom.d_in, 96), opt);
        CHECK(std::isfinite(m.total_loss));
        CHECK(std::isfinite(m.mlcd_entropy));
        CHECK(std::isfinite(m.kl_to_prior));
        CHECK(m.unique_m >= 1);
        CHECK(m.unique_m <= geom.num_prototypes);
        CHECK(m.teacher_temp >= 0.04);
        CHECK(m.teacher_temp <= 0.07);
    }
}

}  // TEST_SUITE
