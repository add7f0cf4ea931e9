#include "protolab/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace protolab {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string strip_quotes(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

std::map<std::string, std::string> tokenize(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream stream(text);
    std::string line;
    int lineno = 0;
    while (std::getline(stream, line)) {
        ++lineno;
        // Comments start at '#' outside quotes.
        bool quoted = false;
        std::string body;
        for (const char ch : line) {
            if (ch == '"') quoted = !quoted;
            if (ch == '#' && !quoted) break;
            body.push_back(ch);
        }
        body = trim(body);
        if (body.empty()) continue;
        const std::size_t eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigInvalid("config line " + std::to_string(lineno) +
                                ": expected 'key = value'");
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigInvalid("config line " + std::to_string(lineno) +
                                ": empty key or value");
        }
        if (kv.count(key) != 0) {
            throw ConfigInvalid("config: duplicate key '" + key + "'");
        }
        kv[key] = value;
    }
    return kv;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigInvalid("config: key '" + key + "' expects a number, got '" +
                            value + "'");
    }
}

long parse_long(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long v = std::stol(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigInvalid("config: key '" + key + "' expects an integer, got '" +
                            value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigInvalid("config: key '" + key +
                            "' expects an unsigned integer, got '" + value + "'");
    }
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    auto kv = tokenize(text);

    const auto take = [&kv](const std::string& key) -> std::string {
        auto it = kv.find(key);
        if (it == kv.end()) return {};
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    const auto set_int = [&](const std::string& key, int& field) {
        if (const std::string v = take(key); !v.empty()) {
            field = static_cast<int>(parse_long(key, v));
        }
    };
    const auto set_long = [&](const std::string& key, long& field) {
        if (const std::string v = take(key); !v.empty()) field = parse_long(key, v);
    };
    const auto set_double = [&](const std::string& key, double& field) {
        if (const std::string v = take(key); !v.empty()) field = parse_double(key, v);
    };
    const auto set_enum = [&](const std::string& key, auto& field,
                              const std::map<std::string, std::decay_t<decltype(field)>>&
                                  values) {
        const std::string v = take(key);
        if (v.empty()) return;
        const std::string word = strip_quotes(v);
        const auto it = values.find(word);
        if (it == values.end()) {
            throw ConfigInvalid("config: key '" + key + "' has unsupported value '" +
                                word + "'");
        }
        field = it->second;
    };

    set_int("dataset.clusters", cfg.clusters);
    set_int("dataset.points", cfg.points);
    set_int("dataset.input_dim", cfg.input_dim);
    set_double("dataset.cluster_kappa", cfg.cluster_kappa);
    set_enum("dataset.mixing", cfg.mixing,
             {{"uniform", MixingLaw::Uniform}, {"powerlaw", MixingLaw::PowerLaw}});
    set_double("dataset.mixing_alpha", cfg.mixing_alpha);

    set_enum("encoder.kind", cfg.encoder,
             {{"linear", EncoderKind::Linear}, {"mlp", EncoderKind::Mlp}});
    set_int("encoder.hidden", cfg.hidden);

    set_int("head.prototypes", cfg.prototypes);
    set_int("head.dim", cfg.embed_dim);
    set_enum("head.mode", cfg.head_mode,
             {{"plain", HeadMode::Plain}, {"vmf", HeadMode::VmfNormalized}});
    set_double("head.kappa_scale", cfg.kappa_scale);

    set_enum("mlcd.mechanism", cfg.mechanism,
             {{"none", MlcdMechanism::None},
              {"center_logit", MlcdMechanism::CenterLogit},
              {"center_prob", MlcdMechanism::CenterProb},
              {"sinkhorn", MlcdMechanism::Sinkhorn},
              {"me_max", MlcdMechanism::MeMax}});
    set_double("mlcd.center_momentum", cfg.center_momentum);
    set_int("mlcd.sinkhorn_iters", cfg.sinkhorn_iters);
    set_double("mlcd.me_max_lambda", cfg.me_max_lambda);
    set_enum("mlcd.prior", cfg.prior_power_law, {{"uniform", false}, {"powerlaw", true}});
    set_double("mlcd.prior_alpha", cfg.prior_alpha);

    set_enum("koleo.kind", cfg.koleo,
             {{"none", KoleoKind::None},
              {"proto", KoleoKind::Proto},
              {"data", KoleoKind::Data}});
    set_double("koleo.lambda", cfg.koleo_lambda);
    set_int("koleo.partition_size", cfg.koleo_partition);

    set_double("optim.lr", cfg.lr);
    set_double("optim.momentum", cfg.sgd_momentum);
    set_double("optim.warmup_frac", cfg.warmup_frac);

    set_long("train.steps", cfg.steps);
    set_int("train.batch", cfg.batch);
    set_double("train.noise_sigma", cfg.noise_sigma);

    set_double("schedule.teacher_temp_start", cfg.teacher_temp_start);
    set_double("schedule.teacher_temp_end", cfg.teacher_temp_end);
    set_double("schedule.temp_warmup_frac", cfg.temp_warmup_frac);
    set_double("schedule.student_temp", cfg.student_temp);
    set_double("schedule.ema_start", cfg.ema_start);
    set_double("schedule.ema_end", cfg.ema_end);

    if (const std::string v = take("run.seed"); !v.empty()) {
        cfg.seed = parse_u64("run.seed", v);
    }
    if (const std::string v = take("run.out"); !v.empty()) {
        cfg.out_dir = strip_quotes(v);
    }
    set_long("run.unique_every", cfg.unique_every);
    set_double("run.epsilon", cfg.epsilon);

    if (!kv.empty()) {
        throw ConfigInvalid("config: unknown key '" + kv.begin()->first + "'");
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

void ExperimentConfig::validate() const {
    const auto fail = [](const std::string& msg) { throw ConfigInvalid("config: " + msg); };
    if (clusters < 2) fail("dataset.clusters must be >= 2");
    if (points < clusters) fail("dataset.points must be >= dataset.clusters");
    if (input_dim < 2) fail("dataset.input_dim must be >= 2");
    if (!(cluster_kappa > 0.0)) fail("dataset.cluster_kappa must be > 0");
    if (!(mixing_alpha > 0.0)) fail("dataset.mixing_alpha must be > 0");
    if (hidden < 1) fail("encoder.hidden must be >= 1");
    if (prototypes < 2) fail("head.prototypes must be >= 2");
    if (embed_dim < 2) fail("head.dim must be >= 2");
    if (head_mode == HeadMode::VmfNormalized && embed_dim < 12) {
        fail("head.mode = vmf requires head.dim >= 12");
    }
    if (!(kappa_scale > 0.0)) fail("head.kappa_scale must be > 0");
    if (!(center_momentum >= 0.0 && center_momentum < 1.0)) {
        fail("mlcd.center_momentum must be in [0, 1)");
    }
    if (sinkhorn_iters < 1) fail("mlcd.sinkhorn_iters must be >= 1");
    if (me_max_lambda < 0.0) fail("mlcd.me_max_lambda must be >= 0");
    if (!(prior_alpha > 0.0)) fail("mlcd.prior_alpha must be > 0");
    if (koleo_lambda < 0.0) fail("koleo.lambda must be >= 0");
    if (koleo_partition < 2) fail("koleo.partition_size must be >= 2");
    if (koleo == KoleoKind::Proto && koleo_partition > prototypes) {
        fail("koleo.partition_size must be <= head.prototypes");
    }
    if (!(lr > 0.0)) fail("optim.lr must be > 0");
    if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) {
        fail("optim.momentum must be in [0, 1)");
    }
    if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) {
        fail("optim.warmup_frac must be in [0, 1)");
    }
    if (steps < 1) fail("train.steps must be >= 1");
    if (batch < 2) fail("train.batch must be >= 2");
    if (batch > points) fail("train.batch must be <= dataset.points");
    if (noise_sigma < 0.0) fail("train.noise_sigma must be >= 0");
    if (!(teacher_temp_start > 0.0) || !(teacher_temp_end > 0.0)) {
        fail("teacher temperatures must be > 0");
    }
    if (!(student_temp > 0.0)) fail("schedule.student_temp must be > 0");
    if (std::max(teacher_temp_start, teacher_temp_end) > student_temp) {
        fail("teacher temperature must stay <= student temperature (sharpening)");
    }
    if (!(temp_warmup_frac >= 0.0 && temp_warmup_frac <= 1.0)) {
        fail("schedule.temp_warmup_frac must be in [0, 1]");
    }
    if (!(ema_start >= 0.0 && ema_start <= 1.0) || !(ema_end >= 0.0 && ema_end <= 1.0)) {
        fail("EMA momenta must be in [0, 1]");
    }
    if (unique_every < 1) fail("run.unique_every must be >= 1");
    if (epsilon < 0.0) fail("run.epsilon must be >= 0");
    if (out_dir.empty()) fail("run.out must not be empty");
}

TrainerOptions ExperimentConfig::trainer_options() const {
    TrainerOptions opt;
    opt.mechanism = mechanism;
    opt.center_momentum = center_momentum;
    opt.sinkhorn_iters = sinkhorn_iters;
    opt.me_max_lambda = me_max_lambda;
    opt.prior = prior();
    opt.koleo = koleo;
    opt.koleo_lambda = koleo_lambda;
    opt.koleo_partition = koleo_partition;
    opt.noise_sigma = noise_sigma;
    opt.total_steps = steps;
    opt.batch_size = batch;
    opt.lr = lr;
    opt.sgd_momentum = sgd_momentum;
    opt.warmup_frac = warmup_frac;
    opt.ema_start = ema_start;
    opt.ema_end = ema_end;
    opt.collapse_epsilon = epsilon;
    opt.unique_every = unique_every;
    return opt;
}

HeadGeometry ExperimentConfig::geometry() const {
    HeadGeometry geom;
    geom.d_in = input_dim;
    geom.hidden = hidden;
    geom.embed_dim = embed_dim;
    geom.num_prototypes = prototypes;
    geom.encoder = encoder;
    geom.mode = head_mode;
    geom.kappa_scale = kappa_scale;
    return geom;
}

TemperatureSchedule ExperimentConfig::temperature_schedule() const {
    TemperatureSchedule temps;
    temps.teacher_start = teacher_temp_start;
    temps.teacher_end = teacher_temp_end;
    temps.warmup_steps = static_cast<long>(temp_warmup_frac * steps);
    temps.student_temp = student_temp;
    return temps;
}

PriorDistribution ExperimentConfig::prior() const {
    return prior_power_law ? PriorDistribution::power_law(prototypes, prior_alpha)
                           : PriorDistribution::uniform(prototypes);
}

std::string ExperimentConfig::to_toml() const {
    std::ostringstream out;
    const auto emit = [&out](const std::string& key, const std::string& value) {
        out << key << " = " << value << "\n";
    };
    emit("dataset.clusters", std::to_string(clusters));
    emit("dataset.points", std::to_string(points));
    emit("dataset.input_dim", std::to_string(input_dim));
    emit("dataset.cluster_kappa", fmt_double(cluster_kappa));
    emit("dataset.mixing", mixing == MixingLaw::Uniform ? "\"uniform\"" : "\"powerlaw\"");
    emit("dataset.mixing_alpha", fmt_double(mixing_alpha));
    emit("encoder.kind", encoder == EncoderKind::Linear ? "\"linear\"" : "\"mlp\"");
    emit("encoder.hidden", std::to_string(hidden));
    emit("head.prototypes", std::to_string(prototypes));
    emit("head.dim", std::to_string(embed_dim));
    emit("head.mode", head_mode == HeadMode::Plain ? "\"plain\"" : "\"vmf\"");
    emit("head.kappa_scale", fmt_double(kappa_scale));
    switch (mechanism) {
        case MlcdMechanism::None: emit("mlcd.mechanism", "\"none\""); break;
        case MlcdMechanism::CenterLogit: emit("mlcd.mechanism", "\"center_logit\""); break;
        case MlcdMechanism::CenterProb: emit("mlcd.mechanism", "\"center_prob\""); break;
        case MlcdMechanism::Sinkhorn: emit("mlcd.mechanism", "\"sinkhorn\""); break;
        case MlcdMechanism::MeMax: emit("mlcd.mechanism", "\"me_max\""); break;
    }
    emit("mlcd.center_momentum", fmt_double(center_momentum));
    emit("mlcd.sinkhorn_iters", std::to_string(sinkhorn_iters));
    emit("mlcd.me_max_lambda", fmt_double(me_max_lambda));
    emit("mlcd.prior", prior_power_law ? "\"powerlaw\"" : "\"uniform\"");
    emit("mlcd.prior_alpha", fmt_double(prior_alpha));
    switch (koleo) {
        case KoleoKind::None: emit("koleo.kind", "\"none\""); break;
        case KoleoKind::Proto: emit("koleo.kind", "\"proto\""); break;
        case KoleoKind::Data: emit("koleo.kind", "\"data\""); break;
    }
    emit("koleo.lambda", fmt_double(koleo_lambda));
    emit("koleo.partition_size", std::to_string(koleo_partition));
    emit("optim.lr", fmt_double(lr));
    emit("optim.momentum", fmt_double(sgd_momentum));
    emit("optim.warmup_frac", fmt_double(warmup_frac));
    emit("train.steps", std::to_string(steps));
    emit("train.batch", std::to_string(batch));
    emit("train.noise_sigma", fmt_double(noise_sigma));
    emit("schedule.teacher_temp_start", fmt_double(teacher_temp_start));
    emit("schedule.teacher_temp_end", fmt_double(teacher_temp_end));
    emit("schedule.temp_warmup_frac", fmt_double(temp_warmup_frac));
    emit("schedule.student_temp", fmt_double(student_temp));
    emit("schedule.ema_start", fmt_double(ema_start));
    emit("schedule.ema_end", fmt_double(ema_end));
    emit("run.seed", std::to_string(seed));
    emit("run.out", "\"" + out_dir + "\"");
    emit("run.unique_every", std::to_string(unique_every));
    emit("run.epsilon", fmt_double(epsilon));
    return out.str();
}

}  // namespace protolab
