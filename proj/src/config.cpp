#include "tdm/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace tdm {

namespace {

// Tracks consumed keys so unknown ones can be rejected.
class Reader {
public:
    Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const std::string& key) {
        return j_.contains(key);
    }

    template <typename T>
    T get(const std::string& key, const T& fallback) {
        if (!j_.contains(key)) return fallback;
        seen_.insert(key);
        try {
            return j_.at(key).get<T>();
        } catch (const Json::exception&) {
            throw ConfigError(path_ + "." + key + ": wrong type");
        }
    }

    template <typename T>
    T require(const std::string& key) {
        if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": missing required field");
        return get<T>(key, T{});
    }

    Json object(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? j_.at(key) : Json::object();
    }

    void finish() {
        for (const auto& kv : j_.items())
            if (!seen_.contains(kv.key()))
                throw ConfigError(path_ + ": unknown key '" + kv.key() + "'");
    }

private:
    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void check(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

} // namespace

int TargetSpec::dim() const {
    if (!means.empty()) return static_cast<int>(means[0].size());
    if (preset == "std_gauss_2d" || preset == "two_mode_2d" || preset == "four_mode_2d") return 2;
    return 1;
}

AnalyticMixture TargetSpec::build() const {
    if (!means.empty()) {
        std::vector<Vec> ms;
        for (const auto& m : means) {
            Vec v(static_cast<Eigen::Index>(m.size()));
            for (std::size_t i = 0; i < m.size(); ++i) v[static_cast<Eigen::Index>(i)] = m[i];
            ms.push_back(std::move(v));
        }
        return AnalyticMixture(std::move(ms), variances, weights);
    }
    if (preset == "std_gauss_1d") return AnalyticMixture::standard_gaussian(1);
    if (preset == "std_gauss_2d") return AnalyticMixture::standard_gaussian(2);
    if (preset == "shifted_gauss_1d")
        return AnalyticMixture({Vec::Constant(1, 3.0)}, {1.0}, {1.0});
    if (preset == "two_mode_1d")
        return AnalyticMixture({Vec::Constant(1, -2.0), Vec::Constant(1, 2.0)}, {0.25, 0.25},
                               {0.5, 0.5});
    if (preset == "two_mode_2d") {
        Vec l(2), r(2);
        l << -2.0, 0.0;
        r << 2.0, 0.0;
        return AnalyticMixture({l, r}, {0.25, 0.25}, {0.5, 0.5});
    }
    if (preset == "four_mode_2d") {
        std::vector<Vec> ms;
        for (double sx : {-2.0, 2.0})
            for (double sy : {-2.0, 2.0}) {
                Vec m(2);
                m << sx, sy;
                ms.push_back(m);
            }
        return AnalyticMixture(std::move(ms), std::vector<double>(4, 0.25),
                               std::vector<double>(4, 0.25));
    }
    throw ConfigError("target.preset: unknown preset '" + preset + "'");
}

AcceptanceRule RuleSpec::build() const {
    if (kind == "classical") return ClassicalRule{r_max, alpha};
    if (kind == "topk") return TopKRule{m, k};
    if (kind == "preference") return PreferenceRule{};
    if (kind == "dedup") {
        if (structure == "round_first")
            return BinaryDedupRule{[](const Vec& x) { return std::llround(x[0]); }};
        if (structure == "round_all")
            return BinaryDedupRule{[](const Vec& x) {
                std::int64_t h = 1469598103934665603LL;
                for (Eigen::Index i = 0; i < x.size(); ++i)
                    h = h * 1099511628211LL + std::llround(2.0 * x[i]);
                return h;
            }};
        throw ConfigError("rule.structure: unknown structure function '" + structure + "'");
    }
    throw ConfigError("rule.kind: unknown rule '" + kind + "'");
}

RewardFn RewardSpec::build() const {
    const double thr = threshold;
    if (kind == "first_coord") return [](const Vec& x) { return x[0]; };
    if (kind == "half_plane") return [thr](const Vec& x) { return x[0] > thr ? 1.0 : 0.0; };
    if (kind == "neg_norm") return [](const Vec& x) { return -x.norm(); };
    throw ConfigError("reward.kind: unknown reward '" + kind + "'");
}

namespace {

TargetSpec parse_target(const Json& j) {
    Reader r(j, "target");
    TargetSpec t;
    t.preset = r.get<std::string>("preset", "");
    t.means = r.get<std::vector<std::vector<double>>>("means", {});
    t.variances = r.get<std::vector<double>>("variances", {});
    t.weights = r.get<std::vector<double>>("weights", {});
    r.finish();
    check(!t.preset.empty() || !t.means.empty(), "target: needs a preset or explicit means");
    if (!t.means.empty()) {
        check(t.means.size() == t.variances.size() && t.means.size() == t.weights.size(),
              "target: means/variances/weights must have equal length");
        t.build();   // full mixture validation
    } else {
        t.build();
    }
    return t;
}

FieldModelConfig parse_model(const Json& j, int dim) {
    Reader r(j, "model");
    FieldModelConfig m;
    m.dim = dim;
    m.hidden = r.get<std::vector<int>>("hidden", {128, 128, 128});
    m.time_dim = r.get<int>("time_dim", 16);
    r.finish();
    for (int h : m.hidden) check(h > 0, "model.hidden: widths must be positive");
    check(m.time_dim >= 0 && m.time_dim % 2 == 0, "model.time_dim: must be even and >= 0");
    return m;
}

ScheduleSpec parse_schedule(const Json& j) {
    Reader r(j, "schedule");
    ScheduleSpec s;
    s.n_steps = r.get<int>("n_steps", s.n_steps);
    s.beta_min = r.get<double>("beta_min", s.beta_min);
    s.beta_max = r.get<double>("beta_max", s.beta_max);
    r.finish();
    check(s.n_steps > 0, "schedule.n_steps: must be positive");
    check(s.beta_min > 0.0 && s.beta_min <= s.beta_max && s.beta_max < 1.0,
          "schedule: need 0 < beta_min <= beta_max < 1");
    return s;
}

FlowSpec parse_flow(const Json& j) {
    Reader r(j, "flow");
    FlowSpec f;
    f.eta = r.get<double>("eta", f.eta);
    f.fixed_point_iters = r.get<int>("fixed_point_iters", f.fixed_point_iters);
    f.corrector_eta = r.get<double>("corrector_eta", f.corrector_eta);
    f.perturb_sigma = r.get<double>("perturb_sigma", f.perturb_sigma);
    f.corrector_hidden = r.get<std::vector<int>>("corrector_hidden", f.corrector_hidden);
    f.dataset_size = r.get<int>("dataset_size", f.dataset_size);
    r.finish();
    check(f.eta > 0.0 && f.eta <= 1.0, "flow.eta: must lie in (0, 1]");
    check(f.corrector_eta > 0.0 && f.corrector_eta <= 1.0, "flow.corrector_eta: must lie in (0, 1]");
    check(f.fixed_point_iters >= 1, "flow.fixed_point_iters: must be >= 1");
    check(f.perturb_sigma >= 0.0, "flow.perturb_sigma: must be >= 0");
    check(f.dataset_size > 0, "flow.dataset_size: must be positive");
    return f;
}

RuleSpec parse_rule(const Json& j) {
    Reader r(j, "rule");
    RuleSpec s;
    s.kind = r.get<std::string>("kind", s.kind);
    s.r_max = r.get<double>("r_max", s.r_max);
    s.alpha = r.get<double>("alpha", s.alpha);
    s.m = r.get<int>("m", s.m);
    s.k = r.get<int>("k", s.k);
    s.structure = r.get<std::string>("structure", s.structure);
    r.finish();
    check(s.alpha > 0.0, "rule.alpha: must be positive");
    check(s.k >= 1 && s.k <= s.m, "rule: need 1 <= k <= m");
    s.build();
    return s;
}

RewardSpec parse_reward(const Json& j) {
    Reader r(j, "reward");
    RewardSpec s;
    s.kind = r.get<std::string>("kind", s.kind);
    s.threshold = r.get<double>("threshold", s.threshold);
    r.finish();
    s.build();
    return s;
}

TrainSpec parse_train(const Json& j, const char* name) {
    Reader r(j, name);
    TrainSpec t;
    t.steps = r.get<long>("steps", t.steps);
    t.batch = r.get<int>("batch", t.batch);
    t.lr = r.get<double>("lr", t.lr);
    t.epochs = r.get<double>("epochs", t.epochs);
    r.finish();
    check(t.steps > 0, std::string(name) + ".steps: must be positive");
    check(t.batch > 0, std::string(name) + ".batch: must be positive");
    check(t.lr > 0.0, std::string(name) + ".lr: must be positive");
    check(t.epochs > 0.0, std::string(name) + ".epochs: must be positive");
    return t;
}

DiagnoseSpec parse_diagnose(const Json& j) {
    Reader r(j, "diagnose");
    DiagnoseSpec d;
    d.timesteps = r.get<std::vector<int>>("timesteps", d.timesteps);
    d.n_states = r.get<int>("n_states", d.n_states);
    d.n_rollouts = r.get<int>("n_rollouts", d.n_rollouts);
    d.binom_states = r.get<int>("binom_states", d.binom_states);
    d.score_energy_samples = r.get<int>("score_energy_samples", d.score_energy_samples);
    d.score_energy_times = r.get<std::vector<double>>("score_energy_times", d.score_energy_times);
    d.horizon = r.get<double>("horizon", d.horizon);
    r.finish();
    check(d.n_states > 0 && d.n_rollouts >= 2, "diagnose: need n_states > 0, n_rollouts >= 2");
    check(d.horizon > 0.0, "diagnose.horizon: must be positive");
    for (double t : d.score_energy_times)
        check(t > 0.0 && t < d.horizon, "diagnose.score_energy_times: must lie in (0, horizon)");
    return d;
}

} // namespace

ExperimentConfig parse_config(const Json& j) {
    Reader r(j, "config");
    ExperimentConfig c;
    c.schema_version = r.get<int>("schema_version", 1);
    check(c.schema_version == 1, "schema_version: only version 1 is supported");
    c.task = r.require<std::string>("task");
    static const std::set<std::string> kTasks = {"train-base", "graft",    "pgraft",
                                                 "invnoise",   "diagnose", "eval"};
    check(kTasks.contains(c.task), "task: unknown task '" + c.task + "'");
    c.seed = r.get<std::uint64_t>("seed", 0);
    c.out_dir = r.get<std::string>("out_dir", c.out_dir);
    c.threads = r.get<int>("threads", 0);
    c.model_kind = r.get<std::string>("model_kind", c.model_kind);
    check(c.model_kind == "score" || c.model_kind == "velocity",
          "model_kind: must be 'score' or 'velocity'");
    c.reference_ckpt = r.get<std::string>("reference_ckpt", "");

    c.target = parse_target(r.object("target"));
    c.model = parse_model(r.object("model"), c.target.dim());
    c.schedule = parse_schedule(r.object("schedule"));
    c.flow = parse_flow(r.object("flow"));
    c.rule = parse_rule(r.object("rule"));
    c.reward = parse_reward(r.object("reward"));
    c.train = parse_train(r.object("train"), "train");
    c.corrector_train = parse_train(r.object("corrector_train"), "corrector_train");
    c.diagnose = parse_diagnose(r.object("diagnose"));

    c.n_intermediate = r.get<int>("n_intermediate", 0);
    c.rounds = r.get<int>("rounds", c.rounds);
    c.samples_per_round = r.get<int>("samples_per_round", c.samples_per_round);
    c.eval_samples = r.get<int>("eval_samples", c.eval_samples);
    r.finish();

    check(c.n_intermediate >= 0 && c.n_intermediate <= c.schedule.n_steps,
          "n_intermediate: must lie in [0, schedule.n_steps]");
    check(c.rounds > 0, "rounds: must be positive");
    check(c.samples_per_round > 0, "samples_per_round: must be positive");
    check(c.eval_samples > 0, "eval_samples: must be positive");
    if (c.rule.kind == "topk")
        check(c.rule.m == c.samples_per_round,
              "rule.m: TopK batch size must equal samples_per_round");
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    Json j;
    try {
        is >> j;
    } catch (const Json::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
    return parse_config(j);
}

Json serialize_config(const ExperimentConfig& c) {
    Json j;
    j["schema_version"] = c.schema_version;
    j["task"] = c.task;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["threads"] = c.threads;
    j["model_kind"] = c.model_kind;
    j["reference_ckpt"] = c.reference_ckpt;
    j["target"] = {{"preset", c.target.preset},
                   {"means", c.target.means},
                   {"variances", c.target.variances},
                   {"weights", c.target.weights}};
    j["model"] = {{"hidden", c.model.hidden}, {"time_dim", c.model.time_dim}};
    j["schedule"] = {{"n_steps", c.schedule.n_steps},
                     {"beta_min", c.schedule.beta_min},
                     {"beta_max", c.schedule.beta_max}};
    j["flow"] = {{"eta", c.flow.eta},
                 {"fixed_point_iters", c.flow.fixed_point_iters},
                 {"corrector_eta", c.flow.corrector_eta},
                 {"perturb_sigma", c.flow.perturb_sigma},
                 {"corrector_hidden", c.flow.corrector_hidden},
                 {"dataset_size", c.flow.dataset_size}};
    j["rule"] = {{"kind", c.rule.kind}, {"r_max", c.rule.r_max}, {"alpha", c.rule.alpha},
                 {"m", c.rule.m},       {"k", c.rule.k},         {"structure", c.rule.structure}};
    j["reward"] = {{"kind", c.reward.kind}, {"threshold", c.reward.threshold}};
    j["train"] = {{"steps", c.train.steps},
                  {"batch", c.train.batch},
                  {"lr", c.train.lr},
                  {"epochs", c.train.epochs}};
    j["corrector_train"] = {{"steps", c.corrector_train.steps},
                            {"batch", c.corrector_train.batch},
                            {"lr", c.corrector_train.lr},
                            {"epochs", c.corrector_train.epochs}};
    j["diagnose"] = {{"timesteps", c.diagnose.timesteps},
                     {"n_states", c.diagnose.n_states},
                     {"n_rollouts", c.diagnose.n_rollouts},
                     {"binom_states", c.diagnose.binom_states},
                     {"score_energy_samples", c.diagnose.score_energy_samples},
                     {"score_energy_times", c.diagnose.score_energy_times},
                     {"horizon", c.diagnose.horizon}};
    j["n_intermediate"] = c.n_intermediate;
    j["rounds"] = c.rounds;
    j["samples_per_round"] = c.samples_per_round;
    j["eval_samples"] = c.eval_samples;
    return j;
}

std::string config_hash(const ExperimentConfig& c) {
    const std::uint64_t h = fnv1a64(serialize_config(c).dump());
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

} // namespace tdm
