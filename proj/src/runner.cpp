#include "tdm/runner.hpp"

#include "tdm/diagnostics.hpp"
#include "tdm/inverse_noise.hpp"
#include "tdm/parallel.hpp"
#include "tdm/pipelines.hpp"
#include "tdm/records.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace tdm {

namespace {

std::string fmt_cell(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
}

// metric table with CSV and JSON mirrors
class Metrics {
public:
    explicit Metrics(std::vector<std::string> cols) : cols_(std::move(cols)) {}

    void add_row(std::initializer_list<Json> cells) {
        if (cells.size() != cols_.size()) throw Error("cli_runner", "metrics row width mismatch");
        rows_.emplace_back(cells);
    }

    void write_csv(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw Error("cli_runner", "cannot write metrics: " + path);
        for (std::size_t i = 0; i < cols_.size(); ++i) os << (i ? "," : "") << cols_[i];
        os << "\n";
        for (const auto& row : rows_) {
            for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << fmt_cell(row[i]);
            os << "\n";
        }
    }

    void write_json(const std::string& path) const {
        Json j;
        j["columns"] = cols_;
        j["rows"] = rows_;
        std::ofstream os(path, std::ios::binary);
        if (!os) throw Error("cli_runner", "cannot write metrics: " + path);
        os << j.dump(2) << "\n";
    }

private:
    std::vector<std::string> cols_;
    std::vector<std::vector<Json>> rows_;
};

void write_json_file(const std::string& path, const Json& j) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cli_runner", "cannot write " + path);
    os << j.dump(2) << "\n";
}

Json stats_json(const RewardStats& s) {
    return Json{{"mean", s.mean}, {"sd", s.sd},   {"q25", s.q25},
                {"q50", s.q50},   {"q75", s.q75}, {"n", s.n}};
}

struct Paths {
    RunArtifacts art;
    std::string dir;
    std::string prefix(const std::string& name) const { return dir + "/" + art.hash + "-" + name; }
};

Paths prepare(const ExperimentConfig& cfg) {
    Paths p;
    p.dir = cfg.out_dir;
    fs::create_directories(p.dir);
    p.art.hash = config_hash(cfg);
    p.art.manifest_path = p.prefix("manifest.json");
    p.art.metrics_csv = p.prefix("metrics.csv");
    p.art.metrics_json = p.prefix("metrics.json");
    p.art.report_path = p.prefix("report.json");
    Json manifest;
    manifest["schema_version"] = cfg.schema_version;
    manifest["content_hash"] = p.art.hash;
    manifest["seed"] = cfg.seed;
    manifest["config"] = serialize_config(cfg);
    write_json_file(p.art.manifest_path, manifest);
    return p;
}

FieldModel make_or_load_reference(const ExperimentConfig& cfg, const AnalyticMixture& target,
                                  const NoiseSchedule& sched, std::vector<TrainPoint>* log) {
    if (!cfg.reference_ckpt.empty()) return FieldModel::load(cfg.reference_ckpt);
    RngStream init_rng = substream(cfg.seed, "init");
    FieldModel m = FieldModel::random_init(cfg.model, init_rng);
    RngStream train_rng = substream(cfg.seed, "train-base");
    TrainConfig tc{cfg.train.steps, cfg.train.batch, cfg.train.lr, 100};
    auto pts = train_score_fresh(m, target, sched, tc, train_rng);
    if (log) *log = std::move(pts);
    return m;
}

std::vector<Vec> target_samples(const AnalyticMixture& target, int count, std::uint64_t seed,
                                std::string_view name) {
    RngStream rng = substream(seed, name);
    std::vector<Vec> out(static_cast<std::size_t>(count));
    for (auto& v : out) v = target.sample(rng);
    return out;
}

void run_train_base(const ExperimentConfig& cfg, const Paths& p) {
    const AnalyticMixture target = cfg.target.build();
    RngStream init_rng = substream(cfg.seed, "init");
    FieldModel m = FieldModel::random_init(cfg.model, init_rng);
    RngStream train_rng = substream(cfg.seed, "train-base");
    TrainConfig tc{cfg.train.steps, cfg.train.batch, cfg.train.lr, 100};
    std::vector<TrainPoint> log;
    Json report;
    if (cfg.model_kind == "score") {
        const NoiseSchedule sched =
            NoiseSchedule::linear(cfg.schedule.n_steps, cfg.schedule.beta_min, cfg.schedule.beta_max);
        log = train_score_fresh(m, target, sched, tc, train_rng);
        const auto samples = sample_finals(m, sched, cfg.eval_samples, cfg.seed, "eval", cfg.threads);
        const auto ref = target_samples(target, cfg.eval_samples, cfg.seed, "eval-target");
        report["distance_to_target"] =
            distribution_distance(samples, ref, DistanceMetric::SlicedW2, cfg.seed);
        report["reward"] = stats_json(reward_stats(apply_reward(cfg.reward.build(), samples)));
    } else {
        log = train_flow_fresh(m, target, tc, train_rng);
        std::vector<Vec> samples(static_cast<std::size_t>(cfg.eval_samples));
        const VelocityField vf = field_of(m);
        parallel_for(
            cfg.eval_samples,
            [&](std::int64_t i) {
                RngStream rng = substream(cfg.seed, "eval", static_cast<std::uint64_t>(i));
                samples[static_cast<std::size_t>(i)] =
                    fwd_euler(vf, cfg.flow.eta, rng.normal_vec(m.dim()));
            },
            cfg.threads);
        const auto ref = target_samples(target, cfg.eval_samples, cfg.seed, "eval-target");
        report["distance_to_target"] =
            distribution_distance(samples, ref, DistanceMetric::SlicedW2, cfg.seed);
    }
    Metrics metrics({"step", "loss"});
    for (const auto& pt : log) metrics.add_row({pt.step, pt.loss});
    metrics.write_csv(p.art.metrics_csv);
    metrics.write_json(p.art.metrics_json);
    m.save(p.prefix("base.ckpt"));
    report["checkpoint"] = p.art.hash + "-base.ckpt";
    write_json_file(p.art.report_path, report);
}

PipelineConfig pipeline_config(const ExperimentConfig& cfg) {
    PipelineConfig pc;
    pc.rounds = cfg.rounds;
    pc.samples_per_round = cfg.samples_per_round;
    pc.epochs = cfg.train.epochs;
    pc.batch = cfg.train.batch;
    pc.lr = cfg.train.lr;
    pc.threads = cfg.threads;
    return pc;
}

void run_finetune(const ExperimentConfig& cfg, const Paths& p, bool partial) {
    const AnalyticMixture target = cfg.target.build();
    const NoiseSchedule sched =
        NoiseSchedule::linear(cfg.schedule.n_steps, cfg.schedule.beta_min, cfg.schedule.beta_max);
    const RewardFn reward = cfg.reward.build();
    const AcceptanceRule rule = cfg.rule.build();
    std::vector<TrainPoint> base_log;
    const FieldModel reference = make_or_load_reference(cfg, target, sched, &base_log);

    const PipelineConfig pc = pipeline_config(cfg);
    FinetuneResult result =
        partial ? run_pgraft_train(reference, sched, reward, rule, cfg.n_intermediate, pc, cfg.seed)
                : run_graft(reference, sched, reward, rule, pc, cfg.seed);

    const auto ref_samples =
        sample_finals(reference, sched, cfg.eval_samples, cfg.seed, "eval-ref", cfg.threads);
    const auto tuned_samples =
        partial ? sample_pgraft_finals(result.model, reference, cfg.n_intermediate, sched,
                                       cfg.eval_samples, cfg.seed, "eval-tuned", cfg.threads)
                : sample_finals(result.model, sched, cfg.eval_samples, cfg.seed, "eval-tuned",
                                cfg.threads);
    const RewardStats ref_stats = reward_stats(apply_reward(reward, ref_samples));
    const RewardStats tuned_stats = reward_stats(apply_reward(reward, tuned_samples));

    Metrics metrics({"round", "accepted"});
    for (std::size_t i = 0; i < result.accepted_per_round.size(); ++i)
        metrics.add_row({static_cast<long long>(i), result.accepted_per_round[i]});
    metrics.write_csv(p.art.metrics_csv);
    metrics.write_json(p.art.metrics_json);

    reference.save(p.prefix("reference.ckpt"));
    result.model.save(p.prefix("finetuned.ckpt"));

    Json report;
    report["task"] = partial ? "pgraft" : "graft";
    report["dataset_size"] = result.dataset_size;
    report["accepted_per_round"] = result.accepted_per_round;
    report["reference_reward"] = stats_json(ref_stats);
    report["finetuned_reward"] = stats_json(tuned_stats);
    report["reward_delta"] = tuned_stats.mean - ref_stats.mean;
    report["reward_delta_se"] = pooled_se(tuned_stats, ref_stats);
    if (partial) report["n_intermediate"] = cfg.n_intermediate;
    write_json_file(p.art.report_path, report);
}

void run_invnoise(const ExperimentConfig& cfg, const Paths& p) {
    const AnalyticMixture target = cfg.target.build();
    const int dim = target.dim();
    const auto data = target_samples(target, cfg.flow.dataset_size, cfg.seed, "data");

    FieldModelConfig base_cfg = cfg.model;
    base_cfg.dim = dim;
    RngStream init_rng = substream(cfg.seed, "init");
    FieldModel base = FieldModel::random_init(base_cfg, init_rng);
    RngStream train_rng = substream(cfg.seed, "train-base");
    TrainConfig tc{cfg.train.steps, cfg.train.batch, cfg.train.lr, 100};
    const auto base_log = train_flow_dataset(base, data, tc, train_rng);

    InvertOptions inv;
    inv.n_fixed_point = cfg.flow.fixed_point_iters;
    inv.perturb_sigma = cfg.flow.perturb_sigma;
    inv.seed = cfg.seed;
    inv.threads = cfg.threads;
    const auto inverse = build_inverse_dataset(field_of(base), dim, cfg.flow.eta, data, inv);
    save_vectors(p.prefix("inverse.bin"), inverse);

    FieldModelConfig corr_cfg = base_cfg;
    corr_cfg.hidden = cfg.flow.corrector_hidden;
    RngStream corr_init = substream(cfg.seed, "corrector-init");
    FieldModel corrector = FieldModel::random_init(corr_cfg, corr_init);
    RngStream corr_rng = substream(cfg.seed, "corrector-train");
    TrainConfig ctc{cfg.corrector_train.steps, cfg.corrector_train.batch, cfg.corrector_train.lr,
                    100};
    const auto corr_log = train_flow_dataset(corrector, inverse, ctc, corr_rng);

    const VelocityField base_field = field_of(base);
    const VelocityField corr_field = field_of(corrector);
    const int n_eval = cfg.eval_samples;
    std::vector<Vec> base_samples(static_cast<std::size_t>(n_eval));
    std::vector<Vec> corrected_samples(static_cast<std::size_t>(n_eval));
    parallel_for(
        n_eval,
        [&](std::int64_t i) {
            RngStream rng1 = substream(cfg.seed, "eval-base", static_cast<std::uint64_t>(i));
            base_samples[static_cast<std::size_t>(i)] =
                fwd_euler(base_field, cfg.flow.eta, rng1.normal_vec(dim));
            RngStream rng2 = substream(cfg.seed, "eval-corrected", static_cast<std::uint64_t>(i));
            corrected_samples[static_cast<std::size_t>(i)] = corrected_sample(
                corr_field, base_field, cfg.flow.corrector_eta, cfg.flow.eta, dim, rng2);
        },
        cfg.threads);
    const auto fresh = target_samples(target, n_eval, cfg.seed, "eval-target");
    const double base_dist =
        distribution_distance(base_samples, fresh, DistanceMetric::SlicedW2, cfg.seed);
    const double corrected_dist =
        distribution_distance(corrected_samples, fresh, DistanceMetric::SlicedW2, cfg.seed);

    Metrics metrics({"model", "step", "loss"});
    for (const auto& pt : base_log) metrics.add_row({"base", pt.step, pt.loss});
    for (const auto& pt : corr_log) metrics.add_row({"corrector", pt.step, pt.loss});
    metrics.write_csv(p.art.metrics_csv);
    metrics.write_json(p.art.metrics_json);
    base.save(p.prefix("base.ckpt"));
    corrector.save(p.prefix("corrector.ckpt"));

    const long base_steps = static_cast<long>(std::floor(1.0 / cfg.flow.eta));
    const long corr_steps = static_cast<long>(std::floor(1.0 / cfg.flow.corrector_eta));
    Json report;
    report["base_distance"] = base_dist;
    report["corrected_distance"] = corrected_dist;
    report["steps"] = {{"base", base_steps}, {"corrector", corr_steps}};
    report["flops_estimate"] = {
        {"base_per_sample", base_steps * base.flops_per_eval()},
        {"corrected_per_sample",
         corr_steps * corrector.flops_per_eval() + base_steps * base.flops_per_eval()}};
    write_json_file(p.art.report_path, report);
}

void run_diagnose(const ExperimentConfig& cfg, const Paths& p) {
    const AnalyticMixture target = cfg.target.build();
    const NoiseSchedule sched =
        NoiseSchedule::linear(cfg.schedule.n_steps, cfg.schedule.beta_min, cfg.schedule.beta_max);
    const RewardFn reward = cfg.reward.build();
    const FieldModel model = make_or_load_reference(cfg, target, sched, nullptr);

    Metrics metrics({"diagnostic", "t", "estimate", "se"});
    const int n = sched.n_steps();
    std::vector<int> steps = cfg.diagnose.timesteps;
    if (steps.empty()) steps = {0, n / 4, n / 2, 3 * n / 4, n};
    const auto curve =
        conditional_variance_curve(model, sched, reward, steps, cfg.diagnose.n_states,
                                   cfg.diagnose.n_rollouts, cfg.seed, cfg.threads);
    for (const auto& pt : curve)
        metrics.add_row({"conditional_variance", sched.time_of(pt.step), pt.estimate, pt.se});

    Json hist_dump = Json::array();
    for (int step : {n, n / 4}) {
        const auto h = rollout_histogram_test(model, sched, reward, step, cfg.diagnose.binom_states,
                                              cfg.diagnose.n_rollouts, cfg.seed, cfg.threads);
        metrics.add_row({"binomial_tv", sched.time_of(step), h.tv, 0.0});
        hist_dump.push_back(Json{{"step", step},
                                 {"grand_mean", h.grand_mean},
                                 {"empirical", h.empirical},
                                 {"binomial", h.binomial},
                                 {"tv", h.tv}});
    }
    write_json_file(p.prefix("histogram.json"), hist_dump);

    const double horizon = cfg.diagnose.horizon;
    for (double t : cfg.diagnose.score_energy_times) {
        const McValue ht = score_energy(target, t, horizon, cfg.diagnose.score_energy_samples,
                                        cfg.seed, cfg.threads);
        metrics.add_row({"score_energy_tail", t, ht.value, ht.se});
        const McValue h0 = score_energy(target, 0.0, t, cfg.diagnose.score_energy_samples,
                                        cfg.seed, cfg.threads);
        metrics.add_row({"score_energy_head", t, h0.value, h0.se});
    }
    metrics.write_csv(p.art.metrics_csv);
    metrics.write_json(p.art.metrics_json);
    write_json_file(p.art.report_path, Json{{"task", "diagnose"}});
}

void run_eval(const ExperimentConfig& cfg, const Paths& p) {
    if (cfg.reference_ckpt.empty())
        throw ConfigError("eval: reference_ckpt is required");
    const AnalyticMixture target = cfg.target.build();
    const FieldModel model = FieldModel::load(cfg.reference_ckpt);
    Json report;
    std::vector<Vec> samples;
    if (cfg.model_kind == "score") {
        const NoiseSchedule sched = NoiseSchedule::linear(cfg.schedule.n_steps,
                                                          cfg.schedule.beta_min,
                                                          cfg.schedule.beta_max);
        samples = sample_finals(model, sched, cfg.eval_samples, cfg.seed, "eval", cfg.threads);
    } else {
        samples.resize(static_cast<std::size_t>(cfg.eval_samples));
        const VelocityField vf = field_of(model);
        parallel_for(
            cfg.eval_samples,
            [&](std::int64_t i) {
                RngStream rng = substream(cfg.seed, "eval", static_cast<std::uint64_t>(i));
                samples[static_cast<std::size_t>(i)] =
                    fwd_euler(vf, cfg.flow.eta, rng.normal_vec(model.dim()));
            },
            cfg.threads);
    }
    const auto fresh = target_samples(target, cfg.eval_samples, cfg.seed, "eval-target");
    report["reward"] = stats_json(reward_stats(apply_reward(cfg.reward.build(), samples)));
    report["distance_to_target"] =
        distribution_distance(samples, fresh, DistanceMetric::SlicedW2, cfg.seed);
    report["mmd_to_target"] =
        distribution_distance(samples, fresh, DistanceMetric::GaussianMmd, cfg.seed);
    Metrics metrics({"metric", "value"});
    metrics.add_row({"reward_mean", report["reward"]["mean"]});
    metrics.add_row({"sliced_w2", report["distance_to_target"]});
    metrics.add_row({"mmd", report["mmd_to_target"]});
    metrics.write_csv(p.art.metrics_csv);
    metrics.write_json(p.art.metrics_json);
    write_json_file(p.art.report_path, report);
}

} // namespace

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
    const Paths p = prepare(cfg);
    if (cfg.task == "train-base") {
        run_train_base(cfg, p);
    } else if (cfg.task == "graft") {
        run_finetune(cfg, p, /*partial=*/false);
    } else if (cfg.task == "pgraft") {
        run_finetune(cfg, p, /*partial=*/true);
    } else if (cfg.task == "invnoise") {
        run_invnoise(cfg, p);
    } else if (cfg.task == "diagnose") {
        run_diagnose(cfg, p);
    } else if (cfg.task == "eval") {
        run_eval(cfg, p);
    } else {
        throw ConfigError("unknown task: " + cfg.task);
    }
    return p.art;
}

} // namespace tdm
