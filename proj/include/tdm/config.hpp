#pragma once

#include "tdm/field_model.hpp"
#include "tdm/mixture.hpp"
#include "tdm/rejection.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace tdm {

using Json = nlohmann::json;

// Config validation failure (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TargetSpec {
    std::string preset;                       // empty when explicit parameters given
    std::vector<std::vector<double>> means;
    std::vector<double> variances;
    std::vector<double> weights;

    AnalyticMixture build() const;
    int dim() const;
};

struct ScheduleSpec {
    int n_steps = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;
};

struct FlowSpec {
    double eta = 0.01;
    int fixed_point_iters = 10;
    double corrector_eta = 0.01;
    double perturb_sigma = 0.0;
    std::vector<int> corrector_hidden = {64, 64, 64};   // half the base width
    int dataset_size = 4096;
};

struct RuleSpec {
    std::string kind = "topk";     // classical | topk | preference | dedup
    double r_max = 1.0;
    double alpha = 1.0;
    int m = 4096;
    int k = 1024;
    std::string structure = "round_first";

    AcceptanceRule build() const;
};

struct RewardSpec {
    std::string kind = "first_coord";   // first_coord | half_plane | neg_norm
    double threshold = 0.0;

    RewardFn build() const;
};

struct TrainSpec {
    long steps = 2000;
    int batch = 128;
    double lr = 1e-3;
    double epochs = 4.0;
};

struct DiagnoseSpec {
    std::vector<int> timesteps;                       // empty = quartile defaults
    int n_states = 200;
    int n_rollouts = 100;
    int binom_states = 1000;
    int score_energy_samples = 20000;
    std::vector<double> score_energy_times = {0.25, 0.5, 1.0, 2.0};
    double horizon = 5.0;
};

struct ExperimentConfig {
    int schema_version = 1;
    std::string task;          // train-base | graft | pgraft | invnoise | diagnose | eval
    std::uint64_t seed = 0;
    std::string out_dir = "runs";
    int threads = 0;
    std::string model_kind = "score";   // score | velocity
    std::string reference_ckpt;

    TargetSpec target;
    FieldModelConfig model;
    ScheduleSpec schedule;
    FlowSpec flow;
    RuleSpec rule;
    RewardSpec reward;
    TrainSpec train;
    TrainSpec corrector_train;
    DiagnoseSpec diagnose;

    int n_intermediate = 0;
    int rounds = 5;
    int samples_per_round = 4096;
    int eval_samples = 4096;
};

// Strict parse: every field validated, unknown keys rejected at every level.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::string& path);
Json serialize_config(const ExperimentConfig& cfg);

// content hash of the resolved config (drives artifact file prefixes)
std::string config_hash(const ExperimentConfig& cfg);

} // namespace tdm
