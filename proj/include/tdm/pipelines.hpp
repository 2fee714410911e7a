#pragma once

#include "tdm/diffusion.hpp"
#include "tdm/flow.hpp"
#include "tdm/mixture.hpp"
#include "tdm/optimizer.hpp"
#include "tdm/rejection.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace tdm {

struct TrainConfig {
    long steps = 2000;
    int batch = 128;
    double lr = 1e-3;
    int log_every = 100;
    double lr_final_frac = 0.1;   // linear decay to lr * frac by the last step
};

struct TrainPoint {
    long step;
    double loss;
};

// Random init with the linear skip set to the stationary score -x, so the
// network starts exact at large noise and only learns the low-noise
// correction.
FieldModel init_score_model(const FieldModelConfig& cfg, RngStream& rng);

// Fresh-sample training against an analytic target (model updated in place).
std::vector<TrainPoint> train_score_fresh(FieldModel& m, const AnalyticMixture& target,
                                          const NoiseSchedule& sched, const TrainConfig& cfg,
                                          RngStream& rng);
std::vector<TrainPoint> train_flow_fresh(FieldModel& m, const AnalyticMixture& target,
                                         const TrainConfig& cfg, RngStream& rng);

// Dataset training; minibatches drawn with replacement.
std::vector<TrainPoint> train_score_dataset(FieldModel& m, std::span<const Vec> data,
                                            const NoiseSchedule& sched, const TrainConfig& cfg,
                                            RngStream& rng);
std::vector<TrainPoint> train_flow_dataset(FieldModel& m, std::span<const Vec> data,
                                           const TrainConfig& cfg, RngStream& rng);

struct PipelineConfig {
    int rounds = 5;
    int samples_per_round = 4096;
    double epochs = 4.0;      // fine-tune passes over the accumulated dataset
    int batch = 128;
    double lr = 1e-3;
    int threads = 0;
};

struct FinetuneResult {
    FieldModel model;
    std::vector<long> accepted_per_round;
    long dataset_size = 0;
    std::vector<TrainPoint> train_log;
};

// Sample from the frozen reference each round, filter with the rule,
// accumulate the accepted finals, then fit a copy of the reference on them.
FinetuneResult run_graft(const FieldModel& reference, const NoiseSchedule& sched,
                         const RewardFn& reward, const AcceptanceRule& rule,
                         const PipelineConfig& cfg, std::uint64_t seed);

// Same loop but filtering latents at the intermediate step; the partial model
// is trained only on timesteps at or above it, with the recalibrated noising.
FinetuneResult run_pgraft_train(const FieldModel& reference, const NoiseSchedule& sched,
                                const RewardFn& reward, const AcceptanceRule& rule,
                                int n_intermediate, const PipelineConfig& cfg,
                                std::uint64_t seed);

// Stitched inference: partial model from noise down to the intermediate step,
// reference the rest of the way.
Vec pgraft_sample(const FieldModel& partial, const FieldModel& reference, int n_intermediate,
                  const NoiseSchedule& sched, RngStream& rng);

// Batched samplers used for evaluation; deterministic per-sample streams.
std::vector<Vec> sample_finals(const FieldModel& score, const NoiseSchedule& sched, int count,
                               std::uint64_t seed, std::string_view stream_name, int threads = 0);
std::vector<Vec> sample_pgraft_finals(const FieldModel& partial, const FieldModel& reference,
                                      int n_intermediate, const NoiseSchedule& sched, int count,
                                      std::uint64_t seed, std::string_view stream_name,
                                      int threads = 0);

struct RewardStats {
    double mean = 0.0;
    double sd = 0.0;
    double q25 = 0.0;
    double q50 = 0.0;
    double q75 = 0.0;
    long n = 0;
    double se() const;
};
RewardStats reward_stats(std::span<const double> rewards);
std::vector<double> apply_reward(const RewardFn& reward, std::span<const Vec> samples);
// standard error of a mean difference between two independent groups
double pooled_se(const RewardStats& a, const RewardStats& b);

} // namespace tdm
