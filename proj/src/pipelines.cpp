#include "tdm/pipelines.hpp"

#include "tdm/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace tdm {

namespace {

// one Adam run over a per-step loss closure
std::vector<TrainPoint> train_loop(FieldModel& m, const TrainConfig& cfg,
                                   const std::function<double(GradAccum&)>& step_loss) {
    Adam opt(m.param_count(), {.lr = cfg.lr});
    Vec params = m.params_flat();
    GradAccum grads(m);
    std::vector<TrainPoint> log;
    double acc = 0.0;
    long acc_n = 0;
    for (long step = 1; step <= cfg.steps; ++step) {
        const double frac = cfg.steps > 1 ? static_cast<double>(step - 1) / (cfg.steps - 1) : 0.0;
        opt.set_lr(cfg.lr * (1.0 - (1.0 - cfg.lr_final_frac) * frac));
        const double loss = step_loss(grads);
        opt.step(params, grads.flat());
        m.set_params_flat(params);
        acc += loss;
        ++acc_n;
        if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps)) {
            log.push_back({step, acc / static_cast<double>(acc_n)});
            acc = 0.0;
            acc_n = 0;
        }
    }
    return log;
}

std::vector<Vec> fresh_batch(const AnalyticMixture& target, int batch, RngStream& rng) {
    std::vector<Vec> xs(static_cast<std::size_t>(batch));
    for (auto& x : xs) x = target.sample(rng);
    return xs;
}

std::vector<Vec> dataset_batch(std::span<const Vec> data, int batch, RngStream& rng) {
    std::vector<Vec> xs(static_cast<std::size_t>(batch));
    for (auto& x : xs)
        x = data[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(data.size())))];
    return xs;
}

} // namespace

FieldModel init_score_model(const FieldModelConfig& cfg, RngStream& rng) {
    FieldModel m = FieldModel::random_init(cfg, rng);
    m.skip() = -Mat::Identity(cfg.dim, cfg.dim);
    return m;
}

std::vector<TrainPoint> train_score_fresh(FieldModel& m, const AnalyticMixture& target,
                                          const NoiseSchedule& sched, const TrainConfig& cfg,
                                          RngStream& rng) {
    return train_loop(m, cfg, [&](GradAccum& g) {
        const auto xs = fresh_batch(target, cfg.batch, rng);
        return dsm_loss(m, xs, sched, rng, &g);
    });
}

std::vector<TrainPoint> train_flow_fresh(FieldModel& m, const AnalyticMixture& target,
                                         const TrainConfig& cfg, RngStream& rng) {
    return train_loop(m, cfg, [&](GradAccum& g) {
        const auto xs = fresh_batch(target, cfg.batch, rng);
        return rf_loss(m, xs, rng, &g);
    });
}

std::vector<TrainPoint> train_score_dataset(FieldModel& m, std::span<const Vec> data,
                                            const NoiseSchedule& sched, const TrainConfig& cfg,
                                            RngStream& rng) {
    if (data.empty()) throw Error("finetune_pipelines", "train_score_dataset: empty dataset");
    return train_loop(m, cfg, [&](GradAccum& g) {
        const auto xs = dataset_batch(data, cfg.batch, rng);
        return dsm_loss(m, xs, sched, rng, &g);
    });
}

std::vector<TrainPoint> train_flow_dataset(FieldModel& m, std::span<const Vec> data,
                                           const TrainConfig& cfg, RngStream& rng) {
    if (data.empty()) throw Error("finetune_pipelines", "train_flow_dataset: empty dataset");
    return train_loop(m, cfg, [&](GradAccum& g) {
        const auto xs = dataset_batch(data, cfg.batch, rng);
        return rf_loss(m, xs, rng, &g);
    });
}

namespace {

long steps_for_epochs(double epochs, long dataset_size, int batch) {
    const double per_epoch = static_cast<double>(dataset_size) / batch;
    return std::max<long>(1, static_cast<long>(std::llround(epochs * per_epoch)));
}

struct AcceptedSet {
    std::vector<Vec> latents;
    std::vector<Vec> finals;
    std::vector<long> per_round;
};

// Shared GRAFT/P-GRAFT sampling loop: draw from the frozen reference each
// round, filter with the rule on final-sample rewards, accumulate.
AcceptedSet collect_accepted(const FieldModel& reference, const NoiseSchedule& sched,
                             const RewardFn& reward, const AcceptanceRule& rule,
                             int n_intermediate, const PipelineConfig& cfg, std::uint64_t seed) {
    AcceptedSet acc;
    const int m = cfg.samples_per_round;
    for (int round = 0; round < cfg.rounds; ++round) {
        RewardedBatch batch;
        batch.finals.assign(static_cast<std::size_t>(m), Vec());
        batch.latents.assign(static_cast<std::size_t>(m), Vec());
        parallel_for(
            m,
            [&](std::int64_t i) {
                RngStream rng = substream(seed, "pipeline-sample",
                                          static_cast<std::uint64_t>(round) * 0x10000000ULL +
                                              static_cast<std::uint64_t>(i));
                PathSample ps = sample_endpoints(reference, sched, rng, n_intermediate);
                batch.finals[static_cast<std::size_t>(i)] = std::move(ps.final);
                batch.latents[static_cast<std::size_t>(i)] = std::move(ps.latent);
            },
            cfg.threads);
        batch.rewards.resize(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i)
            batch.rewards[static_cast<std::size_t>(i)] =
                reward(batch.finals[static_cast<std::size_t>(i)]);
        RngStream accept_rng = substream(seed, "pipeline-accept", static_cast<std::uint64_t>(round));
        grs_accept(batch, rule, accept_rng);
        long kept = 0;
        for (int i = 0; i < m; ++i) {
            if (!batch.accepted[static_cast<std::size_t>(i)]) continue;
            acc.latents.push_back(batch.latents[static_cast<std::size_t>(i)]);
            acc.finals.push_back(batch.finals[static_cast<std::size_t>(i)]);
            ++kept;
        }
        acc.per_round.push_back(kept);
    }
    return acc;
}

} // namespace

FinetuneResult run_graft(const FieldModel& reference, const NoiseSchedule& sched,
                         const RewardFn& reward, const AcceptanceRule& rule,
                         const PipelineConfig& cfg, std::uint64_t seed) {
    AcceptedSet acc = collect_accepted(reference, sched, reward, rule, 0, cfg, seed);
    if (acc.finals.empty())
        throw Error("finetune_pipelines", "run_graft: empty accepted set after all rounds");
    FinetuneResult res{reference, std::move(acc.per_round),
                       static_cast<long>(acc.finals.size()), {}};
    TrainConfig tc;
    tc.steps = steps_for_epochs(cfg.epochs, res.dataset_size, cfg.batch);
    tc.batch = cfg.batch;
    tc.lr = cfg.lr;
    RngStream train_rng = substream(seed, "graft-train");
    res.train_log = train_score_dataset(res.model, acc.finals, sched, tc, train_rng);
    return res;
}

FinetuneResult run_pgraft_train(const FieldModel& reference, const NoiseSchedule& sched,
                                const RewardFn& reward, const AcceptanceRule& rule,
                                int n_intermediate, const PipelineConfig& cfg,
                                std::uint64_t seed) {
    const int n_steps = sched.n_steps();
    if (n_intermediate < 0 || n_intermediate > n_steps)
        throw Error("finetune_pipelines", "run_pgraft_train: intermediate step out of range");
    AcceptedSet acc = collect_accepted(reference, sched, reward, rule, n_intermediate, cfg, seed);
    if (acc.latents.empty())
        throw Error("finetune_pipelines", "run_pgraft_train: empty accepted set after all rounds");
    const NoiseSchedule recal = recalibrate_schedule(sched, n_intermediate);

    FinetuneResult res{reference, std::move(acc.per_round),
                       static_cast<long>(acc.latents.size()), {}};
    TrainConfig tc;
    tc.steps = steps_for_epochs(cfg.epochs, res.dataset_size, cfg.batch);
    tc.batch = cfg.batch;
    tc.lr = cfg.lr;
    RngStream rng = substream(seed, "pgraft-train");
    const int t_lo = std::max(1, n_intermediate);
    res.train_log = train_loop(res.model, tc, [&](GradAccum& g) {
        g.zero();
        GradAccum local(res.model);
        double total = 0.0;
        for (int b = 0; b < tc.batch; ++b) {
            const auto pick = static_cast<std::size_t>(
                rng.uniform_int(static_cast<std::int64_t>(acc.latents.size())));
            const int t = t_lo + static_cast<int>(rng.uniform_int(n_steps - t_lo + 1));
            const TrainingPair pair =
                pgraft_training_pair(acc.latents[pick], acc.finals[pick], t, sched, recal, rng);
            total += pgraft_eps_term(res.model, pair, t, sched, &local);
        }
        g.add_scaled(local, 1.0 / tc.batch);
        return total / tc.batch;
    });
    return res;
}

Vec pgraft_sample(const FieldModel& partial, const FieldModel& reference, int n_intermediate,
                  const NoiseSchedule& sched, RngStream& rng) {
    const int n_steps = sched.n_steps();
    if (n_intermediate < 0 || n_intermediate > n_steps)
        throw Error("finetune_pipelines", "pgraft_sample: intermediate step out of range");
    Vec x = rng.normal_vec(partial.dim());
    x = denoise_range(partial, sched, std::move(x), n_steps, n_intermediate, rng);
    return denoise_range(reference, sched, std::move(x), n_intermediate, 0, rng);
}

std::vector<Vec> sample_finals(const FieldModel& score, const NoiseSchedule& sched, int count,
                               std::uint64_t seed, std::string_view stream_name, int threads) {
    std::vector<Vec> out(static_cast<std::size_t>(count));
    parallel_for(
        count,
        [&](std::int64_t i) {
            RngStream rng = substream(seed, stream_name, static_cast<std::uint64_t>(i));
            out[static_cast<std::size_t>(i)] =
                sample_endpoints(score, sched, rng, 0).final;
        },
        threads);
    return out;
}

std::vector<Vec> sample_pgraft_finals(const FieldModel& partial, const FieldModel& reference,
                                      int n_intermediate, const NoiseSchedule& sched, int count,
                                      std::uint64_t seed, std::string_view stream_name,
                                      int threads) {
    std::vector<Vec> out(static_cast<std::size_t>(count));
    parallel_for(
        count,
        [&](std::int64_t i) {
            RngStream rng = substream(seed, stream_name, static_cast<std::uint64_t>(i));
            out[static_cast<std::size_t>(i)] =
                pgraft_sample(partial, reference, n_intermediate, sched, rng);
        },
        threads);
    return out;
}

double RewardStats::se() const { return n > 0 ? sd / std::sqrt(static_cast<double>(n)) : 0.0; }

RewardStats reward_stats(std::span<const double> rewards) {
    if (rewards.empty()) throw Error("finetune_pipelines", "reward_stats: empty");
    RewardStats s;
    s.n = static_cast<long>(rewards.size());
    double sum = 0.0;
    for (double r : rewards) sum += r;
    s.mean = sum / static_cast<double>(s.n);
    double var = 0.0;
    for (double r : rewards) var += (r - s.mean) * (r - s.mean);
    s.sd = s.n > 1 ? std::sqrt(var / static_cast<double>(s.n - 1)) : 0.0;
    std::vector<double> sorted(rewards.begin(), rewards.end());
    std::sort(sorted.begin(), sorted.end());
    const auto q = [&](double f) {
        const auto idx = static_cast<std::size_t>(f * static_cast<double>(sorted.size() - 1));
        return sorted[idx];
    };
    s.q25 = q(0.25);
    s.q50 = q(0.50);
    s.q75 = q(0.75);
    return s;
}

std::vector<double> apply_reward(const RewardFn& reward, std::span<const Vec> samples) {
    std::vector<double> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = reward(samples[i]);
    return out;
}

double pooled_se(const RewardStats& a, const RewardStats& b) {
    return std::sqrt(a.se() * a.se() + b.se() * b.se());
}

} // namespace tdm
