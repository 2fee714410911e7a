#pragma once

#include "tdm/diffusion.hpp"
#include "tdm/mixture.hpp"
#include "tdm/rejection.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace tdm {

struct McValue {
    double value;
    double se;
};

// E[Var(r(X_0) | X_{t_n})] estimated by partial denoising to n, then
// completing each state n_rollouts times.
struct CurvePoint {
    int step;
    double estimate;
    double se;
};
std::vector<CurvePoint> conditional_variance_curve(const FieldModel& score,
                                                   const NoiseSchedule& sched,
                                                   const RewardFn& reward,
                                                   std::span<const int> steps, int n_states,
                                                   int n_rollouts, std::uint64_t seed,
                                                   int threads = 0);

// Per-state rollout mean-reward histogram against the independence null
// Bin(n_rollouts, grand mean).
struct RolloutHistogram {
    std::vector<double> empirical;   // pmf over success counts 0..n_rollouts
    std::vector<double> binomial;    // null pmf at the grand mean
    double tv = 0.0;
    double grand_mean = 0.0;
};
RolloutHistogram rollout_histogram_from_counts(std::span<const int> counts, int n_rollouts);
RolloutHistogram rollout_histogram_test(const FieldModel& score, const NoiseSchedule& sched,
                                        const RewardFn& binary_reward, int step,
                                        int n_states, int n_rollouts, std::uint64_t seed,
                                        int threads = 0);

// Score energy H_s^t = integral over u in [s, t] of E_{q_u} || grad log q_u(X) + X ||^2,
// outer trapezoid (grid_per_unit points per unit time, lower limit clamped to
// kMinLossTime), inner Monte Carlo from the analytic evolved mixture.
McValue score_energy(const AnalyticMixture& mix, double s, double t, int mc_samples,
                     std::uint64_t seed, int threads = 0, int grid_per_unit = 256);

} // namespace tdm
