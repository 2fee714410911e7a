#pragma once

#include "tdm/field_model.hpp"
#include "tdm/rng.hpp"
#include "tdm/schedule.hpp"

#include <optional>
#include <span>
#include <vector>

namespace tdm {

// losses never see times below this; the score-matching residual diverges at 0
inline constexpr double kMinLossTime = 1e-3;

// OU forward marginal: X_t = e^{-t} x0 + sqrt(1 - e^{-2t}) Z
struct OuMarginal {
    Vec mean;
    double std;
};
OuMarginal ou_marginal(const Vec& x0, double t);

// One score-matching term at fixed (t, z):
//   || z / sqrt(1 - e^{-2t}) + s_theta(x_t, t) ||^2  with x_t = e^{-t} x0 + sqrt(1-e^{-2t}) z.
// Gradient w.r.t. parameters accumulates into *grads when given.
double dsm_term(const FieldModel& m, const Vec& x0, double t, const Vec& z, GradAccum* grads);

// Monte-Carlo denoising score matching loss over a batch: discrete step n
// uniform in {1..N}, t = max(t_n, kMinLossTime), fresh z per sample.
double dsm_loss(const FieldModel& m, std::span<const Vec> batch, const NoiseSchedule& sched,
                RngStream& rng, GradAccum* grads = nullptr);

// Recorded denoising path x_N .. x_0 plus an optional latent snapshot.
struct Trajectory {
    std::vector<Vec> states;            // states[n] = x_n, n = 0..N
    std::vector<int> step_indices;      // 0..N
    std::optional<int> snapshot_index;
    Vec snapshot;

    int n_steps() const { return static_cast<int>(states.size()) - 1; }
    const Vec& final_sample() const { return states.front(); }
};

// One DDPM ancestral update x_n -> x_{n-1} with posterior variance.
Vec ancestral_step(const FieldModel& score, const NoiseSchedule& sched, const Vec& x, int n,
                   RngStream& rng);

// Run the reverse chain from state index n_from down to n_to (n_from > n_to).
Vec denoise_range(const FieldModel& score, const NoiseSchedule& sched, Vec x, int n_from,
                  int n_to, RngStream& rng);

// Full trajectory from a fresh Gaussian start, recording every state.
Trajectory sample_trajectory(const FieldModel& score, const NoiseSchedule& sched, RngStream& rng,
                             std::optional<int> snapshot_index = std::nullopt);

// Endpoints only (latent at n_latent plus final state); what pipelines persist.
struct PathSample {
    Vec latent;
    Vec final;
};
PathSample sample_endpoints(const FieldModel& score, const NoiseSchedule& sched, RngStream& rng,
                            int n_latent);

// Training pair for partial fine-tuning: x_t from the recalibrated noising of
// the stored latent, and the noise target expressed against the original
// cumulative products so a standard denoiser stays consistent:
//   x_t  = sqrt(abar'_t) x_latent + sqrt(1 - abar'_t) eps
//   eps' = (x_t - sqrt(abar_t) x0) / sqrt(1 - abar_t)
struct TrainingPair {
    Vec x_t;
    Vec eps_target;
};
TrainingPair pgraft_training_pair_at(const Vec& x_latent, const Vec& x0, int t,
                                     const NoiseSchedule& original,
                                     const NoiseSchedule& recalibrated, const Vec& eps);
TrainingPair pgraft_training_pair(const Vec& x_latent, const Vec& x0, int t,
                                  const NoiseSchedule& original, const NoiseSchedule& recalibrated,
                                  RngStream& rng);

// Epsilon-prediction loss for the partial model through its score view
// (eps_hat = -sigma_t * s_theta):  || -sigma_t s_theta(x_t, t_n) - eps' ||^2.
double pgraft_eps_term(const FieldModel& m, const TrainingPair& pair, int t,
                       const NoiseSchedule& original, GradAccum* grads);

} // namespace tdm
