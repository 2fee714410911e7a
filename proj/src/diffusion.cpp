#include "tdm/diffusion.hpp"

#include <cmath>

namespace tdm {

OuMarginal ou_marginal(const Vec& x0, double t) {
    if (t < 0.0) throw Error("diffusion_engine", "ou_marginal: negative time");
    const double decay = std::exp(-t);
    return {decay * x0, std::sqrt(1.0 - decay * decay)};
}

double dsm_term(const FieldModel& m, const Vec& x0, double t, const Vec& z, GradAccum* grads) {
    const double decay = std::exp(-t);
    const double var = 1.0 - decay * decay;
    if (var <= 0.0) throw Error("diffusion_engine", "dsm_term: t too small");
    const Vec x_t = decay * x0 + std::sqrt(var) * z;
    const Vec target = z / std::sqrt(var);
    if (grads == nullptr) {
        const Vec res = target + m.eval(x_t, t);
        return res.squaredNorm();
    }
    Tape tape;
    const Vec res = target + tape.forward(m, x_t, t);
    tape.backward(m, 2.0 * res, *grads);
    return res.squaredNorm();
}

double dsm_loss(const FieldModel& m, std::span<const Vec> batch, const NoiseSchedule& sched,
                RngStream& rng, GradAccum* grads) {
    if (batch.empty()) throw Error("diffusion_engine", "dsm_loss: empty batch");
    if (grads != nullptr) grads->zero();
    GradAccum local(m);
    double total = 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const Vec& x0 : batch) {
        const int n = 1 + static_cast<int>(rng.uniform_int(sched.n_steps()));
        const double t = std::max(sched.time_of(n), kMinLossTime);
        const Vec z = rng.normal_vec(static_cast<int>(x0.size()));
        total += dsm_term(m, x0, t, z, grads ? &local : nullptr);
    }
    if (grads != nullptr) grads->add_scaled(local, inv_b);
    return total * inv_b;
}

Vec ancestral_step(const FieldModel& score, const NoiseSchedule& sched, const Vec& x, int n,
                   RngStream& rng) {
    const double beta = sched.beta(n - 1);
    if (beta == 0.0) return x;   // recalibrated no-op step
    const double abar_prev = sched.alpha_bar(n - 1);
    const double abar = sched.alpha_bar(n);
    const double t = sched.time_of(n);
    Vec mean = (x + beta * score.eval(x, t)) / std::sqrt(1.0 - beta);
    const double var = beta * (1.0 - abar_prev) / (1.0 - abar);
    if (var > 0.0) mean += std::sqrt(var) * rng.normal_vec(static_cast<int>(x.size()));
    return mean;
}

Vec denoise_range(const FieldModel& score, const NoiseSchedule& sched, Vec x, int n_from,
                  int n_to, RngStream& rng) {
    if (n_from < n_to || n_to < 0 || n_from > sched.n_steps())
        throw Error("diffusion_engine", "denoise_range: bad step range");
    for (int n = n_from; n > n_to; --n) x = ancestral_step(score, sched, x, n, rng);
    return x;
}

Trajectory sample_trajectory(const FieldModel& score, const NoiseSchedule& sched, RngStream& rng,
                             std::optional<int> snapshot_index) {
    const int n_steps = sched.n_steps();
    if (snapshot_index && (*snapshot_index < 0 || *snapshot_index > n_steps))
        throw Error("diffusion_engine", "sample_trajectory: snapshot index out of range");
    Trajectory traj;
    traj.states.assign(static_cast<std::size_t>(n_steps) + 1, Vec());
    traj.step_indices.resize(static_cast<std::size_t>(n_steps) + 1);
    for (int n = 0; n <= n_steps; ++n) traj.step_indices[static_cast<std::size_t>(n)] = n;
    Vec x = rng.normal_vec(score.dim());
    traj.states[static_cast<std::size_t>(n_steps)] = x;
    for (int n = n_steps; n > 0; --n) {
        x = ancestral_step(score, sched, x, n, rng);
        traj.states[static_cast<std::size_t>(n - 1)] = x;
    }
    if (snapshot_index) {
        traj.snapshot_index = snapshot_index;
        traj.snapshot = traj.states[static_cast<std::size_t>(*snapshot_index)];
    }
    return traj;
}

PathSample sample_endpoints(const FieldModel& score, const NoiseSchedule& sched, RngStream& rng,
                            int n_latent) {
    const int n_steps = sched.n_steps();
    if (n_latent < 0 || n_latent > n_steps)
        throw Error("diffusion_engine", "sample_endpoints: latent index out of range");
    Vec x = rng.normal_vec(score.dim());
    x = denoise_range(score, sched, std::move(x), n_steps, n_latent, rng);
    PathSample out;
    out.latent = x;
    out.final = denoise_range(score, sched, std::move(x), n_latent, 0, rng);
    return out;
}

TrainingPair pgraft_training_pair_at(const Vec& x_latent, const Vec& x0, int t,
                                     const NoiseSchedule& original,
                                     const NoiseSchedule& recalibrated, const Vec& eps) {
    if (t > original.n_steps())
        throw Error("diffusion_engine", "pgraft_training_pair: t out of range");
    // recalibrated betas are zero exactly below the snapshot step
    if (t < recalibrated.n_steps() && recalibrated.beta(t) == 0.0)
        throw Error("diffusion_engine", "pgraft_training_pair: t below the snapshot step");
    const double abar_new = recalibrated.alpha_bar(t);
    const double abar_old = original.alpha_bar(t);
    if (abar_old >= 1.0)
        throw Error("diffusion_engine", "pgraft_training_pair: t must be positive");
    TrainingPair pair;
    pair.x_t = std::sqrt(abar_new) * x_latent + std::sqrt(1.0 - abar_new) * eps;
    pair.eps_target = (pair.x_t - std::sqrt(abar_old) * x0) / std::sqrt(1.0 - abar_old);
    return pair;
}

TrainingPair pgraft_training_pair(const Vec& x_latent, const Vec& x0, int t,
                                  const NoiseSchedule& original, const NoiseSchedule& recalibrated,
                                  RngStream& rng) {
    return pgraft_training_pair_at(x_latent, x0, t, original, recalibrated,
                                   rng.normal_vec(static_cast<int>(x_latent.size())));
}

double pgraft_eps_term(const FieldModel& m, const TrainingPair& pair, int t,
                       const NoiseSchedule& original, GradAccum* grads) {
    const double sigma = original.sigma(t);
    const double time = std::max(original.time_of(t), kMinLossTime);
    if (grads == nullptr) {
        const Vec res = -sigma * m.eval(pair.x_t, time) - pair.eps_target;
        return res.squaredNorm();
    }
    Tape tape;
    const Vec res = -sigma * tape.forward(m, pair.x_t, time) - pair.eps_target;
    tape.backward(m, -2.0 * sigma * res, *grads);
    return res.squaredNorm();
}

} // namespace tdm
