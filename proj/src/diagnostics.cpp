#include "tdm/diagnostics.hpp"

#include "tdm/parallel.hpp"

#include <cmath>

namespace tdm {

std::vector<CurvePoint> conditional_variance_curve(const FieldModel& score,
                                                   const NoiseSchedule& sched,
                                                   const RewardFn& reward,
                                                   std::span<const int> steps, int n_states,
                                                   int n_rollouts, std::uint64_t seed,
                                                   int threads) {
    if (n_rollouts < 2) throw Error("diagnostics", "conditional_variance_curve: need >= 2 rollouts");
    const int n_total = sched.n_steps();
    std::vector<CurvePoint> out;
    for (std::size_t si = 0; si < steps.size(); ++si) {
        const int n = steps[si];
        if (n < 0 || n > n_total)
            throw Error("diagnostics", "conditional_variance_curve: step out of range");
        std::vector<double> state_var(static_cast<std::size_t>(n_states), 0.0);
        parallel_for(
            n_states,
            [&](std::int64_t s) {
                RngStream lat_rng = substream(seed, "condvar-latent", si * 1000003ULL + s);
                Vec latent = lat_rng.normal_vec(score.dim());
                latent = denoise_range(score, sched, std::move(latent), n_total, n, lat_rng);
                double sum = 0.0, sum_sq = 0.0;
                for (int r = 0; r < n_rollouts; ++r) {
                    RngStream roll_rng = substream(
                        seed, "condvar-rollout",
                        (si * 1000003ULL + s) * 1009ULL + static_cast<std::uint64_t>(r));
                    const Vec x0 = denoise_range(score, sched, latent, n, 0, roll_rng);
                    const double rv = reward(x0);
                    sum += rv;
                    sum_sq += rv * rv;
                }
                const double mean = sum / n_rollouts;
                state_var[static_cast<std::size_t>(s)] =
                    std::max(0.0, (sum_sq - n_rollouts * mean * mean) / (n_rollouts - 1));
            },
            threads);
        double mean = 0.0;
        for (double v : state_var) mean += v;
        mean /= n_states;
        double var = 0.0;
        for (double v : state_var) var += (v - mean) * (v - mean);
        var = n_states > 1 ? var / (n_states - 1) : 0.0;
        out.push_back({n, mean, std::sqrt(var / n_states)});
    }
    return out;
}

RolloutHistogram rollout_histogram_from_counts(std::span<const int> counts, int n_rollouts) {
    if (counts.empty()) throw Error("diagnostics", "rollout histogram: no states");
    RolloutHistogram h;
    h.empirical.assign(static_cast<std::size_t>(n_rollouts) + 1, 0.0);
    double total = 0.0;
    for (int c : counts) {
        if (c < 0 || c > n_rollouts) throw Error("diagnostics", "rollout histogram: bad count");
        h.empirical[static_cast<std::size_t>(c)] += 1.0;
        total += c;
    }
    for (double& p : h.empirical) p /= static_cast<double>(counts.size());
    h.grand_mean = total / (static_cast<double>(counts.size()) * n_rollouts);

    // Bin(n_rollouts, grand mean) pmf via log factorials
    h.binomial.assign(static_cast<std::size_t>(n_rollouts) + 1, 0.0);
    const double p = h.grand_mean;
    for (int k = 0; k <= n_rollouts; ++k) {
        double lp;
        if (p <= 0.0) {
            lp = k == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
        } else if (p >= 1.0) {
            lp = k == n_rollouts ? 0.0 : -std::numeric_limits<double>::infinity();
        } else {
            lp = std::lgamma(n_rollouts + 1.0) - std::lgamma(k + 1.0) -
                 std::lgamma(n_rollouts - k + 1.0) + k * std::log(p) +
                 (n_rollouts - k) * std::log1p(-p);
        }
        h.binomial[static_cast<std::size_t>(k)] = std::exp(lp);
    }
    h.tv = 0.0;
    for (int k = 0; k <= n_rollouts; ++k)
        h.tv += std::abs(h.empirical[static_cast<std::size_t>(k)] -
                         h.binomial[static_cast<std::size_t>(k)]);
    h.tv *= 0.5;
    return h;
}

RolloutHistogram rollout_histogram_test(const FieldModel& score, const NoiseSchedule& sched,
                                        const RewardFn& binary_reward, int step, int n_states,
                                        int n_rollouts, std::uint64_t seed, int threads) {
    const int n_total = sched.n_steps();
    if (step < 0 || step > n_total)
        throw Error("diagnostics", "rollout_histogram_test: step out of range");
    std::vector<int> counts(static_cast<std::size_t>(n_states), 0);
    parallel_for(
        n_states,
        [&](std::int64_t s) {
            RngStream lat_rng = substream(seed, "binom-latent", static_cast<std::uint64_t>(s));
            Vec latent = lat_rng.normal_vec(score.dim());
            latent = denoise_range(score, sched, std::move(latent), n_total, step, lat_rng);
            int c = 0;
            for (int r = 0; r < n_rollouts; ++r) {
                RngStream roll_rng = substream(
                    seed, "binom-rollout",
                    static_cast<std::uint64_t>(s) * 1009ULL + static_cast<std::uint64_t>(r));
                const Vec x0 = denoise_range(score, sched, latent, step, 0, roll_rng);
                const double rv = binary_reward(x0);
                if (rv != 0.0 && rv != 1.0)
                    throw Error("diagnostics", "rollout_histogram_test: reward must be binary");
                if (rv == 1.0) ++c;
            }
            counts[static_cast<std::size_t>(s)] = c;
        },
        threads);
    return rollout_histogram_from_counts(counts, n_rollouts);
}

McValue score_energy(const AnalyticMixture& mix, double s, double t, int mc_samples,
                     std::uint64_t seed, int threads, int grid_per_unit) {
    if (s > t) throw Error("diagnostics", "score_energy: need s <= t");
    if (mc_samples < 2) throw Error("diagnostics", "score_energy: need mc_samples >= 2");
    if (s == t) return {0.0, 0.0};
    const double lo = std::max(s, kMinLossTime);
    if (lo >= t) return {0.0, 0.0};
    const int n_pts = std::max(3, static_cast<int>(std::ceil(grid_per_unit * (t - lo))) + 1);
    const double h = (t - lo) / (n_pts - 1);
    std::vector<double> g(static_cast<std::size_t>(n_pts), 0.0);
    std::vector<double> g_var(static_cast<std::size_t>(n_pts), 0.0);
    parallel_for(
        n_pts,
        [&](std::int64_t i) {
            const double u = lo + h * static_cast<double>(i);
            RngStream rng = substream(seed, "score-energy", static_cast<std::uint64_t>(i));
            double sum = 0.0, sum_sq = 0.0;
            for (int m = 0; m < mc_samples; ++m) {
                const Vec x = mix.sample(u, rng);
                const double v = (mix.score(x, u) + x).squaredNorm();
                sum += v;
                sum_sq += v * v;
            }
            const double mean = sum / mc_samples;
            g[static_cast<std::size_t>(i)] = mean;
            g_var[static_cast<std::size_t>(i)] =
                std::max(0.0, (sum_sq / mc_samples - mean * mean)) / mc_samples;
        },
        threads);
    double value = 0.0;
    double var = 0.0;
    for (int i = 0; i < n_pts; ++i) {
        const double w = (i == 0 || i == n_pts - 1) ? 0.5 * h : h;
        value += w * g[static_cast<std::size_t>(i)];
        var += w * w * g_var[static_cast<std::size_t>(i)];
    }
    return {value, std::sqrt(var)};
}

} // namespace tdm
