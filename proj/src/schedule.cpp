#include "tdm/schedule.hpp"

#include <cmath>

namespace tdm {

NoiseSchedule NoiseSchedule::linear(int n_steps, double beta_min, double beta_max) {
    if (n_steps <= 0) throw Error("diffusion_engine", "schedule needs at least one step");
    std::vector<double> betas(static_cast<std::size_t>(n_steps));
    for (int i = 0; i < n_steps; ++i) {
        const double f = n_steps == 1 ? 0.0 : static_cast<double>(i) / (n_steps - 1);
        betas[static_cast<std::size_t>(i)] = beta_min + (beta_max - beta_min) * f;
    }
    return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, bool allow_zero) {
    if (betas.empty()) throw Error("diffusion_engine", "schedule needs at least one step");
    NoiseSchedule s;
    s.abar_.assign(betas.size() + 1, 1.0);
    for (std::size_t i = 0; i < betas.size(); ++i) {
        const double b = betas[i];
        const bool ok = allow_zero ? (b >= 0.0 && b < 1.0) : (b > 0.0 && b < 1.0);
        if (!ok) throw Error("diffusion_engine", "betas must lie in (0,1)");
        s.abar_[i + 1] = s.abar_[i] * (1.0 - b);
    }
    s.betas_ = std::move(betas);
    return s;
}

double NoiseSchedule::time_of(int n) const {
    return -0.5 * std::log(alpha_bar(n));
}

double NoiseSchedule::sigma(int n) const {
    return std::sqrt(1.0 - alpha_bar(n));
}

NoiseSchedule recalibrate_schedule(const NoiseSchedule& s, int n_intermediate) {
    if (n_intermediate < 0 || n_intermediate > s.n_steps())
        throw Error("diffusion_engine", "recalibrate_schedule: intermediate step out of range");
    std::vector<double> nb = s.betas();
    for (int i = 0; i < n_intermediate; ++i) nb[static_cast<std::size_t>(i)] = 0.0;
    return NoiseSchedule::from_betas(std::move(nb), /*allow_zero=*/true);
}

} // namespace tdm
