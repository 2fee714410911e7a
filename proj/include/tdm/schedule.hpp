#pragma once

#include "tdm/common.hpp"

#include <vector>

namespace tdm {

// Discrete diffusion step parameters. State index n runs 0 (data) .. N (noise);
// the forward step x_n -> x_{n+1} uses betas[n], and alpha_bar[n] is the
// product of (1 - beta_j) for j < n, so alpha_bar[0] = 1.
class NoiseSchedule {
public:
    static NoiseSchedule linear(int n_steps, double beta_min, double beta_max);
    static NoiseSchedule from_betas(std::vector<double> betas, bool allow_zero = false);

    int n_steps() const { return static_cast<int>(betas_.size()); }
    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alpha_bar() const { return abar_; }
    double beta(int n) const { return betas_.at(static_cast<std::size_t>(n)); }
    double alpha_bar(int n) const { return abar_.at(static_cast<std::size_t>(n)); }

    // continuous OU time of state n: alpha_bar[n] = exp(-2 t_n)
    double time_of(int n) const;
    double horizon() const { return time_of(n_steps()); }

    // marginal std of x_n given x_0
    double sigma(int n) const;

private:
    NoiseSchedule() = default;
    std::vector<double> betas_;
    std::vector<double> abar_;   // size N + 1
};

// New betas are zero below n_intermediate and unchanged at or above it;
// cumulative products are recomputed.
NoiseSchedule recalibrate_schedule(const NoiseSchedule& s, int n_intermediate);

} // namespace tdm
