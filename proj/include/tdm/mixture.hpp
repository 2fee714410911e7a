#pragma once

#include "tdm/common.hpp"
#include "tdm/rng.hpp"

#include <vector>

namespace tdm {

// Isotropic Gaussian mixture with closed-form density, score and OU-evolved
// marginals: under the forward process the component means shrink by e^{-t}
// and variances become e^{-2t} s_k^2 + 1 - e^{-2t}.
class AnalyticMixture {
public:
    AnalyticMixture(std::vector<Vec> means, std::vector<double> variances,
                    std::vector<double> weights);

    static AnalyticMixture standard_gaussian(int dim);

    int dim() const { return static_cast<int>(means_[0].size()); }
    int components() const { return static_cast<int>(means_.size()); }
    const std::vector<Vec>& means() const { return means_; }
    const std::vector<double>& variances() const { return variances_; }
    const std::vector<double>& weights() const { return weights_; }

    // evolved component parameters at OU time t >= 0
    Vec evolved_mean(int k, double t) const;
    double evolved_variance(int k, double t) const;

    double log_density(const Vec& x, double t = 0.0) const;
    Vec score(const Vec& x, double t = 0.0) const;   // grad log q_t
    Vec sample(double t, RngStream& rng) const;
    Vec sample(RngStream& rng) const { return sample(0.0, rng); }

    // population moments of q_t (per-coordinate covariance is isotropic blend)
    Vec mean(double t = 0.0) const;
    double second_moment(double t = 0.0) const;   // E ||X||^2

private:
    std::vector<Vec> means_;
    std::vector<double> variances_;
    std::vector<double> weights_;
};

// exact grad log q_t via responsibility-weighted component scores
Vec analytic_mixture_score(const AnalyticMixture& mix, const Vec& x, double t);

} // namespace tdm
