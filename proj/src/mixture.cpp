#include "tdm/mixture.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace tdm {

AnalyticMixture::AnalyticMixture(std::vector<Vec> means, std::vector<double> variances,
                                 std::vector<double> weights)
    : means_(std::move(means)), variances_(std::move(variances)), weights_(std::move(weights)) {
    if (means_.empty() || means_.size() != variances_.size() || means_.size() != weights_.size())
        throw Error("diagnostics", "mixture: component lists must be nonempty and equal length");
    double wsum = 0.0;
    for (double w : weights_) {
        if (w < 0.0) throw Error("diagnostics", "mixture: negative weight");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-12) throw Error("diagnostics", "mixture: weights must sum to 1");
    for (double v : variances_)
        if (v <= 0.0) throw Error("diagnostics", "mixture: variances must be positive");
    for (const Vec& m : means_)
        if (m.size() != means_[0].size()) throw Error("diagnostics", "mixture: mean dim mismatch");
}

AnalyticMixture AnalyticMixture::standard_gaussian(int dim) {
    return AnalyticMixture({Vec::Zero(dim)}, {1.0}, {1.0});
}

Vec AnalyticMixture::evolved_mean(int k, double t) const {
    return std::exp(-t) * means_[static_cast<std::size_t>(k)];
}

double AnalyticMixture::evolved_variance(int k, double t) const {
    const double d2 = std::exp(-2.0 * t);
    return 1.0 + d2 * (variances_[static_cast<std::size_t>(k)] - 1.0);
}

namespace {
// log of w_k * N(x; mu_k(t), s_k^2(t) I)
double log_comp(const AnalyticMixture& mix, const Vec& x, double t, int k) {
    const Vec mu = mix.evolved_mean(k, t);
    const double var = mix.evolved_variance(k, t);
    const double d = static_cast<double>(x.size());
    const double quad = (x - mu).squaredNorm() / (2.0 * var);
    return std::log(mix.weights()[static_cast<std::size_t>(k)]) -
           0.5 * d * std::log(2.0 * std::numbers::pi * var) - quad;
}
} // namespace

double AnalyticMixture::log_density(const Vec& x, double t) const {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> lc(static_cast<std::size_t>(components()));
    for (int k = 0; k < components(); ++k) {
        lc[static_cast<std::size_t>(k)] = log_comp(*this, x, t, k);
        best = std::max(best, lc[static_cast<std::size_t>(k)]);
    }
    double acc = 0.0;
    for (double v : lc) acc += std::exp(v - best);
    return best + std::log(acc);
}

Vec AnalyticMixture::score(const Vec& x, double t) const {
    const int kc = components();
    std::vector<double> lc(static_cast<std::size_t>(kc));
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < kc; ++k) {
        lc[static_cast<std::size_t>(k)] = log_comp(*this, x, t, k);
        best = std::max(best, lc[static_cast<std::size_t>(k)]);
    }
    double z = 0.0;
    for (double v : lc) z += std::exp(v - best);
    Vec s = Vec::Zero(x.size());
    for (int k = 0; k < kc; ++k) {
        const double resp = std::exp(lc[static_cast<std::size_t>(k)] - best) / z;
        s += resp * (evolved_mean(k, t) - x) / evolved_variance(k, t);
    }
    return s;
}

Vec AnalyticMixture::sample(double t, RngStream& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    int pick = components() - 1;
    for (int k = 0; k < components(); ++k) {
        acc += weights_[static_cast<std::size_t>(k)];
        if (u < acc) {
            pick = k;
            break;
        }
    }
    return evolved_mean(pick, t) + std::sqrt(evolved_variance(pick, t)) * rng.normal_vec(dim());
}

Vec AnalyticMixture::mean(double t) const {
    Vec m = Vec::Zero(dim());
    for (int k = 0; k < components(); ++k)
        m += weights_[static_cast<std::size_t>(k)] * evolved_mean(k, t);
    return m;
}

double AnalyticMixture::second_moment(double t) const {
    double s = 0.0;
    for (int k = 0; k < components(); ++k) {
        const double w = weights_[static_cast<std::size_t>(k)];
        s += w * (evolved_mean(k, t).squaredNorm() + dim() * evolved_variance(k, t));
    }
    return s;
}

Vec analytic_mixture_score(const AnalyticMixture& mix, const Vec& x, double t) {
    if (t < 0.0) throw Error("diagnostics", "analytic_mixture_score: negative time");
    return mix.score(x, t);
}

} // namespace tdm
