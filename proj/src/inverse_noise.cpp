#include "tdm/inverse_noise.hpp"

#include "tdm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tdm {

std::vector<Vec> build_inverse_dataset(const VelocityField& v, int dim, double eta,
                                       std::span<const Vec> data, const InvertOptions& opts) {
    if (data.empty()) throw Error("inverse_noise", "build_inverse_dataset: empty dataset");
    if (!opts.skip_lipschitz_gate) {
        RngStream gate_rng = substream(opts.seed, "lipschitz-gate");
        const double lhat = lipschitz_estimate(v, dim, gate_rng);
        if (eta * lhat >= kLipschitzGate)
            throw Error("inverse_noise", "build_inverse_dataset: eta * L_hat = " +
                                             std::to_string(eta * lhat) + " exceeds gate");
    }
    std::vector<Vec> out(data.size());
    parallel_for(
        static_cast<std::int64_t>(data.size()),
        [&](std::int64_t i) {
            Vec x = data[static_cast<std::size_t>(i)];
            if (opts.perturb_sigma > 0.0) {
                RngStream jitter = substream(opts.seed, "invert-jitter",
                                             static_cast<std::uint64_t>(i));
                x += opts.perturb_sigma * jitter.normal_vec(dim);
            }
            try {
                out[static_cast<std::size_t>(i)] =
                    bwd_euler(v, eta, std::move(x), opts.n_fixed_point);
            } catch (const ContractionError& e) {
                throw ContractionError("inverse_noise", std::string(e.what()), e.step_index, i);
            }
        },
        opts.threads);
    return out;
}

Vec corrected_sample(const VelocityField& corrector, const VelocityField& base,
                     double eta_corrector, double eta_base, int dim, RngStream& rng) {
    Vec z = rng.normal_vec(dim);
    z = fwd_euler(corrector, eta_corrector, std::move(z));
    return fwd_euler(base, eta_base, std::move(z));
}

double gaussian_kl(double mu1, double var1, double mu2, double var2) {
    return 0.5 * (std::log(var2 / var1) + (var1 + (mu1 - mu2) * (mu1 - mu2)) / var2 - 1.0);
}

double gaussian_tv(double mu1, double var1, double mu2, double var2) {
    const double s1 = std::sqrt(var1);
    const double s2 = std::sqrt(var2);
    const double lo = std::min(mu1 - 12.0 * s1, mu2 - 12.0 * s2);
    const double hi = std::max(mu1 + 12.0 * s1, mu2 + 12.0 * s2);
    const int n = 40000;   // Simpson needs even interval count
    const double h = (hi - lo) / n;
    auto f = [&](double x) {
        const double a = std::exp(-(x - mu1) * (x - mu1) / (2.0 * var1)) /
                         std::sqrt(2.0 * std::numbers::pi * var1);
        const double b = std::exp(-(x - mu2) * (x - mu2) / (2.0 * var2)) /
                         std::sqrt(2.0 * std::numbers::pi * var2);
        return std::abs(a - b);
    };
    double acc = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) acc += f(lo + h * i) * (i % 2 == 1 ? 4.0 : 2.0);
    return 0.5 * acc * h / 3.0;
}

DpiReport dpi_identity_check(const LinearFlowSpec& flow, double data_mean, double data_var) {
    if (data_var <= 0.0) throw Error("inverse_noise", "dpi_identity_check: variance must be positive");
    const int n = static_cast<int>(std::floor(1.0 / flow.eta));
    // exact discrete forward map is x -> c x
    double c = 1.0;
    for (int i = 0; i < n; ++i) c *= 1.0 + flow.eta * flow.slope;
    DpiReport r;
    r.contraction = c;
    // p1 = N(0, c^2); p1_rev = N(mu/c, var/c^2)
    r.kl_noise_side = gaussian_kl(0.0, 1.0, data_mean / c, data_var / (c * c));
    r.kl_data_side = gaussian_kl(0.0, c * c, data_mean, data_var);
    r.kl_gap = std::abs(r.kl_noise_side - r.kl_data_side);
    r.tv_noise_side = gaussian_tv(0.0, 1.0, data_mean / c, data_var / (c * c));
    r.tv_data_side = gaussian_tv(0.0, c * c, data_mean, data_var);
    r.tv_gap = std::abs(r.tv_noise_side - r.tv_data_side);
    return r;
}

Theorem3Report theorem3_identity_check(double mu, double var, int grid_points, double cutoff) {
    if (cutoff <= 0.0) throw Error("inverse_noise", "theorem3: grid must not touch t = 1");
    if (grid_points < 2) throw Error("inverse_noise", "theorem3: need at least two grid points");
    const double hi = 1.0 - cutoff;
    const double h = hi / (grid_points - 1);
    // interpolation marginal: x_t ~ N(t mu, t^2 var + (1-t)^2)
    auto integrand = [&](double t) {
        if (t <= 0.0) return 0.0;
        const double st2 = t * t * var + (1.0 - t) * (1.0 - t);
        const double gauss_coef = (2.0 * t - 1.0) / ((1.0 - t) * (1.0 - t) + t * t);
        // v_X(x) = x/t + ((1-t)/t) * (-(x - t mu) / st2)  =>  affine A x + B
        const double a = 1.0 / t - (1.0 - t) / (t * st2) - gauss_coef;
        const double b = (1.0 - t) * mu / st2;
        const double mean_x = t * mu;
        const double second = a * a * st2 + (a * mean_x + b) * (a * mean_x + b);
        return t / (1.0 - t) * second;
    };
    double rhs = 0.0;
    for (int i = 0; i < grid_points; ++i) {
        const double t = h * i;
        const double w = (i == 0 || i == grid_points - 1) ? 0.5 * h : h;
        rhs += w * integrand(t);
    }
    Theorem3Report rep;
    rep.lhs = gaussian_kl(mu, var, 0.0, 1.0);
    rep.rhs = rhs;
    rep.gap = std::abs(rep.lhs - rep.rhs);
    return rep;
}

double wasserstein2_sq_1d(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw Error("inverse_noise", "wasserstein2: empty sample set");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.size() == b.size()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
        return acc / static_cast<double>(a.size());
    }
    // integrate (Qa - Qb)^2 over the merged quantile grid
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t ia = 0, ib = 0;
    double u = 0.0, acc = 0.0;
    while (ia < a.size() && ib < b.size()) {
        const double next = std::min((ia + 1) / na, (ib + 1) / nb);
        const double d = a[ia] - b[ib];
        acc += d * d * (next - u);
        u = next;
        if ((ia + 1) / na <= next + 1e-15) ++ia;
        if ((ib + 1) / nb <= next + 1e-15) ++ib;
    }
    return acc;
}

namespace {

double mmd_biased(std::span<const Vec> a, std::span<const Vec> b, double sigma) {
    const double gamma = 1.0 / (2.0 * sigma * sigma);
    auto k = [&](const Vec& x, const Vec& y) { return std::exp(-gamma * (x - y).squaredNorm()); };
    double kaa = 0.0, kbb = 0.0, kab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j) kaa += k(a[i], a[j]);
    for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) kbb += k(b[i], b[j]);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) kab += k(a[i], b[j]);
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double m2 = kaa / (na * na) - 2.0 * kab / (na * nb) + kbb / (nb * nb);
    return std::sqrt(std::max(0.0, m2));
}

double median_heuristic(std::span<const Vec> a, std::span<const Vec> b) {
    std::vector<const Vec*> pool;
    for (std::size_t i = 0; i < std::min<std::size_t>(a.size(), 256); ++i) pool.push_back(&a[i]);
    for (std::size_t i = 0; i < std::min<std::size_t>(b.size(), 256); ++i) pool.push_back(&b[i]);
    std::vector<double> d;
    for (std::size_t i = 0; i < pool.size(); ++i)
        for (std::size_t j = i + 1; j < pool.size(); ++j)
            d.push_back((*pool[i] - *pool[j]).norm());
    if (d.empty()) return 1.0;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    const double med = d[d.size() / 2];
    return med > 0.0 ? med : 1.0;
}

} // namespace

double distribution_distance(std::span<const Vec> a, std::span<const Vec> b, DistanceMetric metric,
                             std::uint64_t seed, int n_projections, double mmd_sigma) {
    if (a.empty() || b.empty()) throw Error("inverse_noise", "distribution_distance: empty set");
    if (metric == DistanceMetric::GaussianMmd) {
        const double sigma = mmd_sigma > 0.0 ? mmd_sigma : median_heuristic(a, b);
        return mmd_biased(a, b, sigma);
    }
    const int dim = static_cast<int>(a[0].size());
    if (dim == 1) {
        std::vector<double> pa(a.size()), pb(b.size());
        for (std::size_t i = 0; i < a.size(); ++i) pa[i] = a[i][0];
        for (std::size_t i = 0; i < b.size(); ++i) pb[i] = b[i][0];
        return std::sqrt(wasserstein2_sq_1d(std::move(pa), std::move(pb)));
    }
    RngStream rng = substream(seed, "sliced-w2");
    double acc = 0.0;
    for (int p = 0; p < n_projections; ++p) {
        Vec dir = rng.normal_vec(dim);
        dir /= dir.norm();
        std::vector<double> pa(a.size()), pb(b.size());
        for (std::size_t i = 0; i < a.size(); ++i) pa[i] = dir.dot(a[i]);
        for (std::size_t i = 0; i < b.size(); ++i) pb[i] = dir.dot(b[i]);
        acc += wasserstein2_sq_1d(std::move(pa), std::move(pb));
    }
    return std::sqrt(acc / n_projections);
}

} // namespace tdm
