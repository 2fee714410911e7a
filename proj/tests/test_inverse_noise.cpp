#include "tdm/inverse_noise.hpp"
#include "tdm/parallel.hpp"

#include "toy_models.hpp"

#include <doctest.h>

#include <cmath>

using namespace tdm;

namespace {
const VelocityField kZeroField = [](const Vec& x, double) { return Vec(Vec::Zero(x.size())); };
}

TEST_CASE("inverting through the zero field returns the dataset unchanged") {
    RngStream rng(70, 0);
    std::vector<Vec> data;
    for (int i = 0; i < 20; ++i) data.push_back(rng.normal_vec(2));
    const auto inv = build_inverse_dataset(kZeroField, 2, 0.1, data, {});
    REQUIRE(inv.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) CHECK((inv[i] - data[i]).norm() == 0.0);
}

TEST_CASE("pushforward of the inverse dataset recovers the originals") {
    const FieldModel& m = test::trained_flow_1d();
    const VelocityField v = field_of(m);
    RngStream rng(71, 0);
    std::vector<Vec> data;
    for (int i = 0; i < 200; ++i) data.push_back(test::shifted_gauss_1d().sample(rng));
    InvertOptions opts;
    opts.seed = 71;
    const auto inv = build_inverse_dataset(v, 1, 0.02, data, opts);
    double worst = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        worst = std::max(worst, (fwd_euler(v, 0.02, inv[i]) - data[i]).norm());
    CHECK(worst < 1e-6);
}

TEST_CASE("inverse noise of the analytic gaussian flow is standard normal") {
    RngStream rng(72, 0);
    std::vector<Vec> data;
    const int n = 20000;
    for (int i = 0; i < n; ++i) data.push_back(rng.normal_vec(1));
    InvertOptions opts;
    opts.seed = 72;
    const auto inv = build_inverse_dataset(gauss_velocity, 1, 0.01, data, opts);
    double mean = 0.0, second = 0.0;
    for (const Vec& z : inv) {
        mean += z[0];
        second += z[0] * z[0];
    }
    mean /= n;
    second /= n;
    // the exact discrete map is linear, so inverse noise is Gaussian with
    // variance within discretization error of 1
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(second - 1.0) < 3.0 * std::sqrt(2.0 / n) + 0.05);
}

TEST_CASE("lipschitz gate refuses steep fields, override runs the guard instead") {
    const VelocityField steep = [](const Vec& x, double) { return Vec(30.0 * x); };
    RngStream rng(73, 0);
    std::vector<Vec> data = {Vec::Constant(1, 1.0)};
    InvertOptions opts;
    opts.seed = 73;
    CHECK_THROWS_AS((void)build_inverse_dataset(steep, 1, 0.1, data, opts), Error);

    opts.skip_lipschitz_gate = true;
    try {
        (void)build_inverse_dataset(steep, 1, 0.1, data, opts);
        FAIL("expected contraction failure");
    } catch (const ContractionError& e) {
        CHECK(e.sample_index == 0);
    }
}

TEST_CASE("zero corrector reduces the corrected sampler to the base sampler") {
    const FieldModel& m = test::trained_flow_1d();
    const VelocityField base = field_of(m);
    RngStream a(74, 0), b(74, 0);
    const Vec corrected = corrected_sample(kZeroField, base, 0.02, 0.02, 1, a);
    const Vec plain = fwd_euler(base, 0.02, b.normal_vec(1));
    CHECK((corrected - plain).norm() == 0.0);
}

TEST_CASE("gaussian kl and tv basics") {
    CHECK(gaussian_kl(0.0, 1.0, 0.0, 1.0) == 0.0);
    CHECK(gaussian_kl(3.0, 1.0, 0.0, 1.0) == doctest::Approx(4.5).epsilon(1e-12));
    // TV(N(0,1), N(1,1)) = 2 Phi(1/2) - 1 = erf(1 / (2 sqrt 2))
    const double expected = std::erf(1.0 / (2.0 * std::sqrt(2.0)));
    CHECK(gaussian_tv(0.0, 1.0, 1.0, 1.0) == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("divergence identity on the linear-gaussian testbed") {
    // zero slope: both sides are KL(N(0,1) || p_data)
    const DpiReport trivial = dpi_identity_check({0.0, 0.01}, 1.0, 2.0);
    CHECK(trivial.contraction == 1.0);
    CHECK(trivial.kl_noise_side == doctest::Approx(gaussian_kl(0.0, 1.0, 1.0, 2.0)).epsilon(1e-12));
    CHECK(trivial.kl_gap < 1e-14);

    // slope 1, eta 0.01, data N(0, 4): both sides ln(2/c) + c^2/8 - 1/2
    const DpiReport r = dpi_identity_check({1.0, 0.01}, 0.0, 4.0);
    const double c = std::pow(1.01, 100);
    CHECK(r.contraction == doctest::Approx(c).epsilon(1e-12));
    const double expected = std::log(2.0 / c) + c * c / 8.0 - 0.5;
    CHECK(r.kl_noise_side == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.kl_data_side == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.kl_gap < 1e-12);
    CHECK(r.tv_gap < 1e-6);

    // asymmetric case still matches across sides
    const DpiReport r2 = dpi_identity_check({0.7, 0.02}, 1.3, 2.5);
    CHECK(r2.kl_gap < 1e-12);
    CHECK(r2.tv_gap < 1e-6);
}

TEST_CASE("velocity-gap integral equals the gaussian kl") {
    const auto trivial = theorem3_identity_check(0.0, 1.0);
    CHECK(trivial.lhs == 0.0);
    CHECK(std::abs(trivial.rhs) < 1e-12);

    const auto wide = theorem3_identity_check(0.0, 4.0);
    CHECK(wide.lhs == doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))).epsilon(1e-12));
    CHECK(wide.gap < 1e-3);

    const auto shifted = theorem3_identity_check(3.0, 1.0);
    CHECK(shifted.lhs == doctest::Approx(4.5).epsilon(1e-12));
    CHECK(shifted.gap < 1e-3);

    CHECK_THROWS_AS((void)theorem3_identity_check(0.0, 1.0, 100, 0.0), Error);
}

TEST_CASE("1d squared wasserstein hand cases") {
    CHECK(wasserstein2_sq_1d({0.0, 1.0, 2.0}, {0.0, 1.0, 2.0}) == 0.0);
    CHECK(wasserstein2_sq_1d({0.0}, {1.0}) == doctest::Approx(1.0));
    CHECK(wasserstein2_sq_1d({0.0, 2.0}, {1.0}) == doctest::Approx(1.0));
}

TEST_CASE("distribution distances: identity, separation, permutation null") {
    RngStream rng(75, 0);
    std::vector<Vec> big_a, big_shifted;
    for (int i = 0; i < 10000; ++i) {
        big_a.push_back(rng.normal_vec(1));
        big_shifted.push_back(Vec::Constant(1, rng.normal() + 1.0));
    }
    CHECK(distribution_distance(big_a, big_a, DistanceMetric::SlicedW2) == 0.0);

    // W2(N(0,1), N(1,1)) = 1
    const double w2 = distribution_distance(big_a, big_shifted, DistanceMetric::SlicedW2);
    CHECK(std::abs(w2 - 1.0) < 0.1);

    std::vector<Vec> a, b;
    const int n = 1500;
    for (int i = 0; i < n; ++i) {
        a.push_back(rng.normal_vec(1));
        b.push_back(rng.normal_vec(1));
    }
    CHECK(distribution_distance(a, a, DistanceMetric::GaussianMmd) < 1e-9);

    // disjoint samples of the same law: the observed mmd sits inside the
    // permutation null
    const double observed = distribution_distance(a, b, DistanceMetric::GaussianMmd, 0, 64, 1.0);
    std::vector<Vec> pool = a;
    pool.insert(pool.end(), b.begin(), b.end());
    std::vector<double> null_stats;
    RngStream perm(75, 1);
    for (int rep = 0; rep < 20; ++rep) {
        for (std::size_t i = pool.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(perm.uniform_int(static_cast<std::int64_t>(i)));
            std::swap(pool[i - 1], pool[j]);
        }
        const std::span<const Vec> left(pool.data(), static_cast<std::size_t>(n));
        const std::span<const Vec> right(pool.data() + n, static_cast<std::size_t>(n));
        null_stats.push_back(distribution_distance(left, right, DistanceMetric::GaussianMmd, 0, 64, 1.0));
    }
    double mean = 0.0;
    for (double s : null_stats) mean += s;
    mean /= static_cast<double>(null_stats.size());
    double sd = 0.0;
    for (double s : null_stats) sd += (s - mean) * (s - mean);
    sd = std::sqrt(sd / static_cast<double>(null_stats.size() - 1));
    CHECK(std::abs(observed - mean) < 3.0 * sd + 1e-4);
}

// On the linear-Gaussian testbed the corrector's target is provably closer to
// N(0,1) than the data is, whenever the base flow is adequately trained.
TEST_CASE("corrector target is easier than the data target") {
    const double sigma = 2.0;
    for (double c : {1.5, 1.8, 2.0, 2.2}) {
        const double kl_corrector = gaussian_kl(0.0, sigma * sigma / (c * c), 0.0, 1.0);
        const double kl_data = gaussian_kl(0.0, sigma * sigma, 0.0, 1.0);
        CHECK(kl_corrector <= kl_data);
    }
}

// With an exact corrector the composed map reproduces the target exactly, so
// the corrected distance cannot exceed the base distance (here via the
// closed-form W2 between centered Gaussians, |sd_a - sd_b|).
TEST_CASE("exact corrector never increases the distance on the linear testbed") {
    const double sigma = 2.0;
    for (double c : {1.4, 1.9, 2.3}) {
        const double base_gap = std::abs(c - sigma);
        const double corrected_scale = (sigma / c) * c;
        const double corrected_gap = std::abs(corrected_scale - sigma);
        CHECK(corrected_gap <= base_gap + 1e-12);
        CHECK(corrected_gap < 1e-12);
    }
}
