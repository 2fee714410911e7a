#pragma once

#include "tdm/field_model.hpp"
#include "tdm/rng.hpp"

#include <functional>
#include <span>

namespace tdm {

// velocity field callable; t runs 0 (noise) to 1 (data)
using VelocityField = std::function<Vec(const Vec&, double)>;

inline VelocityField field_of(const FieldModel& m) {
    return [&m](const Vec& x, double t) { return m.eval(x, t); };
}

// Linear interpolation training target: x_t = t x + (1-t) z, v = x - z.
struct FlowTarget {
    Vec x_t;
    Vec velocity;
};
FlowTarget rf_train_target(const Vec& x, const Vec& z, double t);

// One velocity-regression term at fixed (x, z, t).
double rf_term(const FieldModel& m, const Vec& x, const Vec& z, double t, GradAccum* grads);

// Mean squared velocity regression over fresh (x, z, t) triples.
double rf_loss(const FieldModel& m, std::span<const Vec> batch, RngStream& rng,
               GradAccum* grads = nullptr);

// Explicit Euler: floor(1/eta) steps of x <- x + eta v(x, i eta).
Vec fwd_euler(const VelocityField& v, double eta, Vec x0);

// Implicit Euler inversion run for exactly n_fixed_point iterations per step,
// warm-started at the previous state. A residual growing over three
// consecutive iterations raises ContractionError with the step index.
// fp_residuals, when given, receives the per-iteration update norms of every
// Euler step.
Vec bwd_euler(const VelocityField& v, double eta, Vec x_data, int n_fixed_point,
              std::vector<std::vector<double>>* fp_residuals = nullptr);

// Exact velocity of the standard-Gaussian-to-standard-Gaussian flow:
// v(x, t) = x (2t - 1) / ((1-t)^2 + t^2).
Vec gauss_velocity(const Vec& x, double t);

// Empirical Lipschitz constant in x: max ratio over random probe pairs per
// time slice.
double lipschitz_estimate(const VelocityField& v, int dim, RngStream& rng, int time_slices = 11,
                          int probes_per_slice = 10000);

// Backward Euler only contracts when eta * L < 1; refuse above this.
inline constexpr double kLipschitzGate = 0.9;

} // namespace tdm
