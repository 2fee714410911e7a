#include "tdm/flow.hpp"

#include <algorithm>
#include <cmath>

namespace tdm {

FlowTarget rf_train_target(const Vec& x, const Vec& z, double t) {
    if (x.size() != z.size()) throw Error("flow_engine", "rf_train_target: dimension mismatch");
    if (t < 0.0 || t > 1.0) throw Error("flow_engine", "rf_train_target: t outside [0,1]");
    return {t * x + (1.0 - t) * z, x - z};
}

double rf_term(const FieldModel& m, const Vec& x, const Vec& z, double t, GradAccum* grads) {
    const FlowTarget tgt = rf_train_target(x, z, t);
    if (grads == nullptr) return (m.eval(tgt.x_t, t) - tgt.velocity).squaredNorm();
    Tape tape;
    const Vec res = tape.forward(m, tgt.x_t, t) - tgt.velocity;
    tape.backward(m, 2.0 * res, *grads);
    return res.squaredNorm();
}

double rf_loss(const FieldModel& m, std::span<const Vec> batch, RngStream& rng,
               GradAccum* grads) {
    if (batch.empty()) throw Error("flow_engine", "rf_loss: empty batch");
    if (grads != nullptr) grads->zero();
    GradAccum local(m);
    double total = 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const Vec& x : batch) {
        const Vec z = rng.normal_vec(static_cast<int>(x.size()));
        const double t = rng.uniform();
        total += rf_term(m, x, z, t, grads ? &local : nullptr);
    }
    if (grads != nullptr) grads->add_scaled(local, inv_b);
    return total * inv_b;
}

Vec fwd_euler(const VelocityField& v, double eta, Vec x) {
    if (eta <= 0.0) throw Error("flow_engine", "fwd_euler: step size must be positive");
    const int n = static_cast<int>(std::floor(1.0 / eta));
    for (int j = 0; j < n; ++j) x += eta * v(x, eta * j);
    return x;
}

Vec bwd_euler(const VelocityField& v, double eta, Vec x, int n_fixed_point,
              std::vector<std::vector<double>>* fp_residuals) {
    if (eta <= 0.0) throw Error("flow_engine", "bwd_euler: step size must be positive");
    if (n_fixed_point < 1) throw Error("flow_engine", "bwd_euler: need at least one iteration");
    const int n = static_cast<int>(std::floor(1.0 / eta));
    if (fp_residuals != nullptr) fp_residuals->clear();
    for (int j = 0; j < n; ++j) {
        // step j undoes the forward update taken at time eta * (n - 1 - j)
        const double t = eta * (n - 1 - j);
        const Vec prev = x;
        Vec it = prev;
        double last_res = -1.0;
        int growth = 0;
        std::vector<double> res_log;
        for (int k = 0; k < n_fixed_point; ++k) {
            Vec next = prev - eta * v(it, t);
            const double res = (next - it).norm();
            res_log.push_back(res);
            if (last_res >= 0.0 && res > last_res) {
                if (++growth >= 3)
                    throw ContractionError("flow_engine",
                                           "bwd_euler: fixed point diverging (eta*L >= 1?)", j);
            } else {
                growth = 0;
            }
            last_res = res;
            it = std::move(next);
        }
        if (fp_residuals != nullptr) fp_residuals->push_back(std::move(res_log));
        x = std::move(it);
    }
    return x;
}

Vec gauss_velocity(const Vec& x, double t) {
    const double denom = (1.0 - t) * (1.0 - t) + t * t;
    return x * ((2.0 * t - 1.0) / denom);
}

double lipschitz_estimate(const VelocityField& v, int dim, RngStream& rng, int time_slices,
                          int probes_per_slice) {
    double worst = 0.0;
    for (int s = 0; s < time_slices; ++s) {
        const double t = time_slices == 1 ? 0.5 : static_cast<double>(s) / (time_slices - 1);
        for (int p = 0; p < probes_per_slice; ++p) {
            const Vec x = 3.0 * rng.normal_vec(dim);
            const Vec d = 0.1 * rng.normal_vec(dim);
            const double dn = d.norm();
            if (dn == 0.0) continue;
            const double ratio = (v(x + d, t) - v(x, t)).norm() / dn;
            worst = std::max(worst, ratio);
        }
    }
    return worst;
}

} // namespace tdm
