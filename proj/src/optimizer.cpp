#include "tdm/optimizer.hpp"

#include <cmath>

namespace tdm {

Adam::Adam(int n_params, AdamConfig cfg)
    : cfg_(cfg), m_(Vec::Zero(n_params)), v_(Vec::Zero(n_params)) {}

bool Adam::step(Vec& params, const Vec& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw Error("numerics_core", "optimizer_step: shape mismatch");
    if (!grads.allFinite()) {
        ++rejected_;
        return false;
    }
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grads;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grads.cwiseProduct(grads);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    params -= (cfg_.lr / bc1) * m_.cwiseQuotient((v_ / bc2).cwiseSqrt().array().matrix() +
                                                 Vec::Constant(m_.size(), cfg_.eps));
    return true;
}

} // namespace tdm
