#pragma once

#include "tdm/common.hpp"

namespace tdm {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. A non-finite gradient rejects the step and
// leaves parameters and moments untouched.
class Adam {
public:
    Adam(int n_params, AdamConfig cfg = {});

    // returns false iff the step was rejected (non-finite gradient)
    bool step(Vec& params, const Vec& grads);

    void set_lr(double lr) { cfg_.lr = lr; }
    long steps_taken() const { return t_; }
    long steps_rejected() const { return rejected_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    Vec m_;
    Vec v_;
    long t_ = 0;
    long rejected_ = 0;
};

} // namespace tdm
