#pragma once

#include "tdm/common.hpp"
#include "tdm/rng.hpp"

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tdm {

struct FieldModelConfig {
    int dim = 1;                          // spatial dimension d
    std::vector<int> hidden = {128, 128, 128};
    int time_dim = 16;                    // sinusoidal time features, even, may be 0
};

// Feed-forward field (x, t) -> R^d: tanh MLP over [x, time features] plus a
// linear skip in x. Evaluation is a pure function of (weights, x, t).
class FieldModel {
public:
    explicit FieldModel(FieldModelConfig cfg);      // all parameters zero

    // fan-in scaled uniform init
    static FieldModel random_init(FieldModelConfig cfg, RngStream& rng);

    int dim() const { return cfg_.dim; }
    int time_dim() const { return cfg_.time_dim; }
    const FieldModelConfig& config() const { return cfg_; }
    int layer_count() const { return static_cast<int>(w_.size()); }

    Vec eval(const Vec& x, double t) const;
    Vec operator()(const Vec& x, double t) const { return eval(x, t); }

    // flat parameter vector in declaration order: (w, b) per layer, then skip
    int param_count() const;
    Vec params_flat() const;
    void set_params_flat(const Vec& p);

    // direct access (tests construct hand-built weights)
    std::vector<Mat>& weights() { return w_; }
    std::vector<Vec>& biases() { return b_; }
    Mat& skip() { return skip_; }
    const std::vector<Mat>& weights() const { return w_; }
    const std::vector<Vec>& biases() const { return b_; }
    const Mat& skip() const { return skip_; }

    Vec input_features(const Vec& x, double t) const;

    // cost of one eval in floating point ops (multiply-add pairs counted as 2)
    std::int64_t flops_per_eval() const;

    void save(const std::string& path) const;
    static FieldModel load(const std::string& path);

private:
    friend class Tape;
    FieldModelConfig cfg_;
    std::vector<Mat> w_;   // w_[l] is out x in
    std::vector<Vec> b_;
    Mat skip_;             // d x d applied to x
};

// Parameter-shaped gradient accumulator.
struct GradAccum {
    explicit GradAccum(const FieldModel& m);
    void zero();
    void add_scaled(const GradAccum& other, double s);
    Vec flat() const;
    double squared_norm() const;
    bool all_finite() const;

    std::vector<Mat> gw;
    std::vector<Vec> gb;
    Mat gskip;
};

// Recorded activations for one eval; reusable across samples.
class Tape {
public:
    Vec forward(const FieldModel& m, const Vec& x, double t);
    // Accumulates d(loss)/d(params) into acc given d(loss)/d(output).
    void backward(const FieldModel& m, const Vec& dout, GradAccum& acc) const;

private:
    Vec x_;
    Vec feat_;
    std::vector<Vec> hidden_act_;   // post-tanh activations per hidden layer
};

// loss over a batch of model outputs; fills d(loss)/d(output_i) and returns the loss
using BatchLoss = std::function<double(const std::vector<Vec>& outs, std::vector<Vec>& douts)>;

// Exact reverse-mode gradient of an arbitrary scalar loss of the batch outputs.
double model_grad(const FieldModel& m, std::span<const std::pair<Vec, double>> batch,
                  const BatchLoss& loss, GradAccum& out);

} // namespace tdm
