#include "tdm/field_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace tdm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

FieldModel::FieldModel(FieldModelConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.dim <= 0) throw Error("numerics_core", "model dim must be positive");
    if (cfg_.time_dim < 0 || cfg_.time_dim % 2 != 0)
        throw Error("numerics_core", "time_dim must be even and nonnegative");
    for (int h : cfg_.hidden)
        if (h <= 0) throw Error("numerics_core", "hidden widths must be positive");

    int in = cfg_.dim + cfg_.time_dim;
    for (int h : cfg_.hidden) {
        w_.emplace_back(Mat::Zero(h, in));
        b_.emplace_back(Vec::Zero(h));
        in = h;
    }
    w_.emplace_back(Mat::Zero(cfg_.dim, in));
    b_.emplace_back(Vec::Zero(cfg_.dim));
    skip_ = Mat::Zero(cfg_.dim, cfg_.dim);
}

FieldModel FieldModel::random_init(FieldModelConfig cfg, RngStream& rng) {
    FieldModel m(std::move(cfg));
    for (std::size_t l = 0; l < m.w_.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(m.w_[l].cols()));
        for (Eigen::Index i = 0; i < m.w_[l].rows(); ++i)
            for (Eigen::Index j = 0; j < m.w_[l].cols(); ++j)
                m.w_[l](i, j) = rng.uniform(-bound, bound);
        for (Eigen::Index i = 0; i < m.b_[l].size(); ++i)
            m.b_[l][i] = rng.uniform(-bound, bound);
    }
    // skip starts at zero; training moves it if useful
    return m;
}

Vec FieldModel::input_features(const Vec& x, double t) const {
    Vec f(cfg_.dim + cfg_.time_dim);
    f.head(cfg_.dim) = x;
    for (int k = 0; k < cfg_.time_dim / 2; ++k) {
        const double w = std::ldexp(1.0, k);   // 1, 2, 4, ...
        f[cfg_.dim + 2 * k] = std::sin(w * t);
        f[cfg_.dim + 2 * k + 1] = std::cos(w * t);
    }
    return f;
}

Vec FieldModel::eval(const Vec& x, double t) const {
    if (x.size() != cfg_.dim) throw Error("numerics_core", "model_eval: dimension mismatch");
    Vec h = input_features(x, t);
    const int L = layer_count();
    for (int l = 0; l < L; ++l) {
        Vec z = w_[l] * h + b_[l];
        if (l + 1 < L) z = z.array().tanh();
        h = std::move(z);
    }
    h.noalias() += skip_ * x;
    return h;
}

int FieldModel::param_count() const {
    int n = 0;
    for (std::size_t l = 0; l < w_.size(); ++l)
        n += static_cast<int>(w_[l].size() + b_[l].size());
    return n + static_cast<int>(skip_.size());
}

Vec FieldModel::params_flat() const {
    Vec p(param_count());
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) {
        for (Eigen::Index i = 0; i < w_[l].rows(); ++i)
            for (Eigen::Index j = 0; j < w_[l].cols(); ++j) p[at++] = w_[l](i, j);
        for (Eigen::Index i = 0; i < b_[l].size(); ++i) p[at++] = b_[l][i];
    }
    for (Eigen::Index i = 0; i < skip_.rows(); ++i)
        for (Eigen::Index j = 0; j < skip_.cols(); ++j) p[at++] = skip_(i, j);
    return p;
}

void FieldModel::set_params_flat(const Vec& p) {
    if (p.size() != param_count()) throw Error("numerics_core", "set_params_flat: size mismatch");
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) {
        for (Eigen::Index i = 0; i < w_[l].rows(); ++i)
            for (Eigen::Index j = 0; j < w_[l].cols(); ++j) w_[l](i, j) = p[at++];
        for (Eigen::Index i = 0; i < b_[l].size(); ++i) b_[l][i] = p[at++];
    }
    for (Eigen::Index i = 0; i < skip_.rows(); ++i)
        for (Eigen::Index j = 0; j < skip_.cols(); ++j) skip_(i, j) = p[at++];
}

std::int64_t FieldModel::flops_per_eval() const {
    std::int64_t n = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) n += 2 * w_[l].size() + b_[l].size();
    n += 2 * skip_.size();
    return n;
}

// ---------------------------------------------------------------------------
// tape / gradients

GradAccum::GradAccum(const FieldModel& m) {
    for (int l = 0; l < m.layer_count(); ++l) {
        gw.emplace_back(Mat::Zero(m.weights()[l].rows(), m.weights()[l].cols()));
        gb.emplace_back(Vec::Zero(m.biases()[l].size()));
    }
    gskip = Mat::Zero(m.skip().rows(), m.skip().cols());
}

void GradAccum::zero() {
    for (auto& g : gw) g.setZero();
    for (auto& g : gb) g.setZero();
    gskip.setZero();
}

void GradAccum::add_scaled(const GradAccum& other, double s) {
    for (std::size_t l = 0; l < gw.size(); ++l) {
        gw[l] += s * other.gw[l];
        gb[l] += s * other.gb[l];
    }
    gskip += s * other.gskip;
}

Vec GradAccum::flat() const {
    Eigen::Index n = static_cast<Eigen::Index>(gskip.size());
    for (std::size_t l = 0; l < gw.size(); ++l) n += gw[l].size() + gb[l].size();
    Vec p(n);
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < gw.size(); ++l) {
        for (Eigen::Index i = 0; i < gw[l].rows(); ++i)
            for (Eigen::Index j = 0; j < gw[l].cols(); ++j) p[at++] = gw[l](i, j);
        for (Eigen::Index i = 0; i < gb[l].size(); ++i) p[at++] = gb[l][i];
    }
    for (Eigen::Index i = 0; i < gskip.rows(); ++i)
        for (Eigen::Index j = 0; j < gskip.cols(); ++j) p[at++] = gskip(i, j);
    return p;
}

double GradAccum::squared_norm() const {
    double s = gskip.squaredNorm();
    for (std::size_t l = 0; l < gw.size(); ++l) s += gw[l].squaredNorm() + gb[l].squaredNorm();
    return s;
}

bool GradAccum::all_finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    for (const auto& g : gw)
        for (Eigen::Index i = 0; i < g.size(); ++i)
            if (!ok(g.data()[i])) return false;
    for (const auto& g : gb)
        for (Eigen::Index i = 0; i < g.size(); ++i)
            if (!ok(g.data()[i])) return false;
    for (Eigen::Index i = 0; i < gskip.size(); ++i)
        if (!ok(gskip.data()[i])) return false;
    return true;
}

Vec Tape::forward(const FieldModel& m, const Vec& x, double t) {
    x_ = x;
    feat_ = m.input_features(x, t);
    const int L = m.layer_count();
    hidden_act_.assign(L - 1, Vec());
    Vec h = feat_;
    for (int l = 0; l < L; ++l) {
        Vec z = m.w_[l] * h + m.b_[l];
        if (l + 1 < L) {
            z = z.array().tanh();
            hidden_act_[l] = z;
        }
        h = std::move(z);
    }
    h.noalias() += m.skip_ * x;
    return h;
}

void Tape::backward(const FieldModel& m, const Vec& dout, GradAccum& acc) const {
    const int L = m.layer_count();
    acc.gskip.noalias() += dout * x_.transpose();
    Vec delta = dout;
    for (int l = L - 1; l >= 0; --l) {
        const Vec& in = (l == 0) ? feat_ : hidden_act_[l - 1];
        acc.gw[l].noalias() += delta * in.transpose();
        acc.gb[l] += delta;
        if (l > 0) {
            Vec up = m.w_[l].transpose() * delta;
            delta = up.array() * (1.0 - hidden_act_[l - 1].array().square());
        }
    }
}

double model_grad(const FieldModel& m, std::span<const std::pair<Vec, double>> batch,
                  const BatchLoss& loss, GradAccum& out) {
    std::vector<Tape> tapes(batch.size());
    std::vector<Vec> outs(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        outs[i] = tapes[i].forward(m, batch[i].first, batch[i].second);
    std::vector<Vec> douts(batch.size(), Vec::Zero(m.dim()));
    const double value = loss(outs, douts);
    out.zero();
    for (std::size_t i = 0; i < batch.size(); ++i) tapes[i].backward(m, douts[i], out);
    return value;
}

// ---------------------------------------------------------------------------
// checkpoint io: magic "TDM1", version byte, dims, then little-endian doubles
// in declaration order ((w, b) per layer, then skip)

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

void put_doubles(std::ostream& os, const double* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

void get_doubles(std::istream& is, double* p, std::size_t n) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

// Eigen matrices are column-major; serialize row-major so the file layout
// follows declaration order (per output row).
void put_mat(std::ostream& os, const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            put_doubles(os, &v, 1);
        }
}

void get_mat(std::istream& is, Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = 0;
            get_doubles(is, &v, 1);
            m(i, j) = v;
        }
}

} // namespace

void FieldModel::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("numerics_core", "cannot open checkpoint for writing: " + path);
    os.write("TDM1", 4);
    const char version = 1;
    os.write(&version, 1);
    put_u32(os, static_cast<std::uint32_t>(cfg_.dim));
    put_u32(os, static_cast<std::uint32_t>(cfg_.time_dim));
    put_u32(os, static_cast<std::uint32_t>(layer_count()));
    for (int l = 0; l < layer_count(); ++l) {
        put_u32(os, static_cast<std::uint32_t>(w_[l].cols()));
        put_u32(os, static_cast<std::uint32_t>(w_[l].rows()));
    }
    for (int l = 0; l < layer_count(); ++l) {
        put_mat(os, w_[l]);
        put_doubles(os, b_[l].data(), static_cast<std::size_t>(b_[l].size()));
    }
    put_mat(os, skip_);
    if (!os) throw Error("numerics_core", "checkpoint write failed: " + path);
}

FieldModel FieldModel::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("numerics_core", "cannot open checkpoint: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (std::memcmp(magic, "TDM1", 4) != 0)
        throw Error("numerics_core", "bad checkpoint magic: " + path);
    char version = 0;
    is.read(&version, 1);
    if (version != 1) throw Error("numerics_core", "unsupported checkpoint version");
    FieldModelConfig cfg;
    cfg.dim = static_cast<int>(get_u32(is));
    cfg.time_dim = static_cast<int>(get_u32(is));
    const int layers = static_cast<int>(get_u32(is));
    std::vector<std::pair<int, int>> dims(layers);
    for (auto& d : dims) {
        d.first = static_cast<int>(get_u32(is));    // in
        d.second = static_cast<int>(get_u32(is));   // out
    }
    cfg.hidden.clear();
    for (int l = 0; l + 1 < layers; ++l) cfg.hidden.push_back(dims[l].second);
    FieldModel m(cfg);
    if (m.layer_count() != layers) throw Error("numerics_core", "checkpoint layer mismatch");
    for (int l = 0; l < layers; ++l) {
        if (m.w_[l].cols() != dims[l].first || m.w_[l].rows() != dims[l].second)
            throw Error("numerics_core", "checkpoint dim mismatch");
        get_mat(is, m.w_[l]);
        get_doubles(is, m.b_[l].data(), static_cast<std::size_t>(m.b_[l].size()));
    }
    get_mat(is, m.skip_);
    if (!is) throw Error("numerics_core", "checkpoint truncated: " + path);
    return m;
}

} // namespace tdm
