#include "gap/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gap/error.hpp"
#include "gap/rng.hpp"

namespace gap {

namespace {
std::vector<std::size_t> layout(const std::vector<int>& sizes, std::size_t& total) {
    require(sizes.size() >= 2, "mlp: need at least input and output sizes");
    std::vector<std::size_t> off;
    total = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        require(sizes[l] > 0 && sizes[l + 1] > 0, "mlp: layer sizes must be positive");
        off.push_back(total);
        total += static_cast<std::size_t>(sizes[l]) * static_cast<std::size_t>(sizes[l + 1]) +
                 static_cast<std::size_t>(sizes[l + 1]);
    }
    return off;
}
}  // namespace

Mlp::Mlp(std::vector<int> sizes, std::uint64_t seed, bool zero_output) : sizes_(std::move(sizes)) {
    std::size_t total = 0;
    offsets_ = layout(sizes_, total);
    params_.assign(total, 0.0);
    auto g = rng::stream(seed, "mlp_init");
    const std::size_t layers = sizes_.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        if (zero_output && l + 1 == layers) break;
        const double scale = 1.0 / std::sqrt(double(sizes_[l]));
        const std::size_t nw = static_cast<std::size_t>(sizes_[l]) * static_cast<std::size_t>(sizes_[l + 1]);
        for (std::size_t i = 0; i < nw; ++i) params_[offsets_[l] + i] = scale * rng::normal(g);
    }
}

Mlp::Mlp(std::vector<int> sizes, std::vector<double> params) : sizes_(std::move(sizes)), params_(std::move(params)) {
    std::size_t total = 0;
    offsets_ = layout(sizes_, total);
    require(params_.size() == total, "mlp: parameter count does not match layer sizes");
}

Mlp::ConstMap Mlp::weight(std::size_t l) const {
    return ConstMap(params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t l) const {
    const std::size_t nw = static_cast<std::size_t>(sizes_[l]) * static_cast<std::size_t>(sizes_[l + 1]);
    return Eigen::Map<const Eigen::VectorXd>(params_.data() + offsets_[l] + nw, sizes_[l + 1]);
}

Mlp::Matrix Mlp::forward(const Matrix& x) const {
    require(x.rows() == input_dim(), "mlp: input dimension mismatch");
    const std::size_t layers = sizes_.size() - 1;
    Matrix a = x;
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix z = weight(l) * a;
        z.colwise() += bias(l);
        if (l + 1 < layers) z = z.array().tanh();
        a = std::move(z);
    }
    return a;
}

Mlp::Matrix Mlp::forward(const Matrix& x, Tape& tape) const {
    require(x.rows() == input_dim(), "mlp: input dimension mismatch");
    const std::size_t layers = sizes_.size() - 1;
    tape.activations.resize(layers + 1);
    tape.activations[0] = x;
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix z = weight(l) * tape.activations[l];
        z.colwise() += bias(l);
        if (l + 1 < layers) z = z.array().tanh();
        tape.activations[l + 1] = std::move(z);
    }
    return tape.activations.back();
}

void Mlp::backward(const Tape& tape, const Matrix& d_out, std::span<double> grad, Matrix* d_input) const {
    require(grad.size() == params_.size(), "mlp: gradient buffer has wrong size");
    const std::size_t layers = sizes_.size() - 1;
    Matrix delta = d_out;
    for (std::size_t l = layers; l-- > 0;) {
        const auto& a_in = tape.activations[l];
        Eigen::Map<Matrix> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
        const std::size_t nw = static_cast<std::size_t>(sizes_[l]) * static_cast<std::size_t>(sizes_[l + 1]);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets_[l] + nw, sizes_[l + 1]);
        gw.noalias() += delta * a_in.transpose();
        gb += delta.rowwise().sum();
        if (l > 0) {
            Matrix back = weight(l).transpose() * delta;
            delta = back.array() * (1.0 - a_in.array().square());
        } else if (d_input) {
            *d_input = weight(0).transpose() * delta;
        }
    }
}

Mlp::Matrix Mlp::input_vjp(const Matrix& x, const Matrix& v) const {
    Tape tape;
    forward(x, tape);
    const std::size_t layers = sizes_.size() - 1;
    Matrix delta = v;
    for (std::size_t l = layers; l-- > 0;) {
        delta = weight(l).transpose() * delta;
        if (l > 0) delta = delta.array() * (1.0 - tape.activations[l].array().square());
    }
    return delta;
}

Mlp::Matrix Mlp::jacobian(const Eigen::VectorXd& x) const {
    Tape tape;
    forward(Matrix(x), tape);
    const std::size_t layers = sizes_.size() - 1;
    Matrix j = Matrix::Identity(input_dim(), input_dim());
    for (std::size_t l = 0; l < layers; ++l) {
        j = weight(l) * j;
        if (l + 1 < layers) j = (1.0 - tape.activations[l + 1].array().square()).matrix().asDiagonal() * j;
    }
    return j;
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
    require(params.size() == m_.size() && grad.size() == m_.size(), "adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

double cosine_lr(double lr, std::int64_t step, std::int64_t total, double floor_frac) {
    if (total <= 1) return lr;
    const double frac = std::clamp(double(step) / double(total - 1), 0.0, 1.0);
    const double lo = lr * floor_frac;
    return lo + 0.5 * (lr - lo) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace gap
