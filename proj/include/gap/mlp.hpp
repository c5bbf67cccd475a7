#pragma once

// Small dense feed-forward network with tanh hidden layers and a linear
// output layer. Parameters live in one flat buffer so optimisers, finite
// difference checks and serialisation all see the same view.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace gap {

class Mlp {
public:
    using Matrix = Eigen::MatrixXd;
    using ConstMap = Eigen::Map<const Matrix>;

    /// Activations recorded by a forward pass, consumed by `backward`.
    struct Tape {
        std::vector<Matrix> activations;  // a_0 = input, ..., a_L = output
    };

    Mlp() = default;
    /// `sizes` = {in, hidden..., out}. Hidden weights are drawn N(0, 1/fan_in).
    /// With `zero_output` the last layer starts at zero (useful for residual maps).
    Mlp(std::vector<int> sizes, std::uint64_t seed, bool zero_output = false);
    Mlp(std::vector<int> sizes, std::vector<double> params);

    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    const std::vector<int>& sizes() const { return sizes_; }
    std::size_t num_params() const { return params_.size(); }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    /// Column-wise batch evaluation: X is (in x B).
    Matrix forward(const Matrix& x) const;
    Matrix forward(const Matrix& x, Tape& tape) const;

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
    /// When `d_input` is non-null it receives d(loss)/d(input).
    void backward(const Tape& tape, const Matrix& d_out, std::span<double> grad, Matrix* d_input = nullptr) const;

    /// Vector-Jacobian product per column: returns J(x_b)^T v_b for every b.
    Matrix input_vjp(const Matrix& x, const Matrix& v) const;

    /// Dense Jacobian (out x in) at a single input.
    Matrix jacobian(const Eigen::VectorXd& x) const;

private:
    ConstMap weight(std::size_t layer) const;
    Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

    std::vector<int> sizes_;
    std::vector<double> params_;
    std::vector<std::size_t> offsets_;  // start of W_l in params_, b_l follows
};

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
public:
    explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(std::span<double> params, std::span<const double> grad, double lr);

private:
    double beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

/// Cosine annealing from `lr` at step 0 to `lr * floor_frac` at `total`.
double cosine_lr(double lr, std::int64_t step, std::int64_t total, double floor_frac = 0.0);

}  // namespace gap
