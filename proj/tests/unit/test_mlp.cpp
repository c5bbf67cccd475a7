#include "doctest.h"

#include <cmath>
#include <vector>

#include "gap/error.hpp"
#include "gap/mlp.hpp"

using namespace gap;

namespace {
double scalar_loss(const Mlp& net, const Mlp::Matrix& x, const Mlp::Matrix& w) {
    return (net.forward(x).array() * w.array()).sum();
}
}  // namespace

TEST_CASE("parameter count and layout") {
    Mlp net({3, 5, 2}, 1);
    CHECK(net.num_params() == 3 * 5 + 5 + 5 * 2 + 2);
    CHECK(net.input_dim() == 3);
    CHECK(net.output_dim() == 2);
    CHECK_THROWS_AS(Mlp({3}, 1), InvalidArgument);
    CHECK_THROWS_AS(Mlp({3, 2}, std::vector<double>(5)), InvalidArgument);
}

TEST_CASE("zero output layer gives a zero map") {
    Mlp net({4, 8, 4}, 3, true);
    Mlp::Matrix x = Mlp::Matrix::Random(4, 6);
    CHECK(net.forward(x).norm() == 0.0);
}

TEST_CASE("weight gradient matches central differences") {
    Mlp net({3, 6, 5, 2}, 7);
    Mlp::Matrix x = Mlp::Matrix::Random(3, 4);
    Mlp::Matrix w = Mlp::Matrix::Random(2, 4);
    Mlp::Tape tape;
    net.forward(x, tape);
    std::vector<double> grad(net.num_params(), 0.0);
    net.backward(tape, w, grad);
    const double h = 1e-5;
    for (std::size_t i = 0; i < net.num_params(); ++i) {
        const double orig = net.params()[i];
        net.params()[i] = orig + h;
        const double up = scalar_loss(net, x, w);
        net.params()[i] = orig - h;
        const double dn = scalar_loss(net, x, w);
        net.params()[i] = orig;
        const double fd = (up - dn) / (2 * h);
        CHECK(std::abs(fd - grad[i]) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("input gradient, vjp and dense jacobian agree") {
    Mlp net({4, 7, 3}, 9);
    Eigen::VectorXd x = Eigen::VectorXd::Random(4);
    Eigen::VectorXd v = Eigen::VectorXd::Random(3);
    const Mlp::Matrix j = net.jacobian(x);
    const Mlp::Matrix vjp = net.input_vjp(Mlp::Matrix(x), Mlp::Matrix(v));
    CHECK((j.transpose() * v - vjp.col(0)).norm() < 1e-12);

    Mlp::Tape tape;
    net.forward(Mlp::Matrix(x), tape);
    std::vector<double> grad(net.num_params(), 0.0);
    Mlp::Matrix d_in;
    net.backward(tape, Mlp::Matrix(v), grad, &d_in);
    CHECK((d_in.col(0) - vjp.col(0)).norm() < 1e-12);

    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
        Eigen::VectorXd up = x, dn = x;
        up(i) += h;
        dn(i) -= h;
        const Eigen::VectorXd fd = (net.forward(Mlp::Matrix(up)) - net.forward(Mlp::Matrix(dn))).col(0) / (2 * h);
        CHECK((fd - j.col(i)).norm() < 1e-7);
    }
}

TEST_CASE("adam descends a quadratic") {
    std::vector<double> p{3.0, -2.0};
    Adam opt(2);
    for (int k = 0; k < 2000; ++k) {
        std::vector<double> g{2 * p[0], 2 * p[1]};
        opt.step(p, g, cosine_lr(0.05, k, 2000));
    }
    CHECK(std::abs(p[0]) < 1e-3);
    CHECK(std::abs(p[1]) < 1e-3);
}

TEST_CASE("cosine schedule endpoints") {
    CHECK(cosine_lr(1.0, 0, 11) == doctest::Approx(1.0));
    CHECK(cosine_lr(1.0, 5, 11) == doctest::Approx(0.5));
    CHECK(cosine_lr(1.0, 10, 11, 0.1) == doctest::Approx(0.1));
}
