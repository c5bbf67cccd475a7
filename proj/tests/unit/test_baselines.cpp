#include "doctest.h"

#include <cmath>

#include "gap/baselines.hpp"
#include "gap/error.hpp"

using namespace gap;

namespace {
ObservationSet obs_of(std::vector<int> idx, const StateVector& vals, double sigma) {
    ObservationSet o;
    o.indices = std::move(idx);
    o.values = vals;
    o.sigma_o = StateVector::Constant(vals.size(), sigma);
    return o;
}

Matrix sample_cov(const Matrix& x) {
    const Matrix c = x.colwise() - x.rowwise().mean();
    return c * c.transpose() / double(x.cols() - 1);
}

Ensemble gaussian_ensemble(const StateVector& mu, const Matrix& cov, int m, std::uint64_t seed) {
    const Eigen::LLT<Matrix> llt(cov);
    auto g = rng::stream(seed, "test");
    Matrix x(mu.size(), m);
    for (int j = 0; j < m; ++j) {
        StateVector z(mu.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng::normal(g);
        x.col(j) = mu + llt.matrixL() * z;
    }
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) seeds[static_cast<std::size_t>(j)] = static_cast<std::uint64_t>(j);
    return Ensemble(std::move(x), std::move(seeds));
}

// Simulated truth and observations of coordinates `idx` for an OU model.
std::pair<Matrix, std::vector<ObservationSet>> simulate(const LinearGaussianModel& lg, int steps,
                                                        const std::vector<int>& idx, double sigma, std::uint64_t seed) {
    const Eigen::Index d = lg.dim();
    const Eigen::LLT<Matrix> qc(lg.process_noise);
    const Eigen::LLT<Matrix> pc(stationary_covariance(lg));
    auto g = rng::stream(seed, "sim");
    auto draw = [&] {
        StateVector z(d);
        for (Eigen::Index i = 0; i < d; ++i) z(i) = rng::normal(g);
        return z;
    };
    Matrix truth(d, steps);
    std::vector<ObservationSet> obs;
    StateVector x = pc.matrixL() * draw();
    for (int t = 0; t < steps; ++t) {
        if (t > 0) x = lg.transition * x + qc.matrixL() * draw();
        truth.col(t) = x;
        StateVector v(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) v(static_cast<Eigen::Index>(k)) = x(idx[k]) + sigma * rng::normal(g);
        obs.push_back(obs_of(idx, v, sigma));
        obs.back().time_index = t;
    }
    return {truth, obs};
}
}  // namespace

TEST_CASE("scalar Kalman update") {
    const GaussianState prior{StateVector::Zero(1), Matrix::Identity(1, 1)};
    StateVector y(1);
    y << 1.0;
    const auto post = kalman_update(prior, obs_of({0}, y, 1.0));
    CHECK(post.mean(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(post.cov(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("Kalman filter without observations follows the Lyapunov recursion") {
    const auto lg = linear_gaussian_model(make_linear_gaussian(4, 0.1, 3));
    std::vector<ObservationSet> none(20);
    for (auto& o : none) o = empty_observations();
    const StateVector m0 = StateVector::Ones(4);
    const Matrix p0 = 2.0 * Matrix::Identity(4, 4);
    const auto out = kalman_filter(lg, none, m0, p0);
    StateVector m = m0;
    Matrix p = p0;
    for (std::size_t t = 0; t < out.size(); ++t) {
        if (t > 0) {
            m = lg.transition * m;
            p = lg.transition * p * lg.transition.transpose() + lg.process_noise;
        }
        CHECK((out[t].mean - m).norm() < 1e-13);
        CHECK((out[t].cov - p).norm() < 1e-12);
    }
    const Matrix ps = stationary_covariance(lg);
    CHECK((lg.transition * ps * lg.transition.transpose() + lg.process_noise - ps).norm() < 1e-10);
    Matrix bad = Matrix::Identity(4, 4);
    bad(0, 0) = -1;
    CHECK_THROWS_AS(kalman_filter(lg, none, m0, bad), NumericalError);
}

TEST_CASE("Kalman filter matches batch least squares") {
    const auto lg = linear_gaussian_model(make_linear_gaussian(8, 0.1, 5));
    const int steps = 100;
    const std::vector<int> idx{0, 3, 6};
    const double so = 0.5;
    auto [truth, obs] = simulate(lg, steps, idx, so, 1);
    const StateVector m0 = StateVector::Zero(8);
    const Matrix p0 = stationary_covariance(lg);
    const auto kf = kalman_filter(lg, obs, m0, p0);
    const Matrix qi = lg.process_noise.inverse(), pi = p0.inverse();
    const Matrix& a = lg.transition;
    Matrix h = Matrix::Zero(3, 8);
    for (int k = 0; k < 3; ++k) h(k, idx[static_cast<std::size_t>(k)]) = 1;
    const Matrix hrh = h.transpose() * h / (so * so);
    for (int t : {0, 1, 10, 50, 99}) {
        // information form over x_0..x_t
        const int n = (t + 1) * 8;
        Matrix lam = Matrix::Zero(n, n);
        Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
        lam.block(0, 0, 8, 8) += pi;
        eta.segment(0, 8) += pi * m0;
        for (int k = 0; k <= t; ++k) {
            lam.block(8 * k, 8 * k, 8, 8) += hrh;
            eta.segment(8 * k, 8) += h.transpose() * obs[static_cast<std::size_t>(k)].values / (so * so);
            if (k > 0) {
                lam.block(8 * k, 8 * k, 8, 8) += qi;
                lam.block(8 * (k - 1), 8 * (k - 1), 8, 8) += a.transpose() * qi * a;
                lam.block(8 * k, 8 * (k - 1), 8, 8) -= qi * a;
                lam.block(8 * (k - 1), 8 * k, 8, 8) -= a.transpose() * qi;
            }
        }
        const Eigen::VectorXd z = lam.ldlt().solve(eta);
        CHECK((kf[static_cast<std::size_t>(t)].mean - z.tail(8)).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("Kalman innovations are white") {
    const auto lg = linear_gaussian_model(make_linear_gaussian(4, 0.1, 9));
    auto [truth, obs] = simulate(lg, 1000, {1}, 0.5, 2);
    GaussianState s{StateVector::Zero(4), stationary_covariance(lg)};
    std::vector<double> nu;
    for (std::size_t t = 0; t < obs.size(); ++t) {
        if (t > 0) s = kalman_predict(s, lg);
        const double innov = obs[t].values(0) - s.mean(1);
        nu.push_back(innov / std::sqrt(s.cov(1, 1) + 0.25));
        s = kalman_update(s, obs[t]);
    }
    double mean = 0;
    for (double v : nu) mean += v;
    mean /= double(nu.size());
    double c0 = 0, c1 = 0;
    for (std::size_t t = 0; t < nu.size(); ++t) {
        c0 += (nu[t] - mean) * (nu[t] - mean);
        if (t > 0) c1 += (nu[t] - mean) * (nu[t - 1] - mean);
    }
    MESSAGE("lag-1 autocorrelation " << c1 / c0);
    CHECK(std::abs(c1 / c0) < 0.1);
}

TEST_CASE("EnKF limits") {
    const Matrix cov = stationary_covariance(linear_gaussian_model(make_linear_gaussian(8, 0.1, 5)));
    const StateVector mu = StateVector::LinSpaced(8, -1, 1);
    const auto e = gaussian_ensemble(mu, cov, 64, 1);
    CHECK(enkf_step(e, empty_observations(), 1.0, 3).members == e.members);
    StateVector v(2);
    v << 5.0, -5.0;
    const auto far = enkf_step(e, obs_of({1, 4}, v, 1e12), 1.0, 3);
    CHECK((far.members - e.members).cwiseAbs().maxCoeff() < 1e-8);

    const auto infl = enkf_step(e, empty_observations(), 1.5, 3);
    CHECK((infl.mean() - e.mean()).norm() < 1e-12);
    CHECK((infl.spread() - 1.5 * e.spread()).norm() < 1e-12);

    Matrix same = Matrix::Ones(3, 4);
    const Ensemble flat(same, {0, 1, 2, 3});
    StateVector one(1);
    one << 2.0;
    CHECK_THROWS_AS(enkf_step(flat, obs_of({0}, one, 0.0), 1.0, 1), NumericalError);
    CHECK_THROWS_AS(enkf_step(Ensemble(Matrix::Ones(3, 1), {0}), empty_observations(), 1.0, 1), InvalidArgument);
}

TEST_CASE("EnKF converges to the Kalman posterior") {
    const Matrix cov = stationary_covariance(linear_gaussian_model(make_linear_gaussian(8, 0.1, 5)));
    const StateVector mu = StateVector::LinSpaced(8, -1, 1);
    // The gain's sampling error multiplies the innovation, so keep the
    // innovation at a typical size for a draw from the prior.
    StateVector v(3);
    v << mu(0) + 0.3, mu(2) - 0.2, mu(5) + 0.1;
    const auto o = obs_of({0, 2, 5}, v, 0.5);
    const auto post = kalman_update({mu, cov}, o);
    const auto e = enkf_step(gaussian_ensemble(mu, cov, 4096, 2), o, 1.0, 4);
    const StateVector me = (e.mean() - post.mean).cwiseQuotient(post.cov.diagonal().cwiseSqrt());
    const double ce = (sample_cov(e.members) - post.cov).norm() / post.cov.norm();
    MESSAGE("mean err " << me.cwiseAbs().maxCoeff() << " cov err " << ce);
    CHECK(me.cwiseAbs().maxCoeff() < 0.05);
    CHECK(ce < 0.15);

    // mean error shrinks like 1/sqrt(M)
    auto rms_err = [&](int m) {
        double acc = 0;
        for (int r = 0; r < 40; ++r) {
            const auto a = enkf_step(gaussian_ensemble(mu, cov, m, 100 + r), o, 1.0, 200 + r);
            acc += (a.mean() - post.mean).squaredNorm();
        }
        return std::sqrt(acc / 40);
    };
    const double ratio = rms_err(64) / rms_err(256);
    MESSAGE("error ratio M=64 / M=256: " << ratio);
    CHECK(ratio > 1.4);
    CHECK(ratio < 2.8);
}

TEST_CASE("persistence and climatology ensembles") {
    const StateVector x = Eigen::Vector3d(1, 2, 3);
    CHECK(persistence_forecast(x, 0) == x);
    CHECK(persistence_forecast(x, 17) == x);
    Climatology c;
    c.mean = Eigen::Vector2d(1.0, -2.0);
    c.std = Eigen::Vector2d(0.5, 3.0);
    const auto e = climatology_ensemble(c, 20000, 3);
    CHECK((e.mean() - c.mean).cwiseQuotient(c.std).cwiseAbs().maxCoeff() < 4.0 / std::sqrt(20000.0));
    CHECK((e.spread().cwiseQuotient(c.std) - StateVector::Ones(2)).cwiseAbs().maxCoeff() < 0.03);
    Trajectory snaps;
    snaps.states = Matrix::Random(2, 50);
    const auto r1 = climatology_ensemble(c, 50, 9, snaps), r2 = climatology_ensemble(c, 50, 9, snaps);
    CHECK(r1.members == r2.members);
    for (Eigen::Index j = 0; j < 50; ++j) {
        bool found = false;
        for (Eigen::Index k = 0; k < 50; ++k) found = found || snaps.states.col(k) == r1.members.col(j);
        CHECK(found);
    }
}
