#include "gap/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "gap/diffusion.hpp"
#include "gap/error.hpp"
#include "gap/parallel.hpp"

namespace gap {

namespace {
Matrix sym(const Matrix& m) { return 0.5 * (m + m.transpose()); }

void check_psd(const Matrix& c, const char* what) {
    require(c.rows() == c.cols(), std::string(what) + ": covariance must be square");
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym(c), Eigen::EigenvaluesOnly);
    const double tol = 1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < -tol)
        throw NumericalError(std::string(what) + ": covariance is not positive semi-definite");
}

Matrix obs_matrix(const ObservationSet& o, Eigen::Index d) {
    Matrix h = Matrix::Zero(static_cast<Eigen::Index>(o.size()), d);
    for (std::size_t i = 0; i < o.size(); ++i) h(static_cast<Eigen::Index>(i), o.indices[i]) = 1.0;
    return h;
}
}  // namespace

void LinearGaussianModel::validate() const {
    require(transition.rows() == transition.cols() && transition.rows() > 0, "linear model: transition must be square");
    require(process_noise.rows() == transition.rows() && process_noise.cols() == transition.cols(),
            "linear model: process noise dimension mismatch");
    check_psd(process_noise, "linear model");
}

LinearGaussianModel linear_gaussian_model(const SystemSpec& spec) {
    require(spec.kind == SystemKind::linear_gaussian, "linear_gaussian_model: system is not linear-Gaussian");
    LinearGaussianModel lg{spec.transition, spec.process_cov};
    lg.validate();
    return lg;
}

LinearGaussianModel compose(const LinearGaussianModel& lg, int steps) {
    require(steps >= 1, "compose: steps must be >= 1");
    LinearGaussianModel out = lg;
    for (int k = 1; k < steps; ++k) {
        out.process_noise = sym(lg.transition * out.process_noise * lg.transition.transpose() + lg.process_noise);
        out.transition = lg.transition * out.transition;
    }
    return out;
}

Matrix stationary_covariance(const LinearGaussianModel& lg) {
    lg.validate();
    const Eigen::Index d = lg.dim();
    const double rho = lg.transition.eigenvalues().cwiseAbs().maxCoeff();
    require(rho < 1.0, "stationary_covariance: transition is not stable");
    // vec(P) = (I - A kron A)^{-1} vec(Q)
    Matrix big(d * d, d * d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) big.block(i * d, j * d, d, d) = lg.transition(i, j) * lg.transition;
    big = Matrix::Identity(d * d, d * d) - big;
    const Eigen::VectorXd q = Eigen::Map<const Eigen::VectorXd>(lg.process_noise.data(), d * d);
    const Eigen::VectorXd p = big.partialPivLu().solve(q);
    return sym(Eigen::Map<const Matrix>(p.data(), d, d));
}

GaussianState kalman_update(const GaussianState& prior, const ObservationSet& obs) {
    const Eigen::Index d = prior.mean.size();
    obs.validate(d);
    if (obs.empty()) return prior;
    const Matrix h = obs_matrix(obs, d);
    const Matrix ph = prior.cov * h.transpose();
    Matrix s = h * ph;
    s.diagonal() += obs.sigma_o.array().square().matrix();
    Eigen::LDLT<Matrix> ldlt(s);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0)
        throw NumericalError("kalman_update: innovation covariance is singular");
    const Matrix gain = ldlt.solve(ph.transpose()).transpose();
    GaussianState post;
    post.mean = prior.mean + gain * (obs.values - h * prior.mean);
    // Joseph form keeps the covariance PSD
    const Matrix ikh = Matrix::Identity(d, d) - gain * h;
    post.cov = sym(ikh * prior.cov * ikh.transpose() +
                   gain * obs.sigma_o.array().square().matrix().asDiagonal() * gain.transpose());
    return post;
}

GaussianState kalman_predict(const GaussianState& s, const LinearGaussianModel& lg) {
    return {lg.transition * s.mean, sym(lg.transition * s.cov * lg.transition.transpose() + lg.process_noise)};
}

std::vector<GaussianState> kalman_filter(const LinearGaussianModel& lg, const std::vector<ObservationSet>& obs_stream,
                                         const StateVector& x0_mean, const Matrix& x0_cov) {
    lg.validate();
    require(x0_mean.size() == lg.dim() && x0_cov.rows() == lg.dim(), "kalman_filter: initial state dimension mismatch");
    check_psd(x0_cov, "kalman_filter");
    std::vector<GaussianState> out;
    out.reserve(obs_stream.size());
    GaussianState s{x0_mean, sym(x0_cov)};
    for (std::size_t t = 0; t < obs_stream.size(); ++t) {
        if (t > 0) s = kalman_predict(s, lg);
        s = kalman_update(s, obs_stream[t]);
        out.push_back(s);
    }
    return out;
}

Ensemble enkf_step(const Ensemble& ens, const ObservationSet& obs, double inflation, std::uint64_t seed) {
    const Eigen::Index d = ens.dim(), m = ens.size();
    require(m >= 2, "enkf_step: need at least 2 members");
    require(inflation >= 1.0 && std::isfinite(inflation), "enkf_step: inflation must be >= 1");
    obs.validate(d);
    const StateVector mean = ens.mean();
    Matrix x = ens.members;
    if (inflation != 1.0) x = (inflation * (ens.members.colwise() - mean)).colwise() + mean;
    if (obs.empty()) return Ensemble(std::move(x), ens.member_seeds);

    const auto k = static_cast<Eigen::Index>(obs.size());
    const Matrix anom = x.colwise() - x.rowwise().mean();
    Matrix hx(k, m), hanom(k, m);
    for (Eigen::Index i = 0; i < k; ++i) {
        hx.row(i) = x.row(obs.indices[static_cast<std::size_t>(i)]);
        hanom.row(i) = anom.row(obs.indices[static_cast<std::size_t>(i)]);
    }
    const Matrix pht = anom * hanom.transpose() / double(m - 1);
    Matrix s = hanom * hanom.transpose() / double(m - 1);
    s.diagonal() += obs.sigma_o.array().square().matrix();
    Eigen::LDLT<Matrix> ldlt(s);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 1e-300)
        throw NumericalError("enkf_step: innovation covariance is singular (degenerate ensemble with exact observations)");

    Matrix pert(k, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        auto g = rng::stream(member_seed(seed, static_cast<std::uint64_t>(j)), "enkf");
        for (Eigen::Index i = 0; i < k; ++i) pert(i, j) = obs.sigma_o(i) * rng::normal(g);
    }
    // centred perturbations: the mean update is exactly K (O - H mean)
    pert = pert.colwise() - StateVector(pert.rowwise().mean());
    const Matrix innov = (pert.colwise() + obs.values) - hx;
    x += pht * ldlt.solve(innov);
    if (!x.allFinite()) throw NumericalError("enkf_step: non-finite analysis");
    return Ensemble(std::move(x), ens.member_seeds);
}

StateVector persistence_forecast(const StateVector& x0, std::int64_t lead) {
    require(lead >= 0, "persistence_forecast: lead must be >= 0");
    return x0;
}

Ensemble climatology_ensemble(const Climatology& clim, int m, std::uint64_t seed,
                              const std::optional<Trajectory>& snapshots) {
    require(m >= 1, "climatology_ensemble: M must be >= 1");
    const Eigen::Index d = clim.dim();
    Matrix out(d, m);
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        seeds[static_cast<std::size_t>(j)] = member_seed(seed, static_cast<std::uint64_t>(j));
        auto g = rng::stream(seeds[static_cast<std::size_t>(j)], "climatology");
        if (snapshots) {
            require(snapshots->dim() == d && !snapshots->empty(), "climatology_ensemble: snapshot dimension mismatch");
            std::uniform_int_distribution<Eigen::Index> pick(0, snapshots->size() - 1);
            out.col(j) = snapshots->state(pick(g));
        } else {
            for (Eigen::Index i = 0; i < d; ++i) out(i, j) = clim.mean(i) + clim.std(i) * rng::normal(g);
        }
    }
    return Ensemble(std::move(out), std::move(seeds));
}

}  // namespace gap
