#include "gap/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "gap/error.hpp"
#include "gap/parallel.hpp"
#include "gap/verification.hpp"

namespace gap {

void ObservationSet::validate(Eigen::Index dim) const {
    require(values.size() == static_cast<Eigen::Index>(indices.size()) &&
                sigma_o.size() == static_cast<Eigen::Index>(indices.size()),
            "observations: indices, values and sigma_o must have the same length");
    std::set<int> seen;
    for (int i : indices) {
        require(i >= 0 && i < dim, "observations: index " + std::to_string(i) + " out of range");
        require(seen.insert(i).second, "observations: duplicate index " + std::to_string(i));
    }
    require((sigma_o.array() >= 0).all() && sigma_o.allFinite(), "observations: sigma_o must be finite and >= 0");
    require(values.allFinite(), "observations: non-finite value");
}

StateVector ObservationSet::select(const StateVector& x) const {
    StateVector out(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) out(static_cast<Eigen::Index>(k)) = x(indices[k]);
    return out;
}

ObservationSet empty_observations(std::int64_t time_index) {
    ObservationSet o;
    o.values.resize(0);
    o.sigma_o.resize(0);
    o.time_index = time_index;
    return o;
}

std::string to_string(GuidanceMode m) {
    switch (m) {
        case GuidanceMode::replace: return "replace";
        case GuidanceMode::copaint: return "copaint";
        case GuidanceMode::replace_plus_travel: return "replace_plus_travel";
    }
    return "?";
}

GuidanceMode guidance_mode_from_string(const std::string& s) {
    if (s == "replace") return GuidanceMode::replace;
    if (s == "copaint") return GuidanceMode::copaint;
    if (s == "replace_plus_travel") return GuidanceMode::replace_plus_travel;
    throw InvalidArgument("unknown guidance mode '" + s + "'");
}

std::string to_string(JacobianApprox j) { return j == JacobianApprox::tweedie ? "tweedie" : "inverse_alpha"; }

JacobianApprox jacobian_approx_from_string(const std::string& s) {
    if (s == "inverse_alpha") return JacobianApprox::inverse_alpha;
    if (s == "tweedie") return JacobianApprox::tweedie;
    throw InvalidArgument("unknown jacobian approximation '" + s + "'");
}

std::string to_string(DenoiserCov c) { return c == DenoiserCov::tweedie ? "tweedie" : "scaled_sigma2"; }

DenoiserCov denoiser_cov_from_string(const std::string& s) {
    if (s == "scaled_sigma2") return DenoiserCov::scaled_sigma2;
    if (s == "tweedie") return DenoiserCov::tweedie;
    throw InvalidArgument("unknown denoiser covariance '" + s + "'");
}

void GuidanceConfig::validate() const {
    require(sigma_tau_scale >= 0 && std::isfinite(sigma_tau_scale), "guidance: sigma_tau_scale must be >= 0");
    require(travel_tau >= 0 && travel_rounds >= 0, "guidance: travel fields must be >= 0");
    require(travel_every >= 1, "guidance: travel_every must be >= 1");
    require(std::isfinite(guidance_lr), "guidance: guidance_lr must be finite");
}

ObservationSet apply_observation_noise(const StateVector& x_truth, const ObservationSet& tmpl, std::uint64_t seed) {
    ObservationSet o = tmpl;
    o.values = StateVector::Zero(static_cast<Eigen::Index>(tmpl.indices.size()));
    if (tmpl.sigma_o.size() != o.values.size()) o.sigma_o = StateVector::Zero(o.values.size());
    o.validate(x_truth.size());
    auto g = rng::stream(seed, "obs_noise", static_cast<std::uint64_t>(tmpl.time_index));
    for (std::size_t k = 0; k < o.indices.size(); ++k) {
        const auto e = static_cast<Eigen::Index>(k);
        o.values(e) = x_truth(o.indices[k]) + o.sigma_o(e) * rng::normal(g);
    }
    return o;
}

namespace {

// Observations mapped into the score model's normalised coordinates.
struct NormObs {
    std::vector<int> idx;
    Eigen::VectorXd value;
    Eigen::VectorXd var;  // sigma_o^2 in normalised units
};

NormObs normalise_obs(const ObservationSet& obs, const ScoreModel& model) {
    obs.validate(model.dim);
    NormObs n;
    n.idx = obs.indices;
    const auto k = static_cast<Eigen::Index>(obs.size());
    n.value.resize(k);
    n.var.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const int i = obs.indices[static_cast<std::size_t>(j)];
        const double sd = model.norm.std(i);
        n.value(j) = (obs.values(j) - model.norm.mean(i)) / sd;
        n.var(j) = (obs.sigma_o(j) / sd) * (obs.sigma_o(j) / sd);
    }
    return n;
}

Matrix gradient_normalised(const Matrix& x, double t, const NormObs& o, const ScoreModel& model,
                           const NoiseSchedule& sched, const GuidanceConfig& cfg) {
    const Eigen::Index d = x.rows(), m = x.cols();
    const auto k = static_cast<Eigen::Index>(o.idx.size());
    Matrix g = Matrix::Zero(d, m);
    if (k == 0) return g;
    const double a = std::max(sched.alpha_at(t), 1e-6), s = sched.sigma_at(t);
    const Matrix f = denoise_batch(x, t, model, sched);

    // rows of the score Jacobian at the observed coordinates, one batch per observation
    std::vector<Matrix> jac_rows;
    const bool need_jac = s > 0 && cfg.denoiser_cov == DenoiserCov::tweedie;
    if (need_jac) {
        for (Eigen::Index i = 0; i < k; ++i) {
            Matrix v = Matrix::Zero(d, m);
            v.row(o.idx[static_cast<std::size_t>(i)]).setOnes();
            jac_rows.push_back(model.score_vjp(x, v, t, sched));
        }
    }

    Matrix w = Matrix::Zero(d, m);  // Omega^T S^{-1} r
    for (Eigen::Index c = 0; c < m; ++c) {
        Eigen::VectorXd r(k);
        for (Eigen::Index i = 0; i < k; ++i) r(i) = o.value(i) - f(o.idx[static_cast<std::size_t>(i)], c);
        Eigen::VectorXd sol;
        if (!need_jac) {
            const Eigen::VectorXd var = (o.var.array() + cfg.sigma_tau_scale * s * s).cwiseMax(kInnovationFloor);
            sol = r.cwiseQuotient(var);
        } else {
            // Cov[x0 | x_t] = (s^2 / a) dF/dx = s^2 / a^2 (I + s^2 dscore/dx) on the observed block
            Matrix cov(k, k);
            for (Eigen::Index i = 0; i < k; ++i)
                for (Eigen::Index j = 0; j < k; ++j)
                    cov(i, j) = (s * s / (a * a)) * ((i == j ? 1.0 : 0.0) +
                                                     s * s * jac_rows[static_cast<std::size_t>(i)](
                                                                 o.idx[static_cast<std::size_t>(j)], c));
            Matrix big = cfg.sigma_tau_scale * 0.5 * (cov + cov.transpose());
            // a learned score's Jacobian need not give a PSD block; clip it
            Eigen::SelfAdjointEigenSolver<Matrix> es(big);
            if (es.info() == Eigen::Success && es.eigenvalues().minCoeff() < 0)
                big = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
            big.diagonal() += o.var;
            big.diagonal().array() += kInnovationFloor;
            Eigen::LDLT<Matrix> ldlt(big);
            if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
                throw NumericalError("likelihood_gradient: innovation covariance is not positive definite");
            sol = ldlt.solve(r);
        }
        for (Eigen::Index i = 0; i < k; ++i) w(o.idx[static_cast<std::size_t>(i)], c) = sol(i);
    }
    if (cfg.jacobian == JacobianApprox::inverse_alpha || s == 0) {
        g = w / a;
    } else {
        g = (w + s * s * model.score_vjp(x, w, t, sched)) / a;
    }
    return g;
}

}  // namespace

Matrix likelihood_gradient_batch(const Matrix& x_tau, double t, const ObservationSet& obs, const ScoreModel& model,
                                 const NoiseSchedule& sched, const GuidanceConfig& cfg) {
    model.validate();
    cfg.validate();
    require(x_tau.rows() == model.dim, "likelihood_gradient: state dimension mismatch");
    return gradient_normalised(x_tau, t, normalise_obs(obs, model), model, sched, cfg);
}

StateVector likelihood_gradient(const StateVector& x_tau, int tau_idx, const ObservationSet& obs,
                                const ScoreModel& model, const NoiseSchedule& sched, const GuidanceConfig& cfg) {
    require(tau_idx >= 0 && tau_idx <= sched.n_steps, "likelihood_gradient: tau index out of range");
    return likelihood_gradient_batch(Matrix(x_tau), sched.tau(tau_idx), obs, model, sched, cfg).col(0);
}

int steps_from(const NoiseSchedule& sched, const SamplerConfig& cfg, int start_idx) {
    if (start_idx <= 0) return 1;
    const auto k = std::lround(double(cfg.n_steps) * double(start_idx) / double(sched.n_steps));
    return static_cast<int>(std::clamp<long>(k, 1, start_idx));
}

void conditioned_reverse(Matrix& x, int start_idx, const ScoreModel& model, const NoiseSchedule& sched,
                         const SamplerConfig& scfg, const ObservationSet& obs, const GuidanceConfig& g,
                         std::span<rng::Engine> gens) {
    g.validate();
    require(static_cast<Eigen::Index>(gens.size()) == x.cols(), "conditioned_reverse: one engine per column required");
    const NormObs o = normalise_obs(obs, model);
    const auto k = static_cast<Eigen::Index>(o.idx.size());
    const bool replace = g.mode != GuidanceMode::copaint && k > 0;
    const bool guide = g.mode == GuidanceMode::copaint && k > 0 && g.guidance_lr != 0;
    const bool travel = g.mode == GuidanceMode::replace_plus_travel && k > 0 && g.travel_rounds > 0 && g.travel_tau > 0;

    // Replacement targets: perturbed observations per member, drawn once.
    Matrix target;
    if (replace) {
        target.resize(k, x.cols());
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            for (Eigen::Index i = 0; i < k; ++i)
                target(i, c) = o.value(i) + std::sqrt(o.var(i)) * (o.var(i) > 0 ? rng::normal(gens[static_cast<std::size_t>(c)]) : 0.0);
    }
    auto impose = [&](double t) {
        if (!replace) return;
        const double a = sched.alpha_at(t), s = sched.sigma_at(t);
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            for (Eigen::Index i = 0; i < k; ++i) {
                const double z = t > 0 ? rng::normal(gens[static_cast<std::size_t>(c)]) : 0.0;
                x(o.idx[static_cast<std::size_t>(i)], c) = a * target(i, c) + s * z;
            }
    };

    const ScoreFn fn = [&](const Matrix& y, double t) -> Matrix {
        Matrix sc = model.score(y, t, sched);
        if (guide) sc += g.guidance_lr * gradient_normalised(y, t, o, model, sched, g);
        return sc;
    };

    const auto path = tau_path(sched, start_idx, steps_from(sched, scfg, start_idx));
    const std::size_t n = path.size() - 1;
    impose(path.front());
    std::map<std::size_t, int> rounds;
    std::size_t i = 0;
    while (i < n) {
        reverse_step(x, path[i], path[i + 1], fn, sched, scfg, gens, i + 1 == n);
        if (!x.allFinite()) throw Divergence("conditioned sampler produced a non-finite state", static_cast<std::int64_t>(i));
        ++i;
        impose(path[i]);
        if (travel && i < n && i % static_cast<std::size_t>(g.travel_every) == 0 && rounds[i] < g.travel_rounds) {
            ++rounds[i];
            const std::size_t j = i > static_cast<std::size_t>(g.travel_tau) ? i - static_cast<std::size_t>(g.travel_tau) : 0;
            // forward-diffuse from path[i] back up to path[j]
            const double a0 = sched.alpha_at(path[i]), s0 = sched.sigma_at(path[i]);
            const double a1 = sched.alpha_at(path[j]), s1 = sched.sigma_at(path[j]);
            const double ratio = a1 / a0, sd = std::sqrt(std::max(0.0, s1 * s1 - ratio * ratio * s0 * s0));
            x *= ratio;
            for (Eigen::Index c = 0; c < x.cols(); ++c)
                for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, c) += sd * rng::normal(gens[static_cast<std::size_t>(c)]);
            i = j;
            impose(path[i]);
        }
    }
}

namespace {
// Exact observations are point masses in every mode; round-off from the
// denormalisation (or the innovation floor under co-paint) is removed here.
Matrix finish(const Matrix& z, const ScoreModel& model, const ObservationSet& obs) {
    Matrix out = denormalize(z, model.norm);
    for (std::size_t i = 0; i < obs.size(); ++i)
        if (obs.sigma_o(static_cast<Eigen::Index>(i)) == 0)
            out.row(obs.indices[i]).setConstant(obs.values(static_cast<Eigen::Index>(i)));
    return out;
}
}  // namespace

Ensemble sample_conditioned(const ScoreModel& model, const NoiseSchedule& sched, const SamplerConfig& scfg,
                            const ObservationSet& obs, const GuidanceConfig& g, int n, std::uint64_t seed) {
    require(n >= 1, "sample_conditioned: n must be >= 1");
    model.validate();
    scfg.validate(sched);
    obs.validate(model.dim);
    const int d = model.dim;
    Matrix out(d, n);
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) seeds[static_cast<std::size_t>(i)] = member_seed(seed, static_cast<std::uint64_t>(i));
    parallel_chunks(n, kChunk, [&](std::ptrdiff_t b, std::ptrdiff_t e) {
        std::vector<rng::Engine> gens;
        Matrix x(d, e - b);
        for (std::ptrdiff_t j = b; j < e; ++j) {
            gens.push_back(rng::stream(seeds[static_cast<std::size_t>(j)], "sample"));
            fill_normals(x.col(j - b), gens.back());
        }
        conditioned_reverse(x, sched.n_steps, model, sched, scfg, obs, g, gens);
        out.middleCols(b, e - b) = finish(x, model, obs);
    });
    return Ensemble(std::move(out), std::move(seeds));
}

Ensemble sdedit(const Matrix& x_pred, const ScoreModel& model, const NoiseSchedule& sched, const SamplerConfig& scfg,
                const SDEditConfig& cfg, std::uint64_t seed, int replicates, const GuidanceConfig& g) {
    model.validate();
    scfg.validate(sched);
    require(cfg.tau_star_idx >= 0 && cfg.tau_star_idx <= sched.n_steps, "sdedit: tau_star_idx out of range");
    require(replicates >= 1, "sdedit: replicates must be >= 1");
    require(x_pred.rows() == model.dim && x_pred.cols() >= 1, "sdedit: input must be dim x M with M >= 1");
    const ObservationSet obs = cfg.combine_obs ? *cfg.combine_obs : empty_observations();
    obs.validate(model.dim);
    const Matrix z0 = normalize(x_pred, model.norm);
    const Eigen::Index m = x_pred.cols(), total = m * replicates, d = model.dim;
    const double a = sched.alpha(cfg.tau_star_idx), s = sched.sigma(cfg.tau_star_idx);
    Matrix out(d, total);
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(total));
    for (Eigen::Index c = 0; c < total; ++c) seeds[static_cast<std::size_t>(c)] = member_seed(seed, static_cast<std::uint64_t>(c));
    parallel_chunks(total, kChunk, [&](std::ptrdiff_t b, std::ptrdiff_t e) {
        std::vector<rng::Engine> gens;
        Matrix x(d, e - b);
        Eigen::VectorXd z(d);
        for (std::ptrdiff_t c = b; c < e; ++c) {
            gens.push_back(rng::stream(seeds[static_cast<std::size_t>(c)], "sdedit"));
            fill_normals(z, gens.back());
            x.col(c - b) = a * z0.col(c % m) + s * z;
        }
        conditioned_reverse(x, cfg.tau_star_idx, model, sched, scfg, obs, g, gens);
        out.middleCols(b, e - b) = finish(x, model, obs);
    });
    return Ensemble(std::move(out), std::move(seeds));
}

Ensemble sdedit(const StateVector& x_pred, const ScoreModel& model, const NoiseSchedule& sched,
                const SamplerConfig& scfg, const SDEditConfig& cfg, std::uint64_t seed, int replicates,
                const GuidanceConfig& g) {
    return sdedit(Matrix(x_pred), model, sched, scfg, cfg, seed, replicates, g);
}

TauCalibration calibrate_tau_star(const ScoreModel& model, const NoiseSchedule& sched, const SamplerConfig& scfg,
                                  const ForecastModel& forecaster, const Trajectory& val_data,
                                  std::vector<int> candidate_taus, int n_ens, std::uint64_t seed, int n_cases) {
    require(!candidate_taus.empty(), "calibrate_tau_star: no candidates");
    require(n_ens >= 1 && n_cases >= 1, "calibrate_tau_star: n_ens and n_cases must be >= 1");
    std::sort(candidate_taus.begin(), candidate_taus.end());
    candidate_taus.erase(std::unique(candidate_taus.begin(), candidate_taus.end()), candidate_taus.end());
    for (int t : candidate_taus) require(t >= 0 && t <= sched.n_steps, "calibrate_tau_star: candidate out of range");
    require(val_data.dim() == model.dim, "calibrate_tau_star: validation dimension mismatch");
    const Eigen::Index avail = val_data.size() - 1;
    if (avail < n_cases)
        throw InvalidArgument("calibrate_tau_star: validation data gives " + std::to_string(std::max<Eigen::Index>(avail, 0)) +
                              " forecast cases, need " + std::to_string(n_cases));
    const std::int64_t lead = data_step_lead(forecaster, val_data);
    const std::size_t nc = candidate_taus.size();
    std::vector<TauCandidateReport> rep(nc);
    for (std::size_t j = 0; j < nc; ++j) rep[j].tau_idx = candidate_taus[j];

    for (int c = 0; c < n_cases; ++c) {
        const Eigen::Index k = Eigen::Index(c) * avail / n_cases;
        const StateVector truth = val_data.state(k + 1);
        const StateVector pred = forecast(StateVector(val_data.state(k)), forecaster, lead,
                                          rng::derive(seed, "calib_forecast", static_cast<std::uint64_t>(k)),
                                          val_data.step_of(k));
        const StateVector truth_n = normalize(truth, model.norm);
        const std::optional<Spectrum> ref =
            truth.size() >= 2 ? std::optional<Spectrum>(power_spectrum(truth_n)) : std::nullopt;
        const std::uint64_t case_seed = rng::derive(seed, "calib_case", static_cast<std::uint64_t>(k));
        for (std::size_t j = 0; j < nc; ++j) {
            SDEditConfig sc;
            sc.tau_star_idx = candidate_taus[j];
            const Ensemble e = sdedit(pred, model, sched, scfg, sc, case_seed, n_ens);
            rep[j].crps += crps_field(e.members, truth);
            const StateVector mean_n = normalize(e.mean(), model.norm);
            rep[j].mae += (mean_n - truth_n).cwiseAbs().mean();
            if (ref) {
                const Spectrum sp = power_spectrum(mean_n);
                const double tot = ref->energy.sum();
                rep[j].spectrum_distance += tot > 0 ? (sp.energy - ref->energy).cwiseAbs().sum() / tot : 0.0;
            }
        }
    }
    TauCalibration out;
    std::size_t best = 0;
    for (std::size_t j = 0; j < nc; ++j) {
        rep[j].crps /= n_cases;
        rep[j].mae /= n_cases;
        rep[j].spectrum_distance /= n_cases;
        if (rep[j].crps < rep[best].crps) best = j;
    }
    out.tau_star_idx = rep[best].tau_idx;
    out.report = std::move(rep);
    return out;
}

ObservationSet forcing_constraint(const Trajectory& theta, Eigen::Index t, std::span<const int> forcing_coords) {
    require(static_cast<Eigen::Index>(forcing_coords.size()) == theta.dim(),
            "forcing_constraint: one coordinate per forcing series required");
    require(t >= 0 && t < theta.size(), "forcing_constraint: time index out of range");
    ObservationSet o;
    o.indices.assign(forcing_coords.begin(), forcing_coords.end());
    o.values = theta.state(t);
    o.sigma_o = StateVector::Zero(theta.dim());
    o.time_index = theta.step_of(t);
    return o;
}

Trajectory anomaly_persistence(const StateVector& theta_t0, const Climatology& clim, std::int64_t t0_phase,
                               int horizon) {
    require(clim.has_phases(), "anomaly_persistence: climatology has no phase table");
    require(theta_t0.size() == clim.dim(), "anomaly_persistence: dimension mismatch");
    require(horizon >= 1, "anomaly_persistence: horizon must be >= 1");
    const StateVector anom = theta_t0 - clim.phase_mean(t0_phase);
    Trajectory out;
    out.states.resize(theta_t0.size(), horizon);
    out.start_step = t0_phase + 1;
    for (int h = 1; h <= horizon; ++h) out.states.col(h - 1) = clim.phase_mean(t0_phase + h) + anom;
    return out;
}

}  // namespace gap
