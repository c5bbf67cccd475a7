// Acceptance runner: one PASS/FAIL line per criterion.
//
//   gap_acceptance [--only N ...] [--list]
//
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "gap/assimilation.hpp"
#include "gap/baselines.hpp"
#include "gap/commands.hpp"
#include "gap/error.hpp"
#include "gap/prediction.hpp"
#include "gap/rng.hpp"
#include "gap/verification.hpp"

using namespace gap;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(double v, int prec = 3) {
    std::ostringstream s;
    s << std::setprecision(prec) << v;
    return s.str();
}

Matrix sample_cov(const Matrix& x) {
    const Matrix c = x.colwise() - x.rowwise().mean();
    return c * c.transpose() / double(x.cols() - 1);
}

// Gaussian climatological prior in normalised space
ScoreModel climatological_prior(const Trajectory& data, const Climatology& clim) {
    return make_gaussian_score(StateVector::Zero(data.dim()), sample_cov(normalize(data.states, clim)), clim);
}

Ensemble perturbed(const StateVector& x, const Climatology& clim, double amp, int m, std::uint64_t seed, std::uint64_t idx) {
    Matrix init(x.size(), m);
    auto g = rng::stream(seed, "perturbation", idx);
    for (int j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < x.size(); ++i) init(i, j) = x(i) + amp * clim.std(i) * rng::normal(g);
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) seeds[static_cast<std::size_t>(j)] = static_cast<std::uint64_t>(j);
    return Ensemble(init, seeds);
}

// ---------------------------------------------------------------- 1
Outcome gaussian_posterior() {
    const auto spec = make_linear_gaussian(8, 0.1, 5);
    const Matrix prior = stationary_covariance(linear_gaussian_model(spec));
    const StateVector mu = StateVector::Zero(8);
    const auto model = make_gaussian_score(mu, prior);

    // observations of a draw from the prior
    const auto truth = generate_dataset(spec, 200, 1, 1, 3);
    ObservationSet o;
    o.indices = {1, 4, 6};
    o.sigma_o = StateVector::Constant(3, 0.5);
    o.values.resize(3);
    auto g = rng::stream(3, "obs_noise");
    for (int i = 0; i < 3; ++i) o.values(i) = truth.states(o.indices[i], 0) + 0.5 * rng::normal(g);

    // exact conditional
    Matrix h = Matrix::Zero(3, 8);
    for (int i = 0; i < 3; ++i) h(i, o.indices[i]) = 1;
    const Matrix s = h * prior * h.transpose() + Matrix(o.sigma_o.array().square().matrix().asDiagonal());
    const Matrix k = prior * h.transpose() * s.inverse();
    const StateVector post_mean = mu + k * (o.values - h * mu);
    const Matrix post_cov = prior - k * h * prior;

    GuidanceConfig gc;
    gc.mode = GuidanceMode::copaint;
    const auto e = sample_conditioned(model, build_schedule(), SamplerConfig{}, o, gc, 8192, 11);
    const double mean_err = (e.mean() - post_mean).cwiseQuotient(post_cov.diagonal().cwiseSqrt()).cwiseAbs().maxCoeff();
    const double cov_err = (sample_cov(e.members) - post_cov).norm() / post_cov.norm();
    return {mean_err < 0.05 && cov_err < 0.15,
            "max mean error " + fmt(mean_err) + " post sd (< 0.05), covariance Frobenius error " + fmt(cov_err) + " (< 0.15)"};
}

// ---------------------------------------------------------------- 2
Outcome sequential_lg() {
    const auto spec = make_linear_gaussian(8, 0.1, 5);
    const auto lg = linear_gaussian_model(spec);
    const Matrix p = stationary_covariance(lg);
    GapPipeline pipe;
    pipe.model = make_gaussian_score(StateVector::Zero(8), p);
    pipe.sched = build_schedule();
    pipe.forecaster = make_perfect_model(spec);
    pipe.guidance.mode = GuidanceMode::copaint;
    pipe.tau_star_idx = 20;
    AssimilationConfig ac;
    ac.window_steps = 50;
    ac.ensemble_size = 64;

    double gap_sum = 0, kf_sum = 0;
    std::string per;
    for (std::uint64_t rep = 0; rep < 3; ++rep) {
        const auto truth = generate_dataset(spec, 100, 51, 1, 10 + rep);
        const auto obs = simulate_obs_network(truth, 3, 0.5, ObsLayout::random_fixed, 1, 20 + rep);
        const auto kf = kalman_filter(lg, obs, StateVector::Zero(8), p);
        const auto rec = assimilation_cycle(truth, obs, pipe, ac, 3 + rep);
        double g = 0, k = 0;
        for (int t = 1; t <= 50; ++t) {
            g += rec[static_cast<std::size_t>(t)].diagnostics.at("rmse");
            k += rmse(kf[static_cast<std::size_t>(t)].mean, truth.state(t));
        }
        gap_sum += g;
        kf_sum += k;
        per += (rep ? ", " : "") + fmt(g / k);
    }
    const double ratio = gap_sum / kf_sum;
    return {ratio <= 1.3, "GAP/Kalman time-mean RMSE " + fmt(ratio) + " (<= 1.3); replicates " + per};
}

// ---------------------------------------------------------------- 3
Outcome lorenz96_assimilation() {
    const auto spec = make_lorenz96(40, 8.0, 0.05, 2);
    const auto data = generate_dataset(spec, 500, 20000, 1, 1);
    const auto clim = fit_climatology(data);
    const double threshold = 0.5 * clim.std.mean();
    GapPipeline pipe;
    pipe.model = climatological_prior(data, clim);
    pipe.sched = build_schedule();
    pipe.forecaster = make_perfect_model(spec);
    pipe.guidance.mode = GuidanceMode::copaint;
    pipe.tau_star_idx = 20;
    AssimilationConfig ac;
    ac.window_steps = 30;
    ac.ensemble_size = 32;
    const auto truth = generate_dataset(spec, 500, ac.window_steps + 1, 1, 77);

    std::vector<int> ttt;
    double rmse10 = 0;
    std::string sweep;
    for (int n_obs : {0, 4, 8, 20, 40}) {
        const auto obs = simulate_obs_network(truth, n_obs, 1.0, ObsLayout::random_fixed, 1, 5);
        const auto rec = assimilation_cycle(truth, obs, pipe, ac, 3);
        int first = ac.window_steps + 1;  // never reached
        for (int t = 0; t <= ac.window_steps; ++t)
            if (rec[static_cast<std::size_t>(t)].diagnostics.at("rmse") < threshold) {
                first = t;
                break;
            }
        if (n_obs == 8) rmse10 = rec[10].diagnostics.at("rmse");
        ttt.push_back(first);
        sweep += (sweep.empty() ? "" : ", ") + std::to_string(n_obs) + ":" +
                 (first > ac.window_steps ? std::string("never") : std::to_string(first));
    }
    int inversions = 0;
    for (std::size_t i = 1; i < ttt.size(); ++i) inversions += ttt[i] > ttt[i - 1];
    const bool ok = rmse10 < threshold && inversions <= 1;
    return {ok, "8 obs: RMSE after 10 cycles " + fmt(rmse10) + " vs threshold " + fmt(threshold) +
                    "; time-to-threshold by n_obs {" + sweep + "}, inversions " + std::to_string(inversions)};
}

// ---------------------------------------------------------------- 4
Outcome sdedit_bias() {
    const auto spec = make_lorenz96(8, 8.0, 0.05, 2);
    const auto data = generate_dataset(spec, 500, 3000, 1, 4);
    const auto clim = fit_climatology(data);
    const auto model = climatological_prior(data, clim);
    const auto sched = build_schedule();
    SamplerConfig sc;
    sc.n_steps = 25;
    Trajectory val = data;
    val.states = data.states.rightCols(200);
    val.start_step = data.step_of(data.size() - 200);
    const std::vector<int> cands{0, 10, 20, 40, 60, 80, 100};

    const auto unbiased = calibrate_tau_star(model, sched, sc, make_perfect_model(spec), val, cands, 16, 1);
    const auto biased =
        calibrate_tau_star(model, sched, sc, make_imperfect_model(spec, 0.0, 1, StateVector(clim.std)), val, cands, 16, 1);
    const auto& r = biased.report;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < r.size(); ++i) best = std::min(best, r[i].crps);
    const bool u_shape = best < r.front().crps && best < r.back().crps;
    std::string curve;
    for (const auto& c : r) curve += (curve.empty() ? "" : " ") + std::to_string(c.tau_idx) + ":" + fmt(c.crps);
    return {u_shape && biased.tau_star_idx > unbiased.tau_star_idx,
            "biased CRPS by tau {" + curve + "}; tau* biased " + std::to_string(biased.tau_star_idx) + ", unbiased " +
                std::to_string(unbiased.tau_star_idx)};
}

// ---------------------------------------------------------------- 5
Outcome forecast_skill() {
    const auto spec = make_lorenz96(40, 8.0, 0.05, 2);
    const auto data = generate_dataset(spec, 500, 20000, 1, 1);
    const auto clim = fit_climatology(data);
    GapPipeline pipe;
    pipe.model = climatological_prior(data, clim);
    pipe.sched = build_schedule();
    pipe.forecaster = make_imperfect_model(spec, 1.0, 2);
    pipe.tau_star_idx = 5;
    const int lead = 120, m = 32, cases = 30, spacing = 200;
    const auto test = generate_dataset(spec, 1000, cases * spacing + lead + 1, 1, 99);

    std::vector<double> acc_l(lead + 1, 0.0), crps_l(lead + 1, 0.0), clim_l(lead + 1, 0.0);
    std::vector<std::vector<Matrix>> ens(lead + 1);
    std::vector<Matrix> truths(lead + 1, Matrix(40, cases));
    for (int c = 0; c < cases; ++c) {
        const int s = c * spacing;
        const auto e0 = perturbed(test.state(s), clim, 0.05, m, 5, c);
        const auto run = ensemble_forecast(e0, pipe, lead, test.step_of(s), 7 + c);
        const auto ce = climatology_ensemble(clim, m, 100 + c, data);
        for (int k = 1; k <= lead; ++k) {
            const Matrix& e = run.per_lead[static_cast<std::size_t>(k - 1)].members;
            const StateVector y = test.state(s + k);
            acc_l[k] += acc(StateVector(e.rowwise().mean() - clim.mean), StateVector(y - clim.mean)).value_or(0.0) / cases;
            crps_l[k] += crps_field(e, y) / cases;
            clim_l[k] += crps_field(ce.members, y) / cases;
            ens[k].push_back(e);
            truths[k].col(c) = y;
        }
    }
    // 3-lead running mean; decay must be monotone until it has crossed 0.2
    std::vector<double> sm(lead + 1, 0.0);
    for (int k = 2; k < lead; ++k) sm[k] = (acc_l[k - 1] + acc_l[k] + acc_l[k + 1]) / 3;
    int crossed = -1;
    bool monotone = true;
    for (int k = 2; k < lead; ++k) {
        if (k > 2 && sm[k] > sm[k - 1]) monotone = false;
        if (sm[k] < 0.2) {
            crossed = k;
            break;
        }
    }
    // saturation: the last 40 leads
    double fc = 0, cl = 0;
    std::vector<Matrix> sat_e;
    Matrix sat_t(40, 0);
    for (int k = lead - 39; k <= lead; ++k) {
        fc += crps_l[k];
        cl += clim_l[k];
        sat_e.insert(sat_e.end(), ens[k].begin(), ens[k].end());
        sat_t.conservativeResize(40, sat_t.cols() + cases);
        sat_t.rightCols(cases) = truths[k];
    }
    const double crps_rel = fc / cl - 1.0;
    const double ssr = spread_skill_ratio(sat_e, sat_t).value_or(std::numeric_limits<double>::quiet_NaN());
    const bool ok = sm[2] > 0.95 && crossed > 0 && monotone && std::abs(crps_rel) <= 0.10 && ssr >= 0.8 && ssr <= 1.25;
    return {ok, "smoothed ACC " + fmt(sm[2]) + " at lead 2, below 0.2 from lead " + std::to_string(crossed) +
                    (monotone ? " (monotone)" : " (not monotone)") + "; saturated CRPS / climatology " + fmt(1 + crps_rel) +
                    "; SSR " + fmt(ssr)};
}

// ---------------------------------------------------------------- 6
Outcome seasonal_forcing() {
    ForcedRingOptions fo;
    fo.coupling = 2.0;
    fo.anom_amp = 2.0;
    const auto spec = make_lorenz96_forced(fo);
    const int cycle = static_cast<int>(std::lround(fo.cycle_len));
    const auto data = generate_dataset(spec, 1000, 100000, 1, 1);
    const auto clim = fit_climatology(data, cycle);
    GapPipeline pipe;
    pipe.model = climatological_prior(data, clim);
    pipe.sched = build_schedule();
    auto fm = make_imperfect_model(spec, 0.0, 1);
    fm.spec.params["anom_amp"] = 0.0;  // the model knows the seasonal cycle, not the anomalies
    pipe.forecaster = fm;
    pipe.tau_star_idx = 5;
    const auto fc = spec.forcing_coords();
    const auto ac = spec.atmosphere_coords();
    const auto fclim = clim.select(fc);
    const int lead = 400, window = 200, m = 16, cases = 30, spacing = 1000;
    const auto test = generate_dataset(spec, 50000, cases * spacing + lead + 1, 1, 3);

    int wins = 0;
    double forced_mean = 0, free_mean = 0;
    for (int c = 0; c < cases; ++c) {
        const int s = c * spacing;
        const auto step0 = test.step_of(s);
        const auto e0 = perturbed(test.state(s), clim, 0.05, m, 5, c);
        StateVector th0(static_cast<Eigen::Index>(fc.size()));
        for (std::size_t i = 0; i < fc.size(); ++i) th0(static_cast<Eigen::Index>(i)) = test.states(fc[i], s);
        const auto path = anomaly_persistence(th0, fclim, step0, lead);
        const auto forced = seasonal_run(e0, pipe, path, fc, lead, step0, 7 + c);
        const auto free = ensemble_forecast(e0, pipe, lead, step0, 7 + c);
        // window-mean anomalies on the atmosphere
        const auto na = static_cast<Eigen::Index>(ac.size());
        StateVector af = StateVector::Zero(na), ar = af, at = af;
        for (int k = window; k <= lead; ++k) {
            const StateVector pm = clim.phase_mean(test.step_of(s + k));
            const StateVector mf = forced.per_lead[static_cast<std::size_t>(k - 1)].members.rowwise().mean();
            const StateVector mr = free.per_lead[static_cast<std::size_t>(k - 1)].members.rowwise().mean();
            for (Eigen::Index i = 0; i < na; ++i) {
                const int j = ac[static_cast<std::size_t>(i)];
                af(i) += mf(j) - pm(j);
                ar(i) += mr(j) - pm(j);
                at(i) += test.states(j, s + k) - pm(j);
            }
        }
        const double a1 = acc(af, at).value_or(0.0), a2 = acc(ar, at).value_or(0.0);
        forced_mean += a1 / cases;
        free_mean += a2 / cases;
        wins += a1 > a2;
    }
    const double p = sign_test_p(wins, cases);
    return {p < 0.05, "window ACC forced " + fmt(forced_mean) + " vs free " + fmt(free_mean) + ", forced wins " +
                          std::to_string(wins) + "/" + std::to_string(cases) + ", sign test p " + fmt(p)};
}

// ---------------------------------------------------------------- 7
Outcome climate_stability() {
    const auto spec = make_lorenz96(40, 8.0, 0.05, 2);
    const auto data = generate_dataset(spec, 500, 20000, 1, 1);
    const auto clim = fit_climatology(data);
    ForecasterTraining ft;
    ft.epochs = 20;
    ft.seed = 3;
    GapPipeline pipe;
    pipe.model = climatological_prior(data, clim);
    pipe.sched = build_schedule();
    pipe.forecaster = train_forecaster(data, ft);
    pipe.tau_star_idx = 5;
    ClimateRunConfig cc;
    cc.n_steps = 1000000;
    cc.sdedit_every = 1;
    cc.trace_every = cc.n_steps / 20;
    try {
        const auto r = climate_run(data.state(0), pipe, clim, cc, 1);
        const double mean0 = clim.mean.mean(), sd = clim.std.mean();
        double worst = 0;
        for (double v : r.stats.global_mean_trace) worst = std::max(worst, std::abs(v - mean0) / sd);
        const Eigen::ArrayXd vr = r.stats.running_var.array() / clim.std.array().square();
        // bounded: per-coordinate variance within a factor of two of the training data
        const bool ok = r.stats.count == cc.n_steps && worst < 0.5 && vr.minCoeff() > 0.5 && vr.maxCoeff() < 2.0;
        return {ok, std::to_string(r.stats.count) + " steps finite; running global mean within " + fmt(worst) +
                        " clim std (< 0.5); variance ratio " + fmt(vr.minCoeff()) + ".." + fmt(vr.maxCoeff()) +
                        "; excursions " + std::to_string(r.stats.excursion_count)};
    } catch (const Divergence& e) {
        return {false, std::string("diverged: ") + e.what()};
    }
}

// ---------------------------------------------------------------- 8
Outcome forcing_response() {
    ForcedRingOptions fo;
    fo.coupling = 2.0;
    fo.anom_amp = 2.0;
    const auto spec = make_lorenz96_forced(fo);
    const auto data = generate_dataset(spec, 1000, 100000, 1, 1);
    const auto clim = fit_climatology(data);
    GapPipeline pipe;
    pipe.model = climatological_prior(data, clim);
    pipe.sched = build_schedule();
    pipe.forecaster = make_imperfect_model(spec, 0.0, 1);
    pipe.tau_star_idx = 5;
    const auto ac = spec.atmosphere_coords();
    std::vector<double> xs, ys;
    std::string pts;
    for (double shift : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
        ClimateForcing f{spec.forcing_coords(),
                         [&](std::int64_t s) { return StateVector(spec.theta_cycle(double(s)).array() + shift); }};
        ClimateRunConfig cc;
        cc.n_steps = 20000;
        const auto r = climate_run(data.state(0), pipe, clim, cc, 1, f);
        double mean = 0;
        for (int i : ac) mean += r.stats.running_mean(i);
        mean /= double(ac.size());
        xs.push_back(shift);
        ys.push_back(mean);
        pts += (pts.empty() ? "" : ", ") + fmt(shift, 2) + ":" + fmt(mean);
    }
    // least-squares slope
    const double n = double(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return {slope > 0, "atmosphere mean by shift {" + pts + "}; slope " + fmt(slope)};
}

// ---------------------------------------------------------------- 9
Outcome metric_suite() {
    std::vector<std::string> failed;
    auto expect = [&](bool ok, const char* what) {
        if (!ok) failed.emplace_back(what);
    };
    std::mt19937_64 g(2024);
    std::normal_distribution<double> nd;
    auto randn = [&](Eigen::Index n) {
        StateVector v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(g);
        return v;
    };

    // Gaussian CRPS closed form. A single M=4096 ensemble has 1.3-2.1% relative
    // sampling sd at these truths, so the 2% check is on the mean of 20
    // independent ensembles; the worst single ensemble is reported alongside.
    double worst_crps = 0, worst_single = 0;
    for (double y : {-1.0, 0.5, 4.0}) {
        const double ref = gaussian_crps(0.5, 2.0, y);
        double sum = 0;
        for (int r = 0; r < 20; ++r) {
            std::vector<double> x(4096);
            for (auto& v : x) v = 0.5 + 2.0 * nd(g);
            const double c = crps(x, y);
            worst_single = std::max(worst_single, std::abs(c / ref - 1.0));
            sum += c;
        }
        worst_crps = std::max(worst_crps, std::abs(sum / 20 / ref - 1.0));
    }
    expect(worst_crps < 0.02, "gaussian crps");

    // SSR of a reliable ensemble
    std::vector<Matrix> rel;
    Matrix truths(1, 2000);
    for (int t = 0; t < 2000; ++t) {
        const StateVector v = randn(33);
        rel.push_back(v.head(32).transpose());
        truths(0, t) = v(32);
    }
    const double ssr = spread_skill_ratio(rel, truths).value_or(0.0);
    expect(ssr >= 0.93 && ssr <= 1.07, "ssr reliability");

    // KS calibration
    std::uniform_real_distribution<double> u;
    int reject = 0;
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> a(100), b(100);
        for (auto& v : a) v = u(g);
        for (auto& v : b) v = u(g);
        reject += ks_two_sample(a, b).p_value < 0.05;
    }
    expect(reject >= 30 && reject <= 70, "ks calibration");

    // Parseval
    double parseval = 0;
    for (int len : {2, 7, 40, 41, 64}) {
        const StateVector f = randn(len);
        const auto sp = power_spectrum(f, 2.0);
        parseval = std::max({parseval, sp.parseval_residual, std::abs(sp.energy.sum() - 2.0 / len * f.squaredNorm())});
    }
    expect(parseval < 1e-10, "parseval");

    // EOFs against a dense eigensolver of the sample covariance
    Trajectory tr;
    tr.states.resize(20, 300);
    const Matrix mix = Matrix::Random(20, 20);
    for (int k = 0; k < 300; ++k) tr.states.col(k) = mix * randn(20);
    const auto eo = eof(tr, 5);
    Eigen::SelfAdjointEigenSolver<Matrix> es(sample_cov(tr.states));
    double eof_err = 0;
    for (int k = 0; k < 5; ++k) {
        const StateVector v = es.eigenvectors().col(19 - k);
        const double sgn = eo.patterns.col(k).dot(v) > 0 ? 1.0 : -1.0;
        eof_err = std::max({eof_err, (eo.patterns.col(k) - sgn * v).cwiseAbs().maxCoeff(),
                            std::abs(eo.variance(k) - es.eigenvalues()(19 - k)) / es.eigenvalues()(19 - k)});
    }
    expect(eof_err < 1e-8, "eof eigensolver");

    // degenerate cases, exact
    const StateVector a = randn(10);
    expect(rmse(a, a) == 0.0, "rmse a=a");
    expect(std::abs(rmse(a, StateVector(a.array() + 0.7)) - 0.7) < 1e-15, "rmse offset");
    expect(std::abs(*acc(a, a) - 1.0) < 1e-15, "acc a=a");
    expect(std::abs(*acc(a, StateVector(-a)) + 1.0) < 1e-15, "acc a=-a");
    expect(relative_improvement(2.0, 2.0) == 0.0, "ri equal");
    expect(std::abs(relative_improvement(1.1, 1.0) - 10.0) < 1e-12, "ri +10");
    expect(std::abs(relative_improvement(0.9, 1.0) + 10.0) < 1e-12, "ri -10");
    expect(crps(std::vector<double>(5, 1.25), 1.25) == 0.0, "crps members=truth");
    expect(crpss(1.0, 1.0) == 0.0 && crpss(0.0, 1.0) == 1.0 && crpss(2.0, 1.0) == -1.0, "crpss");
    Matrix flat_t(1, 3);
    flat_t << 0.0, 2.0, 1.5;
    expect(spread_skill_ratio(std::vector<Matrix>(3, Matrix::Constant(1, 4, 1.0)), flat_t) == 0.0, "ssr zero spread");
    const std::vector<double> xs{0.1, 0.5, 0.9};
    expect(ks_two_sample(xs, xs).statistic == 0.0, "ks x=y");
    expect(ks_two_sample(xs, std::vector<double>{2.0, 3.0}).statistic == 1.0, "ks disjoint");
    const auto flat = power_spectrum(StateVector::Constant(40, 1.5), 2.0);
    expect(std::abs(flat.energy(0) - 2.0 * 2.25) < 1e-12 && flat.energy.tail(20).cwiseAbs().maxCoeff() < 1e-20,
           "spectrum constant");
    StateVector sine(40);
    for (int j = 0; j < 40; ++j) sine(j) = std::sin(2 * std::numbers::pi * 3 * j / 40);
    const auto ss = power_spectrum(sine, 2.0);
    bool single = ss.energy(3) > 0.1;
    for (int k = 0; k <= 20; ++k) single = single && (k == 3 || ss.energy(k) < 1e-20);
    expect(single, "spectrum sinusoid");
    Trajectory r1;
    r1.states.resize(6, 50);
    const StateVector v = randn(6).normalized(), mu = randn(6);
    for (int k = 0; k < 50; ++k) r1.states.col(k) = mu + std::sin(0.3 * k) * 2.0 * v;
    const auto e1 = eof(r1, 1);
    expect(std::abs(std::abs(e1.patterns.col(0).dot(v)) - 1.0) < 1e-10 && std::abs(e1.explained_variance(0) - 1.0) < 1e-10,
           "eof rank one");
    bool threw = false;
    try {
        standardized_index(xs, xs);
    } catch (const InvalidArgument&) {
        threw = true;
    }
    expect(threw, "index identical series");
    const double sd = std::sqrt(1.25);
    expect(std::abs(standardized_index(std::vector<double>{2.5 + sd, 2.5 - sd}, std::vector<double>{0, 0})[0] - 10.0) < 1e-12,
           "index formula");

    std::string detail = "crps rel err " + fmt(worst_crps) + " (single ensemble " + fmt(worst_single) + "), ssr " + fmt(ssr) + ", ks rejections " +
                         std::to_string(reject) + "/1000, parseval " + fmt(parseval, 2) + ", eof " + fmt(eof_err, 2);
    for (const auto& f : failed) detail += "; failed: " + f;
    return {failed.empty(), detail};
}

// ---------------------------------------------------------------- 10
Outcome reproducibility() {
    const auto root = fs::temp_directory_path() / "gap_acceptance_repro";
    fs::remove_all(root);
    struct Setup {
        const char* tag;
        const char* config;
        std::vector<std::string> commands;
    };
    const std::vector<Setup> setups = {
        {"lg", R"({
            "system": {"kind": "linear_gaussian", "dim": 8, "dt": 0.1, "drift_seed": 5},
            "data": {"spinup": 100, "n_train": 2000, "n_test": 120},
            "diffusion": {"score": {"prior": "stationary"}},
            "conditioning": {"mode": "copaint", "tau_star_idx": 20},
            "observations": {"n_obs": 3, "sigma_o": 0.5},
            "assimilation": {"window_steps": 10, "ensemble_size": 16},
            "forecast": {"lead_steps": 5, "ensemble_size": 4, "n_cases": 3, "case_spacing": 30},
            "calibration": {"candidates": [0, 10], "n_cases": 3, "n_ensemble": 4},
            "baseline": {"method": "kalman"}, "seed": 11})",
         {"generate-data", "train-score", "train-forecaster", "assimilate", "forecast", "evaluate", "calibrate-tau",
          "baseline"}},
        {"learned", R"({
            "system": {"kind": "lorenz96", "dim": 8},
            "data": {"spinup": 200, "n_train": 600, "n_test": 200},
            "diffusion": {"score": {"kind": "mlp", "hidden": [16, 16], "epochs": 2, "weighting": "sigma2"}},
            "conditioning": {"tau_star_idx": 5},
            "forecaster": {"kind": "learned_mlp", "training": {"hidden": [16], "epochs": 2}},
            "assimilation": {"window_steps": 3, "ensemble_size": 4},
            "forecast": {"lead_steps": 3, "ensemble_size": 3, "n_cases": 2, "case_spacing": 20},
            "baseline": {"method": "enkf"}, "seed": 4})",
         {"generate-data", "train-score", "train-forecaster", "assimilate", "forecast", "evaluate", "baseline"}},
        {"forced", R"({
            "system": {"kind": "lorenz96_forced", "dim": 16, "forced": {"n_forcing": 4, "n_atmosphere": 12, "cycle_len": 100}},
            "data": {"spinup": 200, "n_train": 2000, "n_test": 300},
            "conditioning": {"tau_star_idx": 5},
            "forecaster": {"kind": "imperfect_physics", "forcing_shift": 0.0, "substep_divisor": 1},
            "seasonal": {"lead_steps": 30, "ensemble_size": 3, "n_cases": 3, "case_spacing": 50, "window_start": 10},
            "climate": {"n_steps": 300, "thin": 10, "trace_every": 100, "forcing_shift": 1.0}, "seed": 9})",
         {"generate-data", "train-score", "train-forecaster", "seasonal", "climate-run"}},
    };
    std::set<std::string> covered;
    std::vector<std::string> mismatched;
    std::size_t files = 0;
    for (const auto& s : setups) {
        const auto cfg = config_from_json(json::parse(s.config));
        CommandOptions oa, ob;
        oa.out = root / s.tag / "a";
        ob.out = root / s.tag / "b";
        oa.quiet = ob.quiet = true;
        for (const auto& cmd : s.commands) {
            const auto da = run_command(cmd, cfg, oa).output_digests();
            const auto db = run_command(cmd, cfg, ob).output_digests();
            files += da.size();
            if (da != db || da.empty()) mismatched.push_back(std::string(s.tag) + ":" + cmd);
            covered.insert(cmd);
        }
    }
    fs::remove_all(root);
    const bool all = covered.size() == command_names().size();
    std::string detail = std::to_string(covered.size()) + "/" + std::to_string(command_names().size()) +
                         " commands, " + std::to_string(files) + " output digests compared";
    for (const auto& m : mismatched) detail += "; differs: " + m;
    return {all && mismatched.empty(), detail};
}

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all = {
        {1, "Gaussian posterior oracle", 120, gaussian_posterior},
        {2, "sequential assimilation oracle", 300, sequential_lg},
        {3, "Lorenz-96 assimilation", 1200, lorenz96_assimilation},
        {4, "SDEdit bias correction", 900, sdedit_bias},
        {5, "forecast skill decay and calibration", 1200, forecast_skill},
        {6, "seasonal forcing value", 1800, seasonal_forcing},
        {7, "climate stability", 3600, climate_stability},
        {8, "forcing response", 2700, forcing_response},
        {9, "metric unit suite", 120, metric_suite},
        {10, "reproducibility", 300, reproducibility},
    };
    return all;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> only;
    bool list = false;
    app.add_option("--only", only, "criterion numbers to run (default: all)")->check(CLI::Range(1, 10));
    app.add_flag("--list", list, "list the criteria and exit");
    CLI11_PARSE(app, argc, argv);

    if (list) {
        for (const auto& c : criteria()) std::cout << c.id << "  " << c.name << "\n";
        return 0;
    }
    int failures = 0;
    for (const auto& c : criteria()) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.budget_s;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::cout << "criterion " << c.id << " " << (pass ? "PASS" : "FAIL") << "  " << c.name << ": " << o.detail << " ["
                  << fmt(secs, 3) << " s" << (in_time ? "" : ", over the " + fmt(c.budget_s, 4) + " s budget") << "]"
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
