#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gap/assimilation.hpp"
#include "gap/baselines.hpp"
#include "gap/error.hpp"
#include "gap/verification.hpp"

using namespace gap;

namespace {
Matrix sample_cov(const Matrix& x) {
    const Matrix c = x.colwise() - x.rowwise().mean();
    return c * c.transpose() / double(x.cols() - 1);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = double(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> o(v.size());
    std::iota(o.begin(), o.end(), 0);
    std::sort(o.begin(), o.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < o.size(); ++i) r[o[i]] = double(i);
    return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) { return pearson(ranks(a), ranks(b)); }

// OU system with an analytic stationary prior and a perfect stochastic forecaster.
struct LgSetup {
    SystemSpec spec = make_linear_gaussian(8, 0.1, 5);
    LinearGaussianModel lg = linear_gaussian_model(spec);
    Matrix p_inf = stationary_covariance(lg);
    GapPipeline pipe;

    LgSetup() {
        pipe.model = make_gaussian_score(StateVector::Zero(8), p_inf);
        pipe.sched = build_schedule();
        pipe.forecaster = make_perfect_model(spec);
    }
};

// Lorenz-96 with a Gaussian prior fitted to a long run.
struct L96Setup {
    SystemSpec spec;
    Climatology clim;
    GapPipeline pipe;

    explicit L96Setup(int d) : spec(make_lorenz96(d, 8.0, 0.05, 2)) {
        const auto data = generate_dataset(spec, 500, 5000, 1, 1);
        clim = fit_climatology(data);
        pipe.model = make_gaussian_score(StateVector::Zero(d), sample_cov(normalize(data.states, clim)), clim);
        pipe.sched = build_schedule();
        pipe.forecaster = make_perfect_model(spec);
    }
};
}  // namespace

TEST_CASE("observation network") {
    const auto spec = make_lorenz96(10, 8.0, 0.05, 2);
    const auto truth = generate_dataset(spec, 100, 21, 1, 2);
    SUBCASE("no observations") {
        const auto s = simulate_obs_network(truth, 0, 1.0, ObsLayout::random_fixed, 1, 1);
        CHECK(s.size() == 21);
        for (const auto& o : s) CHECK(o.empty());
    }
    SUBCASE("full perfect observations reproduce the truth") {
        const auto s = simulate_obs_network(truth, 10, 0.0, ObsLayout::random_per_step, 4, 1);
        CHECK(s.size() == 6);
        for (const auto& o : s) {
            CHECK(o.time_index % 4 == 0);
            CHECK(o.values == StateVector(truth.state(o.time_index)));
        }
    }
    SUBCASE("layouts") {
        const auto a = simulate_obs_network(truth, 4, 0.5, ObsLayout::random_fixed, 1, 7);
        const auto b = simulate_obs_network(truth, 4, 0.5, ObsLayout::random_fixed, 1, 7);
        for (std::size_t k = 0; k < a.size(); ++k) {
            CHECK(a[k].indices == a[0].indices);
            CHECK(a[k].indices == b[k].indices);
            CHECK(a[k].values == b[k].values);
            CHECK(std::is_sorted(a[k].indices.begin(), a[k].indices.end()));
        }
        const auto c = simulate_obs_network(truth, 4, 0.5, ObsLayout::random_per_step, 1, 7);
        int differ = 0;
        for (std::size_t k = 1; k < c.size(); ++k) differ += c[k].indices != c[0].indices;
        CHECK(differ > 10);
        CHECK_THROWS_AS(simulate_obs_network(truth, 11, 0.5, ObsLayout::random_fixed, 1, 7), InvalidArgument);
        CHECK_THROWS_AS(obs_layout_from_string("grid"), InvalidArgument);
    }
}

TEST_CASE("cold start") {
    const auto spec = make_linear_gaussian(8, 0.1, 5);
    const auto data = generate_dataset(spec, 100, 20000, 5, 3);
    const auto clim = fit_climatology(data);
    GapPipeline pipe;
    pipe.model = make_gaussian_score(StateVector::Zero(8), sample_cov(normalize(data.states, clim)), clim);
    pipe.sched = build_schedule();
    pipe.forecaster = make_perfect_model(spec);
    SUBCASE("empty observations give the climatological spread") {
        const auto e = cold_start(pipe, empty_observations(), 64, 1);
        const double ratio = std::sqrt(e.spread().cwiseQuotient(clim.std).array().square().mean());
        MESSAGE("rms spread ratio at M=64: " << ratio);
        CHECK(std::abs(ratio - 1.0) < 0.15);
        const auto big = cold_start(pipe, empty_observations(), 2048, 2);
        CHECK((big.spread().cwiseQuotient(clim.std).array() - 1.0).abs().maxCoeff() < 0.06);
    }
    SUBCASE("full perfect observations pin every member") {
        ObservationSet o;
        o.indices = {0, 1, 2, 3, 4, 5, 6, 7};
        o.values = data.state(10);
        o.sigma_o = StateVector::Zero(8);
        for (auto mode : {GuidanceMode::replace, GuidanceMode::copaint}) {
            pipe.guidance.mode = mode;
            const auto e = cold_start(pipe, o, 16, 3);
            CHECK((e.members.colwise() - o.values).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("perfect forecaster with perfect full observations has zero error") {
    LgSetup s;
    const auto truth = generate_dataset(s.spec, 50, 11, 1, 4);
    const auto obs = simulate_obs_network(truth, 8, 0.0, ObsLayout::random_fixed, 1, 1);
    AssimilationConfig cfg;
    cfg.window_steps = 10;
    cfg.ensemble_size = 8;
    const auto rec = assimilation_cycle(truth, obs, s.pipe, cfg, 5);
    REQUIRE(rec.size() == 11);
    for (const auto& r : rec) {
        CHECK(r.diagnostics.at("rmse") < 1e-12);
        CHECK(r.prior_ensemble.size() == r.posterior_ensemble.size());
    }
}

TEST_CASE("linear-Gaussian cycle stays close to the Kalman filter") {
    LgSetup s;
    s.pipe.guidance.mode = GuidanceMode::copaint;
    s.pipe.tau_star_idx = 20;
    double gap_sum = 0, kf_sum = 0;
    for (std::uint64_t rep = 0; rep < 3; ++rep) {
        const auto truth = generate_dataset(s.spec, 100, 51, 1, 10 + rep);
        const auto obs = simulate_obs_network(truth, 3, 0.5, ObsLayout::random_fixed, 1, 20 + rep);
        const auto kf = kalman_filter(s.lg, obs, StateVector::Zero(8), s.p_inf);
        AssimilationConfig cfg;
        cfg.window_steps = 50;
        cfg.ensemble_size = 64;
        const auto rec = assimilation_cycle(truth, obs, s.pipe, cfg, 3 + rep);
        for (int t = 1; t <= 50; ++t) {
            gap_sum += rec[static_cast<std::size_t>(t)].diagnostics.at("rmse");
            kf_sum += rmse(kf[static_cast<std::size_t>(t)].mean, truth.state(t));
        }
    }
    MESSAGE("GAP / Kalman RMSE ratio: " << gap_sum / kf_sum);
    CHECK(gap_sum / kf_sum <= 1.3);
}

TEST_CASE("cycle bookkeeping") {
    LgSetup s;
    const auto truth = generate_dataset(s.spec, 50, 13, 1, 4);
    const auto obs = simulate_obs_network(truth, 3, 0.5, ObsLayout::random_fixed, 3, 1);
    AssimilationConfig cfg;
    cfg.window_steps = 12;
    cfg.obs_every = 3;
    cfg.ensemble_size = 6;
    const auto a = assimilation_cycle(truth, obs, s.pipe, cfg, 9);
    const auto b = assimilation_cycle(truth, obs, s.pipe, cfg, 9);
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].posterior_ensemble.members == b[k].posterior_ensemble.members);
        CHECK(a[k].obs_used.size() == (k % 3 == 0 ? 3u : 0u));
        CHECK(a[k].time_index == static_cast<std::int64_t>(k));
    }
    cfg.obs_every = 2;
    CHECK_THROWS_AS(assimilation_cycle(truth, obs, s.pipe, cfg, 9), InvalidArgument);
    cfg.obs_every = 3;
    cfg.window_steps = 13;
    CHECK_THROWS_AS(assimilation_cycle(truth, obs, s.pipe, cfg, 9), InvalidArgument);

    SUBCASE("diverged members are resampled") {
        Matrix init = Matrix::Zero(8, 4);
        init.col(2).setConstant(std::numeric_limits<double>::infinity());
        const Ensemble e(init, {0, 1, 2, 3});
        const auto step = gap_step(s.pipe, e, 0, empty_observations(1), 3);
        CHECK(step.resampled == std::vector<int>{2});
        CHECK(step.analysis.members.allFinite());
        init.setConstant(std::numeric_limits<double>::quiet_NaN());
        CHECK_THROWS_AS(gap_step(s.pipe, Ensemble(init, {0, 1, 2, 3}), 0, empty_observations(1), 3), Divergence);
    }
}

TEST_CASE("distance bins") {
    LgSetup s;
    const auto truth = generate_dataset(s.spec, 50, 3, 1, 4);
    const auto full = simulate_obs_network(truth, 8, 0.0, ObsLayout::random_fixed, 1, 1);
    AssimilationConfig cfg;
    cfg.window_steps = 2;
    cfg.ensemble_size = 8;
    const auto rec = assimilation_cycle(truth, full, s.pipe, cfg, 1);
    const auto bins = distance_binned_error(rec[2], truth.state(2), full[2], {0, 1, 2, 4, 8}, false);
    REQUIRE(bins.size() == 1);
    CHECK(bins[0].lo == 0);
    CHECK(bins[0].count == 8);
    CHECK(bins[0].mean_spread < 1e-12);
    CHECK_THROWS_AS(distance_binned_error(rec[2], truth.state(2), empty_observations(2), {0, 1}), InvalidArgument);
}

TEST_CASE("Lorenz-96 cycle: error and spread grow away from observations") {
    L96Setup s(40);
    const auto truth = generate_dataset(s.spec, 500, 31, 1, 77);
    const auto obs = simulate_obs_network(truth, 8, 0.5, ObsLayout::random_fixed, 1, 5);
    AssimilationConfig cfg;
    cfg.window_steps = 30;
    cfg.ensemble_size = 32;
    const auto rec = assimilation_cycle(truth, obs, s.pipe, cfg, 3);
    const std::vector<double> edges{0, 1, 2, 3, 4, 6, 21};
    std::vector<double> sp(edges.size() - 1, 0), err(edges.size() - 1, 0), cnt(edges.size() - 1, 0);
    std::vector<double> all_sp, all_err;
    for (std::size_t k = 10; k < rec.size(); ++k) {
        const auto bins = distance_binned_error(rec[k], truth.state(rec[k].time_index), rec[k].obs_used, edges, true);
        for (const auto& b : bins) {
            const auto i = static_cast<std::size_t>(std::find(edges.begin(), edges.end(), b.lo) - edges.begin());
            sp[i] += b.mean_spread * b.count;
            err[i] += b.mean_abs_error * b.count;
            cnt[i] += b.count;
        }
        const StateVector spread = rec[k].posterior_ensemble.spread();
        const StateVector e = rec[k].posterior_ensemble.mean() - truth.state(rec[k].time_index);
        for (Eigen::Index i = 0; i < spread.size(); ++i) all_sp.push_back(spread(i)), all_err.push_back(std::abs(e(i)));
    }
    std::vector<double> dist, msp, merr;
    for (std::size_t i = 0; i < cnt.size(); ++i)
        if (cnt[i] > 0) dist.push_back(edges[i]), msp.push_back(sp[i] / cnt[i]), merr.push_back(err[i] / cnt[i]);
    const double rho_sp = spearman(dist, msp), rho_err = spearman(dist, merr), rho_ss = pearson(all_sp, all_err);
    MESSAGE("Spearman(distance, spread) " << rho_sp << ", (distance, error) " << rho_err
                                          << ", spread-skill correlation " << rho_ss);
    CHECK(rho_sp > 0);
    CHECK(rho_err > 0);
    CHECK(rho_ss > 0.3);
}

TEST_CASE("no observations: diagnostics stay climatological") {
    L96Setup s(20);
    const auto truth = generate_dataset(s.spec, 500, 41, 1, 8);
    AssimilationConfig cfg;
    cfg.window_steps = 40;
    cfg.ensemble_size = 32;
    const auto rec = assimilation_cycle(truth, {}, s.pipe, cfg, 4);
    const double clim_sd = std::sqrt(s.clim.std.array().square().mean());
    double sp = 0;
    for (std::size_t k = 31; k < rec.size(); ++k) sp += rec[k].diagnostics.at("spread");
    sp /= 10;
    MESSAGE("late spread / climatological std: " << sp / clim_sd);
    CHECK(std::abs(sp / clim_sd - 1.0) < 0.2);
}
