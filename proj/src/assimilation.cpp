#include "gap/assimilation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gap/error.hpp"
#include "gap/parallel.hpp"
#include "gap/verification.hpp"

namespace gap {

namespace {
constexpr double kResampleJitter = 0.1;

const ObservationSet* find_obs(const std::vector<ObservationSet>& stream, std::int64_t t) {
    for (const auto& o : stream)
        if (o.time_index == t) return &o;
    return nullptr;
}

void diagnose(CycleRecord& r, const StateVector& truth) {
    auto& d = r.diagnostics;
    const StateVector mean = r.posterior_ensemble.mean();
    d["rmse"] = rmse(mean, truth);
    d["prior_rmse"] = rmse(r.prior_ensemble.mean(), truth);
    d["crps"] = crps_field(r.posterior_ensemble.members, truth);
    const auto sp = [](const Ensemble& e) { return std::sqrt(e.spread().array().square().mean()); };
    d["spread"] = sp(r.posterior_ensemble);
    d["prior_spread"] = sp(r.prior_ensemble);
    d["n_obs"] = double(r.obs_used.size());
    d["resampled"] = double(r.resampled.size());
    if (!r.obs_used.empty()) {
        d["rmse_observed"] = rmse(r.obs_used.select(mean), r.obs_used.select(truth));
        std::vector<bool> seen(static_cast<std::size_t>(truth.size()), false);
        for (int i : r.obs_used.indices) seen[static_cast<std::size_t>(i)] = true;
        double s = 0;
        int n = 0;
        for (Eigen::Index i = 0; i < truth.size(); ++i)
            if (!seen[static_cast<std::size_t>(i)]) s += (mean(i) - truth(i)) * (mean(i) - truth(i)), ++n;
        if (n > 0) d["rmse_unobserved"] = std::sqrt(s / n);
    }
}
}  // namespace

void GapPipeline::validate() const {
    model.validate();
    sampler.validate(sched);
    guidance.validate();
    forecaster.validate();
    require(model.dim == forecaster.dim(), "pipeline: score model and forecaster dimensions differ");
    require(tau_star_idx >= 0 && tau_star_idx <= sched.n_steps, "pipeline: tau_star_idx out of range");
    require(step_lead >= 1, "pipeline: step_lead must be >= 1");
}

GapStepResult gap_step(const GapPipeline& pipe, const Ensemble& members, std::int64_t start_step,
                       const ObservationSet& obs, std::uint64_t seed) {
    const Eigen::Index d = members.dim(), m = members.size();
    require(d == pipe.model.dim && m >= 1, "gap_step: ensemble dimension mismatch");
    Matrix fc(d, m);
    std::vector<char> bad(static_cast<std::size_t>(m), 0);
    parallel_chunks(m, kChunk, [&](std::ptrdiff_t b, std::ptrdiff_t e) {
        for (std::ptrdiff_t j = b; j < e; ++j) {
            try {
                fc.col(j) = forecast(StateVector(members.members.col(j)), pipe.forecaster, pipe.step_lead,
                                     rng::derive(seed, "forecast", static_cast<std::uint64_t>(j)), start_step);
            } catch (const Divergence&) {
                bad[static_cast<std::size_t>(j)] = 1;
            }
        }
    });
    GapStepResult out;
    std::vector<Eigen::Index> alive;
    for (Eigen::Index j = 0; j < m; ++j) {
        if (bad[static_cast<std::size_t>(j)])
            out.resampled.push_back(static_cast<int>(j));
        else
            alive.push_back(j);
    }
    if (alive.empty()) throw Divergence("gap_step: every ensemble member diverged", start_step);
    for (int j : out.resampled) {
        auto g = rng::stream(seed, "resample", static_cast<std::uint64_t>(j));
        std::uniform_int_distribution<std::size_t> pick(0, alive.size() - 1);
        fc.col(j) = fc.col(alive[pick(g)]);
        for (Eigen::Index i = 0; i < d; ++i) fc(i, j) += kResampleJitter * pipe.model.norm.std(i) * rng::normal(g);
    }
    out.forecast = Ensemble(fc, members.member_seeds);
    SDEditConfig sc;
    sc.tau_star_idx = pipe.tau_star_idx;
    if (!obs.empty()) sc.combine_obs = obs;
    out.analysis = sdedit(fc, pipe.model, pipe.sched, pipe.sampler, sc, rng::derive(seed, "sdedit"), 1, pipe.guidance);
    return out;
}

void AssimilationConfig::validate() const {
    require(window_steps >= 1, "assimilation: window_steps must be >= 1");
    require(obs_every >= 1, "assimilation: obs_every must be >= 1");
    require(ensemble_size >= 1, "assimilation: ensemble_size must be >= 1");
}

Ensemble cold_start(const GapPipeline& pipe, const ObservationSet& obs0, int ensemble_size, std::uint64_t seed) {
    return sample_conditioned(pipe.model, pipe.sched, pipe.sampler, obs0, pipe.guidance, ensemble_size, seed);
}

std::vector<CycleRecord> assimilation_cycle(const Trajectory& truth, const std::vector<ObservationSet>& obs_stream,
                                            const GapPipeline& pipe, const AssimilationConfig& cfg,
                                            std::uint64_t seed, const std::optional<Ensemble>& init) {
    pipe.validate();
    cfg.validate();
    require(truth.dim() == pipe.model.dim, "assimilation_cycle: truth dimension mismatch");
    require(truth.size() > cfg.window_steps, "assimilation_cycle: truth shorter than the window");
    for (const auto& o : obs_stream) {
        o.validate(truth.dim());
        require(o.time_index >= 0 && o.time_index < truth.size(), "assimilation_cycle: observation time out of range");
        require(o.time_index % cfg.obs_every == 0, "assimilation_cycle: observation time not on the analysis cadence");
    }
    auto obs_at = [&](std::int64_t k) {
        if (k % cfg.obs_every != 0) return empty_observations(k);
        const ObservationSet* o = find_obs(obs_stream, k);
        return o ? *o : empty_observations(k);
    };

    std::vector<CycleRecord> out;
    CycleRecord r0;
    r0.time_index = 0;
    if (init) {
        require(init->dim() == truth.dim(), "assimilation_cycle: initial ensemble dimension mismatch");
        r0.prior_ensemble = *init;
        r0.posterior_ensemble = *init;
        r0.obs_used = empty_observations(0);
    } else {
        r0.obs_used = obs_at(0);
        r0.prior_ensemble = sample(pipe.model, pipe.sched, pipe.sampler, cfg.ensemble_size, rng::derive(seed, "prior"));
        r0.posterior_ensemble = cold_start(pipe, r0.obs_used, cfg.ensemble_size, rng::derive(seed, "cold_start"));
    }
    diagnose(r0, truth.state(0));
    out.push_back(std::move(r0));

    for (int k = 1; k <= cfg.window_steps; ++k) {
        CycleRecord r;
        r.time_index = k;
        r.obs_used = obs_at(k);
        auto step = gap_step(pipe, out.back().posterior_ensemble, truth.step_of(k - 1), r.obs_used,
                             rng::derive(seed, "gap_step", static_cast<std::uint64_t>(k)));
        r.prior_ensemble = std::move(step.forecast);
        r.posterior_ensemble = std::move(step.analysis);
        r.resampled = std::move(step.resampled);
        diagnose(r, truth.state(k));
        out.push_back(std::move(r));
    }
    return out;
}

std::string to_string(ObsLayout l) { return l == ObsLayout::random_fixed ? "random_fixed" : "random_per_step"; }

ObsLayout obs_layout_from_string(const std::string& s) {
    if (s == "random_fixed") return ObsLayout::random_fixed;
    if (s == "random_per_step") return ObsLayout::random_per_step;
    throw InvalidArgument("unknown observation layout '" + s + "'");
}

std::vector<ObservationSet> simulate_obs_network(const Trajectory& truth, int n_obs, double sigma_o, ObsLayout layout,
                                                 int obs_every, std::uint64_t seed) {
    const auto d = static_cast<int>(truth.dim());
    require(n_obs >= 0 && n_obs <= d, "simulate_obs_network: n_obs must be in [0, d]");
    require(sigma_o >= 0 && std::isfinite(sigma_o), "simulate_obs_network: sigma_o must be >= 0");
    require(obs_every >= 1, "simulate_obs_network: obs_every must be >= 1");
    auto draw_indices = [&](std::uint64_t index) {
        std::vector<int> all(static_cast<std::size_t>(d));
        std::iota(all.begin(), all.end(), 0);
        auto g = rng::stream(seed, "obs_layout", index);
        // partial Fisher-Yates
        for (int i = 0; i < n_obs; ++i) {
            std::uniform_int_distribution<int> pick(i, d - 1);
            std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(g))]);
        }
        all.resize(static_cast<std::size_t>(n_obs));
        std::sort(all.begin(), all.end());
        return all;
    };
    const std::vector<int> fixed = draw_indices(0);
    std::vector<ObservationSet> out;
    for (Eigen::Index k = 0; k < truth.size(); k += obs_every) {
        ObservationSet t;
        t.indices = layout == ObsLayout::random_fixed ? fixed : draw_indices(static_cast<std::uint64_t>(k) + 1);
        t.sigma_o = StateVector::Constant(n_obs, sigma_o);
        t.values = StateVector::Zero(n_obs);
        t.time_index = k;
        out.push_back(apply_observation_noise(StateVector(truth.state(k)), t, seed));
    }
    return out;
}

std::vector<DistanceBin> distance_binned_error(const CycleRecord& record, const StateVector& truth,
                                               const ObservationSet& obs, const std::vector<double>& edges, bool ring) {
    const Eigen::Index d = truth.size();
    require(record.posterior_ensemble.dim() == d, "distance_binned_error: dimension mismatch");
    require(edges.size() >= 2 && std::is_sorted(edges.begin(), edges.end()), "distance_binned_error: need ascending edges");
    obs.validate(d);
    require(!obs.empty(), "distance_binned_error: no observed coordinates");
    const StateVector mean = record.posterior_ensemble.mean(), spread = record.posterior_ensemble.spread();
    std::vector<DistanceBin> bins(edges.size() - 1);
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) bins[b].lo = edges[b], bins[b].hi = edges[b + 1];
    for (Eigen::Index i = 0; i < d; ++i) {
        double dist = std::numeric_limits<double>::infinity();
        for (int j : obs.indices) {
            double a = std::abs(double(i - j));
            if (ring) a = std::min(a, double(d) - a);
            dist = std::min(dist, a);
        }
        for (auto& b : bins)
            if (dist >= b.lo && dist < b.hi) {
                ++b.count;
                b.mean_spread += spread(i);
                b.mean_abs_error += std::abs(mean(i) - truth(i));
                break;
            }
    }
    std::vector<DistanceBin> out;
    for (auto& b : bins)
        if (b.count > 0) {
            b.mean_spread /= b.count;
            b.mean_abs_error /= b.count;
            out.push_back(b);
        }
    return out;
}

}  // namespace gap
