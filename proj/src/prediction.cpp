#include "gap/prediction.hpp"

#include <algorithm>
#include <cmath>

#include "gap/error.hpp"

namespace gap {

ForecastRun ensemble_forecast(const Ensemble& init, const GapPipeline& pipe, std::int64_t lead_steps,
                              std::int64_t start_step, std::uint64_t seed, const std::optional<ForcingPath>& forcing) {
    pipe.validate();
    require(lead_steps >= 1, "ensemble_forecast: lead_steps must be >= 1");
    require(init.dim() == pipe.model.dim && init.size() >= 1, "ensemble_forecast: initial ensemble dimension mismatch");
    if (forcing) {
        require(forcing->theta.size() >= lead_steps, "ensemble_forecast: forcing horizon shorter than lead_steps");
        require(forcing->theta.dim() == static_cast<Eigen::Index>(forcing->coords.size()),
                "ensemble_forecast: forcing values and coordinates differ in size");
    }
    ForecastRun run;
    run.init_ensemble = init;
    run.lead_steps = lead_steps;
    run.start_step = start_step;
    run.tau_star_idx = pipe.tau_star_idx;
    run.per_lead.reserve(static_cast<std::size_t>(lead_steps));
    const Ensemble* cur = &init;
    for (std::int64_t k = 1; k <= lead_steps; ++k) {
        ObservationSet obs = empty_observations(k);
        if (forcing) obs = forcing_constraint(forcing->theta, k - 1, forcing->coords);
        auto step = gap_step(pipe, *cur, start_step + (k - 1) * pipe.step_lead, obs,
                             rng::derive(seed, "gap_step", static_cast<std::uint64_t>(k)));
        run.per_lead.push_back(std::move(step.analysis));
        run.resampled.push_back(std::move(step.resampled));
        cur = &run.per_lead.back();
    }
    return run;
}

ForecastRun seasonal_run(const Ensemble& init, const GapPipeline& pipe, const Trajectory& forcing_pred,
                         const std::vector<int>& coords, std::int64_t lead_steps, std::int64_t start_step,
                         std::uint64_t seed) {
    require(forcing_pred.size() >= lead_steps, "seasonal_run: forcing horizon shorter than lead_steps");
    return ensemble_forecast(init, pipe, lead_steps, start_step, seed, ForcingPath{forcing_pred, coords});
}

void ClimateRunConfig::validate() const {
    require(n_steps >= 0, "climate_run: n_steps must be >= 0");
    require(sdedit_every >= 0, "climate_run: sdedit_every must be >= 0");
    require(thin >= 0 && trace_every >= 1, "climate_run: bad thinning");
    require(excursion_z > 0, "climate_run: excursion_z must be positive");
    require(cycle_len >= 0, "climate_run: cycle_len must be >= 0");
}

void ClimateRunStats::merge(const ClimateRunStats& o) {
    if (o.count == 0) return;
    if (count == 0) {
        *this = o;
        return;
    }
    require(o.running_mean.size() == running_mean.size(), "ClimateRunStats::merge: dimension mismatch");
    const double na = double(count), nb = double(o.count), n = na + nb;
    const StateVector delta = o.running_mean - running_mean;
    const StateVector m2 = running_var * na + o.running_var * nb + delta.cwiseAbs2() * (na * nb / n);
    running_mean += delta * (nb / n);
    running_var = m2 / n;
    count += o.count;
    if (seasonal_composite.size() == o.seasonal_composite.size())
        for (std::size_t p = 0; p < seasonal_composite.size(); ++p) {
            const auto ca = double(phase_counts[p]), cb = double(o.phase_counts[p]);
            if (ca + cb > 0)
                seasonal_composite[p] = (seasonal_composite[p] * ca + o.seasonal_composite[p] * cb) / (ca + cb);
            phase_counts[p] += o.phase_counts[p];
        }
    excursion_log.insert(excursion_log.end(), o.excursion_log.begin(), o.excursion_log.end());
    excursion_count += o.excursion_count;
    max_abs = std::max(max_abs, o.max_abs);
    // traces of separate runs are not combined
}

ClimateRunResult climate_run(const StateVector& init, const GapPipeline& pipe, const Climatology& clim,
                             const ClimateRunConfig& cfg, std::uint64_t seed, const std::optional<ClimateForcing>& forcing) {
    pipe.validate();
    cfg.validate();
    const Eigen::Index d = pipe.model.dim;
    require(init.size() == d && clim.dim() == d, "climate_run: dimension mismatch");
    require(init.allFinite(), "climate_run: non-finite initial state");
    if (forcing) {
        require(static_cast<bool>(forcing->theta), "climate_run: forcing callback is empty");
        for (int c : forcing->coords) require(c >= 0 && c < d, "climate_run: forcing coordinate out of range");
    }

    ClimateRunResult out;
    auto& st = out.stats;
    if (cfg.n_steps == 0) return out;
    st.running_mean = StateVector::Zero(d);
    StateVector m2 = StateVector::Zero(d);
    if (cfg.cycle_len > 0) {
        st.seasonal_composite.assign(static_cast<std::size_t>(cfg.cycle_len), StateVector::Zero(d));
        st.phase_counts.assign(static_cast<std::size_t>(cfg.cycle_len), 0);
    }
    if (cfg.thin > 0) {
        out.thinned = Trajectory{};
        out.thinned->states.resize(d, (cfg.n_steps + cfg.thin - 1) / cfg.thin);
        out.thinned->start_step = cfg.start_step + pipe.step_lead;
        out.thinned->stride = cfg.thin * pipe.step_lead;
    }
    const StateVector inv_std = clim.std.cwiseInverse();
    double global_sum = 0;

    StateVector x = init;
    SDEditConfig sc;
    sc.tau_star_idx = pipe.tau_star_idx;
    for (std::int64_t k = 0; k < cfg.n_steps; ++k) {
        const std::int64_t from = cfg.start_step + k * pipe.step_lead, to = from + pipe.step_lead;
        try {
            StateVector y = forecast(x, pipe.forecaster, pipe.step_lead,
                                     rng::derive(seed, "climate_forecast", static_cast<std::uint64_t>(k)), from);
            const bool edit = cfg.sdedit_every > 0 && (k + 1) % cfg.sdedit_every == 0;
            std::optional<ObservationSet> obs;
            if (forcing) {
                ObservationSet o;
                o.indices = forcing->coords;
                o.values = forcing->theta(to);
                require(o.values.size() == static_cast<Eigen::Index>(o.indices.size()),
                        "climate_run: forcing callback returned the wrong size");
                o.sigma_o = StateVector::Zero(o.values.size());
                o.time_index = to;
                obs = std::move(o);
            }
            if (edit) {
                sc.combine_obs = obs;
                y = sdedit(Matrix(y), pipe.model, pipe.sched, pipe.sampler, sc,
                           rng::derive(seed, "climate_sdedit", static_cast<std::uint64_t>(k)), 1, pipe.guidance)
                        .members.col(0);
            } else if (obs) {
                for (std::size_t i = 0; i < obs->indices.size(); ++i)
                    y(obs->indices[i]) = obs->values(static_cast<Eigen::Index>(i));
            }
            if (!y.allFinite()) throw Divergence("climate_run: non-finite state", to);
            x = std::move(y);
        } catch (const Divergence& e) {
            throw RunDivergence(std::string("climate_run: run diverged: ") + e.what(), to, x);
        }

        // Welford update
        ++st.count;
        const StateVector delta = x - st.running_mean;
        st.running_mean += delta / double(st.count);
        m2 += delta.cwiseProduct(x - st.running_mean);
        st.max_abs = std::max(st.max_abs, x.cwiseAbs().maxCoeff());
        global_sum += x.mean();
        if (st.count % cfg.trace_every == 0) st.global_mean_trace.push_back(global_sum / double(st.count));
        if (cfg.cycle_len > 0) {
            const auto p = static_cast<std::size_t>(((to % cfg.cycle_len) + cfg.cycle_len) % cfg.cycle_len);
            ++st.phase_counts[p];
            st.seasonal_composite[p] += (x - st.seasonal_composite[p]) / double(st.phase_counts[p]);
        }
        const double z = (x - clim.mean).cwiseProduct(inv_std).cwiseAbs().maxCoeff();
        if (z > cfg.excursion_z) {
            ++st.excursion_count;
            if (st.excursion_log.size() < cfg.max_logged_excursions) st.excursion_log.push_back({to, z});
        }
        if (out.thinned && k % cfg.thin == 0) out.thinned->states.col(k / cfg.thin) = x;
    }
    st.running_var = m2 / double(st.count);
    return out;
}

}  // namespace gap
