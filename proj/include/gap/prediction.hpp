#pragma once

// Ensemble forecasts, persisted-forcing seasonal runs and long free runs with
// streamed statistics. Every forecast step is assimilation's gap_step with no
// observations (or with the forcing constraint), so lead 1 of a forecast and
// one empty-observation cycle step agree bit for bit under a shared seed.

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "gap/assimilation.hpp"
#include "gap/error.hpp"

namespace gap {

/// Prescribed values for `coords`; column k-1 constrains lead k.
struct ForcingPath {
    Trajectory theta;
    std::vector<int> coords;
};

struct ForecastRun {
    Ensemble init_ensemble;
    std::int64_t lead_steps = 0;
    std::int64_t start_step = 0;
    int tau_star_idx = 0;
    std::vector<Ensemble> per_lead;               // per_lead[k-1] is lead k
    std::vector<std::vector<int>> resampled;      // per lead
};

ForecastRun ensemble_forecast(const Ensemble& init, const GapPipeline& pipe, std::int64_t lead_steps,
                              std::int64_t start_step, std::uint64_t seed,
                              const std::optional<ForcingPath>& forcing = std::nullopt);

/// ensemble_forecast with `forcing_pred` (e.g. from anomaly_persistence)
/// inpainted on `coords` at every lead.
ForecastRun seasonal_run(const Ensemble& init, const GapPipeline& pipe, const Trajectory& forcing_pred,
                         const std::vector<int>& coords, std::int64_t lead_steps, std::int64_t start_step,
                         std::uint64_t seed);

struct ClimateForcing {
    std::vector<int> coords;
    std::function<StateVector(std::int64_t step)> theta;  // model step -> forced values
};

struct ClimateRunConfig {
    std::int64_t n_steps = 1000;
    int sdedit_every = 1;          // 0 disables SDEdit (forcing is then written directly)
    std::int64_t thin = 0;         // keep every thin-th state; 0 keeps none
    std::int64_t trace_every = 1000;
    double excursion_z = 5.0;
    std::size_t max_logged_excursions = 10000;
    int cycle_len = 0;             // phases of the seasonal composite; 0 disables it
    std::int64_t start_step = 0;

    void validate() const;
};

struct Excursion {
    std::int64_t step = 0;
    double z = 0;
};

/// Streaming statistics; merge() combines runs (Chan et al. parallel update).
struct ClimateRunStats {
    std::int64_t count = 0;
    StateVector running_mean;
    StateVector running_var;       // population variance
    std::vector<StateVector> seasonal_composite;
    std::vector<std::int64_t> phase_counts;
    std::vector<Excursion> excursion_log;
    std::int64_t excursion_count = 0;
    std::vector<double> global_mean_trace;  // running mean of the global average, every trace_every steps
    double max_abs = 0;

    void merge(const ClimateRunStats& other);
};

struct ClimateRunResult {
    ClimateRunStats stats;
    std::optional<Trajectory> thinned;
};

/// Raised when a free run leaves the finite domain; keeps the last finite state.
class RunDivergence : public Divergence {
public:
    RunDivergence(const std::string& what, std::int64_t step, StateVector last_finite)
        : Divergence(what, step), last_finite_(std::move(last_finite)) {}
    const StateVector& last_finite() const noexcept { return last_finite_; }

private:
    StateVector last_finite_;
};

/// Single-member roll-out. `clim` supplies the z-scores for the excursion log.
ClimateRunResult climate_run(const StateVector& init, const GapPipeline& pipe, const Climatology& clim,
                             const ClimateRunConfig& cfg, std::uint64_t seed,
                             const std::optional<ClimateForcing>& forcing = std::nullopt);

}  // namespace gap
