#pragma once

// Sequential assimilation: cold start from the conditioned climatological
// prior, then forecast -> SDEdit -> observation inpainting each step. The
// same step drives the ensemble forecasts in prediction.hpp.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gap/conditioning.hpp"
#include "gap/diffusion.hpp"
#include "gap/dynamics.hpp"
#include "gap/state.hpp"

namespace gap {

/// Everything one forecast-and-correct step needs.
struct GapPipeline {
    ScoreModel model;
    NoiseSchedule sched;
    SamplerConfig sampler;
    GuidanceConfig guidance;
    int tau_star_idx = 20;
    ForecastModel forecaster;
    std::int64_t step_lead = 1;  // forecaster steps per pipeline step

    void validate() const;
};

struct GapStepResult {
    Ensemble forecast;
    Ensemble analysis;
    std::vector<int> resampled;  // members whose forecast diverged
};

/// Propagates every member one pipeline step from `start_step`, then SDEdits
/// the forecasts with `obs` inpainted. Diverged forecasts are replaced by a
/// randomly chosen surviving forecast plus 0.1 climatological-std noise.
GapStepResult gap_step(const GapPipeline& pipe, const Ensemble& members, std::int64_t start_step,
                       const ObservationSet& obs, std::uint64_t seed);

struct AssimilationConfig {
    int window_steps = 50;
    int obs_every = 1;
    int ensemble_size = 32;

    void validate() const;
};

struct CycleRecord {
    std::int64_t time_index = 0;
    Ensemble prior_ensemble;
    Ensemble posterior_ensemble;
    ObservationSet obs_used;
    std::map<std::string, double> diagnostics;
    std::vector<int> resampled;
};

Ensemble cold_start(const GapPipeline& pipe, const ObservationSet& obs0, int ensemble_size, std::uint64_t seed);

/// Records 0..window_steps. Record 0 is the cold start (or `init`); record k
/// analyses truth column k with the observation set whose time_index is k,
/// if k is a multiple of obs_every.
std::vector<CycleRecord> assimilation_cycle(const Trajectory& truth, const std::vector<ObservationSet>& obs_stream,
                                            const GapPipeline& pipe, const AssimilationConfig& cfg,
                                            std::uint64_t seed, const std::optional<Ensemble>& init = std::nullopt);

enum class ObsLayout { random_fixed, random_per_step };
std::string to_string(ObsLayout l);
ObsLayout obs_layout_from_string(const std::string& s);

/// Observation sets at truth columns 0, obs_every, 2 obs_every, ...
std::vector<ObservationSet> simulate_obs_network(const Trajectory& truth, int n_obs, double sigma_o, ObsLayout layout,
                                                 int obs_every, std::uint64_t seed);

struct DistanceBin {
    double lo = 0, hi = 0;
    int count = 0;
    double mean_spread = 0;
    double mean_abs_error = 0;
};

/// Coordinates grouped by distance to the nearest observed coordinate (ring
/// distance when `ring`). `edges` are ascending; bin i is [edges[i],
/// edges[i+1]). Empty bins are left out.
std::vector<DistanceBin> distance_binned_error(const CycleRecord& record, const StateVector& truth,
                                               const ObservationSet& obs, const std::vector<double>& edges,
                                               bool ring = true);

}  // namespace gap
