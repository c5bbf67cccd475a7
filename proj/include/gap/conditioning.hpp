#pragma once

// Observation operators and conditioned generation: inpainting by
// replacement (optionally with time travel), likelihood-guided sampling,
// SDEdit and the tau* calibration sweep. The observation operator is a
// coordinate selection.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gap/diffusion.hpp"
#include "gap/dynamics.hpp"
#include "gap/state.hpp"

namespace gap {

/// Direct observations of selected coordinates with diagonal error.
struct ObservationSet {
    std::vector<int> indices;
    StateVector values;
    StateVector sigma_o;
    std::int64_t time_index = 0;

    std::size_t size() const { return indices.size(); }
    bool empty() const { return indices.empty(); }
    void validate(Eigen::Index dim) const;
    /// Selection of x at the observed coordinates.
    StateVector select(const StateVector& x) const;
};

ObservationSet empty_observations(std::int64_t time_index = 0);

enum class GuidanceMode { replace, copaint, replace_plus_travel };
/// How the Jacobian of the one-step denoiser enters the likelihood gradient.
enum class JacobianApprox { inverse_alpha, tweedie };
/// Covariance of the denoiser error on the observed block.
enum class DenoiserCov { scaled_sigma2, tweedie };

std::string to_string(GuidanceMode m);
GuidanceMode guidance_mode_from_string(const std::string& s);
std::string to_string(JacobianApprox j);
JacobianApprox jacobian_approx_from_string(const std::string& s);
std::string to_string(DenoiserCov c);
DenoiserCov denoiser_cov_from_string(const std::string& s);

struct GuidanceConfig {
    GuidanceMode mode = GuidanceMode::replace;
    double sigma_tau_scale = 1.0;
    int travel_tau = 10;      // rewind depth in sampler nodes
    int travel_rounds = 2;    // K
    int travel_every = 10;    // rewind after every n-th node
    double guidance_lr = 1.0;
    // exact for Gaussian priors; the cheaper inverse_alpha / scaled_sigma2
    // pair shifts the posterior mean noticeably
    JacobianApprox jacobian = JacobianApprox::tweedie;
    DenoiserCov denoiser_cov = DenoiserCov::tweedie;

    void validate() const;
};

struct SDEditConfig {
    int tau_star_idx = 80;
    std::optional<ObservationSet> combine_obs;
};

/// Floor on the innovation variance of every observation.
inline constexpr double kInnovationFloor = 1e-12;

/// values = x_truth at the template indices plus N(0, sigma_o^2) noise.
ObservationSet apply_observation_noise(const StateVector& x_truth, const ObservationSet& tmpl, std::uint64_t seed);

/// Gradient of log p(O | x_tau) in normalised coordinates. `x_tau` is
/// normalised; `obs` is in physical units.
StateVector likelihood_gradient(const StateVector& x_tau, int tau_idx, const ObservationSet& obs,
                                const ScoreModel& model, const NoiseSchedule& sched, const GuidanceConfig& cfg);

/// Column-wise likelihood gradient at continuous time t.
Matrix likelihood_gradient_batch(const Matrix& x_tau, double t, const ObservationSet& obs, const ScoreModel& model,
                                 const NoiseSchedule& sched, const GuidanceConfig& cfg);

/// Number of reverse steps used when starting from node `start_idx`, keeping
/// the sampler's step density.
int steps_from(const NoiseSchedule& sched, const SamplerConfig& cfg, int start_idx);

/// Runs the conditioned reverse pass from node `start_idx` on normalised
/// columns `x`, one engine per column.
void conditioned_reverse(Matrix& x, int start_idx, const ScoreModel& model, const NoiseSchedule& sched,
                         const SamplerConfig& scfg, const ObservationSet& obs, const GuidanceConfig& g,
                         std::span<rng::Engine> gens);

Ensemble sample_conditioned(const ScoreModel& model, const NoiseSchedule& sched, const SamplerConfig& scfg,
                            const ObservationSet& obs, const GuidanceConfig& g, int n, std::uint64_t seed);

/// Perturb every input member to tau*, then denoise back (with inpainting of
/// cfg.combine_obs when present). Output column r * M + i is replicate r of
/// input member i.
Ensemble sdedit(const Matrix& x_pred, const ScoreModel& model, const NoiseSchedule& sched, const SamplerConfig& scfg,
                const SDEditConfig& cfg, std::uint64_t seed, int replicates = 1, const GuidanceConfig& g = {});
Ensemble sdedit(const StateVector& x_pred, const ScoreModel& model, const NoiseSchedule& sched,
                const SamplerConfig& scfg, const SDEditConfig& cfg, std::uint64_t seed, int replicates = 1,
                const GuidanceConfig& g = {});

struct TauCandidateReport {
    int tau_idx = 0;
    double crps = 0;
    double mae = 0;            // normalised by climatological std
    double spectrum_distance = 0;
};

struct TauCalibration {
    int tau_star_idx = 0;
    std::vector<TauCandidateReport> report;
};

/// Picks the candidate with the smallest mean CRPS of SDEdited one-step
/// forecasts over the validation trajectory. Ties go to the smaller tau.
TauCalibration calibrate_tau_star(const ScoreModel& model, const NoiseSchedule& sched, const SamplerConfig& scfg,
                                  const ForecastModel& forecaster, const Trajectory& val_data,
                                  std::vector<int> candidate_taus, int n_ens, std::uint64_t seed,
                                  int n_cases = 50);

/// Hard constraint on the forcing coordinates at column t of `theta`.
ObservationSet forcing_constraint(const Trajectory& theta, Eigen::Index t, std::span<const int> forcing_coords);

/// theta(t0 + h) = clim_phase(t0 + h) + (theta(t0) - clim_phase(t0)) for
/// h = 1..horizon. `clim` covers the forcing coordinates and needs phases.
Trajectory anomaly_persistence(const StateVector& theta_t0, const Climatology& clim, std::int64_t t0_phase,
                               int horizon);

}  // namespace gap
