#pragma once

// Reference methods: exact Kalman filter, stochastic EnKF, persistence and
// climatology ensembles.

#include <cstdint>
#include <optional>
#include <vector>

#include "gap/conditioning.hpp"
#include "gap/dynamics.hpp"
#include "gap/state.hpp"

namespace gap {

/// x_{t+1} = A x_t + w, w ~ N(0, Q).
struct LinearGaussianModel {
    Matrix transition;
    Matrix process_noise;

    Eigen::Index dim() const { return transition.rows(); }
    void validate() const;
};

LinearGaussianModel linear_gaussian_model(const SystemSpec& spec);
/// Same model advanced `steps` times per filter step.
LinearGaussianModel compose(const LinearGaussianModel& lg, int steps);

/// Solution of P = A P A^T + Q (requires spectral radius < 1).
Matrix stationary_covariance(const LinearGaussianModel& lg);

struct GaussianState {
    StateVector mean;
    Matrix cov;
};

/// One Kalman update of (mean, cov) with direct observations.
GaussianState kalman_update(const GaussianState& prior, const ObservationSet& obs);
GaussianState kalman_predict(const GaussianState& s, const LinearGaussianModel& lg);

/// Filtered marginals: entry 0 is the initial prior updated with obs[0]; entry
/// t predicts from t-1 and updates with obs[t]. Empty sets skip the update.
std::vector<GaussianState> kalman_filter(const LinearGaussianModel& lg, const std::vector<ObservationSet>& obs_stream,
                                         const StateVector& x0_mean, const Matrix& x0_cov);

/// Stochastic (perturbed-observation) EnKF analysis with multiplicative
/// inflation of the anomalies before the update.
Ensemble enkf_step(const Ensemble& ens, const ObservationSet& obs, double inflation, std::uint64_t seed);

StateVector persistence_forecast(const StateVector& x0, std::int64_t lead);

/// M draws from N(mean, diag(std^2)), or resampled columns of `snapshots`.
Ensemble climatology_ensemble(const Climatology& clim, int m, std::uint64_t seed,
                              const std::optional<Trajectory>& snapshots = std::nullopt);

}  // namespace gap
