#pragma once

// State containers and climatological statistics shared by every module.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace gap {

using StateVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Uniformly spaced time series of states, stored column-wise (d x T).
/// `start_step` and `stride` locate the samples on the model step axis so
/// phase-of-cycle can be recovered for thinned data.
struct Trajectory {
    Matrix states;
    double dt = 1.0;
    double t0 = 0.0;
    std::int64_t start_step = 0;
    std::int64_t stride = 1;

    Eigen::Index dim() const { return states.rows(); }
    Eigen::Index size() const { return states.cols(); }
    bool empty() const { return states.cols() == 0; }
    auto state(Eigen::Index k) const { return states.col(k); }
    std::int64_t step_of(Eigen::Index k) const { return start_step + stride * k; }

    /// Sub-trajectory over a subset of coordinates.
    Trajectory select(std::span<const int> coords) const;
};

/// Collection of members stored column-wise (d x M).
struct Ensemble {
    Matrix members;
    std::vector<std::uint64_t> member_seeds;

    Ensemble() = default;
    Ensemble(Matrix m, std::vector<std::uint64_t> seeds);

    Eigen::Index dim() const { return members.rows(); }
    Eigen::Index size() const { return members.cols(); }
    StateVector mean() const { return members.rowwise().mean(); }
    /// Per-coordinate sample std (1/(M-1)); zero for M == 1.
    StateVector spread() const;
};

/// Per-coordinate climatological statistics. `std` uses the population
/// (1/n) convention and is floored at `kStdFloor`.
struct Climatology {
    static constexpr double kStdFloor = 1e-8;

    StateVector mean;
    StateVector std;
    std::vector<StateVector> per_phase_mean;
    std::vector<bool> floored;
    std::int64_t sample_count = 0;

    Eigen::Index dim() const { return mean.size(); }
    bool has_phases() const { return !per_phase_mean.empty(); }
    int cycle_len() const { return static_cast<int>(per_phase_mean.size()); }
    const StateVector& phase_mean(std::int64_t phase) const;

    Climatology select(std::span<const int> coords) const;

    /// Identity normalisation (mean 0, std 1) of dimension d.
    static Climatology identity(Eigen::Index d);
};

Climatology fit_climatology(const Trajectory& data, std::optional<int> cycle_len = std::nullopt);

StateVector normalize(const StateVector& x, const Climatology& c);
StateVector denormalize(const StateVector& z, const Climatology& c);
/// Column-wise variants for batches of states.
Matrix normalize(const Matrix& x, const Climatology& c);
Matrix denormalize(const Matrix& z, const Climatology& c);

/// x minus the phase mean when `phase` is given, else minus the global mean.
StateVector anomaly(const StateVector& x, const Climatology& c,
                    std::optional<std::int64_t> phase = std::nullopt);

bool all_finite(const Eigen::Ref<const Matrix>& m);

}  // namespace gap
