#pragma once

// Surrogate "truth" systems, dataset generation and one-step forecast models.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gap/mlp.hpp"
#include "gap/state.hpp"

namespace gap {

enum class SystemKind { linear_gaussian, lorenz63, lorenz96, lorenz96_forced };

std::string to_string(SystemKind k);
SystemKind system_kind_from_string(const std::string& s);

/// Immutable description of a dynamical system. Build through the factory
/// functions below; they fill the derived tables (exact discretisation for
/// the OU process, forcing harmonics for the forced ring).
struct SystemSpec {
    SystemKind kind = SystemKind::lorenz96;
    int dim = 0;
    std::map<std::string, double> params;
    double dt = 0.05;
    int substeps = 1;

    // linear_gaussian: dx = A x dt + dW, Cov(dW) = Q dt
    Matrix drift;
    Matrix diffusion;
    Matrix transition;       // exp(A dt)
    Matrix process_cov;      // integrated noise covariance over dt
    Matrix process_chol;     // lower Cholesky factor of process_cov

    // lorenz96_forced: per forcing coordinate, harmonics of the slow anomaly
    // (amplitude, period in steps, phase) triples.
    std::vector<std::vector<double>> anomaly_harmonics;

    double param(const std::string& name) const;
    double param_or(const std::string& name, double fallback) const;
    void validate() const;

    int forcing_dim() const;                   // d_f for the forced ring, else 0
    std::vector<int> forcing_coords() const;   // [0, d_f)
    std::vector<int> atmosphere_coords() const;

    /// Prescribed forcing signal theta(t) at fractional model step `t`.
    Eigen::VectorXd theta(double t) const;
    /// Seasonal-cycle part of theta only.
    Eigen::VectorXd theta_cycle(double t) const;
};

SystemSpec make_lorenz63(double dt = 0.01, int substeps = 2, double sigma = 10.0, double rho = 28.0,
                         double beta = 8.0 / 3.0);
SystemSpec make_lorenz96(int dim = 40, double forcing = 8.0, double dt = 0.05, int substeps = 2);
/// OU process with a randomly drawn stable drift and correlated noise.
SystemSpec make_linear_gaussian(int dim = 8, double dt = 0.1, std::uint64_t seed = 7);
SystemSpec make_linear_gaussian(const Matrix& drift, const Matrix& diffusion, double dt);

struct ForcedRingOptions {
    int n_forcing = 8;
    int n_atmosphere = 32;
    double forcing = 8.0;
    double coupling = 1.0;
    double kappa = 2.0;          // relaxation timescale (model time units)
    double cycle_len = 400.0;    // seasonal period in model steps
    double cycle_amp = 2.0;
    double anom_amp = 1.5;       // 0 gives a purely seasonal theta
    double anom_period_min = 3.0;  // in cycles
    double anom_period_max = 8.0;
    double dt = 0.05;
    int substeps = 2;
    std::uint64_t forcing_seed = 11;
};
SystemSpec make_lorenz96_forced(const ForcedRingOptions& opt = {});

/// Right-hand side f(x, t) of the ODE systems (t in model steps).
Eigen::VectorXd tendency(const SystemSpec& spec, const Eigen::VectorXd& x, double t);

/// One model step of length spec.dt. RK4 with `substeps` inner steps for the
/// ODE systems, exact transition plus a Gaussian draw for the OU process.
StateVector step_truth(const StateVector& x, const SystemSpec& spec, std::uint64_t rng_seed,
                       std::int64_t step_index = 0);

/// Repeated step_truth with per-step seeds derived from `rng_seed`.
StateVector rollout(const StateVector& x, const SystemSpec& spec, std::int64_t steps, std::uint64_t rng_seed,
                    std::int64_t start_step = 0);

StateVector default_initial_state(const SystemSpec& spec, std::uint64_t seed);

/// n_samples states every `thin` steps after `n_spinup` discarded steps.
Trajectory generate_dataset(const SystemSpec& spec, std::int64_t n_spinup, std::int64_t n_samples,
                            std::int64_t thin, std::uint64_t seed);

enum class ForecastKind { imperfect_physics, learned_mlp, perfect };

std::string to_string(ForecastKind k);
ForecastKind forecast_kind_from_string(const std::string& s);

struct ForecastModel {
    ForecastKind kind = ForecastKind::perfect;
    SystemSpec spec;
    std::optional<Mlp> weights;          // residual map in normalised space
    std::optional<Climatology> norm;     // normalisation used by the MLP
    std::optional<StateVector> bias_injection;
    std::vector<double> training_loss;   // per-epoch mean loss (learned models)

    int dim() const;
    void validate() const;
};

ForecastModel make_perfect_model(const SystemSpec& truth);
/// Perturbed physics: forcing shifted by `forcing_shift`, substeps divided
/// by `substep_divisor`, optional additive bias applied every step.
ForecastModel make_imperfect_model(const SystemSpec& truth, double forcing_shift = 1.0, int substep_divisor = 2,
                                   std::optional<StateVector> bias = std::nullopt);

/// Applies the model `lead_steps` times.
StateVector forecast(const StateVector& x, const ForecastModel& m, std::int64_t lead_steps, std::uint64_t rng_seed,
                     std::int64_t start_step = 0);

/// Model steps (or learned-map applications) that span one sample spacing
/// of `data`.
std::int64_t data_step_lead(const ForecastModel& m, const Trajectory& data);

struct ForecasterTraining {
    std::vector<int> hidden_sizes{64, 64};
    int epochs = 50;
    double lr = 1e-3;
    int batch = 64;
    std::uint64_t seed = 0;
};

/// Fits a residual MLP x_{t+1} - x_t = f(x_t) in normalised space with a
/// uniformly weighted MSE loss and cosine-annealed Adam.
ForecastModel train_forecaster(const Trajectory& data, const ForecasterTraining& opt);

/// Mean squared error of the forecaster over a batch (normalised units) and,
/// when `grad` is non-null, its gradient w.r.t. every weight.
double forecaster_loss(const Mlp& net, const Matrix& x_norm, const Matrix& y_norm, std::vector<double>* grad);

}  // namespace gap
