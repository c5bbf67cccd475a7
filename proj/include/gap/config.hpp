#pragma once

// Experiment configuration: one JSON file per experiment. Parsing is strict
// (unknown keys and wrong types raise ConfigError) and to_json() writes every
// field back, defaults included, so a saved manifest fully describes the run.

#include <cstdint>
#include <string>
#include <vector>

#include "gap/assimilation.hpp"
#include "gap/conditioning.hpp"
#include "gap/diffusion.hpp"
#include "gap/dynamics.hpp"
#include "json.hpp"

namespace gap {

struct SystemBlock {
    std::string kind = "lorenz96";
    int dim = 40;
    double forcing = 8.0;
    double dt = 0.05;
    int substeps = 2;
    std::uint64_t drift_seed = 7;  // linear_gaussian drift/diffusion draw
    double sigma = 10.0, rho = 28.0, beta = 8.0 / 3.0;  // lorenz63
    ForcedRingOptions forced;  // lorenz96_forced (dt, substeps, forcing come from above)
};

struct DataBlock {
    std::int64_t spinup = 1000;
    std::int64_t n_train = 20000;
    std::int64_t n_test = 4000;
    std::int64_t thin = 1;
};

struct ScoreBlock {
    std::string kind = "analytic_gaussian";
    std::vector<int> hidden{128, 128};
    int epochs = 50;
    double lr = 1e-3;
    int batch = 128;
    std::string weighting = "sigma2";
    // analytic_gaussian: "empirical" fits the training covariance,
    // "stationary" uses the exact stationary law (linear_gaussian only)
    std::string prior = "empirical";
};

struct DiffusionBlock {
    double beta_min = 0.1, beta_max = 20.0;
    int n_steps = 100;
    ScoreBlock score;
};

struct ForecasterBlock {
    std::string kind = "perfect";
    double forcing_shift = 1.0;
    int substep_divisor = 2;
    double bias_std = 0.0;  // constant bias injected per step, in climatological std units
    bool forcing_anomalies = true;  // false: the forecaster only knows the seasonal forcing cycle
    ForecasterTraining training;
};

struct ObservationBlock {
    int n_obs = 8;
    double sigma_o = 1.0;
    std::string layout = "random_fixed";
    int obs_every = 1;
};

struct ForecastBlock {
    std::int64_t lead_steps = 40;
    int ensemble_size = 32;
    int n_cases = 10;
    std::int64_t case_spacing = 200;
    double init_perturbation = 0.05;  // in climatological std units
};

struct SeasonalBlock {
    std::int64_t lead_steps = 400;
    int ensemble_size = 16;
    int n_cases = 30;
    std::int64_t case_spacing = 400;
    double init_perturbation = 0.05;
    std::int64_t window_start = 200;  // window-mean anomalies over leads (window_start, lead_steps]
};

struct ClimateBlock {
    std::int64_t n_steps = 10000;
    int sdedit_every = 1;
    std::int64_t thin = 10;
    std::int64_t trace_every = 1000;
    double excursion_z = 5.0;
    double forcing_shift = 0.0;  // added to the seasonal forcing of a forced ring
};

struct CalibrationBlock {
    std::vector<int> candidates{0, 5, 10, 20, 40, 60, 80};
    int n_ensemble = 16;
    int n_cases = 50;
};

struct BaselineBlock {
    std::string method = "enkf";
    double inflation = 1.05;
    int ensemble_size = 32;
};

struct ExperimentConfig {
    SystemBlock system;
    DataBlock data;
    DiffusionBlock diffusion;
    SamplerConfig sampler;
    GuidanceConfig guidance;
    int tau_star_idx = 20;
    ForecasterBlock forecaster;
    ObservationBlock observations;
    AssimilationConfig assimilation;
    ForecastBlock forecast;
    SeasonalBlock seasonal;
    ClimateBlock climate;
    CalibrationBlock calibration;
    BaselineBlock baseline;
    std::uint64_t seed = 0;
    std::string output_dir = "run";

    void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::string& path);
/// SHA-256 of the materialized config, output_dir excluded.
std::string config_hash(const ExperimentConfig& c);

SystemSpec build_system(const ExperimentConfig& c);

}  // namespace gap
