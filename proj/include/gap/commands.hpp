#pragma once

// Experiment commands. Each one wraps a single module pipeline, reads its
// upstream artifacts from the run directory (checking them against the
// digests recorded by the manifests that produced them), and writes tensors,
// metric CSVs and a manifest_<command>.json describing the run.
//
// Artifacts by command:
//   generate-data     train.gapt test.gapt clim.gapt
//   train-score       score.json score_norm.gapt + score_params.gapt | score_mean.gapt score_cov.gapt
//   train-forecaster  forecaster.json [forecaster_params.gapt forecaster_norm.gapt forecaster_bias.gapt]
//   assimilate        assim_{prior,posterior,truth}.gapt obs.gapt assim_metrics.csv
//   forecast          forecast_{ens,truth,steps}.gapt forecast_metrics.csv
//   evaluate          evaluate_metrics.csv (for the forecast named by CommandOptions::evaluate)
//   seasonal          seasonal_{forced,free,truth}.gapt seasonal_metrics.csv
//   climate-run       climate_{stats,trace}.gapt [climate_thinned.gapt climate_composite.gapt] climate_metrics.csv
//   calibrate-tau     tau_metrics.csv tau_star.json
//   baseline          baseline_<method>_*.gapt baseline_<method>_metrics.csv

#include <filesystem>
#include <string>
#include <vector>

#include "gap/config.hpp"
#include "gap/io.hpp"
#include "gap/prediction.hpp"
#include "json.hpp"

namespace gap {

struct CommandOptions {
    std::filesystem::path out;        // empty: cfg.output_dir
    bool quiet = false;
    std::string evaluate = "forecast";  // artifact prefix read by `evaluate`
};

struct RunManifest {
    std::filesystem::path path;
    nlohmann::json doc;

    /// name -> sha256 of every file the run wrote
    std::map<std::string, std::string> output_digests() const;
};

const std::vector<std::string>& command_names();

/// Runs one command. Library errors propagate (ConfigError, IoError,
/// NumericalError/Divergence); a manifest with status "diverged" is still
/// written when a climate run leaves the finite domain.
RunManifest run_command(const std::string& name, const ExperimentConfig& cfg, const CommandOptions& opt = {});

// Artifact loaders; digests are checked against the producing manifests.
Trajectory load_trajectory(const std::filesystem::path& dir, const std::string& name);
Climatology load_climatology(const std::filesystem::path& dir);
ScoreModel load_score(const std::filesystem::path& dir);
ForecastModel load_forecaster(const std::filesystem::path& dir, const ExperimentConfig& cfg);

/// Per-lead forecast verification against truth. `ens` holds [case][lead]
/// ensembles, `truth` and `steps` the matching states and model steps.
/// Rows: rmse, acc, crps, spread, ssr, clim_crps (Gaussian climatology).
std::vector<MetricRow> evaluate_forecasts(const std::vector<std::vector<Matrix>>& ens,
                                          const std::vector<Matrix>& truth,
                                          const std::vector<std::vector<std::int64_t>>& steps, const Climatology& clim,
                                          std::uint64_t seed);

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n);

}  // namespace gap
