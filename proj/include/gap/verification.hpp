#pragma once

// Deterministic, probabilistic, spectral and distributional scores.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gap/state.hpp"

namespace gap {

/// Non-negative weights rescaled to mean 1.
Eigen::VectorXd normalize_weights(const Eigen::VectorXd& w);
Eigen::VectorXd uniform_weights(Eigen::Index d);

/// A named metric over leads (or times), written out as CSV by the cli.
struct MetricSeries {
    std::string name;
    std::vector<std::int64_t> lead;
    std::vector<double> values;
    std::map<std::string, std::string> meta;

    void push(std::int64_t l, double v) {
        lead.push_back(l);
        values.push_back(v);
    }
};

double rmse(const StateVector& a, const StateVector& b);
double rmse(const StateVector& a, const StateVector& b, const Eigen::VectorXd& w);

/// Weighted, uncentred anomaly correlation. nullopt when either field has
/// zero weighted norm.
std::optional<double> acc(const StateVector& a_anom, const StateVector& b_anom);
std::optional<double> acc(const StateVector& a_anom, const StateVector& b_anom, const Eigen::VectorXd& w);

/// Percent change of rmse_a relative to rmse_b.
double relative_improvement(double rmse_a, double rmse_b);

/// Fair ensemble CRPS: mean |x_m - y| - sum_{m,k} |x_m - x_k| / (2 M (M - 1)).
/// With one member the spread term is taken as 0.
double crps(std::span<const double> members, double truth);
/// Coordinate-wise CRPS averaged with weights; members is d x M.
double crps_field(const Matrix& members, const StateVector& truth);
double crps_field(const Matrix& members, const StateVector& truth, const Eigen::VectorXd& w);
/// Closed-form CRPS of N(mu, sigma^2) against y.
double gaussian_crps(double mu, double sigma, double y);

double crpss(double crps_fc, double crps_bench);

/// Bias-corrected spread-skill ratio sqrt(S^2 / (eps^2 - S^2 / M)), pooled
/// over times and coordinates. `ensembles[t]` is d x M, `truths` is d x T.
/// nullopt when the corrected denominator is not positive.
std::optional<double> spread_skill_ratio(const std::vector<Matrix>& ensembles, const Matrix& truths);

struct KsResult {
    double statistic = 0;
    double p_value = 1;
};
KsResult ks_two_sample(std::span<const double> x, std::span<const double> y);
/// Survival function of the Kolmogorov distribution.
double kolmogorov_survival(double lambda);

struct Spectrum {
    Eigen::VectorXd energy;   // S_0 .. S_{floor(L/2)}
    double parseval_residual = 0;  // relative
};
/// Energy spectrum of a periodic field of length L over a domain of length C.
/// Throws NumericalError if Parseval's identity fails beyond 1e-10.
Spectrum power_spectrum(const StateVector& field, double domain_length = 1.0);

struct EofResult {
    Matrix patterns;                       // d x k, orthonormal columns
    Eigen::VectorXd variance;              // eigenvalues (1/(T-1) convention)
    Eigen::VectorXd explained_variance;    // fractions of total variance
    Matrix pcs;                            // T x k projections of anomalies
    StateVector mean;
    int rank = 0;                          // numerical rank of the covariance
    bool rank_deficient = false;           // rank < requested modes
};
EofResult eof(const Trajectory& data, int n_modes);

/// scale * (d - mean(d)) / std(d) with d = a - b (population std).
std::vector<double> standardized_index(std::span<const double> a, std::span<const double> b, double scale = 10.0);

}  // namespace gap
