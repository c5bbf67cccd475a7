#pragma once

// Variance-preserving diffusion: schedule, score models, denoising score
// matching and reverse-time samplers. Score models work in normalised space;
// `sample` hands back denormalised members.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gap/mlp.hpp"
#include "gap/rng.hpp"
#include "gap/state.hpp"

namespace gap {

/// Linear-beta VP schedule on a uniform grid over [0, T], T = 1.
struct NoiseSchedule {
    double beta_min = 0.1;
    double beta_max = 20.0;
    double T = 1.0;
    int n_steps = 100;
    Eigen::VectorXd tau;    // n_steps + 1 nodes
    Eigen::VectorXd alpha;
    Eigen::VectorXd sigma;

    double beta_at(double t) const;
    /// Integral of beta over [0, t].
    double integral(double t) const;
    double alpha_at(double t) const;
    double sigma_at(double t) const;
    /// Smallest t with sigma/alpha >= r (clamped to T).
    double tau_for_ratio(double r) const;
    int max_index() const { return n_steps; }
};

NoiseSchedule build_schedule(double beta_min = 0.1, double beta_max = 20.0, int n_steps = 100);

/// x_tau = alpha x0 + sigma eps. Returns (x_tau, eps).
std::pair<StateVector, StateVector> perturb_forward(const StateVector& x0, int tau_idx, const NoiseSchedule& sched,
                                                    std::uint64_t seed);

enum class ScoreKind { mlp, analytic_gaussian };
enum class DsmWeighting { uniform, sigma2 };

std::string to_string(ScoreKind k);
ScoreKind score_kind_from_string(const std::string& s);
std::string to_string(DsmWeighting w);
DsmWeighting dsm_weighting_from_string(const std::string& s);

struct GaussianPrior {
    StateVector mean;
    Matrix cov;
    // eigen-decomposition of cov + 1e-10 I, filled by make_gaussian_score
    Matrix eigvecs;
    Eigen::VectorXd eigvals;
};

/// Score model in normalised coordinates. The MLP predicts the noise eps
/// from [x, embed(tau)] and the score is -eps_hat / sigma.
struct ScoreModel {
    static constexpr int kEmbedFreqs = 8;

    ScoreKind kind = ScoreKind::analytic_gaussian;
    int dim = 0;
    Climatology norm;
    std::optional<Mlp> weights;
    std::optional<GaussianPrior> gaussian;
    DsmWeighting weighting = DsmWeighting::uniform;
    std::vector<double> training_loss;  // per epoch

    void validate() const;

    /// Column-wise score at continuous diffusion time t > 0 (t = 0 allowed for
    /// the analytic model).
    Matrix score(const Matrix& x, double t, const NoiseSchedule& sched) const;
    /// Per column, (d score / dx)^T v.
    Matrix score_vjp(const Matrix& x, const Matrix& v, double t, const NoiseSchedule& sched) const;
};

/// Sinusoidal embedding of t, kEmbedFreqs sines followed by cosines.
Eigen::VectorXd time_embedding(double t);
/// Network input [x; embed(t)] for a batch.
Matrix score_input(const Matrix& x, double t);

ScoreModel make_gaussian_score(const StateVector& mean, const Matrix& cov,
                               std::optional<Climatology> norm = std::nullopt);

StateVector score(const StateVector& x_tau, int tau_idx, const ScoreModel& model, const NoiseSchedule& sched);

/// Tweedie posterior mean (x + sigma^2 score) / max(alpha, 1e-6).
StateVector denoise_one_step(const StateVector& x_tau, int tau_idx, const ScoreModel& model,
                             const NoiseSchedule& sched);
Matrix denoise_batch(const Matrix& x_tau, double t, const ScoreModel& model, const NoiseSchedule& sched);

struct ScoreTraining {
    std::vector<int> hidden_sizes{128, 128};
    int epochs = 50;
    double lr = 1e-3;
    int batch = 128;
    std::uint64_t seed = 0;
    DsmWeighting weighting = DsmWeighting::uniform;
};

/// Denoising score matching over uniformly drawn tau indices in [1, N].
ScoreModel train_score(const Trajectory& data, const Climatology& clim, const NoiseSchedule& sched,
                       const ScoreTraining& opt);

/// DSM loss on a fixed draw: mean over columns of
/// lambda(sigma) * || s(x_tau, tau) + eps / sigma ||^2, x0 normalised.
/// `grad` (MLP models only) receives d loss / d weights.
double dsm_loss(const ScoreModel& model, const NoiseSchedule& sched, const Matrix& x0, std::span<const int> tau_idx,
                const Matrix& eps, DsmWeighting weighting, std::vector<double>* grad = nullptr);

enum class SamplerMethod { euler_maruyama_sde, heun_pflow_ode, ddim };
std::string to_string(SamplerMethod m);
SamplerMethod sampler_method_from_string(const std::string& s);

struct SamplerConfig {
    SamplerMethod method = SamplerMethod::ddim;
    int n_steps = 100;
    double eta = 0.0;
    double churn = 0.0;

    void validate(const NoiseSchedule& sched) const;
};

/// Score callback used by the reverse solvers: (x batch, t) -> score batch.
using ScoreFn = std::function<Matrix(const Matrix&, double)>;

/// Descending times from node `start_idx` to 0 using at most `n_steps` steps.
std::vector<double> tau_path(const NoiseSchedule& sched, int start_idx, int n_steps);

/// One reverse step t -> s (t > s) for every column. `gens` holds one engine
/// per column. `last` drops the noise of the SDE step.
void reverse_step(Matrix& x, double t, double s, const ScoreFn& score_fn, const NoiseSchedule& sched,
                  const SamplerConfig& cfg, std::span<rng::Engine> gens, bool last);

/// Called after every reverse step with the index of the step and the new time.
using StepHook = std::function<void(Matrix&, std::size_t, double)>;

/// Runs reverse_step along `path`, checking for non-finite states.
void run_reverse(Matrix& x, const std::vector<double>& path, const ScoreFn& score_fn, const NoiseSchedule& sched,
                 const SamplerConfig& cfg, std::span<rng::Engine> gens, const StepHook& hook = {});

/// Unconditional generation from N(0, I) noise, denormalised with model.norm.
Ensemble sample(const ScoreModel& model, const NoiseSchedule& sched, const SamplerConfig& cfg, int n,
                std::uint64_t seed);

/// Fills v with independent N(0, 1) draws from g.
void fill_normals(Eigen::Ref<Eigen::VectorXd> v, rng::Engine& g);

/// Per-member seed used by sample() and the conditioning samplers.
std::uint64_t member_seed(std::uint64_t seed, std::uint64_t member);

}  // namespace gap
