#include "gap/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gap/error.hpp"
#include "gap/parallel.hpp"

namespace gap {

namespace {
constexpr double kAlphaFloor = 1e-6;
constexpr double kCovJitter = 1e-10;
}  // namespace

void fill_normals(Eigen::Ref<Eigen::VectorXd> v, rng::Engine& g) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng::normal(g);
}

double NoiseSchedule::beta_at(double t) const { return beta_min + (beta_max - beta_min) * t / T; }

double NoiseSchedule::integral(double t) const { return beta_min * t + 0.5 * (beta_max - beta_min) * t * t / T; }

double NoiseSchedule::alpha_at(double t) const { return std::exp(-0.5 * integral(t)); }

double NoiseSchedule::sigma_at(double t) const { return std::sqrt(-std::expm1(-integral(t))); }

double NoiseSchedule::tau_for_ratio(double r) const {
    // sigma/alpha = r  <=>  integral(t) = log(1 + r^2)
    const double target = std::log1p(r * r);
    const double a = 0.5 * (beta_max - beta_min) / T;
    double t = a > 0 ? (-beta_min + std::sqrt(beta_min * beta_min + 4.0 * a * target)) / (2.0 * a) : target / beta_min;
    return std::clamp(t, 0.0, T);
}

NoiseSchedule build_schedule(double beta_min, double beta_max, int n_steps) {
    if (!(beta_min > 0) || !(beta_max >= beta_min) || !std::isfinite(beta_max))
        throw InvalidArgument("build_schedule: need 0 < beta_min <= beta_max");
    require(n_steps >= 2, "build_schedule: n_steps must be >= 2");
    NoiseSchedule s;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    s.n_steps = n_steps;
    s.tau = Eigen::VectorXd::LinSpaced(n_steps + 1, 0.0, s.T);
    s.alpha.resize(n_steps + 1);
    s.sigma.resize(n_steps + 1);
    for (int i = 0; i <= n_steps; ++i) {
        s.alpha(i) = s.alpha_at(s.tau(i));
        s.sigma(i) = s.sigma_at(s.tau(i));
    }
    return s;
}

std::pair<StateVector, StateVector> perturb_forward(const StateVector& x0, int tau_idx, const NoiseSchedule& sched,
                                                    std::uint64_t seed) {
    require(tau_idx >= 0 && tau_idx <= sched.n_steps, "perturb_forward: tau index out of range");
    auto g = rng::stream(seed, "perturb_forward", static_cast<std::uint64_t>(tau_idx));
    StateVector eps(x0.size());
    fill_normals(eps, g);
    if (tau_idx == 0) return {x0, eps};
    return {StateVector(sched.alpha(tau_idx) * x0 + sched.sigma(tau_idx) * eps), eps};
}

std::string to_string(ScoreKind k) { return k == ScoreKind::mlp ? "mlp" : "analytic_gaussian"; }

ScoreKind score_kind_from_string(const std::string& s) {
    if (s == "mlp") return ScoreKind::mlp;
    if (s == "analytic_gaussian") return ScoreKind::analytic_gaussian;
    throw InvalidArgument("unknown score kind '" + s + "'");
}

std::string to_string(DsmWeighting w) { return w == DsmWeighting::uniform ? "uniform" : "sigma2"; }

DsmWeighting dsm_weighting_from_string(const std::string& s) {
    if (s == "uniform") return DsmWeighting::uniform;
    if (s == "sigma2") return DsmWeighting::sigma2;
    throw InvalidArgument("unknown DSM weighting '" + s + "'");
}

Eigen::VectorXd time_embedding(double t) {
    const int k = ScoreModel::kEmbedFreqs;
    Eigen::VectorXd e(2 * k);
    for (int i = 0; i < k; ++i) {
        const double f = std::pow(100.0, double(i) / double(k - 1));
        e(i) = std::sin(f * t);
        e(k + i) = std::cos(f * t);
    }
    return e;
}

Matrix score_input(const Matrix& x, double t) {
    Matrix in(x.rows() + 2 * ScoreModel::kEmbedFreqs, x.cols());
    in.topRows(x.rows()) = x;
    in.bottomRows(2 * ScoreModel::kEmbedFreqs).colwise() = time_embedding(t);
    return in;
}

void ScoreModel::validate() const {
    require(dim >= 1, "score model: dim must be positive");
    require(norm.dim() == dim, "score model: normaliser dimension mismatch");
    if (kind == ScoreKind::mlp) {
        require(weights.has_value() && !gaussian.has_value(), "mlp score model needs weights and no Gaussian prior");
        require(weights->input_dim() == dim + 2 * kEmbedFreqs && weights->output_dim() == dim,
                "mlp score model: network shape does not match dim");
    } else {
        require(gaussian.has_value() && !weights.has_value(), "analytic score model needs a Gaussian prior only");
        require(gaussian->mean.size() == dim && gaussian->cov.rows() == dim && gaussian->cov.cols() == dim,
                "analytic score model: prior dimension mismatch");
    }
}

Matrix ScoreModel::score(const Matrix& x, double t, const NoiseSchedule& sched) const {
    require(x.rows() == dim, "score: state dimension mismatch");
    const double a = sched.alpha_at(t), s = sched.sigma_at(t);
    if (kind == ScoreKind::analytic_gaussian) {
        const auto& g = *gaussian;
        const Eigen::VectorXd inv = (a * a * g.eigvals.array() + s * s).inverse();
        const Matrix centred = x.colwise() - a * g.mean;
        return -(g.eigvecs * (inv.asDiagonal() * (g.eigvecs.transpose() * centred)));
    }
    if (!(s > 0)) throw InvalidArgument("score: the learned score is undefined at t = 0");
    return weights->forward(score_input(x, t)) / (-s);
}

Matrix ScoreModel::score_vjp(const Matrix& x, const Matrix& v, double t, const NoiseSchedule& sched) const {
    require(x.rows() == dim && v.rows() == dim && x.cols() == v.cols(), "score_vjp: shape mismatch");
    const double a = sched.alpha_at(t), s = sched.sigma_at(t);
    if (kind == ScoreKind::analytic_gaussian) {
        const auto& g = *gaussian;
        const Eigen::VectorXd inv = (a * a * g.eigvals.array() + s * s).inverse();
        return -(g.eigvecs * (inv.asDiagonal() * (g.eigvecs.transpose() * v)));
    }
    if (!(s > 0)) throw InvalidArgument("score_vjp: the learned score is undefined at t = 0");
    return weights->input_vjp(score_input(x, t), v).topRows(dim) / (-s);
}

ScoreModel make_gaussian_score(const StateVector& mean, const Matrix& cov, std::optional<Climatology> norm) {
    require(cov.rows() == cov.cols() && cov.rows() == mean.size(), "gaussian score: mean/covariance shape mismatch");
    const Eigen::Index d = mean.size();
    ScoreModel m;
    m.kind = ScoreKind::analytic_gaussian;
    m.dim = static_cast<int>(d);
    m.norm = norm ? *norm : Climatology::identity(d);
    GaussianPrior g;
    g.mean = mean;
    g.cov = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(g.cov);
    if (es.info() != Eigen::Success) throw NumericalError("gaussian score: eigen-decomposition failed");
    g.eigvecs = es.eigenvectors();
    g.eigvals = es.eigenvalues();
    const double top = std::max(g.eigvals.maxCoeff(), 0.0);
    if (g.eigvals.minCoeff() < -1e-8 * std::max(top, 1.0))
        throw NumericalError("gaussian score: covariance is not positive semi-definite");
    // Singular or near-singular covariance: regularise with a small ridge.
    if (g.eigvals.minCoeff() < kCovJitter) g.eigvals = g.eigvals.cwiseMax(0.0).array() + kCovJitter;
    m.gaussian = std::move(g);
    m.validate();
    return m;
}

StateVector score(const StateVector& x_tau, int tau_idx, const ScoreModel& model, const NoiseSchedule& sched) {
    require(tau_idx >= 0 && tau_idx <= sched.n_steps, "score: tau index out of range");
    return model.score(Matrix(x_tau), sched.tau(tau_idx), sched).col(0);
}

Matrix denoise_batch(const Matrix& x_tau, double t, const ScoreModel& model, const NoiseSchedule& sched) {
    const double a = std::max(sched.alpha_at(t), kAlphaFloor), s = sched.sigma_at(t);
    if (s == 0.0) return x_tau;
    if (model.kind == ScoreKind::mlp) {
        // sigma^2 * score = -sigma * eps_hat
        return (x_tau - s * model.weights->forward(score_input(x_tau, t))) / a;
    }
    return (x_tau + s * s * model.score(x_tau, t, sched)) / a;
}

StateVector denoise_one_step(const StateVector& x_tau, int tau_idx, const ScoreModel& model,
                             const NoiseSchedule& sched) {
    require(tau_idx >= 0 && tau_idx <= sched.n_steps, "denoise_one_step: tau index out of range");
    require(x_tau.size() == model.dim, "denoise_one_step: state dimension mismatch");
    return denoise_batch(Matrix(x_tau), sched.tau(tau_idx), model, sched).col(0);
}

double dsm_loss(const ScoreModel& model, const NoiseSchedule& sched, const Matrix& x0, std::span<const int> tau_idx,
                const Matrix& eps, DsmWeighting weighting, std::vector<double>* grad) {
    const Eigen::Index b = x0.cols();
    require(b > 0 && eps.rows() == x0.rows() && eps.cols() == b && static_cast<Eigen::Index>(tau_idx.size()) == b,
            "dsm_loss: batch shape mismatch");
    require(x0.rows() == model.dim, "dsm_loss: state dimension mismatch");
    Eigen::VectorXd a(b), s(b);
    for (Eigen::Index j = 0; j < b; ++j) {
        const int k = tau_idx[static_cast<std::size_t>(j)];
        require(k >= 1 && k <= sched.n_steps, "dsm_loss: tau index must be in [1, N]");
        a(j) = sched.alpha(k);
        s(j) = sched.sigma(k);
    }
    const Matrix xt = x0 * a.asDiagonal() + eps * s.asDiagonal();
    // s + eps/sigma = (eps - eps_hat)/sigma with eps_hat = -sigma s.
    Matrix eps_hat(x0.rows(), b);
    Mlp::Tape tape;
    if (model.kind == ScoreKind::mlp) {
        Matrix in(x0.rows() + 2 * ScoreModel::kEmbedFreqs, b);
        in.topRows(x0.rows()) = xt;
        for (Eigen::Index j = 0; j < b; ++j)
            in.col(j).tail(2 * ScoreModel::kEmbedFreqs) = time_embedding(sched.tau(tau_idx[static_cast<std::size_t>(j)]));
        eps_hat = model.weights->forward(in, tape);
    } else {
        require(grad == nullptr, "dsm_loss: gradients need an mlp score model");
        for (Eigen::Index j = 0; j < b; ++j) {
            const double t = sched.tau(tau_idx[static_cast<std::size_t>(j)]);
            eps_hat.col(j) = -s(j) * model.score(Matrix(xt.col(j)), t, sched).col(0);
        }
    }
    const Matrix r = eps_hat - eps;
    Eigen::VectorXd w(b);
    for (Eigen::Index j = 0; j < b; ++j) w(j) = weighting == DsmWeighting::uniform ? 1.0 / (s(j) * s(j)) : 1.0;
    const double loss = (r.colwise().squaredNorm().transpose().array() * w.array()).sum() / double(b);
    if (grad) {
        grad->assign(model.weights->num_params(), 0.0);
        model.weights->backward(tape, r * (2.0 * w / double(b)).asDiagonal(), *grad);
    }
    return loss;
}

ScoreModel train_score(const Trajectory& data, const Climatology& clim, const NoiseSchedule& sched,
                       const ScoreTraining& opt) {
    if (data.empty()) throw InvalidArgument("train_score: empty training data");
    require(opt.epochs >= 1 && opt.batch >= 1 && opt.lr > 0, "train_score: bad optimiser settings");
    require(clim.dim() == data.dim(), "train_score: climatology dimension mismatch");
    const Matrix x0 = normalize(data.states, clim);
    if (!x0.allFinite()) throw NumericalError("train_score: non-finite training data");
    const int d = static_cast<int>(data.dim());
    const Eigen::Index n = data.size();

    ScoreModel m;
    m.kind = ScoreKind::mlp;
    m.dim = d;
    m.norm = clim;
    m.weighting = opt.weighting;
    std::vector<int> sizes{d + 2 * ScoreModel::kEmbedFreqs};
    sizes.insert(sizes.end(), opt.hidden_sizes.begin(), opt.hidden_sizes.end());
    sizes.push_back(d);
    m.weights = Mlp(sizes, rng::derive(opt.seed, "score_init"));

    Adam adam(m.weights->num_params());
    const Eigen::Index bsz = std::min<Eigen::Index>(opt.batch, n);
    const std::int64_t per_epoch = (n + bsz - 1) / bsz;
    const std::int64_t total = per_epoch * opt.epochs;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_gen = rng::stream(opt.seed, "score_shuffle");
    std::uniform_int_distribution<int> pick_tau(1, sched.n_steps);
    std::vector<double> grad;
    std::vector<int> taus;
    std::int64_t it = 0;
    for (int e = 0; e < opt.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), shuffle_gen);
        double epoch_loss = 0;
        Eigen::Index seen = 0;
        for (Eigen::Index start = 0; start < n; start += bsz) {
            const Eigen::Index b = std::min(bsz, n - start);
            auto g = rng::stream(opt.seed, "score_noise", static_cast<std::uint64_t>(it));
            Matrix xb(d, b), eb(d, b);
            taus.resize(static_cast<std::size_t>(b));
            for (Eigen::Index j = 0; j < b; ++j) {
                xb.col(j) = x0.col(order[static_cast<std::size_t>(start + j)]);
                taus[static_cast<std::size_t>(j)] = pick_tau(g);
                fill_normals(eb.col(j), g);
            }
            const double loss = dsm_loss(m, sched, xb, taus, eb, opt.weighting, &grad);
            if (!std::isfinite(loss))
                throw NumericalError("train_score: non-finite loss at epoch " + std::to_string(e) + ", iteration " +
                                     std::to_string(it));
            adam.step(m.weights->params(), grad, cosine_lr(opt.lr, it, total));
            epoch_loss += loss * double(b);
            seen += b;
            ++it;
        }
        m.training_loss.push_back(epoch_loss / double(seen));
    }
    m.validate();
    return m;
}

std::string to_string(SamplerMethod m) {
    switch (m) {
        case SamplerMethod::euler_maruyama_sde: return "euler_maruyama_sde";
        case SamplerMethod::heun_pflow_ode: return "heun_pflow_ode";
        case SamplerMethod::ddim: return "ddim";
    }
    return "?";
}

SamplerMethod sampler_method_from_string(const std::string& s) {
    if (s == "euler_maruyama_sde") return SamplerMethod::euler_maruyama_sde;
    if (s == "heun_pflow_ode") return SamplerMethod::heun_pflow_ode;
    if (s == "ddim") return SamplerMethod::ddim;
    throw InvalidArgument("unknown sampler method '" + s + "'");
}

void SamplerConfig::validate(const NoiseSchedule& sched) const {
    require(n_steps >= 1 && n_steps <= sched.n_steps, "sampler: n_steps must be in [1, schedule N]");
    require(eta >= 0 && eta <= 1, "sampler: eta must be in [0, 1]");
    require(churn >= 0, "sampler: churn must be >= 0");
}

std::vector<double> tau_path(const NoiseSchedule& sched, int start_idx, int n_steps) {
    require(start_idx >= 0 && start_idx <= sched.n_steps, "tau_path: start index out of range");
    require(n_steps >= 1, "tau_path: n_steps must be >= 1");
    if (start_idx == 0) return {0.0};
    const int k = std::min(n_steps, start_idx);
    std::vector<double> path;
    path.reserve(static_cast<std::size_t>(k) + 1);
    for (int j = 0; j <= k; ++j) {
        const auto idx = static_cast<int>(std::lround(double(start_idx) * double(k - j) / double(k)));
        path.push_back(sched.tau(idx));
    }
    return path;
}

void reverse_step(Matrix& x, double t, double s, const ScoreFn& score_fn, const NoiseSchedule& sched,
                  const SamplerConfig& cfg, std::span<rng::Engine> gens, bool last) {
    require(static_cast<Eigen::Index>(gens.size()) == x.cols(), "reverse_step: one engine per column required");
    require(t > s, "reverse_step: time must decrease");
    const Eigen::Index d = x.rows(), m = x.cols();
    Eigen::VectorXd z(d);
    auto add_noise = [&](double scale) {
        for (Eigen::Index j = 0; j < m; ++j) {
            fill_normals(z, gens[static_cast<std::size_t>(j)]);
            x.col(j) += scale * z;
        }
    };

    if (cfg.churn > 0 && t < sched.T) {
        // Raise the noise-to-signal ratio by (1 + churn) and re-noise to match.
        const double at = sched.alpha_at(t), st = sched.sigma_at(t);
        const double th = sched.tau_for_ratio((st / at) * (1.0 + cfg.churn));
        if (th > t) {
            const double ah = sched.alpha_at(th), sh = sched.sigma_at(th);
            const double ratio = ah / at;
            x *= ratio;
            add_noise(std::sqrt(std::max(0.0, sh * sh - ratio * ratio * st * st)));
            t = th;
        }
    }

    const double at = sched.alpha_at(t), st = sched.sigma_at(t);
    switch (cfg.method) {
        case SamplerMethod::ddim: {
            const double as = sched.alpha_at(s), ss = sched.sigma_at(s);
            const Matrix eps_hat = -st * score_fn(x, t);
            const Matrix x0 = (x - st * eps_hat) / at;
            const double sd = cfg.eta * std::sqrt(std::max(0.0, (ss * ss) / (st * st) * (1.0 - (at * at) / (as * as))));
            x = as * x0 + std::sqrt(std::max(0.0, ss * ss - sd * sd)) * eps_hat;
            if (sd > 0) add_noise(sd);
            break;
        }
        case SamplerMethod::euler_maruyama_sde: {
            const double h = t - s, b = sched.beta_at(t);
            x += h * (0.5 * b * x + b * score_fn(x, t));
            if (!last) add_noise(std::sqrt(b * h));
            break;
        }
        case SamplerMethod::heun_pflow_ode: {
            auto drift = [&](const Matrix& y, double tt) -> Matrix { return -0.5 * sched.beta_at(tt) * (y + score_fn(y, tt)); };
            const Matrix d1 = drift(x, t);
            const Matrix xe = x + (s - t) * d1;
            if (last || s <= 0.0) {
                x = xe;
            } else {
                x += 0.5 * (s - t) * (d1 + drift(xe, s));
            }
            break;
        }
    }
}

void run_reverse(Matrix& x, const std::vector<double>& path, const ScoreFn& score_fn, const NoiseSchedule& sched,
                 const SamplerConfig& cfg, std::span<rng::Engine> gens, const StepHook& hook) {
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        reverse_step(x, path[i], path[i + 1], score_fn, sched, cfg, gens, i + 2 == path.size());
        if (!x.allFinite())
            throw Divergence("reverse sampler produced a non-finite state", static_cast<std::int64_t>(i));
        if (hook) hook(x, i, path[i + 1]);
    }
}

std::uint64_t member_seed(std::uint64_t seed, std::uint64_t member) { return rng::derive(seed, "member", member); }

Ensemble sample(const ScoreModel& model, const NoiseSchedule& sched, const SamplerConfig& cfg, int n,
                std::uint64_t seed) {
    require(n >= 1, "sample: n must be >= 1");
    model.validate();
    cfg.validate(sched);
    const int d = model.dim;
    const auto path = tau_path(sched, sched.n_steps, cfg.n_steps);
    const ScoreFn fn = [&](const Matrix& x, double t) { return model.score(x, t, sched); };
    Matrix out(d, n);
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) seeds[static_cast<std::size_t>(i)] = member_seed(seed, static_cast<std::uint64_t>(i));
    parallel_chunks(n, kChunk, [&](std::ptrdiff_t b, std::ptrdiff_t e) {
        std::vector<rng::Engine> gens;
        Matrix x(d, e - b);
        for (std::ptrdiff_t j = b; j < e; ++j) {
            gens.push_back(rng::stream(seeds[static_cast<std::size_t>(j)], "sample"));
            fill_normals(x.col(j - b), gens.back());
        }
        run_reverse(x, path, fn, sched, cfg, gens);
        out.middleCols(b, e - b) = denormalize(x, model.norm);
    });
    return Ensemble(std::move(out), std::move(seeds));
}

}  // namespace gap
