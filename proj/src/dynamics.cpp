#include "gap/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

#include "gap/error.hpp"
#include "gap/rng.hpp"

namespace gap {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

std::string to_string(SystemKind k) {
    switch (k) {
        case SystemKind::linear_gaussian: return "linear_gaussian";
        case SystemKind::lorenz63: return "lorenz63";
        case SystemKind::lorenz96: return "lorenz96";
        case SystemKind::lorenz96_forced: return "lorenz96_forced";
    }
    return "?";
}

SystemKind system_kind_from_string(const std::string& s) {
    if (s == "linear_gaussian") return SystemKind::linear_gaussian;
    if (s == "lorenz63") return SystemKind::lorenz63;
    if (s == "lorenz96") return SystemKind::lorenz96;
    if (s == "lorenz96_forced") return SystemKind::lorenz96_forced;
    throw InvalidArgument("unknown system kind '" + s + "'");
}

std::string to_string(ForecastKind k) {
    switch (k) {
        case ForecastKind::imperfect_physics: return "imperfect_physics";
        case ForecastKind::learned_mlp: return "learned_mlp";
        case ForecastKind::perfect: return "perfect";
    }
    return "?";
}

ForecastKind forecast_kind_from_string(const std::string& s) {
    if (s == "imperfect_physics") return ForecastKind::imperfect_physics;
    if (s == "learned_mlp") return ForecastKind::learned_mlp;
    if (s == "perfect") return ForecastKind::perfect;
    throw InvalidArgument("unknown forecast kind '" + s + "'");
}

double SystemSpec::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw InvalidArgument("system " + to_string(kind) + ": missing parameter '" + name + "'");
    return it->second;
}

double SystemSpec::param_or(const std::string& name, double fallback) const {
    auto it = params.find(name);
    return it == params.end() ? fallback : it->second;
}

void SystemSpec::validate() const {
    require(dt > 0 && std::isfinite(dt), "system: dt must be positive");
    require(substeps >= 1, "system: substeps must be >= 1");
    require(dim >= 1, "system: dim must be positive");
    switch (kind) {
        case SystemKind::lorenz63:
            require(dim == 3, "lorenz63: dim must be 3");
            param("sigma"), param("rho"), param("beta");
            break;
        case SystemKind::lorenz96:
            require(dim >= 4, "lorenz96: dim must be >= 4");
            param("F");
            break;
        case SystemKind::lorenz96_forced: {
            const int df = static_cast<int>(param("n_forcing"));
            require(df >= 1 && dim - df >= 4, "lorenz96_forced: need >= 1 forcing and >= 4 atmosphere coordinates");
            param("F"), param("coupling"), param("cycle_len"), param("cycle_amp"), param("anom_amp");
            require(param("kappa") > 0, "lorenz96_forced: kappa must be positive");
            require(anomaly_harmonics.size() == static_cast<std::size_t>(df),
                    "lorenz96_forced: forcing table does not match n_forcing");
            break;
        }
        case SystemKind::linear_gaussian:
            require(drift.rows() == dim && drift.cols() == dim, "linear_gaussian: drift must be dim x dim");
            require(diffusion.rows() == dim && diffusion.cols() == dim, "linear_gaussian: diffusion must be dim x dim");
            require(transition.rows() == dim && process_chol.rows() == dim,
                    "linear_gaussian: discretisation missing; build with make_linear_gaussian");
            break;
    }
}

int SystemSpec::forcing_dim() const {
    return kind == SystemKind::lorenz96_forced ? static_cast<int>(param("n_forcing")) : 0;
}

std::vector<int> SystemSpec::forcing_coords() const {
    std::vector<int> c(static_cast<std::size_t>(forcing_dim()));
    std::iota(c.begin(), c.end(), 0);
    return c;
}

std::vector<int> SystemSpec::atmosphere_coords() const {
    std::vector<int> c;
    for (int i = forcing_dim(); i < dim; ++i) c.push_back(i);
    return c;
}

Eigen::VectorXd SystemSpec::theta_cycle(double t) const {
    const int df = forcing_dim();
    Eigen::VectorXd th(df);
    const double len = param("cycle_len"), amp = param("cycle_amp");
    for (int j = 0; j < df; ++j) th(j) = amp * std::sin(kTwoPi * t / len + kTwoPi * j / df);
    return th;
}

Eigen::VectorXd SystemSpec::theta(double t) const {
    Eigen::VectorXd th = theta_cycle(t);
    const double amp = param("anom_amp");
    if (amp == 0.0) return th;
    for (int j = 0; j < th.size(); ++j) {
        const auto& h = anomaly_harmonics[static_cast<std::size_t>(j)];
        double s = 0;
        for (std::size_t k = 0; k + 2 < h.size(); k += 3) s += h[k] * std::sin(kTwoPi * t / h[k + 1] + h[k + 2]);
        th(j) += amp * s;
    }
    return th;
}

SystemSpec make_lorenz63(double dt, int substeps, double sigma, double rho, double beta) {
    SystemSpec s;
    s.kind = SystemKind::lorenz63;
    s.dim = 3;
    s.dt = dt;
    s.substeps = substeps;
    s.params = {{"sigma", sigma}, {"rho", rho}, {"beta", beta}};
    s.validate();
    return s;
}

SystemSpec make_lorenz96(int dim, double forcing, double dt, int substeps) {
    SystemSpec s;
    s.kind = SystemKind::lorenz96;
    s.dim = dim;
    s.dt = dt;
    s.substeps = substeps;
    s.params = {{"F", forcing}};
    s.validate();
    return s;
}

SystemSpec make_linear_gaussian(const Matrix& drift, const Matrix& diffusion, double dt) {
    require(drift.rows() == drift.cols() && diffusion.rows() == drift.rows() && diffusion.cols() == drift.cols(),
            "linear_gaussian: drift and diffusion must be square and the same size");
    require(dt > 0, "linear_gaussian: dt must be positive");
    const Eigen::Index d = drift.rows();
    SystemSpec s;
    s.kind = SystemKind::linear_gaussian;
    s.dim = static_cast<int>(d);
    s.dt = dt;
    s.substeps = 1;
    s.drift = drift;
    s.diffusion = 0.5 * (diffusion + diffusion.transpose());

    // Van Loan: exp([[-A, Q], [0, A^T]] dt) holds both exp(A dt) and the
    // integrated noise covariance.
    Matrix vl = Matrix::Zero(2 * d, 2 * d);
    vl.topLeftCorner(d, d) = -drift;
    vl.topRightCorner(d, d) = s.diffusion;
    vl.bottomRightCorner(d, d) = drift.transpose();
    const Matrix e = (vl * dt).exp();
    s.transition = e.bottomRightCorner(d, d).transpose();
    Matrix q = s.transition * e.topRightCorner(d, d);
    s.process_cov = 0.5 * (q + q.transpose());
    Eigen::LLT<Matrix> llt(s.process_cov);
    if (llt.info() != Eigen::Success) throw NumericalError("linear_gaussian: process covariance is not positive definite");
    s.process_chol = llt.matrixL();
    s.validate();
    return s;
}

SystemSpec make_linear_gaussian(int dim, double dt, std::uint64_t seed) {
    require(dim >= 1, "linear_gaussian: dim must be positive");
    auto g = rng::stream(seed, "ou_drift");
    Matrix gm(dim, dim), hm(dim, dim), cm(dim, dim);
    for (auto* m : {&gm, &hm, &cm})
        for (Eigen::Index j = 0; j < dim; ++j)
            for (Eigen::Index i = 0; i < dim; ++i) (*m)(i, j) = rng::normal(g);
    const double sc = 1.0 / std::sqrt(double(dim));
    // Rotation (skew part) plus a negative definite symmetric part.
    Matrix a = 0.5 * sc * (gm - gm.transpose()) + 0.1 * sc * (hm + hm.transpose()) * 0.5;
    for (int i = 0; i < dim; ++i) a(i, i) -= 0.5 + 0.5 * double(i) / std::max(1, dim - 1);
    const double top = Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (a + a.transpose())).eigenvalues().maxCoeff();
    if (top > -0.1) a -= (top + 0.1) * Matrix::Identity(dim, dim);
    const Matrix q = cm * cm.transpose() / double(dim) + 0.1 * Matrix::Identity(dim, dim);
    return make_linear_gaussian(a, q, dt);
}

SystemSpec make_lorenz96_forced(const ForcedRingOptions& o) {
    require(o.n_forcing >= 1 && o.n_atmosphere >= 4, "lorenz96_forced: bad sizes");
    require(o.anom_period_min > 0 && o.anom_period_max >= o.anom_period_min, "lorenz96_forced: bad anomaly periods");
    SystemSpec s;
    s.kind = SystemKind::lorenz96_forced;
    s.dim = o.n_forcing + o.n_atmosphere;
    s.dt = o.dt;
    s.substeps = o.substeps;
    s.params = {{"n_forcing", double(o.n_forcing)}, {"F", o.forcing},          {"coupling", o.coupling},
                {"kappa", o.kappa},                 {"cycle_len", o.cycle_len}, {"cycle_amp", o.cycle_amp},
                {"anom_amp", o.anom_amp}};
    auto g = rng::stream(o.forcing_seed, "forcing_harmonics");
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int j = 0; j < o.n_forcing; ++j) {
        std::vector<double> h;
        for (int k = 0; k < 3; ++k) {
            const double cycles = o.anom_period_min + (o.anom_period_max - o.anom_period_min) * uni(g);
            const double amp = (0.5 + 0.5 * uni(g)) / std::sqrt(3.0);
            h.insert(h.end(), {amp, cycles * o.cycle_len, kTwoPi * uni(g)});
        }
        s.anomaly_harmonics.push_back(std::move(h));
    }
    s.validate();
    return s;
}

namespace {

void ring_tendency(const double* x, double* out, int n, double forcing) {
    for (int i = 0; i < n; ++i) {
        const double xp1 = x[(i + 1) % n], xm1 = x[(i + n - 1) % n], xm2 = x[(i + n - 2) % n];
        out[i] = (xp1 - xm2) * xm1 - x[i] + forcing;
    }
}

}  // namespace

Eigen::VectorXd tendency(const SystemSpec& spec, const Eigen::VectorXd& x, double t) {
    require(x.size() == spec.dim, "tendency: state dimension mismatch");
    Eigen::VectorXd f(spec.dim);
    switch (spec.kind) {
        case SystemKind::lorenz63: {
            const double s = spec.param("sigma"), r = spec.param("rho"), b = spec.param("beta");
            f << s * (x(1) - x(0)), x(0) * (r - x(2)) - x(1), x(0) * x(1) - b * x(2);
            break;
        }
        case SystemKind::lorenz96:
            ring_tendency(x.data(), f.data(), spec.dim, spec.param("F"));
            break;
        case SystemKind::lorenz96_forced: {
            const int df = spec.forcing_dim(), da = spec.dim - df;
            const double gamma = spec.param("coupling"), kappa = spec.param("kappa");
            ring_tendency(x.data() + df, f.data() + df, da, spec.param("F"));
            for (int i = 0; i < da; ++i) f(df + i) += gamma * x(i * df / da);
            const Eigen::VectorXd th = spec.theta(t);
            f.head(df) = (th - x.head(df)) / kappa;
            break;
        }
        case SystemKind::linear_gaussian:
            f = spec.drift * x;
            break;
    }
    return f;
}

StateVector step_truth(const StateVector& x, const SystemSpec& spec, std::uint64_t rng_seed, std::int64_t step_index) {
    require(x.size() == spec.dim, "step_truth: state has dimension " + std::to_string(x.size()) + ", system expects " +
                                      std::to_string(spec.dim));
    StateVector y;
    if (spec.kind == SystemKind::linear_gaussian) {
        auto g = rng::stream(rng_seed, "truth_noise", static_cast<std::uint64_t>(step_index));
        StateVector z(spec.dim);
        for (int i = 0; i < spec.dim; ++i) z(i) = rng::normal(g);
        y = spec.transition * x + spec.process_chol * z;
    } else {
        // t is measured in model steps; the integrator step is dt / substeps.
        const double h = spec.dt / spec.substeps, hs = 1.0 / spec.substeps;
        y = x;
        for (int k = 0; k < spec.substeps; ++k) {
            const double t = double(step_index) + k * hs;
            const StateVector k1 = tendency(spec, y, t);
            const StateVector k2 = tendency(spec, y + 0.5 * h * k1, t + 0.5 * hs);
            const StateVector k3 = tendency(spec, y + 0.5 * h * k2, t + 0.5 * hs);
            const StateVector k4 = tendency(spec, y + h * k3, t + hs);
            y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    if (!y.allFinite()) throw Divergence("step_truth: non-finite state at step " + std::to_string(step_index), step_index);
    return y;
}

StateVector rollout(const StateVector& x, const SystemSpec& spec, std::int64_t steps, std::uint64_t rng_seed,
                    std::int64_t start_step) {
    require(steps >= 0, "rollout: steps must be non-negative");
    StateVector y = x;
    for (std::int64_t k = 0; k < steps; ++k) y = step_truth(y, spec, rng_seed, start_step + k);
    return y;
}

StateVector default_initial_state(const SystemSpec& spec, std::uint64_t seed) {
    auto g = rng::stream(seed, "initial_state");
    StateVector x(spec.dim);
    switch (spec.kind) {
        case SystemKind::lorenz63:
            x << 1.0, 1.0, 1.0;
            for (int i = 0; i < 3; ++i) x(i) += 0.01 * rng::normal(g);
            break;
        case SystemKind::lorenz96:
            for (int i = 0; i < spec.dim; ++i) x(i) = spec.param("F") + 0.01 * rng::normal(g);
            break;
        case SystemKind::lorenz96_forced: {
            const int df = spec.forcing_dim();
            x.head(df) = spec.theta(0.0);
            for (int i = df; i < spec.dim; ++i) x(i) = spec.param("F") + 0.01 * rng::normal(g);
            break;
        }
        case SystemKind::linear_gaussian:
            x.setZero();
            break;
    }
    return x;
}

Trajectory generate_dataset(const SystemSpec& spec, std::int64_t n_spinup, std::int64_t n_samples, std::int64_t thin,
                            std::uint64_t seed) {
    require(n_spinup >= 0, "generate_dataset: n_spinup must be >= 0");
    require(n_samples >= 0, "generate_dataset: n_samples must be >= 0");
    require(thin >= 1, "generate_dataset: thin must be >= 1");
    spec.validate();
    Trajectory out;
    out.dt = spec.dt * double(thin);
    out.t0 = spec.dt * double(n_spinup);
    out.start_step = n_spinup;
    out.stride = thin;
    out.states.resize(spec.dim, n_samples);
    if (n_samples == 0) return out;
    const std::uint64_t noise_seed = rng::derive(seed, "truth_run");
    StateVector x = rollout(default_initial_state(spec, seed), spec, n_spinup, noise_seed, 0);
    std::int64_t step = n_spinup;
    out.states.col(0) = x;
    for (std::int64_t k = 1; k < n_samples; ++k) {
        x = rollout(x, spec, thin, noise_seed, step);
        step += thin;
        out.states.col(k) = x;
    }
    return out;
}

int ForecastModel::dim() const { return spec.dim; }

void ForecastModel::validate() const {
    // A learned model only borrows dim and dt from its spec.
    if (kind != ForecastKind::learned_mlp) spec.validate();
    if (kind == ForecastKind::learned_mlp) {
        require(weights.has_value() && norm.has_value(), "learned_mlp forecaster requires weights and normalisation");
        require(weights->input_dim() == spec.dim && weights->output_dim() == spec.dim,
                "learned_mlp forecaster: network size does not match state dimension");
    }
    if (bias_injection) require(bias_injection->size() == spec.dim, "forecaster: bias_injection dimension mismatch");
}

ForecastModel make_perfect_model(const SystemSpec& truth) {
    ForecastModel m;
    m.kind = ForecastKind::perfect;
    m.spec = truth;
    m.validate();
    return m;
}

ForecastModel make_imperfect_model(const SystemSpec& truth, double forcing_shift, int substep_divisor,
                                   std::optional<StateVector> bias) {
    require(substep_divisor >= 1, "imperfect model: substep_divisor must be >= 1");
    ForecastModel m;
    m.kind = ForecastKind::imperfect_physics;
    m.spec = truth;
    m.spec.substeps = std::max(1, truth.substeps / substep_divisor);
    switch (truth.kind) {
        case SystemKind::lorenz96:
        case SystemKind::lorenz96_forced:
            m.spec.params["F"] += forcing_shift;
            break;
        case SystemKind::lorenz63:
            m.spec.params["rho"] += forcing_shift;
            break;
        case SystemKind::linear_gaussian:
            m.spec = make_linear_gaussian(truth.drift * (1.0 + 0.05 * forcing_shift), truth.diffusion, truth.dt);
            break;
    }
    m.bias_injection = std::move(bias);
    m.validate();
    return m;
}

StateVector forecast(const StateVector& x, const ForecastModel& m, std::int64_t lead_steps, std::uint64_t rng_seed,
                     std::int64_t start_step) {
    require(lead_steps >= 1, "forecast: lead_steps must be >= 1");
    require(x.size() == m.dim(), "forecast: state dimension mismatch");
    StateVector y = x;
    for (std::int64_t k = 0; k < lead_steps; ++k) {
        const std::int64_t step = start_step + k;
        switch (m.kind) {
            case ForecastKind::perfect:
            case ForecastKind::imperfect_physics:
                y = step_truth(y, m.spec, rng_seed, step);
                break;
            case ForecastKind::learned_mlp: {
                const StateVector z = normalize(y, *m.norm);
                y = denormalize(StateVector(z + m.weights->forward(z)), *m.norm);
                break;
            }
        }
        if (m.bias_injection) y += *m.bias_injection;
        if (!y.allFinite()) throw Divergence("forecast: non-finite state at step " + std::to_string(step), step);
    }
    return y;
}

std::int64_t data_step_lead(const ForecastModel& m, const Trajectory& data) {
    return m.kind == ForecastKind::learned_mlp ? 1 : data.stride;
}

double forecaster_loss(const Mlp& net, const Matrix& x_norm, const Matrix& y_norm, std::vector<double>* grad) {
    require(x_norm.cols() == y_norm.cols() && x_norm.cols() > 0, "forecaster_loss: empty or mismatched batch");
    Mlp::Tape tape;
    const Matrix out = net.forward(x_norm, tape);
    const Matrix resid = out - (y_norm - x_norm);
    const double denom = double(resid.size());
    const double loss = resid.squaredNorm() / denom;
    if (grad) {
        grad->assign(net.num_params(), 0.0);
        net.backward(tape, (2.0 / denom) * resid, *grad);
    }
    return loss;
}

ForecastModel train_forecaster(const Trajectory& data, const ForecasterTraining& opt) {
    require(data.size() >= 2, "train_forecaster: need at least 2 states");
    require(opt.epochs >= 1 && opt.batch >= 1 && opt.lr > 0, "train_forecaster: bad optimiser settings");
    if (!data.states.allFinite()) throw NumericalError("train_forecaster: non-finite training data");
    const int d = static_cast<int>(data.dim());
    const Eigen::Index n = data.size() - 1;

    ForecastModel m;
    m.kind = ForecastKind::learned_mlp;
    m.spec.dim = d;
    m.spec.dt = data.dt > 0 ? data.dt : 1.0;
    m.norm = fit_climatology(data);
    const Matrix z = normalize(data.states, *m.norm);
    const Matrix xs = z.leftCols(n), ys = z.rightCols(n);

    std::vector<int> sizes{d};
    sizes.insert(sizes.end(), opt.hidden_sizes.begin(), opt.hidden_sizes.end());
    sizes.push_back(d);
    Mlp net(sizes, rng::derive(opt.seed, "forecaster_init"), /*zero_output=*/true);
    Adam adam(net.num_params());
    std::vector<double> grad;

    const Eigen::Index bsz = std::min<Eigen::Index>(opt.batch, n);
    const std::int64_t per_epoch = (n + bsz - 1) / bsz;
    const std::int64_t total = per_epoch * opt.epochs;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto g = rng::stream(opt.seed, "forecaster_shuffle");

    m.training_loss.push_back(forecaster_loss(net, xs, ys, nullptr));
    std::int64_t it = 0;
    Matrix bx(d, bsz), by(d, bsz);
    for (int e = 0; e < opt.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), g);
        for (Eigen::Index s = 0; s < n; s += bsz) {
            const Eigen::Index b = std::min(bsz, n - s);
            bx.resize(d, b);
            by.resize(d, b);
            for (Eigen::Index j = 0; j < b; ++j) {
                bx.col(j) = xs.col(order[static_cast<std::size_t>(s + j)]);
                by.col(j) = ys.col(order[static_cast<std::size_t>(s + j)]);
            }
            const double loss = forecaster_loss(net, bx, by, &grad);
            if (!std::isfinite(loss))
                throw NumericalError("train_forecaster: non-finite loss at epoch " + std::to_string(e) + ", iteration " +
                                     std::to_string(it));
            adam.step(net.params(), grad, cosine_lr(opt.lr, it, total));
            ++it;
        }
        m.training_loss.push_back(forecaster_loss(net, xs, ys, nullptr));
    }
    m.weights = std::move(net);
    m.validate();
    return m;
}

}  // namespace gap
