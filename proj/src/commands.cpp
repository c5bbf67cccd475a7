#include "gap/commands.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <set>

#include "gap/baselines.hpp"
#include "gap/error.hpp"
#include "gap/parallel.hpp"
#include "gap/verification.hpp"

namespace gap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string manifest_name(const std::string& cmd) {
    std::string s = cmd;
    for (char& c : s)
        if (c == '-') c = '_';
    return "manifest_" + s + ".json";
}

// Bookkeeping for one command invocation.
class Run {
public:
    Run(std::string cmd, const ExperimentConfig& cfg, const CommandOptions& opt)
        : cmd_(std::move(cmd)), cfg_(cfg), quiet_(opt.quiet), t0_(std::chrono::steady_clock::now()) {
        dir_ = opt.out.empty() ? fs::path(cfg.output_dir) : opt.out;
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
    }

    const fs::path& dir() const { return dir_; }
    const ExperimentConfig& cfg() const { return cfg_; }
    std::uint64_t seed(std::string_view purpose, std::uint64_t idx = 0) const { return rng::derive(cfg_.seed, purpose, idx); }

    void log(const std::string& msg) const {
        if (!quiet_) std::cerr << "[gap " << cmd_ << "] " << msg << "\n";
    }

    // Checks an upstream artifact against the manifest that produced it.
    void use(const std::string& name) {
        if (inputs_.count(name)) return;
        const fs::path p = dir_ / name;
        if (!fs::exists(p)) throw IoError("missing artifact " + p.string() + producer_hint(name));
        const std::string digest = sha256_file(p);
        for (const auto& e : fs::directory_iterator(dir_)) {
            const auto fname = e.path().filename().string();
            if (fname.rfind("manifest_", 0) != 0 || e.path().extension() != ".json") continue;
            json m;
            try {
                m = json::parse(read_file(e.path()));
            } catch (const json::exception&) {
                throw IoError("unreadable manifest " + e.path().string());
            }
            for (const auto& o : m.value("outputs", json::array()))
                if (o.value("name", "") == name) {
                    if (o.value("sha256", "") != digest)
                        throw IoError("digest mismatch for " + p.string() + " (recorded by " + fname + ")");
                    inputs_[name] = {{"name", name}, {"sha256", digest}, {"producer", m.value("command", "")}};
                    return;
                }
        }
        throw IoError("artifact " + p.string() + " is not listed in any manifest" + producer_hint(name));
    }

    Tensor read(const std::string& name) {
        use(name);
        use(name + ".json");
        return read_tensor(dir_, name);
    }
    std::string read_text(const std::string& name) {
        use(name);
        return read_file(dir_ / name);
    }

    void tensor(const std::string& name, const Tensor& t, const std::string& role, const std::map<std::string, double>& attrs = {}) {
        add(write_tensor(dir_, name, t, role, attrs));
        add(FileRecord{name + ".json", "sidecar", {}, sha256_file(dir_ / (name + ".json")), {}});
    }
    void trajectory(const std::string& name, const Trajectory& tr, const std::string& role) {
        tensor(name, tensor_from_states(tr.states), role,
               {{"dt", tr.dt}, {"t0", tr.t0}, {"start_step", double(tr.start_step)}, {"stride", double(tr.stride)}});
    }
    void metrics(const std::string& name, const std::vector<MetricRow>& rows) { add(write_metrics(dir_, name, rows)); }
    void text(const std::string& name, const std::string& body, const std::string& role) {
        add(write_text(dir_, name, body, role));
    }

    json& summary() { return summary_; }
    json& steps() { return steps_; }

    RunManifest finish(const std::string& status = "ok") {
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        json outs = json::array();
        for (const auto& [name, r] : outputs_) {
            json o = {{"name", r.name}, {"role", r.role}, {"sha256", r.sha256}};
            if (!r.shape.empty()) o["shape"] = r.shape;
            outs.push_back(o);
        }
        json ins = json::array();
        for (const auto& [name, i] : inputs_) ins.push_back(i);
        RunManifest m;
        m.doc = {{"command", cmd_},
                 {"status", status},
                 {"tool_version", kToolVersion},
                 {"config_hash", config_hash(cfg_)},
                 {"config", to_json(cfg_)},
                 {"seed", cfg_.seed},
                 {"threads", num_threads()},
                 {"inputs", ins},
                 {"outputs", outs},
                 {"wall_clock_seconds", wall},
                 {"steps", steps_},
                 {"metrics", summary_}};
        m.doc["config"]["output_dir"] = dir_.string();
        m.path = dir_ / manifest_name(cmd_);
        atomic_write(m.path, m.doc.dump(2) + "\n");
        log("done in " + std::to_string(wall) + " s; manifest " + m.path.string());
        return m;
    }

private:
    void add(const FileRecord& r) { outputs_[r.name] = r; }

    static std::string producer_hint(const std::string& name) {
        static const std::map<std::string, std::string> by_prefix = {
            {"train", "generate-data"},       {"test", "generate-data"},    {"clim", "generate-data"},
            {"score", "train-score"},         {"forecaster", "train-forecaster"}, {"forecast_", "forecast"},
            {"baseline_", "baseline"}};
        for (const auto& [p, c] : by_prefix)
            if (name.rfind(p, 0) == 0) return "; run `" + c + "` first";
        return "";
    }

    std::string cmd_;
    const ExperimentConfig& cfg_;
    bool quiet_;
    fs::path dir_;
    std::chrono::steady_clock::time_point t0_;
    std::map<std::string, json> inputs_;
    std::map<std::string, FileRecord> outputs_;
    json summary_ = json::object();
    json steps_ = json::object();
};

Tensor vector_tensor(const Eigen::VectorXd& v) {
    Tensor t;
    t.shape = {static_cast<std::uint64_t>(v.size())};
    t.data.assign(v.data(), v.data() + v.size());
    return t;
}

Eigen::VectorXd tensor_vector(const Tensor& t) {
    t.validate();
    if (t.shape.size() != 1) throw IoError("expected a rank-1 tensor");
    return Eigen::Map<const Eigen::VectorXd>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

Tensor square_tensor(const Matrix& m) {
    // stored row by row so the file reads as the matrix
    Tensor t;
    t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(m(i, j));
    return t;
}

Matrix tensor_square(const Tensor& t) {
    t.validate();
    if (t.shape.size() != 2) throw IoError("expected a rank-2 tensor");
    Matrix m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = t.data[k++];
    return m;
}

Tensor climatology_tensor(const Climatology& c) {
    Matrix m(c.dim(), 2 + c.cycle_len());
    m.col(0) = c.mean;
    m.col(1) = c.std;
    for (int p = 0; p < c.cycle_len(); ++p) m.col(2 + p) = c.per_phase_mean[static_cast<std::size_t>(p)];
    return tensor_from_states(m);
}

Climatology climatology_from(const Tensor& t, std::int64_t sample_count) {
    const Matrix m = states_from_tensor(t);
    if (m.cols() < 2) throw IoError("climatology tensor needs at least mean and std rows");
    Climatology c;
    c.mean = m.col(0);
    c.std = m.col(1);
    c.sample_count = sample_count;
    for (Eigen::Index i = 0; i < c.std.size(); ++i) c.floored.push_back(c.std(i) <= Climatology::kStdFloor);
    for (Eigen::Index p = 2; p < m.cols(); ++p) c.per_phase_mean.push_back(m.col(p));
    return c;
}

Trajectory trajectory_from(const Tensor& t, const FileRecord& r) {
    Trajectory tr;
    tr.states = states_from_tensor(t);
    auto attr = [&](const char* k, double fallback) {
        auto it = r.attrs.find(k);
        return it == r.attrs.end() ? fallback : it->second;
    };
    tr.dt = attr("dt", 1.0);
    tr.t0 = attr("t0", 0.0);
    tr.start_step = static_cast<std::int64_t>(attr("start_step", 0));
    tr.stride = static_cast<std::int64_t>(attr("stride", 1));
    return tr;
}

Trajectory slice(const Trajectory& tr, Eigen::Index from, Eigen::Index n) {
    require(from >= 0 && from + n <= tr.size(), "trajectory slice out of range");
    Trajectory out = tr;
    out.states = tr.states.middleCols(from, n);
    out.start_step = tr.step_of(from);
    out.t0 = tr.t0 + tr.dt * double(from);
    return out;
}

int cycle_len_of(const ExperimentConfig& cfg) {
    return cfg.system.kind == "lorenz96_forced" ? static_cast<int>(std::lround(cfg.system.forced.cycle_len)) : 0;
}

Matrix sample_cov(const Matrix& x) {
    const Matrix c = x.colwise() - x.rowwise().mean();
    return c * c.transpose() / double(x.cols() - 1);
}

ScoreModel read_score(Run& run) {
    const json meta = json::parse(run.read_text("score.json"));
    const auto d = meta.at("dim").get<int>();
    const auto nt = run.read("score_norm.gapt");
    const Matrix nm = states_from_tensor(nt);
    Climatology norm = Climatology::identity(d);
    norm.mean = nm.col(0);
    norm.std = nm.col(1);
    if (meta.at("kind").get<std::string>() == "analytic_gaussian")
        return make_gaussian_score(tensor_vector(run.read("score_mean.gapt")), tensor_square(run.read("score_cov.gapt")), norm);
    ScoreModel m;
    m.kind = ScoreKind::mlp;
    m.dim = d;
    m.norm = norm;
    m.weighting = dsm_weighting_from_string(meta.at("weighting").get<std::string>());
    const Tensor p = run.read("score_params.gapt");
    m.weights = Mlp(meta.at("sizes").get<std::vector<int>>(), p.data);
    m.validate();
    return m;
}

ForecastModel read_forecaster(Run& run) {
    const auto& cfg = run.cfg();
    const json meta = json::parse(run.read_text("forecaster.json"));
    if (meta.at("system") != to_json(cfg)["system"])
        throw ConfigError("forecaster.json was built for a different system block; rerun train-forecaster");
    const auto kind = forecast_kind_from_string(meta.at("kind").get<std::string>());
    ForecastModel m;
    if (kind == ForecastKind::learned_mlp) {
        m.kind = kind;
        m.spec.dim = meta.at("dim").get<int>();
        m.spec.dt = meta.at("dt").get<double>();
        m.weights = Mlp(meta.at("sizes").get<std::vector<int>>(), run.read("forecaster_params.gapt").data);
        const Matrix nm = states_from_tensor(run.read("forecaster_norm.gapt"));
        Climatology norm = Climatology::identity(m.spec.dim);
        norm.mean = nm.col(0);
        norm.std = nm.col(1);
        m.norm = norm;
    } else {
        const SystemSpec spec = build_system(cfg);
        m = kind == ForecastKind::perfect ? make_perfect_model(spec)
                                          : make_imperfect_model(spec, meta.at("forcing_shift").get<double>(),
                                                                 meta.at("substep_divisor").get<int>());
        if (!meta.at("forcing_anomalies").get<bool>()) m.spec.params["anom_amp"] = 0.0;
        if (meta.at("has_bias").get<bool>()) m.bias_injection = tensor_vector(run.read("forecaster_bias.gapt"));
    }
    m.validate();
    return m;
}

Climatology read_clim(Run& run) { return climatology_from(run.read("clim.gapt"), run.cfg().data.n_train); }

Trajectory read_traj(Run& run, const std::string& name) {
    run.use(name);
    run.use(name + ".json");
    FileRecord r;
    const Tensor t = read_tensor(run.dir(), name, &r);
    return trajectory_from(t, r);
}

GapPipeline read_pipeline(Run& run, const Trajectory& data) {
    const auto& cfg = run.cfg();
    GapPipeline p;
    p.model = read_score(run);
    p.sched = build_schedule(cfg.diffusion.beta_min, cfg.diffusion.beta_max, cfg.diffusion.n_steps);
    p.sampler = cfg.sampler;
    p.guidance = cfg.guidance;
    p.tau_star_idx = cfg.tau_star_idx;
    p.forecaster = read_forecaster(run);
    p.step_lead = data_step_lead(p.forecaster, data);
    p.validate();
    return p;
}

// Ensemble around a true state with climatological-std-scaled noise.
Ensemble perturbed_ensemble(const StateVector& x, const Climatology& clim, double amp, int m, std::uint64_t seed) {
    Matrix out(x.size(), m);
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        seeds[static_cast<std::size_t>(j)] = member_seed(seed, static_cast<std::uint64_t>(j));
        auto g = rng::stream(seeds[static_cast<std::size_t>(j)], "init_perturbation");
        for (Eigen::Index i = 0; i < x.size(); ++i) out(i, j) = x(i) + amp * clim.std(i) * rng::normal(g);
    }
    return Ensemble(std::move(out), std::move(seeds));
}

StateVector anomaly(const StateVector& x, const Climatology& clim, std::int64_t step) {
    return x - (clim.has_phases() ? clim.phase_mean(step) : clim.mean);
}

struct ForecastSet {
    std::vector<std::vector<Matrix>> ens;  // [case][lead-1]
    std::vector<Matrix> truth;             // [case] d x L
    std::vector<std::vector<std::int64_t>> steps;
};

Tensor ens_tensor(const std::vector<std::vector<Matrix>>& ens) {
    Tensor t;
    const auto& e0 = ens.at(0).at(0);
    t.shape = {ens.size(), ens[0].size(), static_cast<std::uint64_t>(e0.cols()), static_cast<std::uint64_t>(e0.rows())};
    for (const auto& c : ens)
        for (const auto& m : c) t.data.insert(t.data.end(), m.data(), m.data() + m.size());
    return t;
}

std::vector<std::vector<Matrix>> ens_from(const Tensor& t) {
    t.validate();
    if (t.shape.size() != 4) throw IoError("forecast ensemble tensor must be rank 4 [case, lead, member, dim]");
    const auto nc = t.shape[0], nl = t.shape[1], m = t.shape[2], d = t.shape[3];
    std::vector<std::vector<Matrix>> out(nc);
    std::size_t k = 0;
    for (std::uint64_t c = 0; c < nc; ++c)
        for (std::uint64_t l = 0; l < nl; ++l) {
            Matrix x(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(m));
            std::copy_n(t.data.data() + k, m * d, x.data());
            k += m * d;
            out[c].push_back(std::move(x));
        }
    return out;
}

void write_forecast_set(Run& run, const std::string& prefix, const ForecastSet& fs) {
    run.tensor(prefix + "_ens.gapt", ens_tensor(fs.ens), "forecast_ensemble");
    std::vector<Matrix> tr = fs.truth;
    run.tensor(prefix + "_truth.gapt", tensor_from_stack(tr), "forecast_truth");
    Tensor st;
    st.shape = {fs.steps.size(), fs.steps.at(0).size()};
    for (const auto& s : fs.steps)
        for (auto v : s) st.data.push_back(double(v));
    run.tensor(prefix + "_steps.gapt", st, "forecast_steps");
}

ForecastSet read_forecast_set(Run& run, const std::string& prefix) {
    ForecastSet fs;
    fs.ens = ens_from(run.read(prefix + "_ens.gapt"));
    const Tensor tt = run.read(prefix + "_truth.gapt");
    if (tt.shape.size() != 3) throw IoError(prefix + "_truth.gapt must be rank 3");
    // stored as [case, lead, dim]: a stack of d x L matrices
    const auto nc = tt.shape[0], nl = tt.shape[1], d = tt.shape[2];
    for (std::uint64_t c = 0; c < nc; ++c) {
        Matrix m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(nl));
        std::copy_n(tt.data.data() + c * nl * d, nl * d, m.data());
        fs.truth.push_back(std::move(m));
    }
    const Tensor st = run.read(prefix + "_steps.gapt");
    if (st.shape.size() != 2 || st.shape[0] != nc || st.shape[1] != nl) throw IoError(prefix + "_steps.gapt has the wrong shape");
    fs.steps.assign(nc, std::vector<std::int64_t>(nl));
    for (std::uint64_t c = 0; c < nc; ++c)
        for (std::uint64_t l = 0; l < nl; ++l) fs.steps[c][l] = static_cast<std::int64_t>(st.data[c * nl + l]);
    if (fs.ens.size() != nc || (nc && fs.ens[0].size() != nl)) throw IoError(prefix + ": ensemble and truth shapes differ");
    return fs;
}

void summarize_leads(Run& run, const std::vector<MetricRow>& rows) {
    std::map<std::string, std::pair<std::int64_t, double>> last;
    for (const auto& r : rows) last[r.metric] = {r.lead, r.value};
    for (const auto& [k, v] : last) run.summary()[k + "_final"] = v.second;
}

// ---------------------------------------------------------------------------

RunManifest generate_data(Run& run) {
    const auto& cfg = run.cfg();
    const auto spec = build_system(cfg);
    run.log("integrating " + to_string(spec.kind) + " (d=" + std::to_string(spec.dim) + ")");
    const auto train = generate_dataset(spec, cfg.data.spinup, cfg.data.n_train, cfg.data.thin, run.seed("train_data"));
    const auto test = generate_dataset(spec, cfg.data.spinup, cfg.data.n_test, cfg.data.thin, run.seed("test_data"));
    const int cyc = cycle_len_of(cfg);
    const auto clim = cyc > 0 ? fit_climatology(train, cyc) : fit_climatology(train);
    run.trajectory("train.gapt", train, "train");
    run.trajectory("test.gapt", test, "test");
    run.tensor("clim.gapt", climatology_tensor(clim), "climatology", {{"cycle_len", double(cyc)}});
    run.steps() = {{"model_steps", (cfg.data.spinup + (cfg.data.n_train + cfg.data.n_test) * cfg.data.thin)},
                   {"n_train", cfg.data.n_train},
                   {"n_test", cfg.data.n_test}};
    run.summary() = {{"clim_std_mean", clim.std.mean()}, {"clim_mean_mean", clim.mean.mean()}};
    return run.finish();
}

RunManifest train_score_cmd(Run& run) {
    const auto& cfg = run.cfg();
    const auto& sc = cfg.diffusion.score;
    const auto train = read_traj(run, "train.gapt");
    const auto clim = read_clim(run);
    const auto sched = build_schedule(cfg.diffusion.beta_min, cfg.diffusion.beta_max, cfg.diffusion.n_steps);
    ScoreModel m;
    json meta = {{"kind", sc.kind}, {"dim", train.dim()}};
    if (score_kind_from_string(sc.kind) == ScoreKind::analytic_gaussian) {
        if (sc.prior == "stationary") {
            const auto lg = linear_gaussian_model(build_system(cfg));
            m = make_gaussian_score(StateVector::Zero(lg.dim()), stationary_covariance(lg));
        } else {
            m = make_gaussian_score(StateVector::Zero(train.dim()), sample_cov(normalize(train.states, clim)), clim);
        }
        meta["prior"] = sc.prior;
        run.tensor("score_mean.gapt", vector_tensor(m.gaussian->mean), "score_prior_mean");
        run.tensor("score_cov.gapt", square_tensor(m.gaussian->cov), "score_prior_cov");
    } else {
        ScoreTraining opt;
        opt.hidden_sizes = sc.hidden;
        opt.epochs = sc.epochs;
        opt.lr = sc.lr;
        opt.batch = sc.batch;
        opt.weighting = dsm_weighting_from_string(sc.weighting);
        opt.seed = run.seed("score_training");
        run.log("training score network for " + std::to_string(opt.epochs) + " epochs");
        m = train_score(train, clim, sched, opt);
        meta["sizes"] = m.weights->sizes();
        meta["weighting"] = sc.weighting;
        const auto p = m.weights->params();
        Tensor t;
        t.shape = {p.size()};
        t.data.assign(p.begin(), p.end());
        run.tensor("score_params.gapt", t, "score_weights");
        std::vector<MetricRow> rows;
        for (std::size_t e = 0; e < m.training_loss.size(); ++e)
            rows.push_back({"dsm_loss", static_cast<std::int64_t>(e), m.training_loss[e], 0, cfg.seed});
        run.metrics("score_loss.csv", rows);
        run.summary()["final_loss"] = m.training_loss.back();
        run.steps()["epochs"] = opt.epochs;
    }
    Matrix norm(m.dim, 2);
    norm << m.norm.mean, m.norm.std;
    run.tensor("score_norm.gapt", tensor_from_states(norm), "score_normalization");
    // unconditional sample check: spread of a small batch relative to the climatology
    const auto s = sample(m, sched, cfg.sampler, 256, run.seed("score_check"));
    const StateVector sd = s.spread();
    run.summary()["sample_std_ratio"] = (sd.array() / clim.std.array()).mean();
    run.text("score.json", meta.dump(2) + "\n", "score_metadata");
    return run.finish();
}

RunManifest train_forecaster_cmd(Run& run) {
    const auto& cfg = run.cfg();
    const auto& fc = cfg.forecaster;
    const auto train = read_traj(run, "train.gapt");
    const auto test = read_traj(run, "test.gapt");
    const auto clim = read_clim(run);
    const auto kind = forecast_kind_from_string(fc.kind);
    json meta = {{"kind", fc.kind}, {"system", to_json(cfg)["system"]}};
    ForecastModel m;
    if (kind == ForecastKind::learned_mlp) {
        ForecasterTraining opt = fc.training;
        opt.seed = run.seed("forecaster_training");
        run.log("training forecaster for " + std::to_string(opt.epochs) + " epochs");
        m = train_forecaster(train, opt);
        meta["sizes"] = m.weights->sizes();
        meta["dim"] = m.spec.dim;
        meta["dt"] = m.spec.dt;
        const auto p = m.weights->params();
        Tensor t;
        t.shape = {p.size()};
        t.data.assign(p.begin(), p.end());
        run.tensor("forecaster_params.gapt", t, "forecaster_weights");
        Matrix norm(m.spec.dim, 2);
        norm << m.norm->mean, m.norm->std;
        run.tensor("forecaster_norm.gapt", tensor_from_states(norm), "forecaster_normalization");
        std::vector<MetricRow> rows;
        for (std::size_t e = 0; e < m.training_loss.size(); ++e)
            rows.push_back({"mse_loss", static_cast<std::int64_t>(e), m.training_loss[e], 0, cfg.seed});
        run.metrics("forecaster_loss.csv", rows);
        run.steps()["epochs"] = opt.epochs;
    } else {
        const auto spec = build_system(cfg);
        m = kind == ForecastKind::perfect ? make_perfect_model(spec) : make_imperfect_model(spec, fc.forcing_shift, fc.substep_divisor);
        if (!fc.forcing_anomalies) m.spec.params["anom_amp"] = 0.0;
        meta["forcing_shift"] = fc.forcing_shift;
        meta["substep_divisor"] = fc.substep_divisor;
        meta["forcing_anomalies"] = fc.forcing_anomalies;
        meta["has_bias"] = fc.bias_std != 0;
        if (fc.bias_std != 0) {
            m.bias_injection = StateVector(fc.bias_std * clim.std);
            run.tensor("forecaster_bias.gapt", vector_tensor(*m.bias_injection), "forecaster_bias");
        }
    }
    m.validate();
    run.text("forecaster.json", meta.dump(2) + "\n", "forecaster_metadata");

    // one-step skill on held-out data
    const auto lead = data_step_lead(m, test);
    const Eigen::Index n = std::min<Eigen::Index>(test.size() - 1, 500);
    double se = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
        const StateVector y = forecast(test.state(k), m, lead, run.seed("one_step", static_cast<std::uint64_t>(k)), test.step_of(k));
        se += ((y - test.state(k + 1)).array() / clim.std.array()).square().mean();
    }
    const double r = std::sqrt(se / double(n));
    run.metrics("forecaster_skill.csv", {{"one_step_rmse_std", 1, r, 1, cfg.seed}});
    run.summary()["one_step_rmse_std"] = r;
    return run.finish();
}

std::vector<ObservationSet> observation_network(Run& run, const Trajectory& truth) {
    const auto& o = run.cfg().observations;
    return simulate_obs_network(truth, o.n_obs, o.sigma_o, obs_layout_from_string(o.layout), o.obs_every, run.seed("obs_network"));
}

Trajectory assimilation_truth(Run& run) {
    const auto test = read_traj(run, "test.gapt");
    const auto w = run.cfg().assimilation.window_steps;
    if (test.size() < w + 1) throw ConfigError("data.n_test is shorter than assimilation.window_steps + 1");
    return slice(test, 0, w + 1);
}

std::map<std::int64_t, const ObservationSet*> by_time(const std::vector<ObservationSet>& obs) {
    std::map<std::int64_t, const ObservationSet*> m;
    for (const auto& o : obs) m[o.time_index] = &o;
    return m;
}

void write_obs(Run& run, const std::vector<ObservationSet>& obs) {
    Tensor t;
    const std::size_t n = obs.empty() ? 0 : obs[0].size();
    t.shape = {obs.size(), n, 3};
    for (const auto& o : obs) {
        require(o.size() == n, "observation sets differ in size");
        for (std::size_t i = 0; i < n; ++i) {
            t.data.push_back(double(o.time_index));
            t.data.push_back(double(o.indices[i]));
            t.data.push_back(o.values(static_cast<Eigen::Index>(i)));
        }
    }
    run.tensor("obs.gapt", t, "observations");
}

double threshold_time(const std::vector<double>& rmse, double thr) {
    for (std::size_t k = 0; k < rmse.size(); ++k)
        if (rmse[k] < thr) return double(k);
    return -1;
}

RunManifest assimilate_cmd(Run& run) {
    const auto& cfg = run.cfg();
    const auto truth = assimilation_truth(run);
    const auto clim = read_clim(run);
    const auto pipe = read_pipeline(run, truth);
    const auto obs = observation_network(run, truth);
    AssimilationConfig ac = cfg.assimilation;
    ac.obs_every = cfg.observations.obs_every;
    run.log("cycling " + std::to_string(ac.window_steps) + " steps with M=" + std::to_string(ac.ensemble_size));
    const auto rec = assimilation_cycle(truth, obs, pipe, ac, run.seed("assimilate"));

    std::vector<Matrix> prior, post;
    std::vector<MetricRow> rows;
    std::vector<double> r;
    double sum = 0;
    for (const auto& c : rec) {
        prior.push_back(c.prior_ensemble.members);
        post.push_back(c.posterior_ensemble.members);
        for (const auto& [k, v] : c.diagnostics)
            rows.push_back({k, c.time_index, v, c.posterior_ensemble.size(), cfg.seed});
        r.push_back(c.diagnostics.at("rmse"));
        if (c.time_index > 0) sum += r.back();
    }
    run.tensor("assim_prior.gapt", tensor_from_stack(prior), "prior_ensemble");
    run.tensor("assim_posterior.gapt", tensor_from_stack(post), "posterior_ensemble");
    run.trajectory("assim_truth.gapt", truth, "truth");
    write_obs(run, obs);
    run.metrics("assim_metrics.csv", rows);
    const double sd = clim.std.mean();
    run.steps() = {{"cycles", ac.window_steps}, {"ensemble_size", ac.ensemble_size}};
    run.summary() = {{"rmse_time_mean", sum / double(ac.window_steps)},
                     {"rmse_final", r.back()},
                     {"clim_std_mean", sd},
                     {"rmse_final_over_clim_std", r.back() / sd},
                     {"steps_to_half_clim_std", threshold_time(r, 0.5 * sd)}};
    return run.finish();
}

void forecast_cases(Run& run, const Trajectory& test, std::int64_t lead, int n_cases, std::int64_t spacing) {
    if ((n_cases - 1) * spacing + lead >= test.size())
        throw ConfigError("data.n_test is too short for " + std::to_string(n_cases) + " cases spaced " +
                          std::to_string(spacing) + " at lead " + std::to_string(lead));
    run.steps()["cases"] = n_cases;
    run.steps()["lead_steps"] = lead;
}

ForecastSet truth_set(const Trajectory& test, std::int64_t lead, int n_cases, std::int64_t spacing) {
    ForecastSet fs;
    for (int c = 0; c < n_cases; ++c) {
        const Eigen::Index i0 = c * spacing;
        fs.truth.push_back(test.states.middleCols(i0 + 1, lead));
        std::vector<std::int64_t> st;
        for (std::int64_t k = 1; k <= lead; ++k) st.push_back(test.step_of(i0 + k));
        fs.steps.push_back(std::move(st));
    }
    return fs;
}

RunManifest forecast_cmd(Run& run) {
    const auto& cfg = run.cfg();
    const auto& f = cfg.forecast;
    const auto test = read_traj(run, "test.gapt");
    const auto clim = read_clim(run);
    const auto pipe = read_pipeline(run, test);
    forecast_cases(run, test, f.lead_steps, f.n_cases, f.case_spacing);
    ForecastSet fs = truth_set(test, f.lead_steps, f.n_cases, f.case_spacing);
    std::int64_t resampled = 0;
    for (int c = 0; c < f.n_cases; ++c) {
        const Eigen::Index i0 = c * f.case_spacing;
        const auto init = perturbed_ensemble(test.state(i0), clim, f.init_perturbation, f.ensemble_size,
                                             run.seed("forecast_init", static_cast<std::uint64_t>(c)));
        auto r = ensemble_forecast(init, pipe, f.lead_steps, test.step_of(i0), run.seed("forecast", static_cast<std::uint64_t>(c)));
        std::vector<Matrix> leads;
        for (auto& e : r.per_lead) leads.push_back(std::move(e.members));
        for (const auto& v : r.resampled) resampled += static_cast<std::int64_t>(v.size());
        fs.ens.push_back(std::move(leads));
        run.log("case " + std::to_string(c + 1) + "/" + std::to_string(f.n_cases));
    }
    write_forecast_set(run, "forecast", fs);
    const auto rows = evaluate_forecasts(fs.ens, fs.truth, fs.steps, clim, cfg.seed);
    run.metrics("forecast_metrics.csv", rows);
    summarize_leads(run, rows);
    run.summary()["resampled_members"] = resampled;
    return run.finish();
}

RunManifest evaluate_cmd(Run& run, const std::string& prefix) {
    const auto clim = read_clim(run);
    const auto fs = read_forecast_set(run, prefix);
    const auto rows = evaluate_forecasts(fs.ens, fs.truth, fs.steps, clim, run.cfg().seed);
    run.metrics("evaluate_metrics.csv", rows);
    summarize_leads(run, rows);
    run.summary()["evaluated"] = prefix;
    run.steps()["cases"] = fs.ens.size();
    return run.finish();
}

RunManifest seasonal_cmd(Run& run) {
    const auto& cfg = run.cfg();
    const auto& s = cfg.seasonal;
    const auto spec = build_system(cfg);
    const auto fc = spec.forcing_coords();
    const auto ac = spec.atmosphere_coords();
    if (fc.empty()) throw ConfigError("seasonal needs a forced system (system.kind = lorenz96_forced)");
    const auto test = read_traj(run, "test.gapt");
    const auto clim = read_clim(run);
    if (!clim.has_phases()) throw ConfigError("seasonal needs a phase climatology");
    const auto pipe = read_pipeline(run, test);
    const auto clim_f = clim.select(fc);
    forecast_cases(run, test, s.lead_steps, s.n_cases, s.case_spacing);
    ForecastSet truth = truth_set(test, s.lead_steps, s.n_cases, s.case_spacing);

    std::vector<Matrix> forced_mean, free_mean;
    std::vector<double> acc_forced(static_cast<std::size_t>(s.lead_steps), 0), acc_free(acc_forced);
    std::vector<int> acc_n(acc_forced.size(), 0);
    int wins = 0;
    double wf = 0, wr = 0;
    auto atm = [&](const StateVector& x) {
        StateVector out(static_cast<Eigen::Index>(ac.size()));
        for (std::size_t i = 0; i < ac.size(); ++i) out(static_cast<Eigen::Index>(i)) = x(ac[i]);
        return out;
    };
    for (int c = 0; c < s.n_cases; ++c) {
        const Eigen::Index i0 = c * s.case_spacing;
        const std::int64_t step0 = test.step_of(i0);
        const auto init = perturbed_ensemble(test.state(i0), clim, s.init_perturbation, s.ensemble_size,
                                             run.seed("seasonal_init", static_cast<std::uint64_t>(c)));
        StateVector th0(static_cast<Eigen::Index>(fc.size()));
        for (std::size_t i = 0; i < fc.size(); ++i) th0(static_cast<Eigen::Index>(i)) = test.state(i0)(fc[i]);
        const auto path = anomaly_persistence(th0, clim_f, step0, static_cast<int>(s.lead_steps));
        const auto forced = seasonal_run(init, pipe, path, fc, s.lead_steps, step0, run.seed("seasonal_forced", static_cast<std::uint64_t>(c)));
        const auto free = ensemble_forecast(init, pipe, s.lead_steps, step0, run.seed("seasonal_free", static_cast<std::uint64_t>(c)));
        Matrix fm(test.dim(), s.lead_steps), rm(test.dim(), s.lead_steps);
        StateVector wf_sum = StateVector::Zero(static_cast<Eigen::Index>(ac.size())), wr_sum = wf_sum, wt_sum = wf_sum;
        for (std::int64_t k = 0; k < s.lead_steps; ++k) {
            fm.col(k) = forced.per_lead[static_cast<std::size_t>(k)].mean();
            rm.col(k) = free.per_lead[static_cast<std::size_t>(k)].mean();
            const std::int64_t st = truth.steps[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
            const StateVector ta = atm(anomaly(truth.truth[static_cast<std::size_t>(c)].col(k), clim, st));
            const StateVector fa = atm(anomaly(fm.col(k), clim, st)), ra = atm(anomaly(rm.col(k), clim, st));
            const auto a1 = acc(fa, ta), a2 = acc(ra, ta);
            if (a1 && a2) {
                acc_forced[static_cast<std::size_t>(k)] += *a1;
                acc_free[static_cast<std::size_t>(k)] += *a2;
                ++acc_n[static_cast<std::size_t>(k)];
            }
            if (k + 1 > s.window_start) {
                wf_sum += fa;
                wr_sum += ra;
                wt_sum += ta;
            }
        }
        const double af = acc(wf_sum, wt_sum).value_or(0.0), ar = acc(wr_sum, wt_sum).value_or(0.0);
        wf += af;
        wr += ar;
        wins += af > ar;
        forced_mean.push_back(std::move(fm));
        free_mean.push_back(std::move(rm));
        run.log("case " + std::to_string(c + 1) + "/" + std::to_string(s.n_cases) + ": window ACC forced " +
                std::to_string(af) + " free " + std::to_string(ar));
    }
    run.tensor("seasonal_forced.gapt", tensor_from_stack(forced_mean), "forced_ensemble_mean");
    run.tensor("seasonal_free.gapt", tensor_from_stack(free_mean), "free_ensemble_mean");
    run.tensor("seasonal_truth.gapt", tensor_from_stack(truth.truth), "truth");
    std::vector<MetricRow> rows;
    const auto M = static_cast<std::int64_t>(s.ensemble_size);
    for (std::size_t k = 0; k < acc_forced.size(); ++k)
        if (acc_n[k] > 0) {
            rows.push_back({"acc_forced", static_cast<std::int64_t>(k + 1), acc_forced[k] / acc_n[k], M, cfg.seed});
            rows.push_back({"acc_free", static_cast<std::int64_t>(k + 1), acc_free[k] / acc_n[k], M, cfg.seed});
        }
    const double p = sign_test_p(wins, s.n_cases);
    rows.push_back({"window_acc_forced", s.lead_steps, wf / s.n_cases, M, cfg.seed});
    rows.push_back({"window_acc_free", s.lead_steps, wr / s.n_cases, M, cfg.seed});
    rows.push_back({"forced_wins", s.lead_steps, double(wins), M, cfg.seed});
    rows.push_back({"sign_test_p", s.lead_steps, p, M, cfg.seed});
    run.metrics("seasonal_metrics.csv", rows);
    run.summary() = {{"window_acc_forced", wf / s.n_cases},
                     {"window_acc_free", wr / s.n_cases},
                     {"forced_wins", wins},
                     {"cases", s.n_cases},
                     {"sign_test_p", p}};
    return run.finish();
}

RunManifest climate_cmd(Run& run) {
    const auto& cfg = run.cfg();
    const auto& cc = cfg.climate;
    const auto spec = build_system(cfg);
    const auto test = read_traj(run, "test.gapt");
    const auto train = read_traj(run, "train.gapt");
    const auto clim = read_clim(run);
    const auto pipe = read_pipeline(run, test);
    ClimateRunConfig rc;
    rc.n_steps = cc.n_steps;
    rc.sdedit_every = cc.sdedit_every;
    rc.thin = cc.thin;
    rc.trace_every = cc.trace_every;
    rc.excursion_z = cc.excursion_z;
    rc.cycle_len = cycle_len_of(cfg);
    rc.start_step = test.step_of(0);
    std::optional<ClimateForcing> forcing;
    if (!spec.forcing_coords().empty()) {
        const double shift = cc.forcing_shift;
        forcing = ClimateForcing{spec.forcing_coords(),
                                 [spec, shift](std::int64_t step) { return StateVector(spec.theta_cycle(double(step)).array() + shift); }};
    }
    run.log("free run of " + std::to_string(rc.n_steps) + " steps");
    ClimateRunResult r;
    try {
        r = climate_run(test.state(0), pipe, clim, rc, run.seed("climate"), forcing);
    } catch (const RunDivergence& e) {
        run.tensor("climate_last_finite.gapt", vector_tensor(e.last_finite()), "last_finite_state", {{"step", double(e.step())}});
        run.summary() = {{"diverged_at_step", e.step()}};
        run.finish("diverged");
        throw;
    }
    const auto& st = r.stats;
    run.steps() = {{"model_steps", rc.n_steps * pipe.step_lead}, {"pipeline_steps", rc.n_steps}};
    if (st.count == 0) {
        run.summary()["count"] = 0;
        return run.finish();
    }
    Matrix mv(test.dim(), 2);
    mv << st.running_mean, st.running_var;
    run.tensor("climate_stats.gapt", tensor_from_states(mv), "running_mean_and_variance");
    Tensor tr;
    tr.shape = {st.global_mean_trace.size()};
    tr.data = st.global_mean_trace;
    if (!tr.data.empty()) run.tensor("climate_trace.gapt", tr, "global_mean_trace", {{"trace_every", double(cc.trace_every)}});
    if (r.thinned) run.trajectory("climate_thinned.gapt", *r.thinned, "thinned_states");
    if (!st.seasonal_composite.empty()) {
        Matrix comp(test.dim(), rc.cycle_len);
        for (int p = 0; p < rc.cycle_len; ++p) comp.col(p) = st.seasonal_composite[static_cast<std::size_t>(p)];
        run.tensor("climate_composite.gapt", tensor_from_states(comp), "seasonal_composite");
    }

    // reference: training-data global mean and per-coordinate variance
    const double train_global = train.states.mean();
    const double sd = clim.std.mean();
    const StateVector var_ratio = st.running_var.array() / clim.std.array().square();
    double worst_trace = 0;
    std::vector<MetricRow> rows;
    for (std::size_t i = 0; i < st.global_mean_trace.size(); ++i) {
        const double dev = (st.global_mean_trace[i] - train_global) / sd;
        worst_trace = std::max(worst_trace, std::abs(dev));
        rows.push_back({"global_mean_deviation_std", static_cast<std::int64_t>((i + 1) * cc.trace_every), dev, 1, cfg.seed});
    }
    const auto ac = spec.atmosphere_coords();
    double atm_mean = 0;
    for (int i : ac) atm_mean += st.running_mean(i);
    atm_mean /= double(ac.size());
    rows.push_back({"atmosphere_mean", st.count, atm_mean, 1, cfg.seed});
    rows.push_back({"variance_ratio_min", st.count, var_ratio.minCoeff(), 1, cfg.seed});
    rows.push_back({"variance_ratio_max", st.count, var_ratio.maxCoeff(), 1, cfg.seed});
    rows.push_back({"max_abs", st.count, st.max_abs, 1, cfg.seed});
    rows.push_back({"excursion_count", st.count, double(st.excursion_count), 1, cfg.seed});
    run.metrics("climate_metrics.csv", rows);
    run.summary() = {{"count", st.count},
                     {"global_mean_deviation_std", (st.running_mean.mean() - train_global) / sd},
                     {"worst_trace_deviation_std", worst_trace},
                     {"atmosphere_mean", atm_mean},
                     {"variance_ratio_min", var_ratio.minCoeff()},
                     {"variance_ratio_max", var_ratio.maxCoeff()},
                     {"max_abs", st.max_abs},
                     {"excursion_count", st.excursion_count},
                     {"forcing_shift", cc.forcing_shift}};
    return run.finish();
}

RunManifest calibrate_cmd(Run& run) {
    const auto& cfg = run.cfg();
    const auto& cal = cfg.calibration;
    const auto test = read_traj(run, "test.gapt");
    const auto pipe = read_pipeline(run, test);
    run.log("scoring " + std::to_string(cal.candidates.size()) + " noise levels on " + std::to_string(cal.n_cases) + " cases");
    const auto r = calibrate_tau_star(pipe.model, pipe.sched, pipe.sampler, pipe.forecaster, test, cal.candidates,
                                      cal.n_ensemble, run.seed("calibrate"), cal.n_cases);
    std::vector<MetricRow> rows;
    for (const auto& c : r.report) {
        rows.push_back({"crps", c.tau_idx, c.crps, cal.n_ensemble, cfg.seed});
        rows.push_back({"mae_std", c.tau_idx, c.mae, cal.n_ensemble, cfg.seed});
        rows.push_back({"spectrum_distance", c.tau_idx, c.spectrum_distance, cal.n_ensemble, cfg.seed});
    }
    run.metrics("tau_metrics.csv", rows);
    run.text("tau_star.json", json({{"tau_star_idx", r.tau_star_idx}}).dump(2) + "\n", "selected_tau");
    run.summary() = {{"tau_star_idx", r.tau_star_idx}};
    run.steps() = {{"cases", cal.n_cases}, {"candidates", cal.candidates.size()}};
    return run.finish();
}

RunManifest baseline_cmd(Run& run) {
    const auto& cfg = run.cfg();
    const auto& b = cfg.baseline;
    const auto clim = read_clim(run);
    const std::string pre = "baseline_" + b.method;
    std::vector<MetricRow> rows;
    if (b.method == "kalman" || b.method == "enkf") {
        const auto truth = assimilation_truth(run);
        const auto obs = observation_network(run, truth);
        const auto at = by_time(obs);
        std::vector<double> r;
        if (b.method == "kalman") {
            const auto lg = linear_gaussian_model(build_system(cfg));
            std::vector<ObservationSet> stream;
            for (Eigen::Index k = 0; k < truth.size(); ++k) {
                auto it = at.find(k);
                stream.push_back(it == at.end() ? empty_observations(k) : *it->second);
            }
            const auto kf = kalman_filter(lg, stream, StateVector::Zero(lg.dim()), stationary_covariance(lg));
            Matrix means(truth.dim(), truth.size());
            for (Eigen::Index k = 0; k < truth.size(); ++k) {
                const auto& g = kf[static_cast<std::size_t>(k)];
                means.col(k) = g.mean;
                r.push_back(rmse(g.mean, truth.state(k)));
                rows.push_back({"rmse", k, r.back(), 0, cfg.seed});
                rows.push_back({"spread", k, std::sqrt(g.cov.diagonal().mean()), 0, cfg.seed});
            }
            run.tensor(pre + "_mean.gapt", tensor_from_states(means), "kalman_mean");
        } else {
            const auto pipe = read_pipeline(run, truth);
            const auto train = read_traj(run, "train.gapt");
            Ensemble ens = climatology_ensemble(clim, b.ensemble_size, run.seed("enkf_init"), train);
            std::vector<Matrix> post;
            for (Eigen::Index k = 0; k < truth.size(); ++k) {
                if (k > 0) {
                    Matrix next = ens.members;
                    for (Eigen::Index j = 0; j < next.cols(); ++j)
                        next.col(j) = forecast(ens.members.col(j), pipe.forecaster, pipe.step_lead,
                                               rng::derive(ens.member_seeds[static_cast<std::size_t>(j)], "enkf_forecast",
                                                           static_cast<std::uint64_t>(k)),
                                               truth.step_of(k - 1));
                    if (!next.allFinite()) throw Divergence("enkf baseline: forecast left the finite domain", k);
                    ens.members = std::move(next);
                }
                auto it = at.find(k);
                if (it != at.end() && !it->second->empty())
                    ens = enkf_step(ens, *it->second, b.inflation, run.seed("enkf_update", static_cast<std::uint64_t>(k)));
                if (!ens.members.allFinite()) throw Divergence("enkf baseline: analysis left the finite domain", k);
                post.push_back(ens.members);
                r.push_back(rmse(ens.mean(), truth.state(k)));
                rows.push_back({"rmse", k, r.back(), b.ensemble_size, cfg.seed});
                rows.push_back({"crps", k, crps_field(ens.members, truth.state(k)), b.ensemble_size, cfg.seed});
                rows.push_back({"spread", k, std::sqrt(ens.spread().array().square().mean()), b.ensemble_size, cfg.seed});
            }
            run.tensor(pre + "_posterior.gapt", tensor_from_stack(post), "enkf_posterior");
        }
        double sum = 0;
        for (std::size_t k = 1; k < r.size(); ++k) sum += r[k];
        run.summary() = {{"rmse_time_mean", sum / double(r.size() - 1)},
                         {"rmse_final", r.back()},
                         {"steps_to_half_clim_std", threshold_time(r, 0.5 * clim.std.mean())}};
        run.steps() = {{"cycles", r.size() - 1}};
    } else {
        const auto& f = cfg.forecast;
        const auto test = read_traj(run, "test.gapt");
        forecast_cases(run, test, f.lead_steps, f.n_cases, f.case_spacing);
        ForecastSet fs = truth_set(test, f.lead_steps, f.n_cases, f.case_spacing);
        const auto train = b.method == "climatology" ? std::optional<Trajectory>(read_traj(run, "train.gapt")) : std::nullopt;
        for (int c = 0; c < f.n_cases; ++c) {
            const Eigen::Index i0 = c * f.case_spacing;
            std::vector<Matrix> leads;
            if (b.method == "persistence") {
                for (std::int64_t k = 1; k <= f.lead_steps; ++k) leads.push_back(persistence_forecast(test.state(i0), k));
            } else {
                const auto e = climatology_ensemble(clim, b.ensemble_size, run.seed("climatology_baseline", static_cast<std::uint64_t>(c)), train);
                leads.assign(static_cast<std::size_t>(f.lead_steps), e.members);
            }
            fs.ens.push_back(std::move(leads));
        }
        write_forecast_set(run, pre, fs);
        rows = evaluate_forecasts(fs.ens, fs.truth, fs.steps, clim, cfg.seed);
        summarize_leads(run, rows);
    }
    run.metrics(pre + "_metrics.csv", rows);
    run.summary()["method"] = b.method;
    return run.finish();
}

}  // namespace

std::map<std::string, std::string> RunManifest::output_digests() const {
    std::map<std::string, std::string> m;
    for (const auto& o : doc.at("outputs")) m[o.at("name").get<std::string>()] = o.at("sha256").get<std::string>();
    return m;
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> n = {"generate-data", "train-score", "train-forecaster", "assimilate", "forecast",
                                               "seasonal",      "climate-run", "calibrate-tau",    "evaluate",   "baseline"};
    return n;
}

RunManifest run_command(const std::string& name, const ExperimentConfig& cfg, const CommandOptions& opt) {
    cfg.validate();
    Run run(name, cfg, opt);
    if (name == "generate-data") return generate_data(run);
    if (name == "train-score") return train_score_cmd(run);
    if (name == "train-forecaster") return train_forecaster_cmd(run);
    if (name == "assimilate") return assimilate_cmd(run);
    if (name == "forecast") return forecast_cmd(run);
    if (name == "seasonal") return seasonal_cmd(run);
    if (name == "climate-run") return climate_cmd(run);
    if (name == "calibrate-tau") return calibrate_cmd(run);
    if (name == "evaluate") return evaluate_cmd(run, opt.evaluate);
    if (name == "baseline") return baseline_cmd(run);
    throw ConfigError("unknown command '" + name + "'");
}

Trajectory load_trajectory(const fs::path& dir, const std::string& name) {
    FileRecord r;
    const Tensor t = read_tensor(dir, name, &r);
    return trajectory_from(t, r);
}

Climatology load_climatology(const fs::path& dir) { return climatology_from(read_tensor(dir, "clim.gapt"), 0); }

ScoreModel load_score(const fs::path& dir) {
    ExperimentConfig cfg;
    CommandOptions o;
    o.out = dir;
    o.quiet = true;
    Run run("load", cfg, o);
    return read_score(run);
}

ForecastModel load_forecaster(const fs::path& dir, const ExperimentConfig& cfg) {
    CommandOptions o;
    o.out = dir;
    o.quiet = true;
    Run run("load", cfg, o);
    return read_forecaster(run);
}

std::vector<MetricRow> evaluate_forecasts(const std::vector<std::vector<Matrix>>& ens, const std::vector<Matrix>& truth,
                                          const std::vector<std::vector<std::int64_t>>& steps, const Climatology& clim,
                                          std::uint64_t seed) {
    require(!ens.empty() && ens.size() == truth.size() && steps.size() == truth.size(), "evaluate: case count mismatch");
    const std::size_t nl = ens[0].size();
    const auto nc = static_cast<double>(ens.size());
    std::vector<MetricRow> rows;
    for (std::size_t l = 0; l < nl; ++l) {
        double r = 0, a = 0, cr = 0, sp = 0, cc = 0;
        int na = 0;
        std::vector<Matrix> es;
        Matrix tr(truth[0].rows(), static_cast<Eigen::Index>(ens.size()));
        std::int64_t m = 0;
        for (std::size_t c = 0; c < ens.size(); ++c) {
            require(ens[c].size() == nl && truth[c].cols() == static_cast<Eigen::Index>(nl), "evaluate: lead count mismatch");
            const Matrix& e = ens[c][l];
            const StateVector y = truth[c].col(static_cast<Eigen::Index>(l));
            const StateVector mean = e.rowwise().mean();
            m = e.cols();
            r += rmse(mean, y);
            if (auto v = acc(anomaly(mean, clim, steps[c][l]), anomaly(y, clim, steps[c][l]))) {
                a += *v;
                ++na;
            }
            cr += crps_field(e, y);
            if (e.cols() > 1) {
                const Matrix dev = e.colwise() - mean;
                sp += std::sqrt((dev.array().square().rowwise().sum() / double(e.cols() - 1)).mean());
            }
            double g = 0;
            const StateVector ref = clim.has_phases() ? clim.phase_mean(steps[c][l]) : clim.mean;
            for (Eigen::Index i = 0; i < y.size(); ++i) g += gaussian_crps(ref(i), clim.std(i), y(i));
            cc += g / double(y.size());
            es.push_back(e);
            tr.col(static_cast<Eigen::Index>(c)) = y;
        }
        const auto lead = static_cast<std::int64_t>(l + 1);
        rows.push_back({"rmse", lead, r / nc, m, seed});
        if (na > 0) rows.push_back({"acc", lead, a / na, m, seed});
        rows.push_back({"crps", lead, cr / nc, m, seed});
        rows.push_back({"spread", lead, sp / nc, m, seed});
        if (m >= 2)
            if (auto s = spread_skill_ratio(es, tr)) rows.push_back({"ssr", lead, *s, m, seed});
        rows.push_back({"clim_crps", lead, cc / nc, m, seed});
    }
    return rows;
}

double sign_test_p(int wins, int n) {
    require(n >= 1 && wins >= 0 && wins <= n, "sign_test_p: need 0 <= wins <= n, n >= 1");
    double p = 0;
    for (int k = wins; k <= n; ++k)
        p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
    return std::min(1.0, p);
}

}  // namespace gap
