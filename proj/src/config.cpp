#include "gap/config.hpp"

#include <limits>
#include <set>
#include <type_traits>

#include "gap/error.hpp"
#include "gap/io.hpp"

namespace gap {

using nlohmann::json;

namespace {

template <typename T>
struct is_vector : std::false_type {};
template <typename T>
struct is_vector<std::vector<T>> : std::true_type {};

template <typename T>
bool type_ok(const json& v) {
    if constexpr (std::is_same_v<T, bool>) return v.is_boolean();
    else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) return v.is_number_unsigned();
    else if constexpr (std::is_integral_v<T>) return v.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>) return v.is_number();
    else if constexpr (std::is_same_v<T, std::string>) return v.is_string();
    else if constexpr (is_vector<T>::value) {
        if (!v.is_array()) return false;
        for (const auto& e : v)
            if (!type_ok<typename T::value_type>(e)) return false;
        return true;
    }
    return false;
}

template <typename T>
const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) return "a non-negative integer";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "an array";
}

// Reads the keys of one JSON object, remembering which were consumed so that
// leftovers can be reported as unknown.
class Block {
public:
    Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if (!type_ok<T>(*it)) throw ConfigError(where(key) + " must be " + type_name<T>());
        out = it->template get<T>();
        if constexpr (std::is_integral_v<T> && std::is_signed_v<T>) {
            if (it->is_number_unsigned() ? it->template get<std::uint64_t>() > std::uint64_t(std::numeric_limits<T>::max())
                                         : it->template get<std::int64_t>() < std::numeric_limits<T>::min())
                throw ConfigError(where(key) + " is out of range");
        }
    }

    Block sub(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        static const json empty = json::object();
        return Block(it == j_.end() ? empty : *it, where(key));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown config key " + where(it.key().c_str()));
    }

private:
    std::string where(const char* key = nullptr) const {
        std::string p = path_.empty() ? "<root>" : path_;
        if (key) p = path_.empty() ? key : path_ + "." + key;
        return "'" + p + "'";
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void check(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    Block root(j, "");
    {
        auto b = root.sub("system");
        auto& s = c.system;
        b.get("kind", s.kind);
        b.get("dim", s.dim);
        b.get("forcing", s.forcing);
        b.get("dt", s.dt);
        b.get("substeps", s.substeps);
        b.get("drift_seed", s.drift_seed);
        b.get("sigma", s.sigma);
        b.get("rho", s.rho);
        b.get("beta", s.beta);
        auto f = b.sub("forced");
        f.get("n_forcing", s.forced.n_forcing);
        f.get("n_atmosphere", s.forced.n_atmosphere);
        f.get("coupling", s.forced.coupling);
        f.get("kappa", s.forced.kappa);
        f.get("cycle_len", s.forced.cycle_len);
        f.get("cycle_amp", s.forced.cycle_amp);
        f.get("anom_amp", s.forced.anom_amp);
        f.get("anom_period_min", s.forced.anom_period_min);
        f.get("anom_period_max", s.forced.anom_period_max);
        f.get("forcing_seed", s.forced.forcing_seed);
        f.finish();
        b.finish();
    }
    {
        auto b = root.sub("data");
        b.get("spinup", c.data.spinup);
        b.get("n_train", c.data.n_train);
        b.get("n_test", c.data.n_test);
        b.get("thin", c.data.thin);
        b.finish();
    }
    {
        auto b = root.sub("diffusion");
        b.get("beta_min", c.diffusion.beta_min);
        b.get("beta_max", c.diffusion.beta_max);
        b.get("n_steps", c.diffusion.n_steps);
        auto s = b.sub("score");
        auto& sc = c.diffusion.score;
        s.get("kind", sc.kind);
        s.get("hidden", sc.hidden);
        s.get("epochs", sc.epochs);
        s.get("lr", sc.lr);
        s.get("batch", sc.batch);
        s.get("weighting", sc.weighting);
        s.get("prior", sc.prior);
        s.finish();
        b.finish();
    }
    {
        auto b = root.sub("sampler");
        std::string method = to_string(c.sampler.method);
        b.get("method", method);
        b.get("n_steps", c.sampler.n_steps);
        b.get("eta", c.sampler.eta);
        b.get("churn", c.sampler.churn);
        b.finish();
        try {
            c.sampler.method = sampler_method_from_string(method);
        } catch (const InvalidArgument& e) {
            throw ConfigError(std::string("'sampler.method': ") + e.what());
        }
    }
    {
        auto b = root.sub("conditioning");
        auto& g = c.guidance;
        std::string mode = to_string(g.mode), jac = to_string(g.jacobian), cov = to_string(g.denoiser_cov);
        b.get("mode", mode);
        b.get("sigma_tau_scale", g.sigma_tau_scale);
        b.get("travel_tau", g.travel_tau);
        b.get("travel_rounds", g.travel_rounds);
        b.get("travel_every", g.travel_every);
        b.get("guidance_lr", g.guidance_lr);
        b.get("jacobian", jac);
        b.get("denoiser_cov", cov);
        b.get("tau_star_idx", c.tau_star_idx);
        b.finish();
        try {
            g.mode = guidance_mode_from_string(mode);
            g.jacobian = jacobian_approx_from_string(jac);
            g.denoiser_cov = denoiser_cov_from_string(cov);
        } catch (const InvalidArgument& e) {
            throw ConfigError(std::string("'conditioning': ") + e.what());
        }
    }
    {
        auto b = root.sub("forecaster");
        auto& f = c.forecaster;
        b.get("kind", f.kind);
        b.get("forcing_shift", f.forcing_shift);
        b.get("substep_divisor", f.substep_divisor);
        b.get("bias_std", f.bias_std);
        b.get("forcing_anomalies", f.forcing_anomalies);
        auto t = b.sub("training");
        t.get("hidden", f.training.hidden_sizes);
        t.get("epochs", f.training.epochs);
        t.get("lr", f.training.lr);
        t.get("batch", f.training.batch);
        t.finish();
        b.finish();
    }
    {
        auto b = root.sub("observations");
        b.get("n_obs", c.observations.n_obs);
        b.get("sigma_o", c.observations.sigma_o);
        b.get("layout", c.observations.layout);
        b.get("obs_every", c.observations.obs_every);
        b.finish();
    }
    {
        auto b = root.sub("assimilation");
        b.get("window_steps", c.assimilation.window_steps);
        b.get("ensemble_size", c.assimilation.ensemble_size);
        b.finish();
    }
    {
        auto b = root.sub("forecast");
        b.get("lead_steps", c.forecast.lead_steps);
        b.get("ensemble_size", c.forecast.ensemble_size);
        b.get("n_cases", c.forecast.n_cases);
        b.get("case_spacing", c.forecast.case_spacing);
        b.get("init_perturbation", c.forecast.init_perturbation);
        b.finish();
    }
    {
        auto b = root.sub("seasonal");
        b.get("lead_steps", c.seasonal.lead_steps);
        b.get("ensemble_size", c.seasonal.ensemble_size);
        b.get("n_cases", c.seasonal.n_cases);
        b.get("case_spacing", c.seasonal.case_spacing);
        b.get("init_perturbation", c.seasonal.init_perturbation);
        b.get("window_start", c.seasonal.window_start);
        b.finish();
    }
    {
        auto b = root.sub("climate");
        b.get("n_steps", c.climate.n_steps);
        b.get("sdedit_every", c.climate.sdedit_every);
        b.get("thin", c.climate.thin);
        b.get("trace_every", c.climate.trace_every);
        b.get("excursion_z", c.climate.excursion_z);
        b.get("forcing_shift", c.climate.forcing_shift);
        b.finish();
    }
    {
        auto b = root.sub("calibration");
        b.get("candidates", c.calibration.candidates);
        b.get("n_ensemble", c.calibration.n_ensemble);
        b.get("n_cases", c.calibration.n_cases);
        b.finish();
    }
    {
        auto b = root.sub("baseline");
        b.get("method", c.baseline.method);
        b.get("inflation", c.baseline.inflation);
        b.get("ensemble_size", c.baseline.ensemble_size);
        b.finish();
    }
    root.get("seed", c.seed);
    root.get("output_dir", c.output_dir);
    root.finish();
    c.validate();
    return c;
}

json to_json(const ExperimentConfig& c) {
    const auto& s = c.system;
    const auto& f = s.forced;
    const auto& g = c.guidance;
    const auto& sc = c.diffusion.score;
    json j;
    j["system"] = {{"kind", s.kind},           {"dim", s.dim},
                   {"forcing", s.forcing},     {"dt", s.dt},
                   {"substeps", s.substeps},   {"drift_seed", s.drift_seed},
                   {"sigma", s.sigma},         {"rho", s.rho},
                   {"beta", s.beta},
                   {"forced",
                    {{"n_forcing", f.n_forcing},
                     {"n_atmosphere", f.n_atmosphere},
                     {"coupling", f.coupling},
                     {"kappa", f.kappa},
                     {"cycle_len", f.cycle_len},
                     {"cycle_amp", f.cycle_amp},
                     {"anom_amp", f.anom_amp},
                     {"anom_period_min", f.anom_period_min},
                     {"anom_period_max", f.anom_period_max},
                     {"forcing_seed", f.forcing_seed}}}};
    j["data"] = {{"spinup", c.data.spinup}, {"n_train", c.data.n_train}, {"n_test", c.data.n_test}, {"thin", c.data.thin}};
    j["diffusion"] = {{"beta_min", c.diffusion.beta_min},
                      {"beta_max", c.diffusion.beta_max},
                      {"n_steps", c.diffusion.n_steps},
                      {"score",
                       {{"kind", sc.kind},
                        {"hidden", sc.hidden},
                        {"epochs", sc.epochs},
                        {"lr", sc.lr},
                        {"batch", sc.batch},
                        {"weighting", sc.weighting},
                        {"prior", sc.prior}}}};
    j["sampler"] = {{"method", to_string(c.sampler.method)},
                    {"n_steps", c.sampler.n_steps},
                    {"eta", c.sampler.eta},
                    {"churn", c.sampler.churn}};
    j["conditioning"] = {{"mode", to_string(g.mode)},
                         {"sigma_tau_scale", g.sigma_tau_scale},
                         {"travel_tau", g.travel_tau},
                         {"travel_rounds", g.travel_rounds},
                         {"travel_every", g.travel_every},
                         {"guidance_lr", g.guidance_lr},
                         {"jacobian", to_string(g.jacobian)},
                         {"denoiser_cov", to_string(g.denoiser_cov)},
                         {"tau_star_idx", c.tau_star_idx}};
    j["forecaster"] = {{"kind", c.forecaster.kind},
                       {"forcing_shift", c.forecaster.forcing_shift},
                       {"substep_divisor", c.forecaster.substep_divisor},
                       {"bias_std", c.forecaster.bias_std},
                       {"forcing_anomalies", c.forecaster.forcing_anomalies},
                       {"training",
                        {{"hidden", c.forecaster.training.hidden_sizes},
                         {"epochs", c.forecaster.training.epochs},
                         {"lr", c.forecaster.training.lr},
                         {"batch", c.forecaster.training.batch}}}};
    j["observations"] = {{"n_obs", c.observations.n_obs},
                         {"sigma_o", c.observations.sigma_o},
                         {"layout", c.observations.layout},
                         {"obs_every", c.observations.obs_every}};
    j["assimilation"] = {{"window_steps", c.assimilation.window_steps},
                         {"ensemble_size", c.assimilation.ensemble_size}};
    j["forecast"] = {{"lead_steps", c.forecast.lead_steps},
                     {"ensemble_size", c.forecast.ensemble_size},
                     {"n_cases", c.forecast.n_cases},
                     {"case_spacing", c.forecast.case_spacing},
                     {"init_perturbation", c.forecast.init_perturbation}};
    j["seasonal"] = {{"lead_steps", c.seasonal.lead_steps},
                     {"ensemble_size", c.seasonal.ensemble_size},
                     {"n_cases", c.seasonal.n_cases},
                     {"case_spacing", c.seasonal.case_spacing},
                     {"init_perturbation", c.seasonal.init_perturbation},
                     {"window_start", c.seasonal.window_start}};
    j["climate"] = {{"n_steps", c.climate.n_steps},
                    {"sdedit_every", c.climate.sdedit_every},
                    {"thin", c.climate.thin},
                    {"trace_every", c.climate.trace_every},
                    {"excursion_z", c.climate.excursion_z},
                    {"forcing_shift", c.climate.forcing_shift}};
    j["calibration"] = {{"candidates", c.calibration.candidates},
                        {"n_ensemble", c.calibration.n_ensemble},
                        {"n_cases", c.calibration.n_cases}};
    j["baseline"] = {{"method", c.baseline.method},
                     {"inflation", c.baseline.inflation},
                     {"ensemble_size", c.baseline.ensemble_size}};
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    return j;
}

void ExperimentConfig::validate() const {
    try {
        const auto kind = system_kind_from_string(system.kind);
        check(system.dim >= 1, "'system.dim' must be >= 1");
        check(system.dt > 0 && system.substeps >= 1, "'system.dt' must be positive and 'system.substeps' >= 1");
        if (kind == SystemKind::lorenz96) check(system.dim >= 4, "'system.dim' must be >= 4 for lorenz96");
        check(data.spinup >= 0 && data.n_train >= 2 && data.n_test >= 2 && data.thin >= 1, "bad 'data' block");
        check(diffusion.n_steps >= 2 && diffusion.beta_min > 0 && diffusion.beta_max > diffusion.beta_min,
              "bad 'diffusion' schedule");
        score_kind_from_string(diffusion.score.kind);
        dsm_weighting_from_string(diffusion.score.weighting);
        check(diffusion.score.prior == "empirical" || diffusion.score.prior == "stationary",
              "'diffusion.score.prior' must be empirical or stationary");
        check(diffusion.score.prior == "empirical" || kind == SystemKind::linear_gaussian,
              "'diffusion.score.prior' = stationary needs a linear_gaussian system");
        check(diffusion.score.epochs >= 1 && diffusion.score.batch >= 1 && diffusion.score.lr > 0, "bad score training");
        check(tau_star_idx >= 0 && tau_star_idx <= diffusion.n_steps, "'conditioning.tau_star_idx' out of range");
        check(sampler.n_steps >= 1, "'sampler.n_steps' must be >= 1");
        guidance.validate();
        const auto fk = forecast_kind_from_string(forecaster.kind);
        if (fk == ForecastKind::imperfect_physics) check(forecaster.substep_divisor >= 1, "'forecaster.substep_divisor' must be >= 1");
        check(forecaster.bias_std == 0 || fk != ForecastKind::learned_mlp, "'forecaster.bias_std' applies to physics forecasters");
        check(forecaster.training.epochs >= 1 && forecaster.training.batch >= 1, "bad forecaster training");
        check(observations.n_obs >= 0 && observations.sigma_o >= 0 && observations.obs_every >= 1, "bad 'observations' block");
        obs_layout_from_string(observations.layout);
        AssimilationConfig a = assimilation;
        a.obs_every = observations.obs_every;
        a.validate();
        check(forecast.lead_steps >= 1 && forecast.ensemble_size >= 1 && forecast.n_cases >= 1 && forecast.case_spacing >= 1 &&
                  forecast.init_perturbation >= 0,
              "bad 'forecast' block");
        check(seasonal.lead_steps >= 1 && seasonal.ensemble_size >= 1 && seasonal.n_cases >= 1 && seasonal.case_spacing >= 1 &&
                  seasonal.window_start >= 0 && seasonal.window_start < seasonal.lead_steps,
              "bad 'seasonal' block");
        check(climate.n_steps >= 0 && climate.sdedit_every >= 0 && climate.thin >= 0 && climate.trace_every >= 1 &&
                  climate.excursion_z > 0,
              "bad 'climate' block");
        check(!calibration.candidates.empty() && calibration.n_ensemble >= 1 && calibration.n_cases >= 1, "bad 'calibration' block");
        for (int t : calibration.candidates)
            check(t >= 0 && t <= diffusion.n_steps, "'calibration.candidates' out of range");
        check(baseline.method == "kalman" || baseline.method == "enkf" || baseline.method == "persistence" ||
                  baseline.method == "climatology",
              "'baseline.method' must be kalman, enkf, persistence or climatology");
        check(baseline.method != "kalman" || kind == SystemKind::linear_gaussian, "the kalman baseline needs a linear_gaussian system");
        check(baseline.inflation >= 1.0 && baseline.ensemble_size >= 2, "bad 'baseline' block");
        check(!output_dir.empty(), "'output_dir' must not be empty");
        build_system(*this);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
}

ExperimentConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    json j;
    try {
        j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& c) {
    json j = to_json(c);
    j.erase("output_dir");
    return sha256_hex(j.dump());
}

SystemSpec build_system(const ExperimentConfig& c) {
    const auto& s = c.system;
    switch (system_kind_from_string(s.kind)) {
        case SystemKind::linear_gaussian: return make_linear_gaussian(s.dim, s.dt, s.drift_seed);
        case SystemKind::lorenz63: {
            check(s.dim == 3, "'system.dim' must be 3 for lorenz63");
            return make_lorenz63(s.dt, s.substeps, s.sigma, s.rho, s.beta);
        }
        case SystemKind::lorenz96: return make_lorenz96(s.dim, s.forcing, s.dt, s.substeps);
        case SystemKind::lorenz96_forced: {
            ForcedRingOptions o = s.forced;
            o.forcing = s.forcing;
            o.dt = s.dt;
            o.substeps = s.substeps;
            const auto spec = make_lorenz96_forced(o);
            check(spec.dim == s.dim, "'system.dim' must equal n_forcing + n_atmosphere for lorenz96_forced");
            return spec;
        }
    }
    throw ConfigError("unknown system kind");
}

}  // namespace gap
