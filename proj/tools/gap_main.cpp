// gap: command-line front end for the experiment commands.
//
//   gap [--config PATH] [--seed N] [--out DIR] [--threads N] [--quiet] <command>
//
// Exit codes: 0 ok, 1 usage/config, 2 numerical failure, 3 I/O.

#include <cstdlib>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "gap/commands.hpp"
#include "gap/error.hpp"
#include "gap/parallel.hpp"

namespace {
enum Exit { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };
}

int main(int argc, char** argv) {
    CLI::App app{"Generative assimilation and prediction experiments"};
    app.require_subcommand(0, 1);
    app.fallthrough();

    std::string config_path, out_dir, evaluate_prefix = "forecast";
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool quiet = false, print_config = false;
    app.add_option("--config", config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed (overrides the config)");
    app.add_option("--out", out_dir, "run directory (overrides output_dir)");
    app.add_option("--threads", threads, "worker threads (default: GAP_THREADS or all cores)")->check(CLI::NonNegativeNumber);
    app.add_flag("--quiet", quiet, "no progress output");
    app.add_flag("--print-config", print_config, "print the fully materialized config and exit");

    const std::map<std::string, std::string> help = {
        {"generate-data", "integrate the truth system; write train/test trajectories and the climatology"},
        {"train-score", "fit the diffusion prior (analytic Gaussian or score network)"},
        {"train-forecaster", "build or train the forecast model"},
        {"assimilate", "cycle the ensemble against a simulated observation network"},
        {"forecast", "ensemble forecasts from perturbed true states"},
        {"seasonal", "persisted-anomaly forced runs against free runs"},
        {"climate-run", "long single-member free run with streamed statistics"},
        {"calibrate-tau", "score candidate SDEdit noise levels"},
        {"evaluate", "verify a stored forecast against truth"},
        {"baseline", "kalman / enkf / persistence / climatology reference"}};
    for (const auto& name : gap::command_names()) {
        auto* sub = app.add_subcommand(name, help.at(name));
        if (name == "evaluate")
            sub->add_option("--forecast", evaluate_prefix, "artifact prefix of the forecast to verify")->capture_default_str();
    }

    try {
        app.parse(argc, argv);
        if (!print_config && app.get_subcommands().empty()) throw CLI::RequiredError("a command");
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        gap::ExperimentConfig cfg = config_path.empty() ? gap::config_from_json(nlohmann::json::object())
                                                        : gap::load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        cfg.validate();
        if (print_config) {
            std::cout << gap::to_json(cfg).dump(2) << "\n";
            return kOk;
        }
        gap::set_num_threads(threads.value_or(0));

        gap::CommandOptions opt;
        opt.out = cfg.output_dir;
        opt.quiet = quiet;
        opt.evaluate = evaluate_prefix;
        const auto m = gap::run_command(app.get_subcommands().front()->get_name(), cfg, opt);
        if (!quiet) std::cout << m.doc.at("metrics").dump(2) << "\n";
        return kOk;
    } catch (const gap::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const gap::InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kUsage;
    } catch (const gap::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const gap::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
}
