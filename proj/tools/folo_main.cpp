// Command-line front end: simulate scenarios, locate oscillation sources from
// measurement files, or run a configured pipeline end to end.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "folo/pipeline.hpp"

namespace {

int status_code(const folo::PipelineResult& result) {
    return static_cast<int>(result.status);
}

void print_summary(const folo::PipelineResult& result) {
    if (result.status == folo::PipelineStatus::SourceLocated) {
        std::cout << "source located: device=" << result.localization.device_id
                  << " frequency_hz=" << result.localization.frequency_hz
                  << " dominance_ratio=" << result.localization.dominance_ratio << "\n";
    } else if (result.regression_ran) {
        std::cout << "no source identified\n";
    } else {
        std::cout << "no FO detected\n";
    }
}

std::string default_output_dir() {
    if (const char* env = std::getenv("FOLO_OUTPUT_DIR")) return env;
    return ".";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Forced-oscillation source localization toolkit"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "Integrate a scenario and export measurements");
    std::string sim_model, sim_scenario, sim_out;
    std::optional<std::uint64_t> sim_seed;
    sim->add_option("--model", sim_model, "Model definition (JSON)")->required();
    sim->add_option("--scenario", sim_scenario, "Scenario definition (JSON)")->required();
    sim->add_option("--out", sim_out, "Output measurement CSV")->required();
    sim->add_option("--seed", sim_seed, "Override the scenario seed");

    // locate
    auto* loc = app.add_subcommand("locate", "Locate the FO source in a measurement CSV");
    std::string loc_model, loc_measurements, loc_out = default_output_dir();
    std::optional<double> loc_lambda, loc_wstart, loc_wlen;
    std::optional<int> loc_maxf;
    loc->add_option("--model", loc_model, "Model definition (JSON)")->required();
    loc->add_option("--measurements", loc_measurements, "Measurement CSV")->required();
    loc->add_option("--out", loc_out, "Output directory for report artifacts");
    loc->add_option("--lambda", loc_lambda, "STLS threshold (default 0.006)");
    loc->add_option("--max-freqs", loc_maxf, "Detected frequency cap (default 3)");
    loc->add_option("--window-start", loc_wstart, "Analysis window start, s");
    loc->add_option("--window-length", loc_wlen, "Analysis window length, s (default 40)");

    // pipeline
    auto* pip = app.add_subcommand("pipeline", "Run a configured pipeline");
    std::string pip_config;
    std::string pip_out;
    std::optional<double> pip_lambda, pip_wstart, pip_wlen;
    std::optional<int> pip_maxf;
    std::optional<std::uint64_t> pip_seed;
    pip->add_option("--config", pip_config, "Pipeline configuration (JSON)")->required();
    pip->add_option("--out", pip_out, "Override the configured output directory");
    pip->add_option("--lambda", pip_lambda, "Override stls_lambda");
    pip->add_option("--max-freqs", pip_maxf, "Override max_frequencies");
    pip->add_option("--window-start", pip_wstart, "Override window_start");
    pip->add_option("--window-length", pip_wlen, "Override window_length");
    pip->add_option("--seed", pip_seed, "Override the scenario seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(folo::PipelineStatus::ValidationFailure);
    }

    try {
        if (sim->parsed()) {
            const folo::SystemModel model = folo::load_model(sim_model);
            folo::Scenario scenario = folo::load_scenario(sim_scenario);
            if (sim_seed) scenario.seed = *sim_seed;
            const folo::MeasurementWindow window = folo::simulate(model, scenario);
            folo::write_measurements_csv(window, sim_out);
            std::cout << "wrote " << window.n_samples() << " samples x "
                      << window.n_channels() << " channels to " << sim_out << "\n";
            return 0;
        }

        folo::PipelineConfig config;
        if (loc->parsed()) {
            config.model_path = loc_model;
            config.measurements_path = loc_measurements;
            config.output_dir = loc_out;
            if (loc_lambda) config.stls_lambda = *loc_lambda;
            if (loc_maxf) config.max_frequencies = *loc_maxf;
            if (loc_wstart) config.window_start_s = *loc_wstart;
            if (loc_wlen) config.window_length_s = *loc_wlen;
        } else {
            config = folo::load_pipeline_config(pip_config);
            if (!pip_out.empty()) config.output_dir = pip_out;
            if (pip_lambda) config.stls_lambda = *pip_lambda;
            if (pip_maxf) config.max_frequencies = *pip_maxf;
            if (pip_wstart) config.window_start_s = *pip_wstart;
            if (pip_wlen) config.window_length_s = *pip_wlen;
            if (pip_seed) config.seed_override = *pip_seed;
        }
        config.validate();
        const folo::PipelineResult result = folo::run_pipeline(config);
        print_summary(result);
        return status_code(result);
    } catch (const folo::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(folo::PipelineStatus::ValidationFailure);
    } catch (const folo::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return static_cast<int>(folo::PipelineStatus::NumericalFailure);
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return static_cast<int>(folo::PipelineStatus::NumericalFailure);
    }
}
