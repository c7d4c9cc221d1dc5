#include "folo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace folo {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

std::string fmt(double v, const char* spec = "%.9g") {
    char buf[40];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string(name) + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(name) + ": " + e.what());
    }
}

}  // namespace

void PipelineConfig::validate() const {
    require(!model_path.empty(), "config: model_path is required");
    require(scenario_path.has_value() != measurements_path.has_value(),
            "config: exactly one of scenario_path / measurements_path must be set");
    require(window_length_s > 0.0, "config: window_length must be > 0");
    require(sampling_rate_hz > 0.0, "config: sampling_rate must be > 0");
    require(window_length_s * sampling_rate_hz >= 240.0,
            "config: window_length * sampling_rate must be >= 240 samples");
    require(stls_lambda > 0.0, "config: stls_lambda must be > 0");
    require(max_frequencies >= 1 && max_frequencies <= 3,
            "config: max_frequencies must be in [1, 3]");
    require(smoothing_width == 0 || smoothing_width % 2 == 1,
            "config: smoothing_width must be 0 or odd");
}

PipelineConfig parse_pipeline_config(const std::string& json_text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config file is not valid JSON: ") + e.what());
    }

    PipelineConfig cfg;
    require(doc.contains("model_path") && doc["model_path"].is_string(),
            "config: missing 'model_path'");
    cfg.model_path = doc["model_path"].get<std::string>();
    if (doc.contains("scenario_path") && !doc["scenario_path"].is_null())
        cfg.scenario_path = doc["scenario_path"].get<std::string>();
    if (doc.contains("measurements_path") && !doc["measurements_path"].is_null())
        cfg.measurements_path = doc["measurements_path"].get<std::string>();
    if (doc.contains("window_start")) cfg.window_start_s = doc["window_start"].get<double>();
    if (doc.contains("window_length")) cfg.window_length_s = doc["window_length"].get<double>();
    if (doc.contains("sampling_rate")) cfg.sampling_rate_hz = doc["sampling_rate"].get<double>();
    if (doc.contains("stls_lambda")) cfg.stls_lambda = doc["stls_lambda"].get<double>();
    if (doc.contains("max_frequencies")) cfg.max_frequencies = doc["max_frequencies"].get<int>();
    if (doc.contains("zscore")) {
        const auto& z = doc["zscore"];
        if (z.contains("lag")) cfg.zscore.lag = z["lag"].get<int>();
        if (z.contains("threshold")) cfg.zscore.threshold = z["threshold"].get<double>();
        if (z.contains("influence")) cfg.zscore.influence = z["influence"].get<double>();
        if (z.contains("min_history")) cfg.zscore.min_history = z["min_history"].get<int>();
    }
    if (doc.contains("smoothing_width")) cfg.smoothing_width = doc["smoothing_width"].get<int>();
    if (doc.contains("output_dir")) cfg.output_dir = doc["output_dir"].get<std::string>();
    if (doc.contains("seed")) cfg.seed_override = doc["seed"].get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_pipeline_config(buf.str());
}

MeasurementWindow ingest_csv(const std::string& path, const SystemModel& model) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open measurement file: " + path);

    std::string header;
    require(static_cast<bool>(std::getline(in, header)), path + ": empty file");
    std::vector<std::string> columns;
    {
        std::stringstream ss(header);
        std::string field;
        while (std::getline(ss, field, ',')) columns.push_back(field);
    }
    require(!columns.empty() && columns.front() == "time",
            path + ": header must start with 'time'");

    const StateLayout layout = state_layout(model);
    std::vector<std::string> expected;
    for (const auto& ch : layout.states) expected.push_back(ch.name);
    for (const auto& ch : layout.inputs) expected.push_back(ch.name);
    // Column order in the file is free; map file columns onto the layout.
    std::vector<Eigen::Index> source_of(expected.size(), -1);
    for (std::size_t e = 0; e < expected.size(); ++e) {
        for (std::size_t c = 1; c < columns.size(); ++c)
            if (columns[c] == expected[e]) {
                source_of[e] = static_cast<Eigen::Index>(c);
                break;
            }
        require(source_of[e] >= 0, path + ": missing channel column '" + expected[e] + "'");
    }

    std::vector<double> times;
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> row;
        row.reserve(columns.size());
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            try {
                row.push_back(std::stod(field));
            } catch (const std::exception&) {
                throw ValidationError(path + ": line " + std::to_string(line_no) +
                                      ": not a number: '" + field + "'");
            }
        }
        require(row.size() == columns.size(),
                path + ": line " + std::to_string(line_no) + ": wrong field count");
        for (std::size_t c = 0; c < row.size(); ++c)
            if (!std::isfinite(row[c]))
                throw ValidationError(path + ": non-finite value at line " +
                                      std::to_string(line_no) + ", column '" + columns[c] +
                                      "'");
        times.push_back(row[0]);
        rows.push_back(std::move(row));
    }
    require(rows.size() >= 2, path + ": needs at least 2 samples");

    std::vector<double> deltas(times.size() - 1);
    for (std::size_t k = 0; k + 1 < times.size(); ++k) deltas[k] = times[k + 1] - times[k];
    std::vector<double> sorted = deltas;
    std::sort(sorted.begin(), sorted.end());
    const double dt = sorted[sorted.size() / 2];
    require(dt > 0.0, path + ": timestamps must be strictly increasing");
    for (std::size_t k = 0; k < deltas.size(); ++k)
        require(std::abs(deltas[k] - dt) <= 1e-6,
                path + ": non-uniform sampling near line " + std::to_string(k + 2) +
                    " (delta " + fmt(deltas[k]) + " vs median " + fmt(dt) + ")");

    MeasurementWindow window;
    window.t0 = times.front();
    window.dt = dt;
    window.channel_names = expected;
    window.samples.resize(static_cast<Eigen::Index>(rows.size()),
                          static_cast<Eigen::Index>(expected.size()));
    for (std::size_t k = 0; k < rows.size(); ++k)
        for (std::size_t e = 0; e < expected.size(); ++e)
            window.samples(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(e)) =
                rows[k][static_cast<std::size_t>(source_of[e])];
    window.validate();
    return window;
}

PipelineResult locate_from_window(const SystemModel& model, const MeasurementWindow& window,
                                  const LocateOptions& options) {
    model.validate();
    const StateLayout layout = state_layout(model);

    PipelineResult result;
    result.window_t0 = window.t0;
    result.window_dt = window.dt;
    result.window_samples = window.n_samples();

    const MeasurementWindow centered = stage("mean removal", [&] { return remove_mean(window); });

    // FFT of the converter coupling-point measurements; with no IBR in the
    // model every state channel is scanned instead.
    std::vector<std::string> detection_channels;
    if (layout.n_ibrs > 0) {
        for (const auto& ch : layout.inputs) detection_channels.push_back(ch.name);
    } else {
        for (const auto& ch : layout.states) detection_channels.push_back(ch.name);
    }
    result.spectra = stage("spectrum",
                           [&] { return compute_spectra(centered, detection_channels); });
    result.frequencies = stage("frequency detection", [&] {
        return detect_fo_frequencies(result.spectra, options.zscore, options.max_frequencies);
    });

    if (result.frequencies.empty()) {
        result.status = PipelineStatus::NoFoDetected;
        return result;
    }

    const FeatureLibrary library = stage("library", [&] {
        return build_library(centered, result.frequencies, layout);
    });
    const Eigen::MatrixXd derivatives = stage("derivatives", [&] {
        return build_derivatives(centered, layout, options.smoothing_width);
    });
    result.xi = stage("stls", [&] {
        return adaptive_threshold(library, derivatives, options.stls_lambda,
                                  options.zeta_max_nonzero, layout);
    });
    for (const auto& ch : layout.states)
        result.xi.equation_names.push_back("d(" + ch.name + ")/dt");
    result.zeta = stage("zeta", [&] {
        return extract_zeta(result.xi, layout, library.frequencies_hz);
    });
    result.localization = stage("ranking", [&] { return locate_source(result.zeta); });
    result.regression_ran = true;
    result.status = result.localization.source_found ? PipelineStatus::SourceLocated
                                                     : PipelineStatus::NoFoDetected;
    return result;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
    config.validate();
    const SystemModel model = stage("model load", [&] { return load_model(config.model_path); });

    MeasurementWindow record;
    double default_start = 0.0;
    if (config.scenario_path) {
        Scenario scenario = stage("scenario load",
                                  [&] { return load_scenario(*config.scenario_path); });
        if (config.seed_override) scenario.seed = *config.seed_override;
        record = stage("simulate", [&] { return simulate(model, scenario); });
        double first_injection = std::numeric_limits<double>::infinity();
        for (const auto& inj : scenario.injections)
            first_injection = std::min(first_injection, inj.start_s);
        if (std::isfinite(first_injection)) default_start = first_injection;
    } else {
        record = stage("ingest", [&] { return ingest_csv(*config.measurements_path, model); });
        default_start = record.t0;
    }

    const double start = config.window_start_s.value_or(default_start);
    const MeasurementWindow window = stage("window selection", [&] {
        return record.slice(start, config.window_length_s);
    });

    LocateOptions options;
    options.stls_lambda = config.stls_lambda;
    options.max_frequencies = config.max_frequencies;
    options.zscore = config.zscore;
    options.smoothing_width = config.smoothing_width;

    PipelineResult result = locate_from_window(model, window, options);
    stage("report export", [&] {
        export_report(result, config.output_dir);
        return 0;
    });
    return result;
}

namespace {

std::ofstream open_artifact(const std::filesystem::path& dir, const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw ValidationError("cannot write " + (dir / name).string());
    return out;
}

std::string joined_evidence(const DetectedFrequencies& freqs, int bin) {
    std::vector<std::string> channels;
    for (const auto& [channel, bins] : freqs.per_channel_evidence)
        for (int b : bins)
            if (std::abs(b - bin) <= 1) {
                channels.push_back(channel);
                break;
            }
    std::sort(channels.begin(), channels.end());
    std::string out;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (i) out += ';';
        out += channels[i];
    }
    return out;
}

}  // namespace

void export_report(const PipelineResult& result, const std::string& output_dir) {
    const std::filesystem::path dir(output_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(std::filesystem::is_directory(dir), "output directory unavailable: " + output_dir);

    {
        auto out = open_artifact(dir, "spectrum.csv");
        out << "frequency_hz,amplitude,channel\n";
        for (const auto& spec : result.spectra)
            for (Eigen::Index k = 0; k < spec.frequencies_hz.size(); ++k)
                out << fmt(spec.frequencies_hz(k)) << ',' << fmt(spec.amplitudes(k)) << ','
                    << spec.source_channel << '\n';
    }
    {
        auto out = open_artifact(dir, "frequencies.csv");
        out << "rank,frequency_hz,amplitude,channels\n";
        for (std::size_t i = 0; i < result.frequencies.size(); ++i)
            out << (i + 1) << ',' << fmt(result.frequencies.values_hz[i]) << ','
                << fmt(result.frequencies.amplitudes[i]) << ','
                << joined_evidence(result.frequencies, result.frequencies.bins[i]) << '\n';
    }
    {
        auto out = open_artifact(dir, "xi.csv");
        out << "equation";
        for (const auto& col : result.xi.column_spec) out << ',' << col.name;
        out << '\n';
        for (Eigen::Index k = 0; k < result.xi.xi.rows(); ++k) {
            const auto row = static_cast<std::size_t>(k);
            out << (row < result.xi.equation_names.size() ? result.xi.equation_names[row]
                                                          : "eq" + std::to_string(k));
            for (Eigen::Index c = 0; c < result.xi.xi.cols(); ++c)
                out << ',' << fmt(result.xi.xi(k, c), "%.17g");
            out << '\n';
        }
    }
    {
        auto out = open_artifact(dir, "zeta.csv");
        out << "frequency_hz";
        for (const auto& dev : result.zeta.devices) out << ',' << dev;
        out << '\n';
        for (Eigen::Index f = 0; f < result.zeta.zeta.rows(); ++f) {
            out << fmt(result.zeta.frequencies_hz[static_cast<std::size_t>(f)]);
            for (Eigen::Index d = 0; d < result.zeta.zeta.cols(); ++d)
                out << ',' << fmt(result.zeta.zeta(f, d), "%.17g");
            out << '\n';
        }
    }
    {
        auto out = open_artifact(dir, "report.txt");
        out << "forced-oscillation localization report\n";
        const char* status = "no FO detected";
        if (result.status == PipelineStatus::SourceLocated) status = "source located";
        else if (result.regression_ran) status = "no source identified";
        out << "status: " << status << '\n';
        out << "window: t0=" << fmt(result.window_t0) << " dt=" << fmt(result.window_dt, "%.17g")
            << " samples=" << result.window_samples << '\n';
        out << "detected frequencies: " << result.frequencies.size() << '\n';
        for (std::size_t i = 0; i < result.frequencies.size(); ++i)
            out << "  rank=" << (i + 1) << " frequency_hz=" << fmt(result.frequencies.values_hz[i])
                << " amplitude=" << fmt(result.frequencies.amplitudes[i])
                << " channels=" << joined_evidence(result.frequencies, result.frequencies.bins[i])
                << '\n';
        if (result.regression_ran) {
            out << "lambda_used=" << fmt(result.xi.lambda_used) << '\n';
            out << "stls_converged=" << (result.xi.converged ? "yes" : "no") << '\n';
            out << "escalation_capped=" << (result.xi.escalation_capped ? "yes" : "no") << '\n';
            out << "ranking:\n";
            for (const auto& e : result.zeta.ranking)
                out << "  device=" << result.zeta.devices[static_cast<std::size_t>(e.device)]
                    << " frequency_hz="
                    << fmt(result.zeta.frequencies_hz[static_cast<std::size_t>(e.frequency)])
                    << " score=" << fmt(e.score) << '\n';
            if (result.localization.source_found) {
                for (const auto& e : result.localization.top)
                    out << "top source: device="
                        << result.zeta.devices[static_cast<std::size_t>(e.device)]
                        << " frequency_hz="
                        << fmt(result.zeta.frequencies_hz[static_cast<std::size_t>(e.frequency)])
                        << " dominance_ratio=" << fmt(result.localization.dominance_ratio)
                        << '\n';
            } else {
                out << "no source identified\n";
            }
        } else {
            out << "no source identified\n";
        }
    }
}

}  // namespace folo
