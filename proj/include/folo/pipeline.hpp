#pragma once

// =============================================================================
// End-to-end orchestration: ingest or simulate measurements, detect the
// oscillation frequencies, identify the sparse dynamics and rank sources.
// =============================================================================

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "folo/model.hpp"
#include "folo/signal.hpp"
#include "folo/simulator.hpp"
#include "folo/sindy.hpp"

namespace folo {

/// Process exit codes. Validation and numerical failures are reported via
/// ValidationError / NumericalError and mapped by the CLI.
enum class PipelineStatus : int {
    SourceLocated = 0,
    NoFoDetected = 2,
    ValidationFailure = 3,
    NumericalFailure = 4,
};

struct PipelineConfig {
    std::string model_path;
    std::optional<std::string> scenario_path;      // exactly one of these two
    std::optional<std::string> measurements_path;  // must be present
    std::optional<double> window_start_s;  // default: first injection start (scenario
                                           // path) or the start of the record (CSV path)
    double window_length_s = 40.0;
    double sampling_rate_hz = 60.0;
    double stls_lambda = 0.006;
    int max_frequencies = 3;
    ZScoreParams zscore;
    int smoothing_width = 0;  // centered moving average before differencing, 0 = off
    std::string output_dir = ".";
    std::optional<std::uint64_t> seed_override;

    void validate() const;
};

PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig parse_pipeline_config(const std::string& json_text);

struct LocateOptions {
    double stls_lambda = 0.006;
    int max_frequencies = 3;
    int zeta_max_nonzero = 3;  // adaptive-threshold escalation target
    ZScoreParams zscore;
    int smoothing_width = 0;
};

struct PipelineResult {
    PipelineStatus status = PipelineStatus::NoFoDetected;
    std::vector<Spectrum> spectra;  // of the detection channels
    DetectedFrequencies frequencies;
    CoefficientMatrix xi;       // empty when no frequency was detected
    SourceScore zeta;           // likewise
    LocalizationResult localization;
    bool regression_ran = false;
    double window_t0 = 0.0;
    double window_dt = 0.0;
    Eigen::Index window_samples = 0;
};

/// Parse and validate a measurement CSV (header `time,<channel>...`) against
/// the model's expected channels. Timestamps must be uniform within 1e-6 s
/// jitter; dt is the median timestamp delta.
MeasurementWindow ingest_csv(const std::string& path, const SystemModel& model);

/// Run detection + identification on an in-memory window (no file I/O).
/// Detection spectra come from the vq channels, or from every state channel
/// when the model has no IBRs.
PipelineResult locate_from_window(const SystemModel& model, const MeasurementWindow& window,
                                  const LocateOptions& options);

/// Full pipeline: load the model, simulate the scenario or ingest the CSV,
/// select the analysis window, locate, and write the report artifacts into
/// config.output_dir.
PipelineResult run_pipeline(const PipelineConfig& config);

/// Write report.txt, zeta.csv, xi.csv, spectrum.csv and frequencies.csv.
/// Identical results produce byte-identical files.
void export_report(const PipelineResult& result, const std::string& output_dir);

}  // namespace folo
