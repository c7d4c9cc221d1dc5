#pragma once

// =============================================================================
// Measurement conditioning and oscillation-frequency detection.
// =============================================================================

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "folo/errors.hpp"
#include "folo/simulator.hpp"

namespace folo {

/// Single-sided magnitude spectrum, rescaled so the largest bin is 1.
/// The complex DFT bins are kept alongside for sub-bin peak interpolation.
struct Spectrum {
    Eigen::VectorXd frequencies_hz;  // uniform grid 0..fs/2, step fs/n
    Eigen::VectorXd amplitudes;      // max rescaled to 1 when nonzero
    Eigen::VectorXcd bins;           // raw DFT values of the mean-removed series
    std::string source_channel;
};

struct ZScoreParams {
    int lag = 50;            // trailing window length, bins
    double threshold = 1.0;  // flag when (y - mean) > threshold * std
    double influence = 0.0;  // weight of flagged samples in the filtered series
    // Smallest trailing history tested against; bins with less history are
    // part of the warm-up and never flagged.
    int min_history = 8;
};

struct DetectedFrequencies {
    std::vector<double> values_hz;   // <= max_frequencies, descending amplitude
    std::vector<double> amplitudes;  // rescaled peak amplitude per value
    std::vector<int> bins;           // spectrum bin of each peak
    std::map<std::string, std::vector<int>> per_channel_evidence;

    bool empty() const { return values_hz.empty(); }
    std::size_t size() const { return values_hz.size(); }
};

/// Subtract the sample mean from every channel.
MeasurementWindow remove_mean(const MeasurementWindow& window);

/// Two-point forward difference, out[k] = (in[k+1] - in[k]) / tau.
Eigen::VectorXd forward_difference(const Eigen::VectorXd& series, double tau);

/// Running trapezoid integral: out[0] = 0,
/// out[k] = out[k-1] + tau/2 * (in[k] + in[k-1]).
Eigen::VectorXd running_trapezoid(const Eigen::VectorXd& series, double tau);

/// Centered moving average of odd width; width <= 1 returns the input.
Eigen::VectorXd moving_average(const Eigen::VectorXd& series, int width);

/// Magnitude spectrum of the mean-removed series over bins 0..len/2.
/// Requires at least 16 samples.
Spectrum single_sided_spectrum(const Eigen::VectorXd& series, double fs,
                               std::string channel_name = "");

/// Spectra of the selected channels (all channels when `channels` is empty).
/// OpenMP-parallel across channels; identical to compute_spectra_serial.
std::vector<Spectrum> compute_spectra(const MeasurementWindow& window,
                                      const std::vector<std::string>& channels = {});
std::vector<Spectrum> compute_spectra_serial(const MeasurementWindow& window,
                                             const std::vector<std::string>& channels = {});

/// Smoothed z-score peak flags over one amplitude series.
std::vector<bool> zscore_flags(const Eigen::VectorXd& amplitudes, const ZScoreParams& params);

/// Peak detection across spectra: per spectrum, flag bins whose smoothed
/// z-score exceeds the threshold, keep the local maximum of each flagged run,
/// refine its frequency by complex-bin interpolation, merge candidates within
/// one bin across spectra and return the top `max_frequencies` by amplitude.
DetectedFrequencies detect_fo_frequencies(const std::vector<Spectrum>& spectra,
                                          const ZScoreParams& params = {},
                                          int max_frequencies = 3);

}  // namespace folo
