#include "folo/signal.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

#include <fftw3.h>

namespace folo {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

// FFTW plan creation is not thread-safe; executions on distinct buffers are.
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

MeasurementWindow remove_mean(const MeasurementWindow& window) {
    window.validate();
    MeasurementWindow out = window;
    for (Eigen::Index c = 0; c < out.n_channels(); ++c)
        out.samples.col(c).array() -= out.samples.col(c).mean();
    return out;
}

Eigen::VectorXd forward_difference(const Eigen::VectorXd& series, double tau) {
    require(series.size() >= 2, "forward_difference needs at least 2 samples");
    require(tau > 0.0, "forward_difference tau must be > 0");
    return (series.tail(series.size() - 1) - series.head(series.size() - 1)) / tau;
}

Eigen::VectorXd running_trapezoid(const Eigen::VectorXd& series, double tau) {
    require(series.size() >= 2, "running_trapezoid needs at least 2 samples");
    require(tau > 0.0, "running_trapezoid tau must be > 0");
    Eigen::VectorXd out(series.size());
    out(0) = 0.0;
    for (Eigen::Index k = 1; k < series.size(); ++k)
        out(k) = out(k - 1) + 0.5 * tau * (series(k) + series(k - 1));
    return out;
}

Eigen::VectorXd moving_average(const Eigen::VectorXd& series, int width) {
    if (width <= 1) return series;
    require(width % 2 == 1, "moving average width must be odd");
    const Eigen::Index n = series.size();
    const Eigen::Index half = width / 2;
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, i - half);
        const Eigen::Index hi = std::min(n - 1, i + half);
        out(i) = series.segment(lo, hi - lo + 1).mean();
    }
    return out;
}

Spectrum single_sided_spectrum(const Eigen::VectorXd& series, double fs,
                               std::string channel_name) {
    require(series.size() >= 16, "spectrum needs at least 16 samples");
    require(fs > 0.0, "sampling rate must be > 0");
    const Eigen::Index n = series.size();
    const Eigen::Index n_bins = n / 2 + 1;

    Eigen::VectorXd input = series.array() - series.mean();
    Eigen::VectorXcd bins(n_bins);

    {
        static_assert(sizeof(std::complex<double>) == sizeof(fftw_complex));
        fftw_plan plan;
        {
            std::lock_guard<std::mutex> lock(fftw_planner_mutex());
            plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), input.data(),
                                        reinterpret_cast<fftw_complex*>(bins.data()),
                                        FFTW_ESTIMATE | FFTW_UNALIGNED);
        }
        fftw_execute(plan);
        {
            std::lock_guard<std::mutex> lock(fftw_planner_mutex());
            fftw_destroy_plan(plan);
        }
    }

    Spectrum spec;
    spec.source_channel = std::move(channel_name);
    spec.bins = bins;
    spec.frequencies_hz =
        Eigen::VectorXd::LinSpaced(n_bins, 0.0, static_cast<double>(n_bins - 1)) * fs /
        static_cast<double>(n);
    spec.amplitudes = bins.cwiseAbs();
    const double peak = spec.amplitudes.maxCoeff();
    if (peak > 0.0) spec.amplitudes /= peak;
    return spec;
}

namespace {

std::vector<std::string> selected_channels(const MeasurementWindow& window,
                                           const std::vector<std::string>& channels) {
    if (!channels.empty()) return channels;
    return window.channel_names;
}

}  // namespace

std::vector<Spectrum> compute_spectra_serial(const MeasurementWindow& window,
                                             const std::vector<std::string>& channels) {
    window.validate();
    const auto names = selected_channels(window, channels);
    const double fs = 1.0 / window.dt;
    std::vector<Spectrum> out(names.size());
    for (std::size_t i = 0; i < names.size(); ++i)
        out[i] = single_sided_spectrum(window.channel(names[i]), fs, names[i]);
    return out;
}

std::vector<Spectrum> compute_spectra(const MeasurementWindow& window,
                                      const std::vector<std::string>& channels) {
    window.validate();
    const auto names = selected_channels(window, channels);
    const double fs = 1.0 / window.dt;
    std::vector<Spectrum> out(names.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < names.size(); ++i)
        out[i] = single_sided_spectrum(window.channel(names[i]), fs, names[i]);
    return out;
}

std::vector<bool> zscore_flags(const Eigen::VectorXd& amplitudes, const ZScoreParams& params) {
    require(params.lag >= 2, "zscore lag must be >= 2");
    require(params.min_history >= 2, "zscore min_history must be >= 2");
    const Eigen::Index n = amplitudes.size();
    std::vector<bool> flags(static_cast<std::size_t>(n), false);
    Eigen::VectorXd filtered = amplitudes;

    for (Eigen::Index i = 1; i < n; ++i) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, i - params.lag);
        const Eigen::Index len = i - lo;
        if (len < params.min_history) continue;
        const auto window = filtered.segment(lo, len);
        const double mean = window.mean();
        const double var = (window.array() - mean).square().sum() / static_cast<double>(len);
        const double sd = std::max(std::sqrt(var), 1e-12);
        if (amplitudes(i) - mean > params.threshold * sd) {
            flags[static_cast<std::size_t>(i)] = true;
            filtered(i) = params.influence * amplitudes(i) +
                          (1.0 - params.influence) * filtered(i - 1);
        } else {
            filtered(i) = amplitudes(i);
        }
    }
    return flags;
}

namespace {

struct PeakCandidate {
    int bin = 0;
    double frequency_hz = 0.0;
    double amplitude = 0.0;
    std::string channel;
};

// Sub-bin frequency refinement from the complex DFT around the peak
// (Jacobsen's estimator; exact for a rectangular window in the noiseless
// single-tone case).
double refine_frequency(const Spectrum& spec, int bin) {
    const Eigen::Index n_bins = spec.bins.size();
    double f = spec.frequencies_hz(bin);
    if (bin <= 0 || bin >= n_bins - 1 || spec.bins.size() == 0) return f;
    const std::complex<double> num = spec.bins(bin - 1) - spec.bins(bin + 1);
    const std::complex<double> den =
        2.0 * spec.bins(bin) - spec.bins(bin - 1) - spec.bins(bin + 1);
    if (std::abs(den) == 0.0) return f;
    double d = (num / den).real();
    d = std::clamp(d, -0.5, 0.5);
    const double bin_width = spec.frequencies_hz(1) - spec.frequencies_hz(0);
    return f + d * bin_width;
}

}  // namespace

DetectedFrequencies detect_fo_frequencies(const std::vector<Spectrum>& spectra,
                                          const ZScoreParams& params, int max_frequencies) {
    require(!spectra.empty(), "detect_fo_frequencies needs at least one spectrum");
    require(max_frequencies >= 1, "max_frequencies must be >= 1");
    const auto& grid = spectra.front().frequencies_hz;
    for (const auto& s : spectra) {
        require(s.frequencies_hz.size() == grid.size() &&
                    (s.frequencies_hz - grid).cwiseAbs().maxCoeff() <= 1e-12,
                "all spectra must share one frequency grid");
        require(s.amplitudes.size() == s.frequencies_hz.size(),
                "spectrum amplitude/frequency size mismatch");
    }

    std::vector<PeakCandidate> candidates;
    for (const auto& spec : spectra) {
        const auto flags = zscore_flags(spec.amplitudes, params);
        const Eigen::Index n = spec.amplitudes.size();
        Eigen::Index i = 0;
        while (i < n) {
            if (!flags[static_cast<std::size_t>(i)]) {
                ++i;
                continue;
            }
            Eigen::Index j = i;
            while (j + 1 < n && flags[static_cast<std::size_t>(j + 1)]) ++j;
            Eigen::Index best = i;
            for (Eigen::Index k = i + 1; k <= j; ++k)
                if (spec.amplitudes(k) > spec.amplitudes(best)) best = k;
            if (best > 0) {  // never report the DC bin
                PeakCandidate c;
                c.bin = static_cast<int>(best);
                c.amplitude = spec.amplitudes(best);
                c.frequency_hz = refine_frequency(spec, c.bin);
                c.channel = spec.source_channel;
                candidates.push_back(std::move(c));
            }
            i = j + 1;
        }
    }

    // Strongest first; deterministic order for equal amplitudes.
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (a.amplitude != b.amplitude) return a.amplitude > b.amplitude;
        if (a.bin != b.bin) return a.bin < b.bin;
        return a.channel < b.channel;
    });

    DetectedFrequencies out;
    for (const auto& c : candidates) {
        bool merged = false;
        for (std::size_t k = 0; k < out.bins.size(); ++k) {
            if (std::abs(out.bins[k] - c.bin) <= 1) {
                out.per_channel_evidence[c.channel].push_back(c.bin);
                merged = true;
                break;
            }
        }
        if (merged) continue;
        if (static_cast<int>(out.values_hz.size()) == max_frequencies) continue;
        out.values_hz.push_back(c.frequency_hz);
        out.amplitudes.push_back(c.amplitude);
        out.bins.push_back(c.bin);
        out.per_channel_evidence[c.channel].push_back(c.bin);
    }
    return out;
}

}  // namespace folo
