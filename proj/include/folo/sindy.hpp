#pragma once

// =============================================================================
// Sparse regression of the grid dynamics and oscillation-source scoring.
// =============================================================================
// The feature library pairs each state-derivative row with columns
// [1, delta_1..delta_iota, omega_1..omega_iota, vq_1..vq_r, vqI_1..vqI_r,
//  sin/cos per detected frequency]; a sequential thresholded least-squares
// pass sparsifies the coefficient matrix, and the squared sinusoid
// coefficients of each device's equations score it as a candidate source.
// =============================================================================

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "folo/model.hpp"
#include "folo/signal.hpp"
#include "folo/simulator.hpp"

namespace folo {

enum class FeatureKind { Constant, StateDelta, StateOmega, InputVq, InputVqI, Sin, Cos };

struct FeatureDescriptor {
    FeatureKind kind = FeatureKind::Constant;
    std::string name;        // e.g. "1", "g0.delta", "ibr1.vqI", "sin(0.614Hz)"
    int device_index = -1;   // generator or IBR index, -1 for constant/trig
    int frequency_index = -1;  // trig columns only
    double frequency_hz = 0.0;
};

struct FeatureLibrary {
    Eigen::MatrixXd matrix;  // (n_samples - 1) x q
    std::vector<FeatureDescriptor> column_spec;
    std::vector<double> frequencies_hz;

    Eigen::Index n_columns() const { return matrix.cols(); }
    Eigen::Index trig_base() const {
        return static_cast<Eigen::Index>(column_spec.size() - 2 * frequencies_hz.size());
    }
};

struct CoefficientMatrix {
    Eigen::MatrixXd xi;  // one row per state equation, one column per feature
    std::vector<FeatureDescriptor> column_spec;
    std::vector<std::string> equation_names;  // one per row, layout order
    double lambda_used = 0.0;
    bool converged = true;          // every row's active set stabilized
    bool escalation_capped = false; // adaptive thresholding hit its round cap
    std::vector<int> iterations;    // STLS iterations per row
};

struct SourceScore {
    Eigen::MatrixXd zeta;  // frequencies x devices (generators then IBRs)
    std::vector<double> frequencies_hz;
    std::vector<std::string> devices;

    struct Entry {
        int device = 0;
        int frequency = 0;
        double score = 0.0;
    };
    std::vector<Entry> ranking;  // descending score, ties by (device, frequency)
};

struct LocalizationResult {
    bool source_found = false;
    // All top-ranked entries; more than one only on an exact score tie.
    std::vector<SourceScore::Entry> top;
    std::string device_id;
    double frequency_hz = 0.0;
    double score = 0.0;
    double dominance_ratio = 0.0;  // top / second, +inf when second is 0
    std::vector<SourceScore::Entry> ranking;
};

/// Regression library from a mean-removed window. vqI columns are the running
/// trapezoid of the vq channels; trig columns are evaluated at the window's
/// absolute sample times; the last sample is dropped to align rows with the
/// forward-difference derivative matrix.
FeatureLibrary build_library(const MeasurementWindow& window, const DetectedFrequencies& freqs,
                             const StateLayout& layout);

/// (n_samples - 1) x state_dim forward differences of the state channels.
/// `smoothing_width` > 1 applies a centered moving average before
/// differencing (default off).
Eigen::MatrixXd build_derivatives(const MeasurementWindow& window, const StateLayout& layout,
                                  int smoothing_width = 0);

/// Sequential thresholded least squares, one independent problem per state
/// row: solve, zero entries below lambda, re-solve on the active set, repeat
/// until the active set stabilizes (cap 50 iterations). Least-squares solves
/// use a rank-revealing complete orthogonal decomposition (minimum-norm on
/// rank deficiency). OpenMP-parallel over rows; bit-identical to stls_serial.
CoefficientMatrix stls(const FeatureLibrary& library, const Eigen::MatrixXd& derivatives,
                       double lambda);
CoefficientMatrix stls_serial(const FeatureLibrary& library, const Eigen::MatrixXd& derivatives,
                              double lambda);

/// zeta[i][j]: squared magnitude of the frequency-i sinusoid in device j's
/// angle dynamics. Generators sum the trig coefficients of their delta and
/// omega equations, IBRs take their theta equation.
SourceScore extract_zeta(const CoefficientMatrix& xi, const StateLayout& layout,
                         const std::vector<double>& frequencies_hz);

/// Top-ranked (device, frequency) with a dominance ratio; all-zero zeta yields
/// an explicit "no source" result rather than an error.
LocalizationResult locate_source(const SourceScore& score);

/// Run stls at lambda0 and escalate lambda by 1.5x (up to 20 rounds) while
/// zeta has more than `max_nonzero` entries above 1e-12. Returns the first
/// result within the cap, else the last with `escalation_capped` set.
CoefficientMatrix adaptive_threshold(const FeatureLibrary& library,
                                     const Eigen::MatrixXd& derivatives, double lambda0,
                                     int max_nonzero, const StateLayout& layout);

}  // namespace folo
