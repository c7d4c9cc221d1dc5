#pragma once

// =============================================================================
// Stochastic simulation of the coupled swing / PLL deviation dynamics with
// sinusoidal forcing.
// =============================================================================
// Explicit Euler-Maruyama at the sample interval (optionally subdivided).
// Per step, with x = [delta; theta; omega] and forcing u = [u_gen; u_vq]:
//   delta' = delta + omega*dt
//   theta' = theta + (Kp .* (vq + u_vq) + Ki .* vq_integral) * dt
//   omega' = omega + M^-1 (-J delta - D omega + u_gen) * dt
//            - M^-1 Sigma * noise * sqrt(dt)
// where vq = vq_coupling . [delta; theta] and vq_integral accumulates
// vq + u_vq by the running trapezoid rule. The recorded vq channels carry the
// network-coupled component only; the injected disturbance acts on the PLL
// input path. Measurement noise, when enabled, is added to the recorded
// channels and never feeds back into the dynamics.
// =============================================================================

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "folo/errors.hpp"
#include "folo/model.hpp"

namespace folo {

enum class FoChannel { GenMechPower, IbrVq, WindSpeed, SolarIrradiance };

std::string fo_channel_name(FoChannel channel);
FoChannel parse_fo_channel(const std::string& name);

struct FoInjection {
    std::string device_id;
    FoChannel channel = FoChannel::GenMechPower;
    double frequency_hz = 0.0;
    // Per-unit for gen_mech_power / ibr_vq. For wind_speed and
    // solar_irradiance the amplitude is the relative deviation of the
    // environmental quantity from its operating point; the equivalent power
    // oscillation comes from first-order linearization (x3 for the cubic wind
    // law, x1 for the linear solar law) and is routed to the device's vq path.
    double amplitude = 0.0;
    double phase_rad = 0.0;
    double start_s = 0.0;
    double end_s = std::numeric_limits<double>::infinity();
};

struct Scenario {
    std::vector<FoInjection> injections;
    double duration_s = 0.0;
    double dt_s = 0.0;
    std::uint64_t seed = 0;
    std::optional<double> process_noise_snr_db;      // sigma = amp * 10^(-snr/20)
    std::optional<double> measurement_noise_snr_db;  // same convention
    int substeps = 1;  // integration steps per sample interval
};

/// Uniformly sampled multichannel record. Columns follow the state layout
/// (deltas, thetas, omegas) with the vq inputs appended.
struct MeasurementWindow {
    double t0 = 0.0;
    double dt = 0.0;
    Eigen::MatrixXd samples;  // n_samples x n_channels
    std::vector<std::string> channel_names;

    Eigen::Index n_samples() const { return samples.rows(); }
    Eigen::Index n_channels() const { return samples.cols(); }
    Eigen::Index channel_index(const std::string& name) const;
    Eigen::VectorXd channel(const std::string& name) const;

    /// Throws ValidationError when shapes, names or dt are inconsistent.
    void validate() const;

    /// Sub-window [start_s, start_s + length_s], sample-aligned.
    MeasurementWindow slice(double start_s, double length_s) const;
};

/// Turbine power 1/2 * rho * A * v^3 * Cp.
double wind_power(double v_eq_ws, double rho, double a_swept, double c_p);

/// Panel power A * C * g.
double solar_power(double g_eq_irr, double a_panel, double c_solar);

/// Stacked forcing vector at time t: entries [0, iota) act on the generator
/// speed equations (mechanical power), entries [iota, iota + r) on the IBR vq
/// path. Wind/solar injections are converted to their equivalent power
/// oscillation and routed to the vq entry of the target device.
Eigen::VectorXd forcing_at(double t, const std::vector<FoInjection>& injections,
                           const StateLayout& layout);

/// Integrator state carried across steps.
struct SimState {
    Eigen::VectorXd x;            // [delta; theta; omega]
    Eigen::VectorXd vq_integral;  // running trapezoid of vq + u_vq
    Eigen::VectorXd vq_prev;      // previous vq + u_vq (trapezoid memory)
    bool has_prev = false;
    double t = 0.0;
};

SimState initial_state(const SystemModel& model);

/// One explicit Euler-Maruyama step of length dt. `noise_draw` must hold one
/// standard normal variate per generator; `sigmas` are the per-generator load
/// noise standard deviations.
void step(SimState& state, const SystemModel& model, const StateLayout& layout,
          const Eigen::VectorXd& u, double dt, const Eigen::VectorXd& noise_draw,
          const Eigen::VectorXd& sigmas);

/// Integrate the scenario from zero initial deviation and record every sample.
/// Deterministic for a fixed seed. Throws NumericalError (with the offending
/// time) if the state stops being finite.
MeasurementWindow simulate(const SystemModel& model, const Scenario& scenario);

/// Scenario JSON: `duration`, `dt`, `seed`, `process_noise_snr_db`,
/// `measurement_noise_snr_db`, `substeps`, and an `injections` array of
/// blocks (device, channel, frequency_hz, amplitude, phase_rad, start_s, end_s).
Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& json_text);

/// Measurement CSV: header `time,<channel>...`, decimal text, 17 significant
/// digits (round-trip exact).
void write_measurements_csv(const MeasurementWindow& window, const std::string& path);

}  // namespace folo
