#pragma once

// =============================================================================
// Grid model: synchronous machines, grid-following IBRs, linearized coupling.
// =============================================================================
// The state vector is stacked as [delta (per generator); theta (per IBR);
// omega (per generator)]. Each IBR additionally exposes one measured input,
// its q-axis voltage vq. All quantities are per-unit; angles in rad, speeds
// in rad/s.
// =============================================================================

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "folo/errors.hpp"

namespace folo {

struct SynchronousGenerator {
    std::string id;
    double inertia = 0.0;      // M, pu*s^2, > 0
    double damping = 0.0;      // D, pu, >= 0
    double noise_sigma = 0.0;  // std of stochastic load variation, pu, >= 0
    double emf = 1.0;          // E, internal voltage magnitude, pu, > 0
};

struct IbrDevice {
    std::string id;
    double k_pllp = 0.0;      // PLL proportional gain, > 0
    double k_plli = 0.0;      // PLL integral gain, > 0
    double nominal_freq = 0.0;  // omega_g, rad/s; cancels in deviation coordinates
    // Sensitivity of this device's vq to every angle state (generator deltas
    // first, then IBR thetas). Length must equal generator count + IBR count.
    Eigen::VectorXd vq_coupling;
};

/// ddPe/ddelta evaluated at the equilibrium. Rows sum to zero because a
/// lossless coupling depends only on angle differences.
class CouplingMatrix {
  public:
    CouplingMatrix() = default;
    explicit CouplingMatrix(Eigen::MatrixXd entries);

    const Eigen::MatrixXd& entries() const { return entries_; }
    Eigen::Index size() const { return entries_.rows(); }

  private:
    Eigen::MatrixXd entries_;
};

struct SystemModel {
    std::vector<SynchronousGenerator> generators;
    std::vector<IbrDevice> ibrs;
    CouplingMatrix coupling;
    std::size_t reference_device = 0;  // index of the angle-reference generator

    std::size_t n_generators() const { return generators.size(); }
    std::size_t n_ibrs() const { return ibrs.size(); }
    /// 2*iota + r deviation states (vq inputs are measured, not states).
    std::size_t state_dim() const { return 2 * generators.size() + ibrs.size(); }

    /// Throws ValidationError on duplicate ids, bad parameter signs,
    /// dimension mismatches or an out-of-range reference device.
    void validate() const;
};

enum class ChannelKind { Delta, Theta, Omega, Vq };

struct Channel {
    std::string name;  // "<device-id>.<kind>"
    std::string device_id;
    ChannelKind kind;
    int device_index;  // generator index or IBR index, within its own list
};

/// Row/column order used by the simulator, measurement windows and the
/// regression library: generator deltas, IBR thetas, generator omegas,
/// then the vq inputs in IBR order.
struct StateLayout {
    std::vector<Channel> states;
    std::vector<Channel> inputs;

    std::size_t n_generators = 0;
    std::size_t n_ibrs = 0;

    std::size_t state_dim() const { return states.size(); }
    std::size_t delta_index(std::size_t gen) const { return gen; }
    std::size_t theta_index(std::size_t ibr) const { return n_generators + ibr; }
    std::size_t omega_index(std::size_t gen) const { return n_generators + n_ibrs + gen; }
    /// Angle states are the deltas and thetas, in that order.
    std::size_t angle_count() const { return n_generators + n_ibrs; }

    /// Index of a named channel within [states..., inputs...].
    /// Throws ValidationError if the channel is unknown.
    std::size_t channel_index(const std::string& name) const;
};

std::string channel_kind_name(ChannelKind kind);

/// Coupling matrix of the classical lossless network
/// Pe_i = sum_j Ei*Ej*Bij*sin(delta_i - delta_j):
/// J[i][j] = -Ei*Ej*Bij*cos(d0_i - d0_j) off the diagonal, diagonal set so
/// every row sums to zero.
CouplingMatrix build_coupling(const Eigen::MatrixXd& line_susceptances,
                              const Eigen::VectorXd& emfs,
                              const Eigen::VectorXd& equilibrium_angles);

StateLayout state_layout(const SystemModel& model);

/// Continuous-time system matrix in deviation coordinates, augmented with the
/// vq running integrals: x = [delta; theta; omega; vq_integral], size
/// 2*iota + 2*r. Used for mode analysis and stability checks.
Eigen::MatrixXd system_matrix(const SystemModel& model);

/// Frequencies (Hz) of the oscillatory modes of system_matrix, ascending.
std::vector<double> natural_mode_frequencies_hz(const SystemModel& model);

/// Largest real part over the eigenvalues of system_matrix, excluding the
/// structural zero mode (uniform angle translation is invariant because the
/// coupling rows sum to zero).
double spectral_abscissa(const SystemModel& model);

/// Load a model definition from a JSON file. Sections: `generators`
/// (id, M, D, sigma, E), `ibrs` (id, k_pllp, k_plli, omega_g, vq_coupling),
/// `coupling` (`susceptances` + `emfs` + `equilibrium_angles`, or an explicit
/// `matrix`), `reference_device`.
SystemModel load_model(const std::string& path);
SystemModel parse_model(const std::string& json_text);

}  // namespace folo
