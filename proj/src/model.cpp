#include "folo/model.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

namespace folo {

namespace {

constexpr double kRowSumTol = 1e-9;

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

}  // namespace

CouplingMatrix::CouplingMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
    require(entries_.rows() == entries_.cols(), "coupling matrix must be square");
    for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
        double row_sum = entries_.row(i).sum();
        if (std::abs(row_sum) > kRowSumTol) {
            std::ostringstream msg;
            msg << "coupling matrix row " << i << " sums to " << row_sum
                << " (must be 0 within " << kRowSumTol << ")";
            throw ValidationError(msg.str());
        }
    }
}

void SystemModel::validate() const {
    require(!generators.empty(), "model needs at least one generator");
    std::set<std::string> ids;
    for (const auto& g : generators) {
        require(!g.id.empty(), "generator id must not be empty");
        require(ids.insert(g.id).second, "duplicate device id: " + g.id);
        require(g.inertia > 0.0, g.id + ": inertia M must be > 0");
        require(g.damping >= 0.0, g.id + ": damping D must be >= 0");
        require(g.noise_sigma >= 0.0, g.id + ": sigma must be >= 0");
        require(g.emf > 0.0, g.id + ": emf E must be > 0");
    }
    const std::size_t angle_states = generators.size() + ibrs.size();
    for (const auto& b : ibrs) {
        require(!b.id.empty(), "ibr id must not be empty");
        require(ids.insert(b.id).second, "duplicate device id: " + b.id);
        require(b.k_pllp > 0.0, b.id + ": k_pllp must be > 0");
        require(b.k_plli > 0.0, b.id + ": k_plli must be > 0");
        require(static_cast<std::size_t>(b.vq_coupling.size()) == angle_states,
                b.id + ": vq_coupling length must equal the angle-state count");
    }
    require(coupling.size() == static_cast<Eigen::Index>(generators.size()),
            "coupling dimension must equal the generator count");
    require(reference_device < generators.size(), "reference_device out of range");
}

std::string channel_kind_name(ChannelKind kind) {
    switch (kind) {
        case ChannelKind::Delta: return "delta";
        case ChannelKind::Theta: return "theta";
        case ChannelKind::Omega: return "omega";
        case ChannelKind::Vq: return "vq";
    }
    return "?";
}

std::size_t StateLayout::channel_index(const std::string& name) const {
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i].name == name) return i;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        if (inputs[i].name == name) return states.size() + i;
    throw ValidationError("unknown channel: " + name);
}

CouplingMatrix build_coupling(const Eigen::MatrixXd& line_susceptances,
                              const Eigen::VectorXd& emfs,
                              const Eigen::VectorXd& equilibrium_angles) {
    const Eigen::Index n = emfs.size();
    require(line_susceptances.rows() == n && line_susceptances.cols() == n,
            "susceptance matrix dimension must match emf vector length");
    require(equilibrium_angles.size() == n,
            "equilibrium angle vector length must match emf vector length");
    for (Eigen::Index i = 0; i < n; ++i) {
        require(line_susceptances(i, i) == 0.0, "susceptance diagonal must be zero");
        for (Eigen::Index j = i + 1; j < n; ++j)
            require(line_susceptances(i, j) == line_susceptances(j, i),
                    "susceptance matrix must be symmetric");
    }

    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double diag = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double c = emfs(i) * emfs(j) * line_susceptances(i, j) *
                             std::cos(equilibrium_angles(i) - equilibrium_angles(j));
            jac(i, j) = -c;
            diag += c;
        }
        jac(i, i) = diag;
    }
    return CouplingMatrix(jac);
}

StateLayout state_layout(const SystemModel& model) {
    model.validate();
    StateLayout layout;
    layout.n_generators = model.n_generators();
    layout.n_ibrs = model.n_ibrs();
    int k = 0;
    for (const auto& g : model.generators)
        layout.states.push_back({g.id + ".delta", g.id, ChannelKind::Delta, k++});
    k = 0;
    for (const auto& b : model.ibrs)
        layout.states.push_back({b.id + ".theta", b.id, ChannelKind::Theta, k++});
    k = 0;
    for (const auto& g : model.generators)
        layout.states.push_back({g.id + ".omega", g.id, ChannelKind::Omega, k++});
    k = 0;
    for (const auto& b : model.ibrs)
        layout.inputs.push_back({b.id + ".vq", b.id, ChannelKind::Vq, k++});
    return layout;
}

Eigen::MatrixXd system_matrix(const SystemModel& model) {
    model.validate();
    const Eigen::Index iota = static_cast<Eigen::Index>(model.n_generators());
    const Eigen::Index r = static_cast<Eigen::Index>(model.n_ibrs());
    const Eigen::Index n = 2 * iota + 2 * r;

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    // ddelta/dt = omega
    a.block(0, iota + r, iota, iota).setIdentity();
    // dtheta/dt = Kp * vq + Ki * vq_integral, with vq = coupling . angles
    for (Eigen::Index j = 0; j < r; ++j) {
        const auto& b = model.ibrs[static_cast<std::size_t>(j)];
        a.block(iota + j, 0, 1, iota + r) = b.k_pllp * b.vq_coupling.transpose();
        a(iota + j, 2 * iota + r + j) = b.k_plli;
    }
    // domega/dt = M^-1 (-J delta - D omega)
    for (Eigen::Index i = 0; i < iota; ++i) {
        const auto& g = model.generators[static_cast<std::size_t>(i)];
        a.block(iota + r + i, 0, 1, iota) = -model.coupling.entries().row(i) / g.inertia;
        a(iota + r + i, iota + r + i) = -g.damping / g.inertia;
    }
    // d(vq_integral)/dt = vq
    for (Eigen::Index j = 0; j < r; ++j)
        a.block(2 * iota + r + j, 0, 1, iota + r) =
            model.ibrs[static_cast<std::size_t>(j)].vq_coupling.transpose();
    return a;
}

namespace {

Eigen::VectorXcd system_eigenvalues(const SystemModel& model) {
    Eigen::EigenSolver<Eigen::MatrixXd> solver(system_matrix(model), false);
    return solver.eigenvalues();
}

}  // namespace

std::vector<double> natural_mode_frequencies_hz(const SystemModel& model) {
    const auto eigs = system_eigenvalues(model);
    std::vector<double> freqs;
    for (Eigen::Index i = 0; i < eigs.size(); ++i) {
        const double im = eigs(i).imag();
        if (im > 1e-6) freqs.push_back(im / (2.0 * M_PI));
    }
    std::sort(freqs.begin(), freqs.end());
    return freqs;
}

double spectral_abscissa(const SystemModel& model) {
    const auto eigs = system_eigenvalues(model);
    double worst = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < eigs.size(); ++i) {
        if (std::abs(eigs(i)) <= 1e-9) continue;  // structural translation mode
        worst = std::max(worst, eigs(i).real());
    }
    return worst;
}

namespace {

using nlohmann::json;

double number_field(const json& obj, const std::string& key, const std::string& ctx) {
    require(obj.contains(key), ctx + ": missing field '" + key + "'");
    require(obj[key].is_number(), ctx + ": field '" + key + "' must be a number");
    return obj[key].get<double>();
}

Eigen::VectorXd vector_field(const json& arr, const std::string& ctx) {
    require(arr.is_array(), ctx + " must be an array of numbers");
    Eigen::VectorXd v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        require(arr[i].is_number(), ctx + " must contain only numbers");
        v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    }
    return v;
}

Eigen::MatrixXd matrix_field(const json& arr, const std::string& ctx) {
    require(arr.is_array() && !arr.empty(), ctx + " must be a non-empty array of rows");
    const std::size_t n = arr.size();
    Eigen::MatrixXd m(n, arr[0].size());
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd row = vector_field(arr[i], ctx + " row");
        require(row.size() == m.cols(), ctx + ": ragged rows");
        m.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return m;
}

}  // namespace

SystemModel parse_model(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("model file is not valid JSON: ") + e.what());
    }

    SystemModel model;
    require(doc.contains("generators") && doc["generators"].is_array(),
            "model: missing 'generators' section");
    for (const auto& g : doc["generators"]) {
        SynchronousGenerator gen;
        require(g.contains("id") && g["id"].is_string(), "generator: missing 'id'");
        gen.id = g["id"].get<std::string>();
        gen.inertia = number_field(g, "M", gen.id);
        gen.damping = number_field(g, "D", gen.id);
        gen.noise_sigma = number_field(g, "sigma", gen.id);
        gen.emf = number_field(g, "E", gen.id);
        model.generators.push_back(std::move(gen));
    }
    if (doc.contains("ibrs")) {
        for (const auto& b : doc["ibrs"]) {
            IbrDevice ibr;
            require(b.contains("id") && b["id"].is_string(), "ibr: missing 'id'");
            ibr.id = b["id"].get<std::string>();
            ibr.k_pllp = number_field(b, "k_pllp", ibr.id);
            ibr.k_plli = number_field(b, "k_plli", ibr.id);
            ibr.nominal_freq = number_field(b, "omega_g", ibr.id);
            require(b.contains("vq_coupling"), ibr.id + ": missing 'vq_coupling'");
            ibr.vq_coupling = vector_field(b["vq_coupling"], ibr.id + ".vq_coupling");
            model.ibrs.push_back(std::move(ibr));
        }
    }

    require(doc.contains("coupling") && doc["coupling"].is_object(),
            "model: missing 'coupling' section");
    const auto& c = doc["coupling"];
    if (c.contains("matrix")) {
        model.coupling = CouplingMatrix(matrix_field(c["matrix"], "coupling.matrix"));
    } else {
        require(c.contains("susceptances") && c.contains("emfs") &&
                    c.contains("equilibrium_angles"),
                "coupling needs either 'matrix' or "
                "'susceptances' + 'emfs' + 'equilibrium_angles'");
        model.coupling = build_coupling(
            matrix_field(c["susceptances"], "coupling.susceptances"),
            vector_field(c["emfs"], "coupling.emfs"),
            vector_field(c["equilibrium_angles"], "coupling.equilibrium_angles"));
    }

    if (doc.contains("reference_device")) {
        require(doc["reference_device"].is_number_unsigned(),
                "reference_device must be a non-negative integer");
        model.reference_device = doc["reference_device"].get<std::size_t>();
    }

    model.validate();
    return model;
}

SystemModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open model file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_model(buf.str());
}

}  // namespace folo
