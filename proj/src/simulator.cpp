#include "folo/simulator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace folo {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

constexpr double kTwoPi = 2.0 * M_PI;

}  // namespace

std::string fo_channel_name(FoChannel channel) {
    switch (channel) {
        case FoChannel::GenMechPower: return "gen_mech_power";
        case FoChannel::IbrVq: return "ibr_vq";
        case FoChannel::WindSpeed: return "wind_speed";
        case FoChannel::SolarIrradiance: return "solar_irradiance";
    }
    return "?";
}

FoChannel parse_fo_channel(const std::string& name) {
    if (name == "gen_mech_power") return FoChannel::GenMechPower;
    if (name == "ibr_vq") return FoChannel::IbrVq;
    if (name == "wind_speed") return FoChannel::WindSpeed;
    if (name == "solar_irradiance") return FoChannel::SolarIrradiance;
    throw ValidationError("unknown injection channel: " + name);
}

Eigen::Index MeasurementWindow::channel_index(const std::string& name) const {
    for (std::size_t i = 0; i < channel_names.size(); ++i)
        if (channel_names[i] == name) return static_cast<Eigen::Index>(i);
    throw ValidationError("window has no channel named " + name);
}

Eigen::VectorXd MeasurementWindow::channel(const std::string& name) const {
    return samples.col(channel_index(name));
}

void MeasurementWindow::validate() const {
    require(samples.rows() >= 2, "measurement window needs at least 2 samples");
    require(dt > 0.0, "measurement window dt must be > 0");
    require(static_cast<Eigen::Index>(channel_names.size()) == samples.cols(),
            "channel name count must match sample columns");
    std::set<std::string> seen;
    for (const auto& n : channel_names)
        require(seen.insert(n).second, "duplicate channel name: " + n);
    require(samples.allFinite(), "measurement window contains non-finite values");
}

MeasurementWindow MeasurementWindow::slice(double start_s, double length_s) const {
    require(length_s > 0.0, "window length must be > 0");
    const auto first = static_cast<Eigen::Index>(std::llround((start_s - t0) / dt));
    const auto count = static_cast<Eigen::Index>(std::llround(length_s / dt)) + 1;
    require(first >= 0 && first + count <= n_samples(),
            "requested window [" + std::to_string(start_s) + ", " +
                std::to_string(start_s + length_s) + "] s is outside the record");
    MeasurementWindow out;
    out.t0 = t0 + static_cast<double>(first) * dt;
    out.dt = dt;
    out.samples = samples.middleRows(first, count);
    out.channel_names = channel_names;
    return out;
}

double wind_power(double v_eq_ws, double rho, double a_swept, double c_p) {
    require(v_eq_ws >= 0.0 && rho >= 0.0 && a_swept >= 0.0 && c_p >= 0.0,
            "wind_power inputs must be non-negative");
    require(c_p <= 0.593, "power coefficient above the Betz limit");
    return 0.5 * rho * a_swept * v_eq_ws * v_eq_ws * v_eq_ws * c_p;
}

double solar_power(double g_eq_irr, double a_panel, double c_solar) {
    require(g_eq_irr >= 0.0 && a_panel >= 0.0 && c_solar >= 0.0,
            "solar_power inputs must be non-negative");
    require(c_solar <= 1.0, "panel efficiency must be <= 1");
    return a_panel * c_solar * g_eq_irr;
}

namespace {

struct ResolvedInjection {
    bool gen = false;   // true: generator power row, false: ibr vq row
    int index = 0;      // row within its group
    double omega = 0.0; // 2*pi*f
    double amplitude = 0.0;
    double phase = 0.0;
    double start = 0.0;
    double end = 0.0;
};

ResolvedInjection resolve(const FoInjection& inj, const StateLayout& layout) {
    require(inj.frequency_hz > 0.0, "injection frequency must be > 0");
    require(inj.end_s > inj.start_s, "injection end time must exceed its start time");

    ResolvedInjection r;
    r.omega = kTwoPi * inj.frequency_hz;
    r.phase = inj.phase_rad;
    r.start = inj.start_s;
    r.end = inj.end_s;

    bool is_gen = false;
    int index = -1;
    for (const auto& ch : layout.states) {
        if (ch.device_id != inj.device_id) continue;
        is_gen = ch.kind != ChannelKind::Theta;
        index = ch.device_index;
        break;
    }
    require(index >= 0, "injection targets unknown device: " + inj.device_id);

    switch (inj.channel) {
        case FoChannel::GenMechPower:
            require(is_gen, inj.device_id + ": gen_mech_power requires a generator");
            r.gen = true;
            r.amplitude = inj.amplitude;
            break;
        case FoChannel::IbrVq:
            require(!is_gen, inj.device_id + ": ibr_vq requires an IBR");
            r.gen = false;
            r.amplitude = inj.amplitude;
            break;
        case FoChannel::WindSpeed:
            // dP/P0 = 3 dv/v0 from the cubic turbine law, routed to vq.
            require(!is_gen, inj.device_id + ": wind_speed requires an IBR");
            r.gen = false;
            r.amplitude = 3.0 * inj.amplitude;
            break;
        case FoChannel::SolarIrradiance:
            // dP/P0 = dg/g0 from the linear panel law, routed to vq.
            require(!is_gen, inj.device_id + ": solar_irradiance requires an IBR");
            r.gen = false;
            r.amplitude = inj.amplitude;
            break;
    }
    r.index = index;
    return r;
}

}  // namespace

Eigen::VectorXd forcing_at(double t, const std::vector<FoInjection>& injections,
                           const StateLayout& layout) {
    require(t >= 0.0, "forcing time must be >= 0");
    Eigen::VectorXd u = Eigen::VectorXd::Zero(
        static_cast<Eigen::Index>(layout.n_generators + layout.n_ibrs));
    for (const auto& raw : injections) {
        const ResolvedInjection inj = resolve(raw, layout);
        if (t < inj.start || t >= inj.end) continue;
        const double s = inj.amplitude * std::sin(inj.omega * t + inj.phase);
        const Eigen::Index row = inj.gen
                                     ? static_cast<Eigen::Index>(inj.index)
                                     : static_cast<Eigen::Index>(layout.n_generators + inj.index);
        u(row) += s;
    }
    return u;
}

SimState initial_state(const SystemModel& model) {
    SimState s;
    s.x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.state_dim()));
    s.vq_integral = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.n_ibrs()));
    s.vq_prev = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.n_ibrs()));
    s.has_prev = false;
    s.t = 0.0;
    return s;
}

namespace {

Eigen::VectorXd vq_natural(const SystemModel& model, const StateLayout& layout,
                           const Eigen::VectorXd& x) {
    const auto angle_count = static_cast<Eigen::Index>(layout.angle_count());
    Eigen::VectorXd vq(static_cast<Eigen::Index>(model.n_ibrs()));
    for (std::size_t j = 0; j < model.n_ibrs(); ++j)
        vq(static_cast<Eigen::Index>(j)) =
            model.ibrs[j].vq_coupling.dot(x.head(angle_count));
    return vq;
}

}  // namespace

void step(SimState& state, const SystemModel& model, const StateLayout& layout,
          const Eigen::VectorXd& u, double dt, const Eigen::VectorXd& noise_draw,
          const Eigen::VectorXd& sigmas) {
    const auto iota = static_cast<Eigen::Index>(model.n_generators());
    const auto r = static_cast<Eigen::Index>(model.n_ibrs());
    require(dt > 0.0, "step dt must be > 0");
    require(state.x.size() == static_cast<Eigen::Index>(model.state_dim()),
            "state dimension mismatch");
    require(u.size() == iota + r, "forcing vector dimension mismatch");
    require(noise_draw.size() == iota, "noise draw must have one entry per generator");
    require(sigmas.size() == iota, "sigma vector must have one entry per generator");
    if (!state.x.allFinite()) throw NumericalError("non-finite state entering step");

    const Eigen::VectorXd vq_tot = vq_natural(model, layout, state.x) + u.tail(r);
    if (state.has_prev)
        state.vq_integral += 0.5 * dt * (vq_tot + state.vq_prev);
    state.vq_prev = vq_tot;
    state.has_prev = true;

    Eigen::VectorXd next = state.x;
    const double sq_dt = std::sqrt(dt);
    // delta
    next.head(iota) += state.x.tail(iota) * dt;
    // theta
    for (Eigen::Index j = 0; j < r; ++j) {
        const auto& b = model.ibrs[static_cast<std::size_t>(j)];
        next(iota + j) += (b.k_pllp * vq_tot(j) + b.k_plli * state.vq_integral(j)) * dt;
    }
    // omega
    for (Eigen::Index i = 0; i < iota; ++i) {
        const auto& g = model.generators[static_cast<std::size_t>(i)];
        const double accel = (-model.coupling.entries().row(i).dot(state.x.head(iota)) -
                              g.damping * state.x(iota + r + i) + u(i)) /
                             g.inertia;
        next(iota + r + i) += accel * dt - sigmas(i) / g.inertia * noise_draw(i) * sq_dt;
    }
    state.x = next;
    state.t += dt;
}

MeasurementWindow simulate(const SystemModel& model, const Scenario& scenario) {
    model.validate();
    require(scenario.dt_s > 0.0, "scenario dt must be > 0");
    require(scenario.duration_s > 0.0, "scenario duration must be > 0");
    require(scenario.substeps >= 1, "substeps must be >= 1");
    const double ratio = scenario.duration_s / scenario.dt_s;
    require(std::abs(ratio - std::round(ratio)) <= 1e-9 * std::max(1.0, ratio),
            "duration must be an integer multiple of dt");
    const auto n_steps = static_cast<Eigen::Index>(std::llround(ratio));

    const StateLayout layout = state_layout(model);
    const auto iota = static_cast<Eigen::Index>(model.n_generators());
    const auto r = static_cast<Eigen::Index>(model.n_ibrs());

    // Effective load-noise level. When the scenario pins an SNR, the sigma is
    // derived from the largest injected amplitude; otherwise the per-generator
    // model values apply.
    Eigen::VectorXd sigmas(iota);
    for (Eigen::Index i = 0; i < iota; ++i)
        sigmas(i) = model.generators[static_cast<std::size_t>(i)].noise_sigma;
    double max_amp = 0.0;
    for (const auto& inj : scenario.injections) {
        double a = std::abs(inj.amplitude);
        if (inj.channel == FoChannel::WindSpeed) a *= 3.0;
        max_amp = std::max(max_amp, a);
    }
    if (scenario.process_noise_snr_db) {
        const double sigma = max_amp * std::pow(10.0, -*scenario.process_noise_snr_db / 20.0);
        sigmas.setConstant(sigma);
    }

    std::vector<ResolvedInjection> inns;
    inns.reserve(scenario.injections.size());
    for (const auto& inj : scenario.injections) inns.push_back(resolve(inj, layout));

    std::mt19937_64 rng(scenario.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto draw = [&](Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
        return v;
    };

    MeasurementWindow window;
    window.t0 = 0.0;
    window.dt = scenario.dt_s;
    window.channel_names.reserve(layout.states.size() + layout.inputs.size());
    for (const auto& ch : layout.states) window.channel_names.push_back(ch.name);
    for (const auto& ch : layout.inputs) window.channel_names.push_back(ch.name);
    window.samples.resize(n_steps + 1, static_cast<Eigen::Index>(window.channel_names.size()));

    SimState state = initial_state(model);
    Eigen::VectorXd u(iota + r);
    const double h = scenario.dt_s / scenario.substeps;

    for (Eigen::Index k = 0; k <= n_steps; ++k) {
        const double t = static_cast<double>(k) * scenario.dt_s;
        if (!state.x.allFinite())
            throw NumericalError("simulation diverged at t = " + std::to_string(t) + " s");
        window.samples.block(k, 0, 1, state.x.size()) = state.x.transpose();
        window.samples.block(k, state.x.size(), 1, r) =
            vq_natural(model, layout, state.x).transpose();
        if (k == n_steps) break;
        for (int sub = 0; sub < scenario.substeps; ++sub) {
            const double ts = t + sub * h;
            u.setZero();
            for (const auto& inj : inns) {
                if (ts < inj.start || ts >= inj.end) continue;
                const Eigen::Index row = inj.gen ? static_cast<Eigen::Index>(inj.index)
                                                 : iota + static_cast<Eigen::Index>(inj.index);
                u(row) += inj.amplitude * std::sin(inj.omega * ts + inj.phase);
            }
            step(state, model, layout, u, h, draw(iota), sigmas);
        }
    }

    if (scenario.measurement_noise_snr_db) {
        const double sigma = max_amp * std::pow(10.0, -*scenario.measurement_noise_snr_db / 20.0);
        for (Eigen::Index kk = 0; kk < window.samples.rows(); ++kk)
            for (Eigen::Index c = 0; c < window.samples.cols(); ++c)
                window.samples(kk, c) += sigma * normal(rng);
    }

    window.validate();
    return window;
}

Scenario parse_scenario(const std::string& json_text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("scenario file is not valid JSON: ") + e.what());
    }

    Scenario sc;
    require(doc.contains("duration") && doc["duration"].is_number(),
            "scenario: missing numeric 'duration'");
    require(doc.contains("dt") && doc["dt"].is_number(), "scenario: missing numeric 'dt'");
    sc.duration_s = doc["duration"].get<double>();
    sc.dt_s = doc["dt"].get<double>();
    if (doc.contains("seed")) sc.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("process_noise_snr_db") && !doc["process_noise_snr_db"].is_null())
        sc.process_noise_snr_db = doc["process_noise_snr_db"].get<double>();
    if (doc.contains("measurement_noise_snr_db") && !doc["measurement_noise_snr_db"].is_null())
        sc.measurement_noise_snr_db = doc["measurement_noise_snr_db"].get<double>();
    if (doc.contains("substeps")) sc.substeps = doc["substeps"].get<int>();

    if (doc.contains("injections")) {
        require(doc["injections"].is_array(), "scenario: 'injections' must be an array");
        for (const auto& j : doc["injections"]) {
            FoInjection inj;
            require(j.contains("device") && j["device"].is_string(),
                    "injection: missing 'device'");
            inj.device_id = j["device"].get<std::string>();
            require(j.contains("channel") && j["channel"].is_string(),
                    "injection: missing 'channel'");
            inj.channel = parse_fo_channel(j["channel"].get<std::string>());
            require(j.contains("frequency_hz") && j["frequency_hz"].is_number(),
                    "injection: missing numeric 'frequency_hz'");
            inj.frequency_hz = j["frequency_hz"].get<double>();
            require(j.contains("amplitude") && j["amplitude"].is_number(),
                    "injection: missing numeric 'amplitude'");
            inj.amplitude = j["amplitude"].get<double>();
            if (j.contains("phase_rad")) inj.phase_rad = j["phase_rad"].get<double>();
            if (j.contains("start_s")) inj.start_s = j["start_s"].get<double>();
            if (j.contains("end_s") && !j["end_s"].is_null())
                inj.end_s = j["end_s"].get<double>();
            sc.injections.push_back(inj);
        }
    }
    return sc;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scenario file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str());
}

void write_measurements_csv(const MeasurementWindow& window, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write measurement file: " + path);
    out << "time";
    for (const auto& name : window.channel_names) out << ',' << name;
    out << '\n';
    char buf[32];
    for (Eigen::Index k = 0; k < window.n_samples(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", window.t0 + static_cast<double>(k) * window.dt);
        out << buf;
        for (Eigen::Index c = 0; c < window.n_channels(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", window.samples(k, c));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw ValidationError("I/O failure while writing " + path);
}

}  // namespace folo
