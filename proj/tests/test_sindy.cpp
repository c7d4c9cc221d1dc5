#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "desk_model.hpp"
#include "folo/pipeline.hpp"
#include "folo/signal.hpp"
#include "folo/sindy.hpp"

using namespace folo;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

DetectedFrequencies freqs_of(std::initializer_list<double> values) {
    DetectedFrequencies f;
    for (double v : values) {
        f.values_hz.push_back(v);
        f.amplitudes.push_back(1.0);
        f.bins.push_back(static_cast<int>(std::lround(v * 40.0)));
    }
    return f;
}

MeasurementWindow desk_window(const SystemModel& model, const Scenario& scenario) {
    return remove_mean(simulate(model, scenario).slice(5.0, 40.0));
}

FeatureLibrary random_library(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> g;
    FeatureLibrary lib;
    lib.matrix.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) lib.matrix(i, j) = g(rng);
    for (Eigen::Index j = 0; j < cols; ++j)
        lib.column_spec.push_back({FeatureKind::Constant, "c" + std::to_string(j), -1, -1, 0.0});
    return lib;
}

}  // namespace

TEST_CASE("build_library: column layout and counts") {
    const SystemModel model = testing::desk_model();
    const StateLayout layout = state_layout(model);
    const auto window = desk_window(testing::with_load_noise(model, 1e-4),
                                    testing::ambient_scenario(3));
    const auto lib = build_library(window, freqs_of({0.5}), layout);

    CHECK(lib.matrix.cols() == 1 + 2 * 4 + 2 * 2 + 2 * 1);
    CHECK(lib.matrix.rows() == window.n_samples() - 1);
    CHECK((lib.matrix.col(0).array() == 1.0).all());
    CHECK(lib.column_spec[0].kind == FeatureKind::Constant);
    CHECK(lib.column_spec[1].name == "g0.delta");
    CHECK(lib.column_spec[5].name == "g0.omega");
    CHECK(lib.column_spec[9].name == "ibr0.vq");
    CHECK(lib.column_spec[11].name == "ibr0.vqI");
    CHECK(lib.column_spec[13].kind == FeatureKind::Sin);
    CHECK(lib.column_spec[14].kind == FeatureKind::Cos);

    // ι=2, r=1, l=1 → q = 9 per the column-count formula.
    SystemModel small = model;
    small.generators.resize(2);
    small.ibrs.resize(1);
    small.ibrs[0].vq_coupling = (Eigen::VectorXd(3) << 0.4, 0.3, -0.05).finished();
    Eigen::MatrixXd b(2, 2);
    b << 0, 1, 1, 0;
    small.coupling = build_coupling(b, Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2));
    const StateLayout small_layout = state_layout(small);
    Scenario sc = testing::ambient_scenario(4);
    const auto small_window =
        remove_mean(simulate(testing::with_load_noise(small, 1e-4), sc).slice(5.0, 40.0));
    CHECK(build_library(small_window, freqs_of({0.5}), small_layout).matrix.cols() == 9);
}

TEST_CASE("build_library: trig columns are evaluated at the sample times") {
    MeasurementWindow w;
    w.t0 = 0.0;
    w.dt = 0.1;
    w.samples = Eigen::MatrixXd::Random(32, 2);
    w.channel_names = {"g0.delta", "g0.omega"};
    SystemModel model;
    model.generators = {{"g0", 1.0, 0.1, 0.0, 1.0}};
    model.coupling = CouplingMatrix(Eigen::MatrixXd::Zero(1, 1));
    const StateLayout layout = state_layout(model);
    const auto lib = build_library(w, freqs_of({0.5}), layout);
    // sin column, row 3: sin(2*pi*0.5*0.3)
    CHECK(lib.matrix(3, 3) == doctest::Approx(0.809017).epsilon(1e-6));
    CHECK(lib.matrix(3, 4) == doctest::Approx(std::cos(kTwoPi * 0.5 * 0.3)).epsilon(1e-6));
}

TEST_CASE("build_library: missing channels and empty frequency list") {
    const SystemModel model = testing::desk_model();
    const StateLayout layout = state_layout(model);
    MeasurementWindow w;
    w.t0 = 0.0;
    w.dt = 0.1;
    w.samples = Eigen::MatrixXd::Random(32, 2);
    w.channel_names = {"g0.delta", "g0.omega"};
    CHECK_THROWS_AS(build_library(w, freqs_of({0.5}), layout), ValidationError);
    const auto window = desk_window(testing::with_load_noise(model, 1e-4),
                                    testing::ambient_scenario(3));
    CHECK_THROWS_AS(build_library(window, DetectedFrequencies{}, layout), ValidationError);
}

TEST_CASE("build_derivatives: ramps and zeros") {
    SystemModel model;
    model.generators = {{"g0", 1.0, 0.1, 0.0, 1.0}};
    model.coupling = CouplingMatrix(Eigen::MatrixXd::Zero(1, 1));
    const StateLayout layout = state_layout(model);

    MeasurementWindow w;
    w.t0 = 0.0;
    w.dt = 0.5;
    w.samples.resize(8, 2);
    for (int k = 0; k < 8; ++k) {
        w.samples(k, 0) = 2.0 * (0.5 * k);  // ramp of slope 2
        w.samples(k, 1) = 0.0;
    }
    w.channel_names = {"g0.delta", "g0.omega"};
    const auto dx = build_derivatives(w, layout);
    CHECK(dx.rows() == 7);
    CHECK((dx.col(0).array() - 2.0).abs().maxCoeff() < 1e-12);
    CHECK(dx.col(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("build_derivatives: follows an analytic exponential decay") {
    // Single machine with M = D = 1: omega(t) = omega0 * exp(-t), so the
    // estimated derivative must track -omega within O(dt).
    SystemModel model;
    model.generators = {{"g0", 1.0, 1.0, 0.0, 1.0}};
    model.coupling = CouplingMatrix(Eigen::MatrixXd::Zero(1, 1));
    const StateLayout layout = state_layout(model);

    const double dt = 1e-3;
    const int n = 2000;
    SimState state = initial_state(model);
    state.x(1) = 0.1;
    MeasurementWindow w;
    w.t0 = 0.0;
    w.dt = dt;
    w.samples.resize(n + 1, 2);
    w.channel_names = {"g0.delta", "g0.omega"};
    for (int k = 0; k <= n; ++k) {
        w.samples(k, 0) = state.x(0);
        w.samples(k, 1) = state.x(1);
        if (k < n)
            step(state, model, layout, Eigen::VectorXd::Zero(1), dt,
                 Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
    }
    const auto dx = build_derivatives(w, layout);
    double worst = 0.0;
    for (int k = 0; k < n; ++k) {
        const double analytic = -0.1 * std::exp(-dt * k);
        worst = std::max(worst, std::abs(dx(k, 1) - analytic));
    }
    CHECK(worst < 5.0 * dt * 0.1);
}

TEST_CASE("stls: tiny lambda reproduces plain least squares") {
    std::mt19937_64 rng(21);
    auto lib = random_library(rng, 300, 8);
    Eigen::MatrixXd xi_true = Eigen::MatrixXd::Zero(2, 8);
    xi_true(0, 1) = 1.5;
    xi_true(0, 4) = -2.0;
    xi_true(1, 7) = 0.7;
    const Eigen::MatrixXd y = lib.matrix * xi_true.transpose();

    const auto fit = stls(lib, y, 1e-15);
    const Eigen::MatrixXd plain =
        lib.matrix.completeOrthogonalDecomposition().solve(y).transpose();
    CHECK((fit.xi - plain).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("stls: lambda above every coefficient annihilates the matrix") {
    std::mt19937_64 rng(22);
    auto lib = random_library(rng, 200, 6);
    Eigen::MatrixXd xi_true = Eigen::MatrixXd::Zero(1, 6);
    xi_true(0, 2) = 0.5;
    const Eigen::MatrixXd y = lib.matrix * xi_true.transpose();
    const auto fit = stls(lib, y, 100.0);
    CHECK(fit.xi.cwiseAbs().maxCoeff() == 0.0);
    CHECK(fit.converged);
}

TEST_CASE("stls: exact support recovery on synthetic sparse systems") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> mag(10.0 * 0.1, 20.0 * 0.1);
    std::bernoulli_distribution sign(0.5);
    const double lambda = 0.1;
    int perfect = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto lib = random_library(rng, 400, 16);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(lib.matrix);
        REQUIRE(svd.singularValues()(0) / svd.singularValues()(15) < 1e4);

        Eigen::MatrixXd xi_true = Eigen::MatrixXd::Zero(3, 16);
        for (int row = 0; row < 3; ++row) {
            std::vector<int> cols(16);
            std::iota(cols.begin(), cols.end(), 0);
            std::shuffle(cols.begin(), cols.end(), rng);
            for (int k = 0; k < 3; ++k)
                xi_true(row, cols[static_cast<std::size_t>(k)]) =
                    (sign(rng) ? 1.0 : -1.0) * mag(rng);
        }
        const Eigen::MatrixXd y = lib.matrix * xi_true.transpose();
        const auto fit = stls(lib, y, lambda);

        bool ok = true;
        for (Eigen::Index r = 0; r < 3; ++r)
            for (Eigen::Index c = 0; c < 16; ++c) {
                const bool want = xi_true(r, c) != 0.0;
                const bool got = fit.xi(r, c) != 0.0;
                if (want != got) ok = false;
                if (want && std::abs(fit.xi(r, c) - xi_true(r, c)) >
                                1e-6 * std::abs(xi_true(r, c)))
                    ok = false;
            }
        perfect += ok;
    }
    CHECK(perfect == 50);
}

TEST_CASE("stls: fixed point and thresholding soundness") {
    std::mt19937_64 rng(24);
    auto lib = random_library(rng, 250, 10);
    std::normal_distribution<double> g;
    Eigen::MatrixXd y(250, 3);
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        for (Eigen::Index j = 0; j < y.cols(); ++j) y(i, j) = g(rng);

    const double lambda = 0.05;
    const auto fit = stls(lib, y, lambda);
    CHECK(fit.converged);
    for (Eigen::Index r = 0; r < fit.xi.rows(); ++r) {
        std::vector<Eigen::Index> active;
        for (Eigen::Index c = 0; c < fit.xi.cols(); ++c) {
            const double v = std::abs(fit.xi(r, c));
            if (v != 0.0) {
                CHECK(v >= lambda);  // no entry inside (0, lambda)
                active.push_back(c);
            }
        }
        if (active.empty()) continue;
        // Re-solving on the active set must reproduce the row.
        Eigen::MatrixXd sub(lib.matrix.rows(), static_cast<Eigen::Index>(active.size()));
        for (std::size_t k = 0; k < active.size(); ++k)
            sub.col(static_cast<Eigen::Index>(k)) = lib.matrix.col(active[k]);
        const Eigen::VectorXd again = sub.completeOrthogonalDecomposition().solve(y.col(r));
        for (std::size_t k = 0; k < active.size(); ++k) {
            CHECK(std::abs(again(static_cast<Eigen::Index>(k)) - fit.xi(r, active[k])) <=
                  1e-8 * std::max(1.0, std::abs(fit.xi(r, active[k]))));
            CHECK(std::abs(again(static_cast<Eigen::Index>(k))) >= lambda);
        }
    }
}

TEST_CASE("stls: parallel result equals serial result") {
    std::mt19937_64 rng(25);
    auto lib = random_library(rng, 500, 14);
    std::normal_distribution<double> g;
    Eigen::MatrixXd y(500, 10);
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        for (Eigen::Index j = 0; j < y.cols(); ++j) y(i, j) = g(rng);
    const auto par = stls(lib, y, 0.03);
    const auto ser = stls_serial(lib, y, 0.03);
    CHECK(par.xi == ser.xi);
    CHECK(par.iterations == ser.iterations);
}

TEST_CASE("stls: input validation") {
    std::mt19937_64 rng(26);
    auto lib = random_library(rng, 100, 5);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(99, 2);
    CHECK_THROWS_AS(stls(lib, y, 0.1), ValidationError);  // row mismatch
    lib.matrix.col(3).setZero();
    Eigen::MatrixXd y2 = Eigen::MatrixXd::Zero(100, 2);
    CHECK_THROWS_AS(stls(lib, y2, 0.1), ValidationError);  // zero column
}

TEST_CASE("extract_zeta: squared magnitudes and device mapping") {
    const SystemModel model = testing::desk_model();
    const StateLayout layout = state_layout(model);

    CoefficientMatrix xi;
    xi.xi = Eigen::MatrixXd::Zero(10, 17);
    xi.column_spec.resize(17);
    xi.column_spec[13] = {FeatureKind::Sin, "sin(0.5Hz)", -1, 0, 0.5};
    xi.column_spec[14] = {FeatureKind::Cos, "cos(0.5Hz)", -1, 0, 0.5};
    xi.column_spec[15] = {FeatureKind::Sin, "sin(1.1Hz)", -1, 1, 1.1};
    xi.column_spec[16] = {FeatureKind::Cos, "cos(1.1Hz)", -1, 1, 1.1};

    // 3-4-5 on g1's omega row at frequency 0, and a lone IBR hit at frequency 1.
    xi.xi(layout.omega_index(1), 13) = 3.0;
    xi.xi(layout.omega_index(1), 14) = 4.0;
    xi.xi(layout.theta_index(0), 15) = 2.0;

    const auto score = extract_zeta(xi, layout, {0.5, 1.1});
    CHECK(score.zeta.rows() == 2);
    CHECK(score.zeta.cols() == 6);
    CHECK(score.zeta(0, 1) == doctest::Approx(25.0));
    CHECK(score.zeta(1, 4) == doctest::Approx(4.0));
    CHECK(score.ranking.front().score == doctest::Approx(25.0));
    CHECK(score.devices[score.ranking.front().device] == "g1");

    // Zero matrix → zero zeta, ranking populated with zeros.
    CoefficientMatrix zero = xi;
    zero.xi.setZero();
    const auto zscore = extract_zeta(zero, layout, {0.5, 1.1});
    CHECK(zscore.zeta.cwiseAbs().maxCoeff() == 0.0);
    CHECK_FALSE(locate_source(zscore).source_found);
}

TEST_CASE("extract_zeta: nonnegative for arbitrary coefficients") {
    const SystemModel model = testing::desk_model();
    const StateLayout layout = state_layout(model);
    std::mt19937_64 rng(31);
    std::normal_distribution<double> g;
    CoefficientMatrix xi;
    xi.xi.resize(10, 15);
    for (Eigen::Index i = 0; i < xi.xi.rows(); ++i)
        for (Eigen::Index j = 0; j < xi.xi.cols(); ++j) xi.xi(i, j) = g(rng);
    xi.column_spec.resize(15);
    xi.column_spec[13] = {FeatureKind::Sin, "sin(0.7Hz)", -1, 0, 0.7};
    xi.column_spec[14] = {FeatureKind::Cos, "cos(0.7Hz)", -1, 0, 0.7};
    const auto score = extract_zeta(xi, layout, {0.7});
    CHECK(score.zeta.minCoeff() >= 0.0);
}

TEST_CASE("extract_zeta: missing trig columns are rejected") {
    const SystemModel model = testing::desk_model();
    const StateLayout layout = state_layout(model);
    CoefficientMatrix xi;
    xi.xi = Eigen::MatrixXd::Zero(10, 13);
    xi.column_spec.resize(13);  // no trig descriptors
    CHECK_THROWS_AS(extract_zeta(xi, layout, {0.5}), ValidationError);
}

TEST_CASE("locate_source: dominance and ties") {
    SourceScore score;
    score.devices = {"g0", "g1"};
    score.frequencies_hz = {0.379};
    score.zeta = Eigen::MatrixXd::Zero(1, 2);
    score.zeta(0, 1) = 9.0;
    score.ranking = {{1, 0, 9.0}, {0, 0, 0.0}};
    const auto res = locate_source(score);
    CHECK(res.source_found);
    CHECK(res.device_id == "g1");
    CHECK(std::isinf(res.dominance_ratio));

    SourceScore tie = score;
    tie.zeta(0, 0) = 9.0;
    tie.ranking = {{0, 0, 9.0}, {1, 0, 9.0}};
    const auto tied = locate_source(tie);
    REQUIRE(tied.top.size() == 2);
    CHECK(tied.top[0].device == 0);  // deterministic tie-break order
    CHECK(tied.top[1].device == 1);
}

TEST_CASE("end-to-end: zeta argmax finds the injected device (noiseless)") {
    SystemModel model = testing::desk_model();
    Scenario sc = testing::scenario_base(50.0, 77);
    sc.process_noise_snr_db.reset();
    sc.injections = {{"ibr1", FoChannel::IbrVq, 0.614, 0.0222, 0.4, 5.0, 1e9}};
    const auto window = desk_window(model, sc);  // sigma = 0: deterministic path
    const StateLayout layout = state_layout(model);

    const auto spectra = compute_spectra(window, {"ibr0.vq", "ibr1.vq"});
    const auto freqs = detect_fo_frequencies(spectra, {}, 3);
    REQUIRE(!freqs.empty());
    const auto lib = build_library(window, freqs, layout);
    const auto dx = build_derivatives(window, layout);
    const auto xi = stls(lib, dx, 0.006);
    const auto score = extract_zeta(xi, layout, lib.frequencies_hz);
    const auto res = locate_source(score);
    REQUIRE(res.source_found);
    CHECK(res.device_id == "ibr1");
    CHECK(std::abs(res.frequency_hz - 0.614) <= 0.025);
}

TEST_CASE("column-permutation equivariance of zeta") {
    SystemModel model = testing::with_load_noise(testing::desk_model(), 1e-4);
    Scenario sc = testing::ibr_fo_scenario(0.614, 55);
    const auto window = desk_window(model, sc);
    const StateLayout layout = state_layout(model);
    const auto spectra = compute_spectra(window, {"ibr0.vq", "ibr1.vq"});
    const auto freqs = detect_fo_frequencies(spectra, {}, 3);
    REQUIRE(!freqs.empty());
    auto lib = build_library(window, freqs, layout);
    const auto dx = build_derivatives(window, layout);
    const auto base = extract_zeta(stls(lib, dx, 0.006), layout, lib.frequencies_hz);

    // Reverse the column order (keeping the spec in sync) and re-run.
    FeatureLibrary shuffled = lib;
    const Eigen::Index q = lib.matrix.cols();
    for (Eigen::Index c = 0; c < q; ++c) {
        shuffled.matrix.col(c) = lib.matrix.col(q - 1 - c);
        shuffled.column_spec[static_cast<std::size_t>(c)] =
            lib.column_spec[static_cast<std::size_t>(q - 1 - c)];
    }
    const auto permuted = extract_zeta(stls(shuffled, dx, 0.006), layout,
                                       shuffled.frequencies_hz);
    CHECK((base.zeta - permuted.zeta).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("adaptive_threshold: clean data converges in one round") {
    SystemModel model = testing::with_load_noise(testing::desk_model(), 0.0);
    Scenario sc = testing::gen_fo_scenario(88);
    const auto window = desk_window(model, sc);
    const StateLayout layout = state_layout(model);
    const auto spectra = compute_spectra(window, {"ibr0.vq", "ibr1.vq"});
    const auto freqs = detect_fo_frequencies(spectra, {}, 3);
    REQUIRE(!freqs.empty());
    const auto lib = build_library(window, freqs, layout);
    const auto dx = build_derivatives(window, layout);

    const auto fit = adaptive_threshold(lib, dx, 0.006, 3, layout);
    CHECK_FALSE(fit.escalation_capped);
    CHECK(fit.lambda_used == doctest::Approx(0.006));
    const auto score = extract_zeta(fit, layout, lib.frequencies_hz);
    const auto nonzero = (score.zeta.array() > 1e-12).count();
    CHECK(nonzero >= 1);
    CHECK(nonzero <= 3);
}

TEST_CASE("adaptive_threshold: pure noise yields no surviving source") {
    const SystemModel model = testing::with_load_noise(testing::desk_model(), 1e-3);
    Scenario sc = testing::ambient_scenario(66);
    const auto window = desk_window(model, sc);
    const StateLayout layout = state_layout(model);
    const auto lib = build_library(window, freqs_of({0.53, 1.07}), layout);
    const auto dx = build_derivatives(window, layout);
    const auto fit = adaptive_threshold(lib, dx, 0.006, 3, layout);
    const auto score = extract_zeta(fit, layout, lib.frequencies_hz);
    CHECK_FALSE(locate_source(score).source_found);
}

TEST_CASE("adaptive_threshold: escalation prunes an overfull zeta") {
    // Draft a target with five above-threshold sinusoid cells; the escalation
    // must end with at most three and agree with a direct stls re-run.
    const SystemModel model = testing::desk_model();
    const StateLayout layout = state_layout(model);
    std::mt19937_64 rng(91);
    std::normal_distribution<double> g;

    const Eigen::Index rows = 1200;
    MeasurementWindow w;
    w.t0 = 0.0;
    w.dt = 1.0 / 60.0;
    w.samples.resize(rows + 1, 12);
    for (Eigen::Index i = 0; i <= rows; ++i)
        for (Eigen::Index j = 0; j < 12; ++j) w.samples(i, j) = 0.01 * g(rng);
    w.channel_names = {"g0.delta", "g1.delta", "g2.delta", "g3.delta",
                       "ibr0.theta", "ibr1.theta", "g0.omega", "g1.omega",
                       "g2.omega", "g3.omega", "ibr0.vq", "ibr1.vq"};
    const auto lib = build_library(remove_mean(w), freqs_of({0.4, 0.9}), layout);

    Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(rows, 10);
    const Eigen::Index trig = lib.trig_base();
    // Five devices driven at distinct strengths.
    dx.col(layout.omega_index(0)) += 0.9 * lib.matrix.col(trig);
    dx.col(layout.omega_index(1)) += 0.5 * lib.matrix.col(trig + 1);
    dx.col(layout.omega_index(2)) += 0.3 * lib.matrix.col(trig + 2);
    dx.col(layout.theta_index(0)) += 0.2 * lib.matrix.col(trig + 3);
    dx.col(layout.theta_index(1)) += 0.1 * lib.matrix.col(trig);

    const auto fit = adaptive_threshold(lib, dx, 0.006, 3, layout);
    const auto score = extract_zeta(fit, layout, lib.frequencies_hz);
    const auto nonzero = (score.zeta.array() > 1e-12).count();
    CHECK(nonzero <= 3);
    CHECK(fit.lambda_used > 0.006);
    // Consistency: a direct run at the final lambda reproduces the result.
    const auto direct = stls(lib, dx, fit.lambda_used);
    CHECK((direct.xi - fit.xi).cwiseAbs().maxCoeff() == 0.0);
}
