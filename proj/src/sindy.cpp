#include "folo/sindy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace folo {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

constexpr double kTwoPi = 2.0 * M_PI;
constexpr double kZetaZeroGuard = 1e-12;
constexpr int kStlsIterationCap = 50;
constexpr int kEscalationRoundCap = 20;

std::string trig_name(const char* fn, double f_hz) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s(%gHz)", fn, f_hz);
    return buf;
}

}  // namespace

FeatureLibrary build_library(const MeasurementWindow& window, const DetectedFrequencies& freqs,
                             const StateLayout& layout) {
    window.validate();
    require(!freqs.empty(), "no detected frequencies; cannot build a library");
    require(freqs.size() <= 3, "at most 3 detected frequencies are supported");

    const auto iota = static_cast<Eigen::Index>(layout.n_generators);
    const auto r = static_cast<Eigen::Index>(layout.n_ibrs);
    const auto l = static_cast<Eigen::Index>(freqs.size());
    const Eigen::Index rows = window.n_samples() - 1;
    const Eigen::Index q = 1 + 2 * iota + 2 * r + 2 * l;

    FeatureLibrary lib;
    lib.frequencies_hz = freqs.values_hz;
    lib.matrix.resize(rows, q);
    lib.column_spec.reserve(static_cast<std::size_t>(q));

    Eigen::Index col = 0;
    lib.matrix.col(col).setOnes();
    lib.column_spec.push_back({FeatureKind::Constant, "1", -1, -1, 0.0});
    ++col;

    for (Eigen::Index i = 0; i < iota; ++i, ++col) {
        const auto& ch = layout.states[layout.delta_index(i)];
        lib.matrix.col(col) = window.channel(ch.name).head(rows);
        lib.column_spec.push_back({FeatureKind::StateDelta, ch.name, ch.device_index, -1, 0.0});
    }
    for (Eigen::Index i = 0; i < iota; ++i, ++col) {
        const auto& ch = layout.states[layout.omega_index(i)];
        lib.matrix.col(col) = window.channel(ch.name).head(rows);
        lib.column_spec.push_back({FeatureKind::StateOmega, ch.name, ch.device_index, -1, 0.0});
    }
    for (Eigen::Index j = 0; j < r; ++j, ++col) {
        const auto& ch = layout.inputs[static_cast<std::size_t>(j)];
        lib.matrix.col(col) = window.channel(ch.name).head(rows);
        lib.column_spec.push_back({FeatureKind::InputVq, ch.name, ch.device_index, -1, 0.0});
    }
    for (Eigen::Index j = 0; j < r; ++j, ++col) {
        const auto& ch = layout.inputs[static_cast<std::size_t>(j)];
        lib.matrix.col(col) =
            running_trapezoid(window.channel(ch.name), window.dt).head(rows);
        lib.column_spec.push_back(
            {FeatureKind::InputVqI, ch.name + "I", ch.device_index, -1, 0.0});
    }
    for (Eigen::Index f = 0; f < l; ++f) {
        const double w = kTwoPi * freqs.values_hz[static_cast<std::size_t>(f)];
        for (Eigen::Index k = 0; k < rows; ++k) {
            const double t = window.t0 + static_cast<double>(k) * window.dt;
            lib.matrix(k, col) = std::sin(w * t);
            lib.matrix(k, col + 1) = std::cos(w * t);
        }
        const double f_hz = freqs.values_hz[static_cast<std::size_t>(f)];
        lib.column_spec.push_back(
            {FeatureKind::Sin, trig_name("sin", f_hz), -1, static_cast<int>(f), f_hz});
        lib.column_spec.push_back(
            {FeatureKind::Cos, trig_name("cos", f_hz), -1, static_cast<int>(f), f_hz});
        col += 2;
    }
    return lib;
}

Eigen::MatrixXd build_derivatives(const MeasurementWindow& window, const StateLayout& layout,
                                  int smoothing_width) {
    window.validate();
    const Eigen::Index rows = window.n_samples() - 1;
    Eigen::MatrixXd dx(rows, static_cast<Eigen::Index>(layout.state_dim()));
    for (std::size_t s = 0; s < layout.states.size(); ++s) {
        Eigen::VectorXd series = window.channel(layout.states[s].name);
        if (smoothing_width > 1) series = moving_average(series, smoothing_width);
        dx.col(static_cast<Eigen::Index>(s)) = forward_difference(series, window.dt);
    }
    return dx;
}

namespace {

struct RowResult {
    Eigen::VectorXd xi;
    int iterations = 0;
    bool converged = true;
};

RowResult stls_row(const Eigen::MatrixXd& theta, const Eigen::VectorXd& y, double lambda) {
    const Eigen::Index q = theta.cols();
    RowResult res;
    res.xi = Eigen::VectorXd::Zero(q);

    Eigen::VectorXd coeffs =
        theta.completeOrthogonalDecomposition().solve(y);
    std::vector<bool> active(static_cast<std::size_t>(q));
    for (Eigen::Index i = 0; i < q; ++i)
        active[static_cast<std::size_t>(i)] = std::abs(coeffs(i)) >= lambda;

    for (res.iterations = 1; res.iterations <= kStlsIterationCap; ++res.iterations) {
        const Eigen::Index n_active = static_cast<Eigen::Index>(
            std::count(active.begin(), active.end(), true));
        Eigen::VectorXd next = Eigen::VectorXd::Zero(q);
        if (n_active > 0) {
            Eigen::MatrixXd sub(theta.rows(), n_active);
            Eigen::Index c = 0;
            for (Eigen::Index i = 0; i < q; ++i)
                if (active[static_cast<std::size_t>(i)]) sub.col(c++) = theta.col(i);
            const Eigen::VectorXd sol = sub.completeOrthogonalDecomposition().solve(y);
            c = 0;
            for (Eigen::Index i = 0; i < q; ++i)
                if (active[static_cast<std::size_t>(i)]) next(i) = sol(c++);
        }
        std::vector<bool> next_active(static_cast<std::size_t>(q));
        for (Eigen::Index i = 0; i < q; ++i) {
            const bool keep = std::abs(next(i)) >= lambda;
            next_active[static_cast<std::size_t>(i)] = keep;
            if (!keep) next(i) = 0.0;
        }
        if (next_active == active) {
            res.xi = next;
            return res;
        }
        active = std::move(next_active);
        res.xi = next;
    }
    res.converged = false;
    return res;
}

CoefficientMatrix stls_impl(const FeatureLibrary& library, const Eigen::MatrixXd& derivatives,
                            double lambda, bool parallel) {
    require(lambda > 0.0, "stls threshold must be > 0");
    require(library.matrix.rows() == derivatives.rows(),
            "library and derivative row counts must match");
    require(library.matrix.allFinite() && derivatives.allFinite(),
            "stls inputs must be finite");
    for (Eigen::Index c = 0; c < library.matrix.cols(); ++c)
        require(library.matrix.col(c).cwiseAbs().maxCoeff() > 0.0,
                "library column " + std::to_string(c) + " is identically zero");

    const Eigen::Index n_rows = derivatives.cols();
    CoefficientMatrix out;
    out.xi.resize(n_rows, library.matrix.cols());
    out.column_spec = library.column_spec;
    out.lambda_used = lambda;
    out.iterations.assign(static_cast<std::size_t>(n_rows), 0);

    std::vector<RowResult> results(static_cast<std::size_t>(n_rows));
    if (parallel) {
#pragma omp parallel for schedule(static)
        for (Eigen::Index k = 0; k < n_rows; ++k)
            results[static_cast<std::size_t>(k)] =
                stls_row(library.matrix, derivatives.col(k), lambda);
    } else {
        for (Eigen::Index k = 0; k < n_rows; ++k)
            results[static_cast<std::size_t>(k)] =
                stls_row(library.matrix, derivatives.col(k), lambda);
    }

    for (Eigen::Index k = 0; k < n_rows; ++k) {
        const auto& r = results[static_cast<std::size_t>(k)];
        out.xi.row(k) = r.xi.transpose();
        out.iterations[static_cast<std::size_t>(k)] = r.iterations;
        if (!r.converged) out.converged = false;
    }
    return out;
}

}  // namespace

CoefficientMatrix stls(const FeatureLibrary& library, const Eigen::MatrixXd& derivatives,
                       double lambda) {
    return stls_impl(library, derivatives, lambda, true);
}

CoefficientMatrix stls_serial(const FeatureLibrary& library, const Eigen::MatrixXd& derivatives,
                              double lambda) {
    return stls_impl(library, derivatives, lambda, false);
}

SourceScore extract_zeta(const CoefficientMatrix& xi, const StateLayout& layout,
                         const std::vector<double>& frequencies_hz) {
    const auto iota = static_cast<Eigen::Index>(layout.n_generators);
    const auto r = static_cast<Eigen::Index>(layout.n_ibrs);
    const auto l = static_cast<Eigen::Index>(frequencies_hz.size());
    require(l >= 1, "extract_zeta needs at least one frequency");
    require(xi.xi.rows() == 2 * iota + r, "coefficient matrix row count mismatch");

    // Locate the trig columns per frequency index.
    std::vector<Eigen::Index> sin_col(static_cast<std::size_t>(l), -1);
    std::vector<Eigen::Index> cos_col(static_cast<std::size_t>(l), -1);
    for (std::size_t c = 0; c < xi.column_spec.size(); ++c) {
        const auto& d = xi.column_spec[c];
        if (d.kind == FeatureKind::Sin) sin_col.at(static_cast<std::size_t>(d.frequency_index)) =
            static_cast<Eigen::Index>(c);
        if (d.kind == FeatureKind::Cos) cos_col.at(static_cast<std::size_t>(d.frequency_index)) =
            static_cast<Eigen::Index>(c);
    }
    for (Eigen::Index f = 0; f < l; ++f)
        require(sin_col[static_cast<std::size_t>(f)] >= 0 &&
                    cos_col[static_cast<std::size_t>(f)] >= 0,
                "coefficient matrix lacks trig columns for frequency index " +
                    std::to_string(f));

    SourceScore score;
    score.frequencies_hz = frequencies_hz;
    score.zeta = Eigen::MatrixXd::Zero(l, iota + r);
    for (Eigen::Index i = 0; i < iota; ++i)
        score.devices.push_back(layout.states[layout.delta_index(i)].device_id);
    for (Eigen::Index j = 0; j < r; ++j)
        score.devices.push_back(layout.states[layout.theta_index(j)].device_id);

    const auto sq = [](double v) { return v * v; };
    for (Eigen::Index f = 0; f < l; ++f) {
        const Eigen::Index sc = sin_col[static_cast<std::size_t>(f)];
        const Eigen::Index cc = cos_col[static_cast<std::size_t>(f)];
        for (Eigen::Index g = 0; g < iota; ++g) {
            const Eigen::Index delta_row = static_cast<Eigen::Index>(layout.delta_index(g));
            const Eigen::Index omega_row = static_cast<Eigen::Index>(layout.omega_index(g));
            score.zeta(f, g) = sq(xi.xi(delta_row, sc)) + sq(xi.xi(delta_row, cc)) +
                               sq(xi.xi(omega_row, sc)) + sq(xi.xi(omega_row, cc));
        }
        for (Eigen::Index j = 0; j < r; ++j) {
            const Eigen::Index theta_row = static_cast<Eigen::Index>(layout.theta_index(j));
            score.zeta(f, iota + j) = sq(xi.xi(theta_row, sc)) + sq(xi.xi(theta_row, cc));
        }
    }

    for (Eigen::Index f = 0; f < l; ++f)
        for (Eigen::Index d = 0; d < iota + r; ++d)
            score.ranking.push_back({static_cast<int>(d), static_cast<int>(f),
                                     score.zeta(f, d)});
    std::sort(score.ranking.begin(), score.ranking.end(), [](const auto& a, const auto& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.device != b.device) return a.device < b.device;
        return a.frequency < b.frequency;
    });
    return score;
}

LocalizationResult locate_source(const SourceScore& score) {
    require(score.zeta.size() > 0, "locate_source needs a non-empty zeta");
    LocalizationResult res;
    res.ranking = score.ranking;

    const double top_score = score.ranking.front().score;
    if (top_score <= kZetaZeroGuard) {
        res.source_found = false;
        return res;
    }
    res.source_found = true;
    double second = 0.0;
    for (const auto& e : score.ranking) {
        if (e.score == top_score) {
            res.top.push_back(e);
        } else {
            second = e.score;
            break;
        }
    }
    const auto& best = res.top.front();
    res.device_id = score.devices[static_cast<std::size_t>(best.device)];
    res.frequency_hz = score.frequencies_hz[static_cast<std::size_t>(best.frequency)];
    res.score = top_score;
    res.dominance_ratio = second > 0.0 ? top_score / second
                                       : std::numeric_limits<double>::infinity();
    return res;
}

CoefficientMatrix adaptive_threshold(const FeatureLibrary& library,
                                     const Eigen::MatrixXd& derivatives, double lambda0,
                                     int max_nonzero, const StateLayout& layout) {
    require(lambda0 > 0.0, "adaptive threshold lambda0 must be > 0");
    require(max_nonzero >= 1, "max_nonzero must be >= 1");

    double lambda = lambda0;
    CoefficientMatrix result;
    for (int round = 0; round < kEscalationRoundCap; ++round) {
        result = stls(library, derivatives, lambda);
        const SourceScore score = extract_zeta(result, layout, library.frequencies_hz);
        const auto nonzero = (score.zeta.array() > kZetaZeroGuard).count();
        if (nonzero <= max_nonzero) return result;
        lambda *= 1.5;
    }
    result.escalation_capped = true;
    return result;
}

}  // namespace folo
