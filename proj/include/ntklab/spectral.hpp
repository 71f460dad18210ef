#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntklab/errors.hpp"

namespace ntklab {

/// Eigenpairs of a symmetric matrix, eigenvalues descending, eigenvectors as columns.
/// Each column is signed so that its largest-magnitude entry is positive.
struct EigenSystem {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
    /// Eigenvalues below -1e-8 * n; nonzero means the input was not numerically PSD.
    int negative_count = 0;

    [[nodiscard]] Eigen::Index size() const noexcept { return values.size(); }

    /// Eigenvalues with negatives clipped to zero.
    [[nodiscard]] Eigen::VectorXd floored() const { return values.cwiseMax(0.0); }

    [[nodiscard]] Eigen::MatrixXd reconstruct() const {
        return vectors * values.asDiagonal() * vectors.transpose();
    }
};

inline constexpr double kSymmetryTolerance = 1e-10;

inline EigenSystem eig_sym(const Eigen::MatrixXd& G) {
    if (G.rows() != G.cols()) throw DimensionError("eig_sym: matrix is not square");
    const Eigen::Index n = G.rows();
    if (n == 0) throw DimensionError("eig_sym: empty matrix");
    if (!G.allFinite()) throw DomainError("eig_sym: non-finite entries");
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = j + 1; i < n; ++i)
            if (std::abs(G(i, j) - G(j, i)) > kSymmetryTolerance)
                throw AsymmetryError("eig_sym: asymmetric at (" + std::to_string(i) + ", " + std::to_string(j) + ")");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(G, Eigen::ComputeEigenvectors);
    if (solver.info() != Eigen::Success) throw ConvergenceError("eig_sym: eigensolver did not converge");

    EigenSystem out;
    out.values = solver.eigenvalues().reverse();
    out.vectors = solver.eigenvectors().rowwise().reverse();
    for (Eigen::Index k = 0; k < n; ++k) {
        Eigen::Index arg = 0;
        out.vectors.col(k).cwiseAbs().maxCoeff(&arg);
        if (out.vectors(arg, k) < 0.0) out.vectors.col(k) *= -1.0;
    }
    const double floor = -1e-8 * static_cast<double>(n);
    out.negative_count = static_cast<int>((out.values.array() < floor).count());
    return out;
}

/// Eigenvalues below this (relative to max(1, lambda_1)) are treated as exact zeros.
inline double zero_eigenvalue_threshold(const EigenSystem& eig) {
    return 1e-12 * std::max(1.0, std::abs(eig.values(0)));
}

/// (1 - exp(-t*lambda/n)) / lambda, with the analytic limit t/n at lambda = 0.
inline double flow_weight(double lambda, double t, double n, double zero_threshold) {
    if (lambda < zero_threshold) return t / n;
    return -std::expm1(-t * lambda / n) / lambda;
}

inline Eigen::VectorXd flow_weights(const EigenSystem& eig, double t, Eigen::Index n) {
    if (!(t >= 0.0)) throw DomainError("flow time must be >= 0");
    const double thr = zero_eigenvalue_threshold(eig);
    Eigen::VectorXd w(eig.size());
    for (Eigen::Index i = 0; i < eig.size(); ++i) w(i) = flow_weight(eig.values(i), t, static_cast<double>(n), thr);
    return w;
}

/// V diag(Phi_t(lambda)) V^T: the gradient-flow factor K^{-1}(I - exp(-tK/n)) without any inversion.
inline Eigen::MatrixXd flow_factor(const EigenSystem& eig, double t, Eigen::Index n) {
    if (n != eig.size()) throw DimensionError("flow_factor: n must equal the matrix order");
    const Eigen::VectorXd w = flow_weights(eig, t, n);
    return eig.vectors * w.asDiagonal() * eig.vectors.transpose();
}

/// exp(-tK/n) assembled from the same eigenpairs.
inline Eigen::MatrixXd flow_decay(const EigenSystem& eig, double t, Eigen::Index n) {
    Eigen::VectorXd e(eig.size());
    for (Eigen::Index i = 0; i < eig.size(); ++i) e(i) = std::exp(-t * eig.values(i) / static_cast<double>(n));
    return eig.vectors * e.asDiagonal() * eig.vectors.transpose();
}

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double slope_std_error = 0.0;
    int i_min = 0;  // 1-based, inclusive
    int i_max = 0;
    /// Upper index originally requested; differs from i_max when a non-positive tail was dropped.
    int requested_i_max = 0;
    int points = 0;
};

/// Ordinary least squares of log10(y) on log10(x). Needs at least 3 points.
inline SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionError("fit_loglog: size mismatch");
    const std::size_t m = x.size();
    if (m < 3) throw RangeError("fit_loglog: need at least 3 points");
    double mx = 0.0, my = 0.0;
    std::vector<double> lx(m), ly(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw RangeError("fit_loglog: values must be positive");
        lx[i] = std::log10(x[i]);
        ly[i] = std::log10(y[i]);
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    if (sxx <= 0.0) throw RangeError("fit_loglog: abscissae are all equal");
    SlopeFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
        ssr += r * r;
    }
    fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ssr / syy, 0.0, 1.0) : 1.0;
    fit.slope_std_error = std::sqrt(ssr / static_cast<double>(m - 2) / sxx);
    fit.points = static_cast<int>(m);
    return fit;
}

inline constexpr int kMinFitPoints = 5;

/// Power-law exponent of values[i] over 1-based indices [i_min, i_max].
/// A non-positive tail shrinks the window to the last positive index before it.
inline SlopeFit decay_slope(const Eigen::Ref<const Eigen::VectorXd>& values, int i_min, int i_max) {
    if (i_min < 1 || i_max < i_min) throw RangeError("decay_slope: invalid index range");
    const int requested = i_max;
    i_max = std::min<int>(i_max, static_cast<int>(values.size()));
    int last = i_min - 1;
    for (int i = i_min; i <= i_max; ++i) {
        if (!(values(i - 1) > 0.0)) break;
        last = i;
    }
    if (last - i_min + 1 < kMinFitPoints)
        throw RangeError("decay_slope: fewer than " + std::to_string(kMinFitPoints) + " positive values in range");
    std::vector<double> x, y;
    for (int i = i_min; i <= last; ++i) {
        x.push_back(static_cast<double>(i));
        y.push_back(values(i - 1));
    }
    SlopeFit fit = fit_loglog(x, y);
    fit.i_min = i_min;
    fit.i_max = last;
    fit.requested_i_max = requested;
    return fit;
}

/// Mid-range spectrum window [max(5, 0.02 n), 0.5 n].
inline std::pair<int, int> default_fit_window(Eigen::Index n) {
    const int lo = std::max(5, static_cast<int>(0.02 * static_cast<double>(n)));
    const int hi = static_cast<int>(0.5 * static_cast<double>(n));
    return {lo, hi};
}

}  // namespace ntklab
