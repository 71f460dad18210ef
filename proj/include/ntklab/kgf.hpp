#pragma once

// Kernel gradient flow d/dt f_t(x) = -(1/n) k(x, X) (f_t(X) - Y) started from an arbitrary
// initial function f_0, solved in closed form through the Gram eigensystem:
//
//   f_t(x) = f_0(x) - k(x, X) Phi_t(K) (f_0(X) - Y),   Phi_t(lambda) = (1 - exp(-t lambda / n)) / lambda.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntklab/errors.hpp"
#include "ntklab/kernels.hpp"
#include "ntklab/random.hpp"
#include "ntklab/spectral.hpp"
#include "ntklab/util.hpp"

namespace ntklab {

using PointFunction = std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)>;

inline PointFunction zero_function() {
    return [](const Eigen::Ref<const Eigen::VectorXd>&) { return 0.0; };
}

/// A function known only on a finite table of points (e.g. one GP draw over X_train and a query grid).
/// Lookup is by exact coordinates; any other point is an error.
class TabulatedFunction {
public:
    TabulatedFunction(Points points, Eigen::VectorXd values)
        : points_(std::move(points)), values_(std::move(values)) {
        if (points_.rows() != values_.size()) throw DimensionError("TabulatedFunction: size mismatch");
    }

    double operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        for (Eigen::Index i = 0; i < points_.rows(); ++i)
            if (points_.row(i).size() == x.size() && (points_.row(i).transpose() - x).cwiseAbs().maxCoeff() == 0.0)
                return values_(i);
        throw DomainError("TabulatedFunction: point not in table");
    }

    [[nodiscard]] const Points& points() const noexcept { return points_; }
    [[nodiscard]] const Eigen::VectorXd& values() const noexcept { return values_; }

private:
    Points points_;
    Eigen::VectorXd values_;
};

/// Immutable after construction; predict() is const and safe to call concurrently.
class KgfPredictor {
public:
    KgfPredictor(KernelSpec spec, Points X_train, Eigen::VectorXd Y, Eigen::VectorXd f0_at_train, PointFunction f0_query)
        : spec_(spec),
          X_(std::move(X_train)),
          Y_(std::move(Y)),
          f0_train_(std::move(f0_at_train)),
          f0_query_(std::move(f0_query)) {
        if (X_.rows() < 1) throw ConfigError("KgfPredictor: empty training set");
        if (Y_.size() != X_.rows() || f0_train_.size() != X_.rows())
            throw DimensionError("KgfPredictor: Y and f0_at_train must have one entry per training point");
        if (!f0_query_) throw ConfigError("KgfPredictor: f0_query must be callable");
        eig_ = std::make_shared<const EigenSystem>(eig_sym(gram(spec_, X_)));
        refresh_projection();
    }

    [[nodiscard]] const KernelSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] const Points& X_train() const noexcept { return X_; }
    [[nodiscard]] const Eigen::VectorXd& Y() const noexcept { return Y_; }
    [[nodiscard]] const Eigen::VectorXd& f0_at_train() const noexcept { return f0_train_; }
    [[nodiscard]] const PointFunction& f0_query() const noexcept { return f0_query_; }
    [[nodiscard]] const EigenSystem& eig() const noexcept { return *eig_; }
    [[nodiscard]] Eigen::Index n() const noexcept { return X_.rows(); }

    /// Coefficients a_t with f_t(x) = f_0(x) - k(x, X) a_t.
    [[nodiscard]] Eigen::VectorXd flow_coefficients(double t) const {
        const Eigen::VectorXd w = flow_weights(*eig_, t, n());
        return eig_->vectors * w.cwiseProduct(residual_projection_);
    }

    [[nodiscard]] double predict(double t, const Eigen::Ref<const Eigen::VectorXd>& x) const {
        if (x.size() != X_.cols()) throw DimensionError("predict: query dimension mismatch");
        const Eigen::VectorXd a = flow_coefficients(t);
        Eigen::VectorXd k(n());
        for (Eigen::Index i = 0; i < n(); ++i) k(i) = kernel_eval(spec_, x, X_.row(i).transpose());
        return f0_query_(x) - k.dot(a);
    }

    /// Predictions at every row of Q.
    [[nodiscard]] Eigen::VectorXd predict_batch(double t, const Points& Q) const {
        return predict_batch(t, Q, cross_gram(spec_, Q, X_), query_f0(Q));
    }

    /// Same, with k(Q, X) and f_0(Q) precomputed (for repeated time sweeps).
    [[nodiscard]] Eigen::VectorXd predict_batch(double t, const Points& Q, const Eigen::MatrixXd& k_QX,
                                                const Eigen::VectorXd& f0_Q) const {
        if (k_QX.rows() != Q.rows() || k_QX.cols() != n() || f0_Q.size() != Q.rows())
            throw DimensionError("predict_batch: precomputed shapes do not match");
        return f0_Q - k_QX * flow_coefficients(t);
    }

    /// f_t(X_train), using the Gram eigensystem directly: f_0(X) - V diag(1 - e^{-t lambda/n}) V^T (f_0(X) - Y).
    [[nodiscard]] Eigen::VectorXd predict_train(double t) const {
        Eigen::VectorXd decay(n());
        for (Eigen::Index i = 0; i < n(); ++i)
            decay(i) = -std::expm1(-t * std::max(0.0, eig_->values(i)) / static_cast<double>(n()));
        return f0_train_ - eig_->vectors * decay.cwiseProduct(residual_projection_);
    }

    [[nodiscard]] Eigen::VectorXd query_f0(const Points& Q) const {
        Eigen::VectorXd out(Q.rows());
        for (Eigen::Index i = 0; i < Q.rows(); ++i) out(i) = f0_query_(Q.row(i).transpose());
        return out;
    }

    /// Predictor with f_0 == 0 and targets Y - f_0(X), sharing this eigensystem.
    [[nodiscard]] KgfPredictor shift_equivalent() const {
        KgfPredictor out(*this);
        out.Y_ = Y_ - f0_train_;
        out.f0_train_ = Eigen::VectorXd::Zero(n());
        out.f0_query_ = zero_function();
        out.refresh_projection();
        return out;
    }

private:
    void refresh_projection() { residual_projection_ = eig_->vectors.transpose() * (f0_train_ - Y_); }

    KernelSpec spec_;
    Points X_;
    Eigen::VectorXd Y_;
    Eigen::VectorXd f0_train_;
    PointFunction f0_query_;
    std::shared_ptr<const EigenSystem> eig_;
    Eigen::VectorXd residual_projection_;
};

inline KgfPredictor build_predictor(const KernelSpec& spec, const Points& X_train, const Eigen::VectorXd& Y,
                                    const Eigen::VectorXd& f0_at_train, PointFunction f0_query) {
    return KgfPredictor(spec, X_train, Y, f0_at_train, std::move(f0_query));
}

inline KgfPredictor shift_equivalent(const KgfPredictor& pred) { return pred.shift_equivalent(); }

struct RiskEstimate {
    double value = 0.0;
    double std_error = 0.0;
    int n_mc = 0;
    double t = 0.0;
};

inline constexpr int kMinMonteCarlo = 100;

/// Mean and standard error of squared errors, summed with compensation so the result
/// does not depend on evaluation order.
inline RiskEstimate risk_from_errors(const Eigen::Ref<const Eigen::VectorXd>& errors, double t = 0.0) {
    const Eigen::Index m = errors.size();
    if (m < 1) throw ConfigError("risk_from_errors: no samples");
    CompensatedSum s1, s2;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double e2 = errors(i) * errors(i);
        s1.add(e2);
        s2.add(e2 * e2);
    }
    const double md = static_cast<double>(m);
    const double mean = s1.value() / md;
    const double var = m > 1 ? std::max(0.0, (s2.value() - md * mean * mean) / (md - 1.0)) : 0.0;
    return RiskEstimate{mean, std::sqrt(var / md), static_cast<int>(m), t};
}

/// Draws n points with a seeded generator.
using PointSampler = std::function<Points(int n, std::uint64_t seed)>;

/// Monte Carlo estimate of ||predict_fn - f_star||^2 in L2 of the sampler's distribution.
inline RiskEstimate excess_risk(const PointFunction& predict_fn, const PointFunction& f_star, const PointSampler& sampler,
                                int n_mc, std::uint64_t seed, double t = 0.0) {
    if (n_mc < kMinMonteCarlo) throw ConfigError("excess_risk: n_mc must be >= 100");
    const Points P = sampler(n_mc, seed);
    if (P.rows() != n_mc) throw DimensionError("excess_risk: sampler returned the wrong number of points");
    Eigen::VectorXd err(n_mc);
    for (int i = 0; i < n_mc; ++i) {
        const Eigen::VectorXd x = P.row(i).transpose();
        err(i) = predict_fn(x) - f_star(x);
    }
    return risk_from_errors(err, t);
}

struct EarlyStopResult {
    double t_best = 0.0;
    std::size_t best_index = 0;
    std::vector<double> risk_curve;
};

/// Argmin of a risk curve; ties resolve to the earliest index.
inline std::size_t argmin_first(const std::vector<double>& curve) {
    if (curve.empty()) throw EmptyGrid("argmin over an empty curve");
    std::size_t best = 0;
    for (std::size_t i = 1; i < curve.size(); ++i)
        if (curve[i] < curve[best]) best = i;
    return best;
}

/// Selects the grid time with minimal mean squared test error.
inline EarlyStopResult early_stop(const KgfPredictor& pred, const std::vector<double>& t_grid, const Points& test_X,
                                  const Eigen::VectorXd& test_Y) {
    if (t_grid.empty()) throw EmptyGrid("early_stop: empty time grid");
    if (test_X.rows() == 0) throw EmptyGrid("early_stop: empty test set");
    if (test_Y.size() != test_X.rows()) throw DimensionError("early_stop: test size mismatch");
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        if (!(t_grid[i] > t_grid[i - 1])) throw ConfigError("early_stop: time grid must be increasing");
    if (!(t_grid.front() > 0.0)) throw ConfigError("early_stop: times must be positive");

    const Eigen::MatrixXd k_QX = cross_gram(pred.spec(), test_X, pred.X_train());
    const Eigen::VectorXd f0_Q = pred.query_f0(test_X);
    EarlyStopResult out;
    out.risk_curve.reserve(t_grid.size());
    for (double t : t_grid) {
        const Eigen::VectorXd err = pred.predict_batch(t, test_X, k_QX, f0_Q) - test_Y;
        out.risk_curve.push_back(risk_from_errors(err, t).value);
    }
    out.best_index = argmin_first(out.risk_curve);
    out.t_best = t_grid[out.best_index];
    return out;
}

/// n log-spaced times in [t_min, t_max].
inline std::vector<double> log_time_grid(double t_min, double t_max, int n) {
    if (n < 2 || !(t_min > 0.0) || !(t_max > t_min)) throw ConfigError("log_time_grid: invalid arguments");
    std::vector<double> out(static_cast<std::size_t>(n));
    const double a = std::log(t_min), b = std::log(t_max);
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * i / (n - 1.0));
    return out;
}

}  // namespace ntklab
