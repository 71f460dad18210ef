#pragma once

// Finite-dimensional draws of the infinite-width initial function (a centered GP with the
// RFK covariance) and Monte Carlo simulation of its interpolation-norm series.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "ntklab/errors.hpp"
#include "ntklab/kernels.hpp"
#include "ntklab/random.hpp"
#include "ntklab/util.hpp"

namespace ntklab {

struct GpSample {
    Points points;
    Eigen::VectorXd values;
    std::uint64_t seed = 0;
};

/// Factorizes k(P, P) + jitter*I once and draws any number of samples from it.
class GpSampler {
public:
    static constexpr double kInitialJitter = 1e-10;
    static constexpr double kMaxJitter = 1e-6;
    static constexpr double kMinSeparation = 1e-9;

    GpSampler(const KernelSpec& spec, Points points) : points_(std::move(points)) {
        if (spec.family != KernelFamily::RFK) throw ConfigError("GP initial function uses the RFK covariance");
        const Eigen::Index n = points_.rows();
        if (n < 1) throw ConfigError("sample_gp: no points");
        check_distinct();
        Eigen::MatrixXd G = gram(spec, points_);
        const double scale = G.trace() / static_cast<double>(n);
        for (double rel = kInitialJitter; rel <= kMaxJitter * 1.0000001; rel *= 10.0) {
            Eigen::MatrixXd A = G;
            A.diagonal().array() += rel * scale;
            Eigen::LLT<Eigen::MatrixXd> llt(A);
            if (llt.info() == Eigen::Success) {
                factor_ = llt.matrixL();
                jitter_ = rel * scale;
                return;
            }
        }
        throw FactorizationError("sample_gp: Gram not factorizable with jitter up to 1e-6 * trace / n");
    }

    [[nodiscard]] GpSample draw(std::uint64_t seed) const {
        Rng rng = make_rng(seed);
        const Eigen::VectorXd z = normal_vector(rng, points_.rows());
        return GpSample{points_, factor_.triangularView<Eigen::Lower>() * z, seed};
    }

    [[nodiscard]] Eigen::VectorXd draw_values(std::uint64_t seed) const { return draw(seed).values; }

    [[nodiscard]] double jitter() const noexcept { return jitter_; }
    [[nodiscard]] const Points& points() const noexcept { return points_; }
    [[nodiscard]] const Eigen::MatrixXd& factor() const noexcept { return factor_; }

private:
    void check_distinct() const {
        const Eigen::Index n = points_.rows();
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j)
                if ((points_.row(i) - points_.row(j)).norm() <= kMinSeparation)
                    throw ConfigError("sample_gp: points " + std::to_string(i) + " and " + std::to_string(j) +
                                      " coincide");
    }

    Points points_;
    Eigen::MatrixXd factor_;
    double jitter_ = 0.0;
};

inline GpSample sample_gp(const KernelSpec& spec, const Points& points, std::uint64_t seed) {
    return GpSampler(spec, points).draw(seed);
}

/// Cumulative sums of lambda_i^{1-t} Z_i^2 with idealized RFK eigenvalues lambda_i = i^{-(d+3)/d}.
struct NormTrajectory {
    std::vector<double> partial_sums;
    int d = 0;
    double s = 0.0;
    double t_exponent = 0.0;
    std::uint64_t seed = 0;
};

/// t = s (d + 1) / (d + 3): the RFK interpolation index matching NTK index s.
inline double rfk_interpolation_index(int d, double s) { return s * (d + 1.0) / (d + 3.0); }

/// Per-term exponent p in lambda_i^{1-t} = i^{-p}.
inline double series_exponent(int d, double s) {
    return (d + 3.0) / d * (1.0 - rfk_interpolation_index(d, s));
}

/// Boundary smoothness 3 / (d + 1).
inline double critical_smoothness(int d) { return 3.0 / (d + 1.0); }

inline NormTrajectory interp_norm_partial_sums(int d, double s, int N, std::uint64_t seed) {
    if (d < 1) throw ConfigError("interp_norm_partial_sums: d must be >= 1");
    if (!(s > 0.0)) throw ConfigError("interp_norm_partial_sums: s must be > 0");
    if (N < 100) throw ConfigError("interp_norm_partial_sums: N must be >= 100");
    NormTrajectory out;
    out.d = d;
    out.s = s;
    out.t_exponent = rfk_interpolation_index(d, s);
    out.seed = seed;
    out.partial_sums.resize(static_cast<std::size_t>(N));
    const double p = series_exponent(d, s);
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    CompensatedSum acc;
    for (int i = 1; i <= N; ++i) {
        const double z = normal(rng);
        acc.add(std::pow(static_cast<double>(i), -p) * z * z);
        out.partial_sums[static_cast<std::size_t>(i - 1)] = acc.value();
    }
    return out;
}

enum class Verdict { Converges, Diverges };

inline std::string to_string(Verdict v) { return v == Verdict::Converges ? "converges" : "diverges"; }

struct VerdictReport {
    Verdict verdict = Verdict::Diverges;
    /// Estimated p - 1 from the decay of mean dyadic-block mass; the series is summable iff p > 1.
    double decay_excess = 0.0;
    double decay_excess_std_error = 0.0;
    /// Median over trials of (S_N - S_{N/2}) / S_{N/2}; reported as a diagnostic.
    double median_tail_ratio = 0.0;
    int trials = 0;
    int blocks_used = 0;
};

inline constexpr int kMinVerdictTrials = 32;
inline constexpr int kMinVerdictLength = 100000;
inline constexpr int kVerdictBlocks = 8;
/// Convergence is declared when the block mass halves-rate exceeds this margin above p = 1.
inline constexpr double kDecayExcessMargin = 0.01;

/// Decides summability of the norm series from simulated trajectories.
///
/// The mass of dyadic block j, B_j = S_{2^{j+1}-1} - S_{2^j - 1}, has mean ~ c 2^{-(p-1) j}.
/// A least-squares fit of log2(mean_trials B_j) over the last eight complete blocks estimates
/// p - 1; the series converges iff that estimate exceeds kDecayExcessMargin.
inline VerdictReport threshold_verdict(const std::vector<NormTrajectory>& trajectories) {
    if (static_cast<int>(trajectories.size()) < kMinVerdictTrials)
        throw InsufficientTrials("threshold_verdict: need >= " + std::to_string(kMinVerdictTrials) + " trajectories");
    const std::size_t N = trajectories.front().partial_sums.size();
    if (static_cast<int>(N) < kMinVerdictLength)
        throw InsufficientTrials("threshold_verdict: need N >= " + std::to_string(kMinVerdictLength));
    for (const auto& tr : trajectories)
        if (tr.partial_sums.size() != N) throw DimensionError("threshold_verdict: trajectories differ in length");

    // complete blocks j = 0..J-1 cover indices [2^j, 2^{j+1} - 1] with 2^J - 1 <= N
    int J = 0;
    while ((std::size_t{2} << J) - 1 <= N) ++J;
    const int first = std::max(0, J - kVerdictBlocks);
    std::vector<double> js, log_mass;
    for (int j = first; j < J; ++j) {
        const std::size_t lo = std::size_t{1} << j;        // 1-based first index of block
        const std::size_t hi = (std::size_t{2} << j) - 1;  // 1-based last index
        CompensatedSum mass;
        for (const auto& tr : trajectories) {
            const double before = lo >= 2 ? tr.partial_sums[lo - 2] : 0.0;
            mass.add(tr.partial_sums[hi - 1] - before);
        }
        js.push_back(static_cast<double>(j));
        log_mass.push_back(std::log2(mass.value() / static_cast<double>(trajectories.size())));
    }
    const double n_blocks = static_cast<double>(js.size());
    double mj = 0.0, ml = 0.0;
    for (std::size_t k = 0; k < js.size(); ++k) {
        mj += js[k];
        ml += log_mass[k];
    }
    mj /= n_blocks;
    ml /= n_blocks;
    double sjj = 0.0, sjl = 0.0;
    for (std::size_t k = 0; k < js.size(); ++k) {
        sjj += (js[k] - mj) * (js[k] - mj);
        sjl += (js[k] - mj) * (log_mass[k] - ml);
    }
    const double slope = sjl / sjj;
    double ssr = 0.0;
    for (std::size_t k = 0; k < js.size(); ++k) {
        const double r = log_mass[k] - (ml + slope * (js[k] - mj));
        ssr += r * r;
    }

    std::vector<double> ratios;
    ratios.reserve(trajectories.size());
    const std::size_t half = N / 2;
    for (const auto& tr : trajectories) {
        const double s_half = tr.partial_sums[half - 1];
        ratios.push_back((tr.partial_sums[N - 1] - s_half) / s_half);
    }
    std::nth_element(ratios.begin(), ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2), ratios.end());
    double median = ratios[ratios.size() / 2];
    if (ratios.size() % 2 == 0) {
        const double lower = *std::max_element(ratios.begin(), ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2));
        median = 0.5 * (median + lower);
    }

    VerdictReport report;
    report.decay_excess = -slope;
    report.decay_excess_std_error = js.size() > 2 ? std::sqrt(ssr / (n_blocks - 2.0) / sjj) : 0.0;
    report.median_tail_ratio = median;
    report.trials = static_cast<int>(trajectories.size());
    report.blocks_used = static_cast<int>(js.size());
    report.verdict = report.decay_excess > kDecayExcessMargin ? Verdict::Converges : Verdict::Diverges;
    return report;
}

/// Runs `trials` independent trajectories (seed_i = derive_seed(seed, i)) and returns the verdict.
inline VerdictReport simulate_verdict(int d, double s, int N, int trials, std::uint64_t seed) {
    std::vector<NormTrajectory> trajectories(static_cast<std::size_t>(trials));
    parallel_for(trajectories.size(), [&](std::size_t i) {
        trajectories[i] = interp_norm_partial_sums(d, s, N, derive_seed(seed, i));
    });
    return threshold_verdict(trajectories);
}

/// The side of the boundary the theorem puts s on.
inline Verdict predicted_verdict(int d, double s) {
    return s < critical_smoothness(d) ? Verdict::Converges : Verdict::Diverges;
}

}  // namespace ntklab
