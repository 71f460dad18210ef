#pragma once

// Closed-form ReLU arc-cosine compositions: the homogeneous sphere kernels
// K0^NTK, K0^RFK and their lifted counterparts on R^d.

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "ntklab/errors.hpp"

namespace ntklab {

using Point = Eigen::VectorXd;
/// n points stored as rows.
using Points = Eigen::MatrixXd;

inline constexpr int kMaxDepth = 64;

enum class KernelFamily { NTK, RFK };
enum class KernelDomain { Sphere, Lifted };

struct KernelSpec {
    KernelFamily family = KernelFamily::NTK;
    int depth = 1;  // hidden layers
    KernelDomain domain = KernelDomain::Lifted;

    void validate() const {
        if (depth < 1 || depth >= kMaxDepth)
            throw ConfigError("kernel depth must lie in [1, 64), got " + std::to_string(depth));
    }
};

inline constexpr double kBoundarySlack = 1e-12;
inline constexpr double kUnitNormTolerance = 1e-9;

/// Clamps u into [-1, 1] when it overshoots by at most 1e-12; anything further is an error.
inline double clamp_cosine(double u) {
    if (!(u >= -1.0 - kBoundarySlack && u <= 1.0 + kBoundarySlack))
        throw DomainError("kernel argument outside [-1, 1]: " + std::to_string(u));
    return std::clamp(u, -1.0, 1.0);
}

inline double kappa0(double u) {
    u = clamp_cosine(u);
    return (std::numbers::pi - std::acos(u)) / std::numbers::pi;
}

inline double kappa1(double u) {
    u = clamp_cosine(u);
    const double s = std::sqrt(std::max(0.0, 1.0 - u * u));
    return (s + u * (std::numbers::pi - std::acos(u))) / std::numbers::pi;
}

/// kappa1 composed r times; r = 0 is the identity.
inline double kappa1_iter(double u, int r) {
    if (r < 0) throw ConfigError("composition count must be >= 0");
    u = clamp_cosine(u);
    for (int i = 0; i < r; ++i) u = kappa1(u);
    return u;
}

/// sum_{r=0}^{L} k1^(r)(u) * prod_{s=r}^{L-1} k0(k1^(s)(u)), empty product = 1.
inline double ntk_sphere(double u, int depth) {
    if (depth < 1 || depth >= kMaxDepth) throw ConfigError("depth must lie in [1, " + std::to_string(kMaxDepth) + ")");
    u = clamp_cosine(u);
    // iterates[r] = k1^(r)(u); the products are accumulated from r = L downwards.
    std::array<double, kMaxDepth> iterates{};
    iterates[0] = u;
    for (int r = 1; r <= depth; ++r) iterates[r] = kappa1(iterates[r - 1]);
    double total = iterates[depth];
    double tail_product = 1.0;
    for (int r = depth - 1; r >= 0; --r) {
        tail_product *= kappa0(iterates[r]);
        total += iterates[r] * tail_product;
    }
    return total;
}

inline double rfk_sphere(double u, int depth) {
    if (depth < 1) throw ConfigError("depth must be >= 1");
    return kappa1_iter(u, depth);
}

inline double sphere_kernel(const KernelSpec& spec, double u) {
    return spec.family == KernelFamily::NTK ? ntk_sphere(u, spec.depth) : rfk_sphere(u, spec.depth);
}

/// phi(x) = (x, 1) / ||(x, 1)||.
inline Point lift(const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (!x.allFinite()) throw DomainError("lift: non-finite coordinates");
    Point out(x.size() + 1);
    out.head(x.size()) = x;
    out(x.size()) = 1.0;
    out /= out.norm();
    return out;
}

namespace detail {

// Plain left-to-right dot product. Every kernel path uses it, so a pair of points gets the
// same cosine (bit for bit) whether it comes from gram, cross_gram or kernel_eval. This
// matters because kappa0 has infinite slope at u = 1: one ulp there moves the NTK by ~1e-8.
inline double dot(const double* a, const double* b, Eigen::Index d) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) s += a[k] * b[k];
    return s;
}

}  // namespace detail

/// ||(x, 1)||
inline double augmented_norm(const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::VectorXd c = x;
    return std::sqrt(detail::dot(c.data(), c.data(), c.size()) + 1.0);
}

namespace detail {

inline void check_unit(double norm) {
    if (std::abs(norm - 1.0) > kUnitNormTolerance)
        throw DomainError("sphere kernel requires unit-norm inputs, got norm " + std::to_string(norm));
}

inline void check_dims(Eigen::Index a, Eigen::Index b) {
    if (a != b)
        throw DimensionError("point dimensions differ: " + std::to_string(a) + " vs " + std::to_string(b));
}

}  // namespace detail

/// Cosines within this many ulps of +-1 are snapped to +-1 (rounding in the norms alone
/// puts the diagonal that far off).
inline constexpr double kCosineSnap = 8.0 * std::numeric_limits<double>::epsilon();

/// Kernel value from precomputed inner product and (augmented) norms.
/// For Sphere the norms must be 1; for Lifted they are ||x~||, ||y~|| and `dot` is <x~, y~>.
inline double kernel_from_dot(const KernelSpec& spec, double dot, double norm_x, double norm_y) {
    const double scale = norm_x * norm_y;
    double u = dot / scale;
    if (std::abs(std::abs(u) - 1.0) <= kCosineSnap) u = std::copysign(1.0, u);
    return scale * sphere_kernel(spec, u);
}

namespace detail {

/// Points as contiguous columns plus their norms (1 on the sphere, ||x~|| when lifted).
struct PreparedPoints {
    Eigen::MatrixXd cols;  // d x n
    Eigen::VectorXd norms;
};

inline PreparedPoints prepare(const KernelSpec& spec, const Points& X) {
    PreparedPoints p{X.transpose(), Eigen::VectorXd(X.rows())};
    const Eigen::Index d = X.cols();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        if (!p.cols.col(i).allFinite()) throw DomainError("non-finite point at row " + std::to_string(i));
        const double* c = p.cols.col(i).data();
        const double sq = dot(c, c, d);
        if (spec.domain == KernelDomain::Sphere) {
            check_unit(std::sqrt(sq));
            p.norms(i) = 1.0;
        } else {
            p.norms(i) = std::sqrt(sq + 1.0);
        }
    }
    return p;
}

inline double pair_kernel(const KernelSpec& spec, const PreparedPoints& a, Eigen::Index i, const PreparedPoints& b,
                          Eigen::Index j) {
    const double offset = spec.domain == KernelDomain::Lifted ? 1.0 : 0.0;
    const double v = dot(a.cols.col(i).data(), b.cols.col(j).data(), a.cols.rows());
    return kernel_from_dot(spec, v + offset, a.norms(i), b.norms(j));
}

}  // namespace detail

inline double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                          const Eigen::Ref<const Eigen::VectorXd>& y) {
    spec.validate();
    detail::check_dims(x.size(), y.size());
    const auto px = detail::prepare(spec, x.transpose());
    const auto py = detail::prepare(spec, y.transpose());
    return detail::pair_kernel(spec, px, 0, py, 0);
}

/// k(X, X). Each unordered pair is evaluated once and mirrored, so the result is exactly symmetric.
inline Eigen::MatrixXd gram(const KernelSpec& spec, const Points& X) {
    spec.validate();
    const Eigen::Index n = X.rows();
    if (n < 1) throw ConfigError("gram: need at least one point");
    const auto P = detail::prepare(spec, X);
    Eigen::MatrixXd G(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = j; i < n; ++i) {
            const double v = detail::pair_kernel(spec, P, i, P, j);
            G(i, j) = v;
            G(j, i) = v;
        }
    }
    return G;
}

/// k(A, B), |A| x |B|.
inline Eigen::MatrixXd cross_gram(const KernelSpec& spec, const Points& A, const Points& B) {
    spec.validate();
    detail::check_dims(A.cols(), B.cols());
    const auto PA = detail::prepare(spec, A);
    const auto PB = detail::prepare(spec, B);
    Eigen::MatrixXd K(A.rows(), B.rows());
    for (Eigen::Index j = 0; j < B.rows(); ++j)
        for (Eigen::Index i = 0; i < A.rows(); ++i) K(i, j) = detail::pair_kernel(spec, PA, i, PB, j);
    return K;
}

inline std::string to_string(KernelFamily f) { return f == KernelFamily::NTK ? "ntk" : "rfk"; }
inline std::string to_string(KernelDomain d) { return d == KernelDomain::Sphere ? "sphere" : "lifted"; }

inline KernelFamily parse_family(const std::string& s) {
    if (s == "ntk" || s == "NTK") return KernelFamily::NTK;
    if (s == "rfk" || s == "RFK") return KernelFamily::RFK;
    throw ConfigError("unknown kernel family '" + s + "' (expected ntk|rfk)");
}

inline KernelDomain parse_domain(const std::string& s) {
    if (s == "sphere") return KernelDomain::Sphere;
    if (s == "lifted") return KernelDomain::Lifted;
    throw ConfigError("unknown kernel domain '" + s + "' (expected sphere|lifted)");
}

}  // namespace ntklab
