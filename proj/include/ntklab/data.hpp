#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntklab/errors.hpp"
#include "ntklab/kernels.hpp"
#include "ntklab/random.hpp"
#include "ntklab/spectral.hpp"

namespace ntklab {

struct DatasetMeta {
    std::string name;
    std::string source;
    std::string label_transform;
    std::string preprocessing;
};

struct Dataset {
    Points X;
    Eigen::VectorXd Y;
    DatasetMeta meta;

    [[nodiscard]] Eigen::Index n() const noexcept { return X.rows(); }
    [[nodiscard]] Eigen::Index dim() const noexcept { return X.cols(); }

    void validate() const {
        if (X.rows() < 1) throw EmptyDataset("dataset has no rows");
        if (Y.size() != X.rows()) throw DimensionError("dataset X and Y sizes differ");
        if (!X.allFinite() || !Y.allFinite()) throw DomainError("dataset contains NaN or Inf");
    }
};

/// n points on S^d: (d+1)-dimensional standard Gaussians normalized to unit length.
inline Points sample_sphere_gaussian(int d, int n, std::uint64_t seed) {
    if (d < 1 || n < 1) throw ConfigError("sample_sphere_gaussian: need d >= 1 and n >= 1");
    Rng rng = make_rng(seed);
    Points X(n, d + 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        do {
            for (int j = 0; j <= d; ++j) X(i, j) = normal(rng);
            norm = X.row(i).norm();
        } while (norm == 0.0);
        X.row(i) /= norm;
    }
    return X;
}

/// n points uniform in the d-dimensional ball of the given radius.
inline Points sample_ball(int d, int n, double radius, std::uint64_t seed) {
    if (d < 1 || n < 1 || !(radius > 0.0)) throw ConfigError("sample_ball: invalid arguments");
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    Points X(n, d);
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        do {
            for (int j = 0; j < d; ++j) X(i, j) = normal(rng);
            norm = X.row(i).norm();
        } while (norm == 0.0);
        X.row(i) *= radius * std::pow(uniform(rng), 1.0 / d) / norm;
    }
    return X;
}

/// (sum of the first d coordinates)^2 for a point on S^d stored with d + 1 coordinates.
inline double synth_regression_function(const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::Index d = x.size() - 1;
    if (d < 1) throw DimensionError("synthetic target needs points with at least 2 coordinates");
    const double s = x.head(d).sum();
    return s * s;
}

/// f* at every row of X.
inline Eigen::VectorXd synth_regression_values(const Points& X) {
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = synth_regression_function(Eigen::VectorXd(X.row(i).transpose()));
    return out;
}

/// y_i = f*(x_i) + eps_i, eps_i ~ N(0, sigma^2).
inline Eigen::VectorXd synth_target(const Points& X, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw ConfigError("synth_target: sigma must be >= 0");
    Eigen::VectorXd Y = synth_regression_values(X);
    if (sigma > 0.0) {
        Rng rng = make_rng(seed);
        std::normal_distribution<double> noise(0.0, sigma);
        for (Eigen::Index i = 0; i < Y.size(); ++i) Y(i) += noise(rng);
    }
    return Y;
}

enum class RowNormalization { None, UnitSphere };

enum class LabelEncoding { ClassIndex, OneVsRest };

struct CsvOptions {
    /// Column holding the label; negative counts from the end (-1 = last).
    int label_column = -1;
    /// Keep at most this many rows, chosen by a seeded shuffle; 0 keeps all.
    int max_rows = 0;
    RowNormalization normalize = RowNormalization::None;
    /// Multiplier applied to every feature before normalization (e.g. 1/255 for pixels).
    double feature_scale = 1.0;
    LabelEncoding label_encoding = LabelEncoding::ClassIndex;
    /// Positive class for OneVsRest (label == positive_class -> 1, else 0).
    double positive_class = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline std::optional<double> parse_number(std::string cell) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    cell.erase(cell.begin(), std::find_if(cell.begin(), cell.end(), not_space));
    cell.erase(std::find_if(cell.rbegin(), cell.rend(), not_space).base(), cell.end());
    if (cell.empty()) return std::nullopt;
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace detail

/// Reads a numeric CSV (no quoting, optional single header line).
inline Dataset load_csv(const std::string& path, const CsvOptions& opt = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("load_csv: cannot open '" + path + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto cells = detail::split_commas(line);
        std::vector<double> values;
        values.reserve(cells.size());
        bool numeric = true;
        std::size_t bad_col = 0;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto v = detail::parse_number(cells[c]);
            if (!v || !std::isfinite(*v)) {
                numeric = false;
                bad_col = c + 1;
                break;
            }
            values.push_back(*v);
        }
        if (!numeric) {
            if (rows.empty() && line_no == 1) continue;  // header
            throw ParseError("load_csv: non-numeric or non-finite cell in '" + path + "'", line_no, bad_col);
        }
        if (width == 0) width = values.size();
        if (values.size() != width)
            throw ParseError("load_csv: expected " + std::to_string(width) + " columns, found " +
                                 std::to_string(values.size()),
                             line_no, std::min(values.size(), width) + 1);
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw EmptyDataset("load_csv: no data rows in '" + path + "'");
    if (width < 2) throw ConfigError("load_csv: need at least one feature column and a label column");

    const int label = opt.label_column < 0 ? static_cast<int>(width) + opt.label_column : opt.label_column;
    if (label < 0 || label >= static_cast<int>(width)) throw ConfigError("load_csv: label column out of range");

    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    if (opt.max_rows > 0 && static_cast<std::size_t>(opt.max_rows) < rows.size()) {
        Rng rng = make_rng(opt.seed);
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(static_cast<std::size_t>(opt.max_rows));
    }

    Dataset ds;
    ds.X.resize(static_cast<Eigen::Index>(order.size()), static_cast<Eigen::Index>(width - 1));
    ds.Y.resize(static_cast<Eigen::Index>(order.size()));
    for (std::size_t r = 0; r < order.size(); ++r) {
        const auto& src = rows[order[r]];
        Eigen::Index k = 0;
        for (std::size_t c = 0; c < width; ++c) {
            if (static_cast<int>(c) == label) continue;
            ds.X(static_cast<Eigen::Index>(r), k++) = src[c] * opt.feature_scale;
        }
        const double y = src[static_cast<std::size_t>(label)];
        ds.Y(static_cast<Eigen::Index>(r)) =
            opt.label_encoding == LabelEncoding::ClassIndex ? y : (y == opt.positive_class ? 1.0 : 0.0);
    }
    if (opt.normalize == RowNormalization::UnitSphere) {
        for (Eigen::Index r = 0; r < ds.X.rows(); ++r) {
            const double norm = ds.X.row(r).norm();
            if (!(norm > 0.0))
                throw ZeroNormRow("load_csv: row " + std::to_string(order[static_cast<std::size_t>(r)] + 1) +
                                  " has zero feature norm");
            ds.X.row(r) /= norm;
        }
    }

    const auto slash = path.find_last_of('/');
    ds.meta.name = slash == std::string::npos ? path : path.substr(slash + 1);
    ds.meta.source = path;
    ds.meta.label_transform = opt.label_encoding == LabelEncoding::ClassIndex
                                  ? "class index cast to real"
                                  : "one-vs-rest: label == " + std::to_string(opt.positive_class) + " -> 1, else 0";
    std::ostringstream pre;
    pre << "features x " << opt.feature_scale;
    if (opt.normalize == RowNormalization::UnitSphere) pre << ", rows normalized to unit norm";
    if (opt.max_rows > 0) pre << ", seeded subset of " << order.size() << " rows (seed " << opt.seed << ")";
    ds.meta.preprocessing = pre.str();
    ds.validate();
    return ds;
}

enum class DecayMode { Theoretical, Fitted };

inline std::string to_string(DecayMode m) { return m == DecayMode::Theoretical ? "theoretical" : "fitted"; }

struct SmoothnessReport {
    std::string dataset;
    double alpha_hat = std::numeric_limits<double>::quiet_NaN();
    double d_lambda = 0.0;
    DecayMode d_lambda_mode = DecayMode::Theoretical;
    double d_lambda_theoretical = 0.0;
    std::optional<double> d_lambda_fitted;
    std::vector<double> tail_sums;  // tail_sums[i-1] = sum_{k >= i} c_k^2
    std::vector<double> coefficients;
    std::optional<SlopeFit> fit;
    bool degenerate = false;
    std::string note;
    int n = 0;
    int dim = 0;
};

struct SmoothnessOptions {
    KernelSpec kernel{KernelFamily::NTK, 1, KernelDomain::Lifted};
    DecayMode d_lambda_mode = DecayMode::Theoretical;
    int fit_min_index = 1;
    int fit_max_index = 0;  // 0: 0.9 n
    /// Input dimension d used for the theoretical rate (d + 1) / d; 0 uses the dataset dimension
    /// (minus one for Sphere-domain kernels, whose inputs live on S^{dim-1}).
    int intrinsic_dim = 0;
};

/// Tail sums below this fraction of the total are rounding noise and are set to zero.
inline constexpr double kTailSumFloor = 1e-24;

/// Coefficients of Y in the empirical eigenbasis, ordered by descending eigenvalue:
/// with k(X, X) = phi Sigma phi^T and (1/n) phi^T phi = I (phi = sqrt(n) V), c = (1/n) phi^T Y.
inline Eigen::VectorXd eigen_coefficients(const EigenSystem& eig, const Eigen::VectorXd& Y) {
    const double n = static_cast<double>(Y.size());
    return eig.vectors.transpose() * Y / std::sqrt(n);
}

inline std::vector<double> tail_sums_of(const Eigen::VectorXd& c) {
    std::vector<double> tails(static_cast<std::size_t>(c.size()));
    double acc = 0.0;
    for (Eigen::Index k = c.size() - 1; k >= 0; --k) {
        acc += c(k) * c(k);
        tails[static_cast<std::size_t>(k)] = acc;
    }
    const double cutoff = kTailSumFloor * (tails.empty() ? 0.0 : tails.front());
    for (auto& t : tails)
        if (t <= cutoff) t = 0.0;
    return tails;
}

/// Smoothness of the regression function behind `ds` relative to `opt.kernel`:
/// tail_sums(i) ~ i^{-alpha d_lambda}, so alpha_hat = |slope| / d_lambda.
inline SmoothnessReport smoothness_from_eigensystem(const EigenSystem& eig, const Dataset& ds,
                                                    const SmoothnessOptions& opt) {
    const int n = static_cast<int>(ds.n());
    SmoothnessReport rep;
    rep.dataset = ds.meta.name;
    rep.n = n;
    rep.dim = static_cast<int>(ds.dim());
    const int d = opt.intrinsic_dim > 0
                      ? opt.intrinsic_dim
                      : std::max(1, rep.dim - (opt.kernel.domain == KernelDomain::Sphere ? 1 : 0));
    rep.d_lambda_theoretical = opt.kernel.family == KernelFamily::NTK ? (d + 1.0) / d : (d + 3.0) / d;

    const Eigen::VectorXd c = eigen_coefficients(eig, ds.Y);
    rep.coefficients.assign(c.data(), c.data() + c.size());
    rep.tail_sums = tail_sums_of(c);

    const auto [lo, hi] = default_fit_window(n);
    try {
        rep.d_lambda_fitted = std::abs(decay_slope(eig.floored(), lo, hi).slope);
    } catch (const RangeError&) {
        rep.d_lambda_fitted.reset();
    }
    rep.d_lambda_mode = opt.d_lambda_mode;
    if (opt.d_lambda_mode == DecayMode::Fitted) {
        if (!rep.d_lambda_fitted) throw RangeError("smoothness: spectrum too short to fit d_lambda");
        rep.d_lambda = *rep.d_lambda_fitted;
    } else {
        rep.d_lambda = rep.d_lambda_theoretical;
    }

    const int fit_max = opt.fit_max_index > 0 ? opt.fit_max_index : static_cast<int>(0.9 * n);
    if (fit_max > n) throw RangeError("smoothness: fit_max_index exceeds n");
    const Eigen::Map<const Eigen::VectorXd> tails(rep.tail_sums.data(), static_cast<Eigen::Index>(rep.tail_sums.size()));
    try {
        rep.fit = decay_slope(tails, opt.fit_min_index, fit_max);
        rep.alpha_hat = std::abs(rep.fit->slope) / rep.d_lambda;
    } catch (const RangeError& e) {
        rep.degenerate = true;
        rep.note = e.what();
    }
    return rep;
}

inline SmoothnessReport smoothness_estimate(const Dataset& ds, const SmoothnessOptions& opt) {
    ds.validate();
    return smoothness_from_eigensystem(eig_sym(gram(opt.kernel, ds.X)), ds, opt);
}

}  // namespace ntklab
