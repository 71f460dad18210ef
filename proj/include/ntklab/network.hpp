#pragma once

// Fully connected ReLU network with L hidden layers of common width m:
//
//   a1(x) = s1 (W0 x + b0),   a_l(x) = s_l W_{l-1} relu(a_{l-1}(x)),   f(x) = s_out W_L relu(a_L(x)).
//
// OutputScale::Literal uses s_l = sqrt(2/m) for every hidden layer and s_out = 1.
// OutputScale::FanIn uses s1 = 1, s_l = sqrt(2/m) for l >= 2 and s_out = sqrt(2/m).
// By positive homogeneity of ReLU both define the same function of theta, hence the same
// gradients, and at standard initialization Var f(x) = K^RFK(x, x) for any width.
//
// Parameters are flattened branch by branch; within a branch the order is
// W0 (row-major), b0, W1 (row-major), ..., W_L. Mirrored networks store branch 1 then branch 2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntklab/errors.hpp"
#include "ntklab/kgf.hpp"
#include "ntklab/random.hpp"

namespace ntklab {

enum class InitMode { Standard, Mirrored };
enum class OutputScale { Literal, FanIn };

inline std::string to_string(InitMode m) { return m == InitMode::Standard ? "standard" : "mirrored"; }
inline std::string to_string(OutputScale s) { return s == OutputScale::Literal ? "literal" : "fan_in"; }

inline InitMode parse_init_mode(const std::string& s) {
    if (s == "standard") return InitMode::Standard;
    if (s == "mirrored") return InitMode::Mirrored;
    throw ConfigError("unknown init mode '" + s + "' (expected standard|mirrored)");
}

inline OutputScale parse_output_scale(const std::string& s) {
    if (s == "literal") return OutputScale::Literal;
    if (s == "fan_in") return OutputScale::FanIn;
    throw ConfigError("unknown output scale '" + s + "' (expected literal|fan_in)");
}

struct NetworkConfig {
    int input_dim = 1;
    int depth = 1;  // hidden layers L
    int width = 1;  // shared hidden width m
    InitMode init_mode = InitMode::Standard;
    bool with_first_layer_bias = true;
    OutputScale output_scale = OutputScale::Literal;
    std::uint64_t seed = 0;

    void validate() const {
        if (input_dim < 1) throw ConfigError("network input_dim must be >= 1");
        if (depth < 1) throw ConfigError("network depth must be >= 1");
        if (width < 1) throw ConfigError("network width must be >= 1");
    }

    /// Parameter count of a single branch.
    [[nodiscard]] Eigen::Index branch_size() const {
        const Eigen::Index m = width;
        Eigen::Index total = m * input_dim + (with_first_layer_bias ? m : 0);
        total += static_cast<Eigen::Index>(depth - 1) * m * m;
        total += m;
        return total;
    }

    [[nodiscard]] Eigen::Index parameter_count() const {
        return branch_size() * (init_mode == InitMode::Mirrored ? 2 : 1);
    }

    [[nodiscard]] double hidden_scale(int layer) const {
        const double s = std::sqrt(2.0 / width);
        if (output_scale == OutputScale::FanIn && layer == 1) return 1.0;
        return s;
    }

    [[nodiscard]] double output_factor() const {
        return output_scale == OutputScale::FanIn ? std::sqrt(2.0 / width) : 1.0;
    }
};

/// One copy of the network weights. weights[l] has shape (m x input_dim) for l = 0,
/// (m x m) for 0 < l < L and (1 x m) for l = L.
struct Branch {
    std::vector<Eigen::MatrixXd> weights;
    Eigen::VectorXd bias;  // empty without first-layer bias

    [[nodiscard]] Eigen::VectorXd flatten() const {
        Eigen::Index total = bias.size();
        for (const auto& w : weights) total += w.size();
        Eigen::VectorXd out(total);
        Eigen::Index k = 0;
        auto put = [&](const Eigen::MatrixXd& w) {
            for (Eigen::Index i = 0; i < w.rows(); ++i)
                for (Eigen::Index j = 0; j < w.cols(); ++j) out(k++) = w(i, j);
        };
        put(weights[0]);
        for (Eigen::Index i = 0; i < bias.size(); ++i) out(k++) = bias(i);
        for (std::size_t l = 1; l < weights.size(); ++l) put(weights[l]);
        return out;
    }

    void unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat) {
        Eigen::Index k = 0;
        auto take = [&](Eigen::MatrixXd& w) {
            for (Eigen::Index i = 0; i < w.rows(); ++i)
                for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = flat(k++);
        };
        take(weights[0]);
        for (Eigen::Index i = 0; i < bias.size(); ++i) bias(i) = flat(k++);
        for (std::size_t l = 1; l < weights.size(); ++l) take(weights[l]);
        if (k != flat.size()) throw DimensionError("Branch::unflatten: size mismatch");
    }

    void set_zero() {
        for (auto& w : weights) w.setZero();
        bias.setZero();
    }

    static Branch zeros(const NetworkConfig& cfg) {
        Branch b;
        const Eigen::Index m = cfg.width;
        b.weights.push_back(Eigen::MatrixXd::Zero(m, cfg.input_dim));
        for (int l = 1; l < cfg.depth; ++l) b.weights.push_back(Eigen::MatrixXd::Zero(m, m));
        b.weights.push_back(Eigen::MatrixXd::Zero(1, m));
        b.bias = Eigen::VectorXd::Zero(cfg.with_first_layer_bias ? m : 0);
        return b;
    }
};

struct NetworkParams {
    NetworkConfig config;
    Branch first;
    std::optional<Branch> second;  // present iff Mirrored

    [[nodiscard]] bool mirrored() const noexcept { return second.has_value(); }

    [[nodiscard]] Eigen::VectorXd flatten() const {
        if (!second) return first.flatten();
        const Eigen::VectorXd a = first.flatten(), b = second->flatten();
        Eigen::VectorXd out(a.size() + b.size());
        out << a, b;
        return out;
    }

    void unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat) {
        const Eigen::Index bs = config.branch_size();
        if (flat.size() != config.parameter_count()) throw DimensionError("NetworkParams::unflatten: size mismatch");
        first.unflatten(flat.head(bs));
        if (second) second->unflatten(flat.tail(bs));
    }

    static NetworkParams zeros(const NetworkConfig& cfg) {
        cfg.validate();
        NetworkParams p{cfg, Branch::zeros(cfg), std::nullopt};
        if (cfg.init_mode == InitMode::Mirrored) p.second = Branch::zeros(cfg);
        return p;
    }
};

/// All entries i.i.d. N(0, 1) from cfg.seed; Mirrored duplicates the first branch exactly.
inline NetworkParams init_params(const NetworkConfig& cfg) {
    NetworkParams p = NetworkParams::zeros(cfg);
    Rng rng = make_rng(cfg.seed);
    p.first.unflatten(normal_vector(rng, cfg.branch_size()));
    if (p.second) *p.second = p.first;
    return p;
}

inline constexpr double kMirrorWeight = 0.70710678118654752440;  // sqrt(2) / 2

namespace detail {

/// Hidden pre-activations of every layer for a batch (rows of X), plus backward scratch.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> pre;    // a_l, n x m, l = 1..L stored at [l-1]
    std::vector<Eigen::MatrixXd> post;   // relu(a_l)
    Eigen::VectorXd output;
    Eigen::MatrixXd delta, delta_next;
};

using RowsRef = Eigen::Ref<const Eigen::MatrixXd>;

/// Fills c in place; buffers keep their capacity across calls with the same shape.
inline void forward_into(const NetworkConfig& cfg, const Branch& br, const RowsRef& X, ForwardCache& c) {
    const auto L = static_cast<std::size_t>(cfg.depth);
    c.pre.resize(L);
    c.post.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        Eigen::MatrixXd& a = c.pre[l];
        a.resize(X.rows(), cfg.width);
        if (l == 0) {
            a.noalias() = X * br.weights[0].transpose();
            if (br.bias.size() > 0) a.rowwise() += br.bias.transpose();
        } else {
            a.noalias() = c.post[l - 1] * br.weights[l].transpose();
        }
        a *= cfg.hidden_scale(static_cast<int>(l) + 1);
        c.post[l] = a.cwiseMax(0.0);
    }
    c.output.resize(X.rows());
    c.output.noalias() = c.post.back() * br.weights.back().row(0).transpose();
    c.output *= cfg.output_factor();
}

inline ForwardCache forward_cache(const NetworkConfig& cfg, const Branch& br, const RowsRef& X) {
    ForwardCache c;
    forward_into(cfg, br, X, c);
    return c;
}

/// Accumulates sum_i g_i * d f(x_i) / d theta into grad (same layout as Branch).
inline void backward(const NetworkConfig& cfg, const Branch& br, const RowsRef& X, ForwardCache& c,
                     const Eigen::VectorXd& g, Branch& grad) {
    const int L = cfg.depth;
    const double s_out = cfg.output_factor();
    grad.weights.back().noalias() += s_out * (g.transpose() * c.post.back());
    Eigen::MatrixXd& delta = c.delta;
    delta.resize(X.rows(), cfg.width);
    delta.noalias() = s_out * (g * br.weights.back());  // d/d relu(a_L)
    for (int l = L; l >= 1; --l) {
        const auto idx = static_cast<std::size_t>(l - 1);
        delta = (c.pre[idx].array() > 0.0).select(delta, 0.0);
        const double s = cfg.hidden_scale(l);
        if (l > 1) {
            grad.weights[idx].noalias() += s * (delta.transpose() * c.post[idx - 1]);
            c.delta_next.resize(X.rows(), cfg.width);
            c.delta_next.noalias() = s * (delta * br.weights[idx]);
            delta.swap(c.delta_next);
        } else {
            grad.weights[0].noalias() += s * (delta.transpose() * X);
            if (grad.bias.size() > 0) grad.bias.noalias() += s * delta.colwise().sum().transpose();
        }
    }
}

inline void check_input(const NetworkConfig& cfg, Eigen::Index cols) {
    if (cols != cfg.input_dim)
        throw DimensionError("network expects inputs of dimension " + std::to_string(cfg.input_dim) + ", got " +
                             std::to_string(cols));
}

}  // namespace detail

/// Output of a single branch on every row of X.
inline Eigen::VectorXd branch_forward(const NetworkConfig& cfg, const Branch& br, const Eigen::MatrixXd& X) {
    detail::check_input(cfg, X.cols());
    return detail::forward_cache(cfg, br, X).output;
}

/// Network output on every row of X; mirrored networks return (sqrt2/2)(f1 - f2).
inline Eigen::VectorXd forward_batch(const NetworkParams& p, const Eigen::MatrixXd& X) {
    const Eigen::VectorXd f1 = branch_forward(p.config, p.first, X);
    if (!p.second) return f1;
    return kMirrorWeight * (f1 - branch_forward(p.config, *p.second, X));
}

/// Repeated forward passes over one fixed point set (e.g. a test set evaluated every step).
/// Works through the rows in blocks with reused buffers, so nothing is allocated per call.
class BatchEvaluator {
public:
    static constexpr Eigen::Index kBlockRows = 256;

    explicit BatchEvaluator(Eigen::MatrixXd X) : X_(std::move(X)) {}

    [[nodiscard]] const Eigen::MatrixXd& points() const noexcept { return X_; }

    /// Same values as forward_batch(p, points()).
    const Eigen::VectorXd& operator()(const NetworkParams& p) {
        detail::check_input(p.config, X_.cols());
        out_.resize(X_.rows());
        branch(p.config, p.first, 1.0, true);
        if (p.second) {
            branch(p.config, *p.second, -1.0, false);
            out_ *= kMirrorWeight;
        }
        return out_;
    }

private:
    void branch(const NetworkConfig& cfg, const Branch& br, double sign, bool assign) {
        const Eigen::Index n = X_.rows();
        for (Eigen::Index r0 = 0; r0 < n; r0 += kBlockRows) {
            const Eigen::Index rows = std::min(kBlockRows, n - r0);
            a_.resize(rows, cfg.width);
            a_.noalias() = X_.middleRows(r0, rows) * br.weights[0].transpose();
            if (br.bias.size() > 0) a_.rowwise() += br.bias.transpose();
            a_ = (cfg.hidden_scale(1) * a_).cwiseMax(0.0);
            for (int l = 2; l <= cfg.depth; ++l) {
                b_.resize(rows, cfg.width);
                b_.noalias() = a_ * br.weights[static_cast<std::size_t>(l - 1)].transpose();
                a_ = (cfg.hidden_scale(l) * b_).cwiseMax(0.0);
            }
            col_.resize(rows);
            col_.noalias() = a_ * br.weights.back().row(0).transpose();
            if (assign)
                out_.segment(r0, rows) = sign * cfg.output_factor() * col_;
            else
                out_.segment(r0, rows) += sign * cfg.output_factor() * col_;
        }
    }

    Eigen::MatrixXd X_;
    Eigen::MatrixXd a_, b_;
    Eigen::VectorXd col_, out_;
};

inline double forward(const NetworkParams& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return forward_batch(p, x.transpose())(0);
}

inline double forward_mirrored(const NetworkParams& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (!p.mirrored()) throw ModeError("forward_mirrored called on standard-initialized parameters");
    return forward(p, x);
}

/// Gradients of sum_i g_i f(x_i) for every parameter, flattened.
inline Eigen::VectorXd weighted_gradient(const NetworkParams& p, const Eigen::MatrixXd& X, const Eigen::VectorXd& g) {
    detail::check_input(p.config, X.cols());
    auto c1 = detail::forward_cache(p.config, p.first, X);
    Branch g1 = Branch::zeros(p.config);
    if (!p.second) {
        detail::backward(p.config, p.first, X, c1, g, g1);
        return g1.flatten();
    }
    Branch g2 = Branch::zeros(p.config);
    detail::backward(p.config, p.first, X, c1, kMirrorWeight * g, g1);
    auto c2 = detail::forward_cache(p.config, *p.second, X);
    detail::backward(p.config, *p.second, X, c2, -kMirrorWeight * g, g2);
    Eigen::VectorXd out(p.config.parameter_count());
    out << g1.flatten(), g2.flatten();
    return out;
}

/// d f(x) / d theta (length M). The ReLU derivative at 0 is taken as 0.
inline Eigen::VectorXd grad_theta(const NetworkParams& p, const Eigen::Ref<const Eigen::VectorXd>& x) {
    return weighted_gradient(p, x.transpose(), Eigen::VectorXd::Ones(1));
}

/// n x M Jacobian of the outputs at the rows of X.
inline Eigen::MatrixXd jacobian(const NetworkParams& p, const Eigen::MatrixXd& X) {
    Eigen::MatrixXd J(X.rows(), p.config.parameter_count());
    for (Eigen::Index i = 0; i < X.rows(); ++i) J.row(i) = grad_theta(p, X.row(i).transpose()).transpose();
    return J;
}

/// <d f(x)/d theta, d f(x')/d theta>
inline double empirical_ntk(const NetworkParams& p, const Eigen::Ref<const Eigen::VectorXd>& x,
                            const Eigen::Ref<const Eigen::VectorXd>& y) {
    return grad_theta(p, x).dot(grad_theta(p, y));
}

inline Eigen::MatrixXd empirical_ntk_gram(const NetworkParams& p, const Eigen::MatrixXd& X) {
    const Eigen::MatrixXd J = jacobian(p, X);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(X.rows(), X.rows());
    G.selfadjointView<Eigen::Lower>().rankUpdate(J);
    return G.selfadjointView<Eigen::Lower>();
}

struct Checkpoint {
    int step = 0;
    double time = 0.0;                     // step * lr
    Eigen::VectorXd predictions;           // network output on the recorded query set
    std::optional<NetworkParams> params;   // only when snapshots were requested
};

struct TrainTrajectory {
    std::vector<Checkpoint> checkpoints;
    std::vector<double> losses;  // length steps + 1
    double lr = 0.0;
    int steps = 0;
    /// Gradient-flow time assigned to step k.
    [[nodiscard]] double time_of(int step) const { return step * lr; }
};

struct TrainOptions {
    double lr = 0.1;
    int steps = 0;
    int record_every = 1;
    /// Predictions on these rows are cached at every recorded step (may be empty).
    Eigen::MatrixXd query;
    bool snapshot_params = false;
    double divergence_factor = 1e6;
    /// Called at every recorded step with the step index and the current parameters.
    std::function<void(int, const NetworkParams&)> observer;
};

inline double mse_loss(const Eigen::VectorXd& f, const Eigen::VectorXd& Y) {
    return 0.5 * (f - Y).squaredNorm() / static_cast<double>(Y.size());
}

/// Full-batch gradient descent on L(theta) = (1/2n) sum (f(x_i) - y_i)^2. Updates params in place.
inline TrainTrajectory train_gd(NetworkParams& params, const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                                const TrainOptions& opt) {
    if (!(opt.lr > 0.0)) throw ConfigError("train_gd: lr must be > 0");
    if (opt.steps < 0) throw ConfigError("train_gd: steps must be >= 0");
    if (opt.record_every < 1) throw ConfigError("train_gd: record_every must be >= 1");
    if (X.rows() != Y.size() || X.rows() == 0) throw DimensionError("train_gd: X and Y sizes differ or are empty");
    detail::check_input(params.config, X.cols());
    if (opt.query.size() > 0) detail::check_input(params.config, opt.query.cols());

    const NetworkConfig& cfg = params.config;
    const double n = static_cast<double>(Y.size());
    TrainTrajectory traj;
    traj.lr = opt.lr;
    traj.steps = opt.steps;
    traj.losses.reserve(static_cast<std::size_t>(opt.steps) + 1);

    auto record = [&](int step) {
        Checkpoint cp;
        cp.step = step;
        cp.time = traj.time_of(step);
        if (opt.query.size() > 0) cp.predictions = forward_batch(params, opt.query);
        if (opt.snapshot_params) cp.params = params;
        traj.checkpoints.push_back(std::move(cp));
        if (opt.observer) opt.observer(step, params);
    };

    // Rows are processed in blocks small enough for the activations to stay in cache; each
    // block's loss gradient only needs its own outputs, so one pass per step suffices.
    constexpr Eigen::Index kBlock = 32;
    const Eigen::Index rows = X.rows();
    detail::ForwardCache c1, c2;
    Branch g1 = Branch::zeros(cfg), g2 = Branch::zeros(cfg);
    Eigen::VectorXd gb;
    double initial_loss = 0.0;
    for (int step = 0;; ++step) {
        g1.set_zero();
        if (params.second) g2.set_zero();
        double sq = 0.0;
        for (Eigen::Index r0 = 0; r0 < rows; r0 += kBlock) {
            const Eigen::Index nb = std::min(kBlock, rows - r0);
            const auto Xb = X.middleRows(r0, nb);
            detail::forward_into(cfg, params.first, Xb, c1);
            if (!params.second) {
                gb = c1.output - Y.segment(r0, nb);
            } else {
                detail::forward_into(cfg, *params.second, Xb, c2);
                gb = kMirrorWeight * (c1.output - c2.output) - Y.segment(r0, nb);
            }
            sq += gb.squaredNorm();
            gb /= n;
            if (!params.second) {
                detail::backward(cfg, params.first, Xb, c1, gb, g1);
            } else {
                detail::backward(cfg, params.first, Xb, c1, kMirrorWeight * gb, g1);
                detail::backward(cfg, *params.second, Xb, c2, -kMirrorWeight * gb, g2);
            }
        }
        const double loss = 0.5 * sq / n;
        if (step == 0) initial_loss = loss;
        if (!std::isfinite(loss) || loss > opt.divergence_factor * std::max(initial_loss, 1e-300))
            throw DivergenceError("train_gd: loss diverged at step " + std::to_string(step) + " (loss " +
                                  std::to_string(loss) + ", lr " + std::to_string(opt.lr) + ")");
        traj.losses.push_back(loss);
        if (step % opt.record_every == 0 || step == opt.steps) record(step);
        if (step == opt.steps) break;

        for (std::size_t l = 0; l < g1.weights.size(); ++l) params.first.weights[l] -= opt.lr * g1.weights[l];
        params.first.bias -= opt.lr * g1.bias;
        if (params.second) {
            for (std::size_t l = 0; l < g2.weights.size(); ++l) params.second->weights[l] -= opt.lr * g2.weights[l];
            params.second->bias -= opt.lr * g2.bias;
        }
    }
    return traj;
}

/// Maps a gradient-descent step to gradient-flow time.
using TimeMap = std::function<double(int step)>;

inline TimeMap lr_time_map(double lr) {
    return [lr](int step) { return step * lr; };
}

/// max over recorded checkpoints and grid points of |f_NN(step, x) - f_KGF(time_map(step), x)|.
/// The trajectory must have been recorded with `grid` as its query set.
inline double sup_deviation(const TrainTrajectory& traj, const KgfPredictor& pred, const Points& grid,
                            const TimeMap& time_map) {
    if (grid.rows() == 0) throw EmptyGrid("sup_deviation: empty grid");
    if (traj.checkpoints.empty()) throw EmptyGrid("sup_deviation: trajectory has no checkpoints");
    const Eigen::MatrixXd k_QX = cross_gram(pred.spec(), grid, pred.X_train());
    const Eigen::VectorXd f0_Q = pred.query_f0(grid);
    double worst = 0.0;
    for (const auto& cp : traj.checkpoints) {
        if (cp.predictions.size() != grid.rows())
            throw DimensionError("sup_deviation: checkpoint predictions were not recorded on this grid");
        const Eigen::VectorXd kgf = pred.predict_batch(time_map(cp.step), grid, k_QX, f0_Q);
        worst = std::max(worst, (cp.predictions - kgf).cwiseAbs().maxCoeff());
    }
    return worst;
}

}  // namespace ntklab
