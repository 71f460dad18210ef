#include <cmath>

#include <gtest/gtest.h>

#include "ntklab/data.hpp"
#include "ntklab/network.hpp"

using namespace ntklab;

namespace {

NetworkConfig config(int d, int depth, int width, InitMode mode = InitMode::Standard, std::uint64_t seed = 1) {
    NetworkConfig c;
    c.input_dim = d;
    c.depth = depth;
    c.width = width;
    c.init_mode = mode;
    c.seed = seed;
    return c;
}

// smallest |pre-activation| over all hidden units of a branch at x
double kink_margin(const NetworkParams& p, const Branch& br, const Eigen::VectorXd& x) {
    const auto cache = detail::forward_cache(p.config, br, x.transpose());
    double m = INFINITY;
    for (const auto& a : cache.pre) m = std::min(m, a.cwiseAbs().minCoeff());
    return m;
}

}  // namespace

TEST(Init, DeterministicAndStandardNormal) {
    const NetworkParams a = init_params(config(3, 2, 64)), b = init_params(config(3, 2, 64));
    EXPECT_TRUE(a.flatten() == b.flatten());
    const NetworkParams big = init_params(config(10, 1, 100000, InitMode::Standard, 5));
    const Eigen::VectorXd v = big.flatten();
    ASSERT_GE(v.size(), 1000000);
    const double mean = v.mean();
    const double var = (v.array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 0.01);
    EXPECT_NEAR(var, 1.0, 0.01);
}

TEST(Init, MirroredBranchesIdentical) {
    const NetworkParams p = init_params(config(3, 2, 32, InitMode::Mirrored));
    ASSERT_TRUE(p.mirrored());
    EXPECT_TRUE(p.first.flatten() == p.second->flatten());
    EXPECT_EQ(p.flatten().size(), p.config.parameter_count());
    EXPECT_EQ(p.config.parameter_count(), 2 * p.config.branch_size());
}

TEST(Forward, ZeroParameters) {
    const NetworkParams p = NetworkParams::zeros(config(3, 2, 16));
    EXPECT_EQ(forward(p, Eigen::Vector3d(1, -2, 3)), 0.0);
}

TEST(Forward, SingleUnitHandComputation) {
    NetworkParams p = NetworkParams::zeros(config(1, 1, 1));
    p.first.weights[0](0, 0) = 1.0;
    p.first.weights[1](0, 0) = 1.0;
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 2.0);
    // alpha = sqrt(2) * 2, f = relu(alpha)
    EXPECT_NEAR(forward(p, x), 2.0 * std::sqrt(2.0), 1e-15);
    p.config.output_scale = OutputScale::FanIn;
    EXPECT_NEAR(forward(p, x), 2.0 * std::sqrt(2.0), 1e-15);
}

TEST(Forward, DimensionCheck) {
    const NetworkParams p = init_params(config(3, 1, 8));
    EXPECT_THROW(forward(p, Eigen::Vector2d(1, 2)), DimensionError);
}

TEST(Forward, LiteralAndFanInAgree) {
    for (int depth : {1, 2, 3}) {
        NetworkParams p = init_params(config(4, depth, 50, InitMode::Standard, 9));
        const Points X = sample_ball(4, 20, 2.0, 3);
        const Eigen::VectorXd a = forward_batch(p, X);
        p.config.output_scale = OutputScale::FanIn;
        const Eigen::VectorXd b = forward_batch(p, X);
        EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + a.cwiseAbs().maxCoeff()));
    }
}

TEST(Forward, BatchEvaluatorMatchesForwardBatch) {
    // 600 rows spans several blocks, last one partial
    const Points X = sample_ball(4, 600, 2.0, 5);
    for (int depth : {1, 3})
        for (InitMode mode : {InitMode::Standard, InitMode::Mirrored}) {
            NetworkParams p = init_params(config(4, depth, 30, mode, 21));
            p.first.weights.back().array() += 0.3;  // keep the mirrored output away from zero
            BatchEvaluator eval(X);
            const Eigen::VectorXd a = forward_batch(p, X);
            const Eigen::VectorXd b = eval(p);
            EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + a.cwiseAbs().maxCoeff()));
            EXPECT_GT(a.cwiseAbs().maxCoeff(), 0.0);
        }
}

TEST(Forward, SphereHomogeneity) {
    const int d = 3, m = 40;
    for (int depth : {1, 2}) {
        const NetworkParams p = init_params(config(d, depth, m, InitMode::Standard, 17));
        NetworkConfig sc = config(d + 1, depth, m);
        sc.with_first_layer_bias = false;
        NetworkParams s = NetworkParams::zeros(sc);
        s.first.weights = p.first.weights;
        s.first.weights[0].resize(m, d + 1);
        s.first.weights[0] << p.first.weights[0], p.first.bias;
        const Points X = sample_ball(d, 30, 3.0, 4);
        for (int i = 0; i < 30; ++i) {
            const Eigen::VectorXd x = X.row(i).transpose();
            EXPECT_NEAR(forward(p, x), augmented_norm(x) * forward(s, lift(x)), 1e-12);
        }
    }
}

TEST(Mirrored, ExactlyZeroAtInit) {
    const NetworkParams p = init_params(config(5, 2, 64, InitMode::Mirrored, 3));
    const Points X = sample_ball(5, 1000, 5.0, 8);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(forward_mirrored(p, X.row(i).transpose()), 0.0);
}

TEST(Mirrored, CombinationRule) {
    NetworkParams p = init_params(config(3, 1, 16, InitMode::Mirrored, 4));
    p.first.weights[1].array() += 0.5;
    const Eigen::Vector3d x(0.2, 0.4, -0.1);
    NetworkParams one = p, two = p;
    one.second.reset();
    one.config.init_mode = InitMode::Standard;
    two.first = *p.second;
    two.second.reset();
    two.config.init_mode = InitMode::Standard;
    const double expected = std::sqrt(2.0) / 2.0 * (forward(one, x) - forward(two, x));
    EXPECT_NE(forward_mirrored(p, x), 0.0);
    EXPECT_NEAR(forward_mirrored(p, x), expected, 1e-15);
}

TEST(Mirrored, StandardParamsRejected) {
    const NetworkParams p = init_params(config(3, 1, 8));
    EXPECT_THROW(forward_mirrored(p, Eigen::Vector3d::Zero()), ModeError);
}

TEST(Gradient, MatchesFiniteDifferences) {
    const double h = 1e-5;
    for (auto mode : {InitMode::Standard, InitMode::Mirrored})
        for (int depth : {1, 2, 3}) {
            NetworkParams p = init_params(config(3, depth, 8, mode, 20 + depth));
            if (mode == InitMode::Mirrored) {  // break the symmetry so both halves matter
                Rng rng = make_rng(5);
                Eigen::VectorXd flat = p.flatten();
                flat += 0.3 * normal_vector(rng, flat.size());
                p.unflatten(flat);
            }
            const Points X = sample_ball(3, 20, 1.5, 30 + depth);
            int checked = 0;
            for (int i = 0; i < X.rows() && checked < 4; ++i) {
                const Eigen::VectorXd x = X.row(i).transpose();
                double margin = kink_margin(p, p.first, x);
                if (p.second) margin = std::min(margin, kink_margin(p, *p.second, x));
                if (margin < 1e-3) continue;
                ++checked;
                const Eigen::VectorXd g = grad_theta(p, x);
                Eigen::VectorXd flat = p.flatten(), fd(flat.size());
                NetworkParams q = p;
                for (Eigen::Index k = 0; k < flat.size(); ++k) {
                    Eigen::VectorXd e = flat;
                    e(k) += h;
                    q.unflatten(e);
                    const double up = forward(q, x);
                    e(k) -= 2 * h;
                    q.unflatten(e);
                    fd(k) = (up - forward(q, x)) / (2 * h);
                }
                EXPECT_LT((g - fd).norm() / std::max(1e-12, fd.norm()), 1e-4);
            }
            EXPECT_GT(checked, 0);
        }
}

TEST(Gradient, OutputLayerIsLastActivation) {
    const NetworkParams p = init_params(config(3, 2, 10, InitMode::Standard, 2));
    const Eigen::Vector3d x(0.3, 0.1, -0.7);
    const auto cache = detail::forward_cache(p.config, p.first, x.transpose());
    const Eigen::VectorXd g = grad_theta(p, x);
    const Eigen::VectorXd last = g.tail(10);
    EXPECT_LT((last - cache.post.back().transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Gradient, DeadFirstLayer) {
    NetworkParams p = init_params(config(3, 1, 6, InitMode::Standard, 2));
    p.first.weights[0] = -p.first.weights[0].cwiseAbs();
    p.first.bias = -Eigen::VectorXd::Ones(6);
    const Eigen::VectorXd g = grad_theta(p, Eigen::Vector3d(0.5, 1.0, 2.0));
    EXPECT_EQ(g.head(6 * 3 + 6).cwiseAbs().maxCoeff(), 0.0);
}

TEST(EmpiricalNtk, SymmetricAndPsd) {
    const NetworkParams p = init_params(config(3, 2, 32, InitMode::Standard, 6));
    const Points X = sample_ball(3, 30, 1.0, 2);
    const Eigen::VectorXd x = X.row(0).transpose(), y = X.row(1).transpose();
    EXPECT_NEAR(empirical_ntk(p, x, y), empirical_ntk(p, y, x), 1e-12);
    EXPECT_NEAR(empirical_ntk(p, x, x), grad_theta(p, x).squaredNorm(), 1e-12);
    const Eigen::MatrixXd G = empirical_ntk_gram(p, X);
    EXPECT_TRUE(G == G.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-8 * 30);
    EXPECT_NEAR(G(3, 7), empirical_ntk(p, X.row(3).transpose(), X.row(7).transpose()), 1e-10);
}

TEST(Variance, InitialOutputMatchesRfkDiagonal) {
    // Var f0(x) = ||x~||^2 for one hidden layer at any width
    const Eigen::Vector3d x(0.4, -0.3, 0.2);
    const int seeds = 3000;
    double acc = 0.0;
    for (int s = 0; s < seeds; ++s) {
        const double v = forward(init_params(config(3, 1, 256, InitMode::Standard, derive_seed(77, s))), x);
        acc += v * v;
    }
    EXPECT_NEAR(acc / seeds, x.squaredNorm() + 1.0, 0.1 * (x.squaredNorm() + 1.0));
}

TEST(Train, ZeroStepsKeepsInitialPoint) {
    NetworkParams p = init_params(config(3, 1, 16));
    const Eigen::VectorXd before = p.flatten();
    const Points X = sample_sphere_gaussian(2, 5, 1);
    TrainOptions opt;
    opt.steps = 0;
    const TrainTrajectory t = train_gd(p, X, Eigen::VectorXd::Ones(5), opt);
    EXPECT_EQ(t.checkpoints.size(), 1u);
    EXPECT_EQ(t.losses.size(), 1u);
    EXPECT_TRUE(p.flatten() == before);
}

TEST(Train, OneStepEqualsLossGradient) {
    // 100 rows: the training loop works in row blocks, the reference does not
    const Points X = sample_sphere_gaussian(3, 100, 6);
    const Eigen::VectorXd Y = synth_target(X, 0.1, 7);
    for (int depth : {1, 2})
        for (InitMode mode : {InitMode::Standard, InitMode::Mirrored}) {
            NetworkParams p = init_params(config(4, depth, 24, mode, 8));
            const Eigen::VectorXd f = forward_batch(p, X);
            const Eigen::VectorXd expected =
                p.flatten() - 0.1 * weighted_gradient(p, X, (f - Y) / 100.0);
            TrainOptions opt;
            opt.lr = 0.1;
            opt.steps = 1;
            const TrainTrajectory t = train_gd(p, X, Y, opt);
            EXPECT_NEAR(t.losses[0], mse_loss(f, Y), 1e-13);
            EXPECT_LT((p.flatten() - expected).cwiseAbs().maxCoeff(), 1e-12);
        }
}

TEST(Train, SmallLearningRateDecreasesLoss) {
    NetworkParams p = init_params(config(4, 1, 256, InitMode::Standard, 3));
    const Points X = sample_sphere_gaussian(3, 10, 2);
    TrainOptions opt;
    opt.lr = 0.05;
    opt.steps = 100;
    const TrainTrajectory t = train_gd(p, X, synth_target(X, 0.2, 3), opt);
    for (std::size_t k = 1; k < t.losses.size(); ++k) EXPECT_LT(t.losses[k], t.losses[k - 1]);
}

TEST(Train, MirroredToyProblemFits) {
    NetworkParams p = init_params(config(4, 1, 512, InitMode::Mirrored, 4));
    const Points X = sample_sphere_gaussian(3, 8, 5);
    TrainOptions opt;
    opt.lr = 0.6;
    opt.steps = 80;
    opt.record_every = 10;
    const TrainTrajectory t = train_gd(p, X, synth_target(X, 0.2, 6), opt);
    EXPECT_EQ(t.losses.size(), 81u);
    EXPECT_EQ(t.checkpoints.size(), 9u);
    EXPECT_LT(t.losses.back(), 1e-3);
}

TEST(Train, MirroredGradientMatchesCombinedOutput) {
    NetworkParams p = init_params(config(4, 1, 32, InitMode::Mirrored, 4));
    const Points X = sample_sphere_gaussian(3, 6, 5);
    const Eigen::VectorXd Y = synth_target(X, 0.2, 6);
    NetworkParams q = p;
    TrainOptions opt;
    opt.lr = 0.1;
    opt.steps = 1;
    train_gd(q, X, Y, opt);
    const Eigen::VectorXd g = weighted_gradient(p, X, (forward_batch(p, X) - Y) / 6.0);
    EXPECT_LT((q.flatten() - (p.flatten() - 0.1 * g)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Train, DivergenceDetected) {
    NetworkParams p = init_params(config(4, 1, 64, InitMode::Standard, 3));
    const Points X = sample_sphere_gaussian(3, 10, 2);
    TrainOptions opt;
    opt.lr = 1e3;
    opt.steps = 50;
    EXPECT_THROW(train_gd(p, X, synth_target(X, 0.2, 3), opt), DivergenceError);
}

TEST(SupDeviation, IdenticalFunctionsGiveZero) {
    const Points X = sample_sphere_gaussian(3, 6, 1), grid = sample_sphere_gaussian(3, 4, 2);
    const Eigen::VectorXd Y = synth_target(X, 0.1, 3);
    const KgfPredictor pred({KernelFamily::NTK, 1, KernelDomain::Lifted}, X, Y, Eigen::VectorXd::Zero(6),
                            zero_function());
    TrainTrajectory traj;
    traj.lr = 0.5;
    for (int step : {0, 10, 20}) {
        Checkpoint cp;
        cp.step = step;
        cp.predictions = pred.predict_batch(0.5 * step, grid);
        traj.checkpoints.push_back(cp);
    }
    EXPECT_EQ(sup_deviation(traj, pred, grid, lr_time_map(0.5)), 0.0);
    EXPECT_THROW(sup_deviation(traj, pred, Points(0, 4), lr_time_map(0.5)), EmptyGrid);
}
