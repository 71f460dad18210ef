#include <cstdlib>

#include <gtest/gtest.h>

#include "ntklab/experiments.hpp"

using namespace ntklab;

namespace {

CurveConfig tiny_curve() {
    CurveConfig c;
    c.d = 2;
    c.n_grid = {8, 16, 32};
    c.width_factor = 4;
    c.epochs_factor = 2;
    c.seeds = {1, 2};
    c.n_test = 200;
    return c;
}

}  // namespace

TEST(Curve, ShapeContract) {
    const CurveResult r = run_curve(tiny_curve());
    EXPECT_EQ(r.rows.size(), 2u * 3u * 2u);
    EXPECT_EQ(r.fits.size(), 2u);
    for (const auto& row : r.rows) {
        EXPECT_EQ(row.width, 4 * row.n);
        EXPECT_EQ(row.steps, 2 * row.n);
        EXPECT_LE(row.risk, row.initial_risk);
        EXPECT_GE(row.best_step, 0);
        EXPECT_LE(row.best_step, row.steps);
        EXPECT_DOUBLE_EQ(row.best_time, row.best_step * 0.6);
    }
    EXPECT_NO_THROW((void)r.fit_for(InitMode::Mirrored));
}

TEST(Curve, MirroredStartsFromZero) {
    CurveConfig c = tiny_curve();
    c.modes = {InitMode::Mirrored};
    const CurveResult r = run_curve(c);
    for (const auto& row : r.rows) {
        // f0 = 0, so the initial risk is E f*^2 on the test set
        EXPECT_GT(row.initial_risk, 0.0);
    }
}

TEST(Curve, IndependentOfThreadCount) {
    setenv("NTKLAB_THREADS", "1", 1);
    const CurveResult a = run_curve(tiny_curve());
    setenv("NTKLAB_THREADS", "3", 1);
    const CurveResult b = run_curve(tiny_curve());
    unsetenv("NTKLAB_THREADS");
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].risk, b.rows[i].risk);
        EXPECT_EQ(a.rows[i].best_step, b.rows[i].best_step);
    }
}

TEST(Curve, Validation) {
    CurveConfig c = tiny_curve();
    c.n_grid = {16, 8};
    EXPECT_THROW(run_curve(c), ConfigError);
    c = tiny_curve();
    c.seeds.clear();
    EXPECT_THROW(run_curve(c), ConfigError);
}

TEST(Coupling, RunsAndIsFinite) {
    CouplingConfig c;
    c.n_train = 6;
    c.n_grid = 5;
    c.steps = 40;
    c.checkpoints = 4;
    for (auto mode : {InitMode::Standard, InitMode::Mirrored}) {
        const CouplingResult r = run_coupling(c, 64, mode, 3);
        EXPECT_TRUE(std::isfinite(r.sup_deviation));
        EXPECT_GE(r.sup_deviation, 0.0);
    }
}

TEST(ThmSmoothness, SmallTable) {
    ThmConfig c;
    c.d_values = {3};
    c.s_factors = {0.4, 2.0};
    const auto rows = run_thm_smoothness(c);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].predicted, Verdict::Converges);
    EXPECT_EQ(rows[1].predicted, Verdict::Diverges);
    EXPECT_TRUE(rows[0].agrees);
    EXPECT_TRUE(rows[1].agrees);
    EXPECT_NEAR(rows[0].s, 0.3, 1e-15);
}

TEST(SmoothnessRun, BadFileDoesNotStopOthers) {
    SmoothnessRunConfig c;
    c.paths = {"/nonexistent.csv"};
    const auto out = run_smoothness(c);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_FALSE(out[0].report);
    EXPECT_FALSE(out[0].error.empty());
}
