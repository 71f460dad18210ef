#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "ntklab/data.hpp"

using namespace ntklab;
namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
    const fs::path p = fs::temp_directory_path() / ("ntklab_" + name);
    std::ofstream(p) << text;
    return p.string();
}

// eigensystem with the identity basis, so c = Y / sqrt(n)
EigenSystem axis_system(int n) {
    EigenSystem e;
    e.values.resize(n);
    for (int i = 0; i < n; ++i) e.values(i) = std::pow(i + 1.0, -4.0 / 3.0);
    e.vectors = Eigen::MatrixXd::Identity(n, n);
    return e;
}

Dataset planted(const EigenSystem& e, double p) {
    const Eigen::Index n = e.size();
    Eigen::VectorXd c(n);
    for (Eigen::Index k = 0; k < n; ++k) c(k) = std::pow(k + 1.0, -p);
    Dataset ds;
    ds.X = Eigen::MatrixXd::Zero(n, 1);
    ds.Y = std::sqrt(static_cast<double>(n)) * e.vectors * c;
    ds.meta.name = "planted";
    return ds;
}

}  // namespace

TEST(Sampling, SphereShapeAndMoment) {
    const Points X = sample_sphere_gaussian(2, 20000, 4);
    ASSERT_EQ(X.cols(), 3);
    EXPECT_LT((X.rowwise().norm().array() - 1.0).abs().maxCoeff(), 1e-14);
    const Eigen::VectorXd x1sq = X.col(0).array().square();
    const double mean = x1sq.mean();
    const double se = std::sqrt((x1sq.array() - mean).square().mean() / 20000);
    EXPECT_NEAR(mean, 1.0 / 3.0, 4 * se);
}

TEST(Sampling, BallRadius) {
    const Points X = sample_ball(3, 500, 0.5, 1);
    EXPECT_LE(X.rowwise().norm().maxCoeff(), 0.5 + 1e-15);
    EXPECT_TRUE(X == sample_ball(3, 500, 0.5, 1));
}

TEST(Target, RegressionFunction) {
    EXPECT_DOUBLE_EQ(synth_regression_function(Eigen::Vector4d(1, 0, 0, 0)), 1.0);
    EXPECT_DOUBLE_EQ(synth_regression_function(Eigen::Vector4d(0.5, -0.5, 0, std::sqrt(0.5))), 0.0);
    // last coordinate is excluded from the sum
    EXPECT_DOUBLE_EQ(synth_regression_function(Eigen::Vector3d(0, 0, 1)), 0.0);
}

TEST(Target, NoiseVariance) {
    const Points X = sample_sphere_gaussian(3, 100000, 1);
    const Eigen::VectorXd r = synth_target(X, 0.2, 2) - synth_regression_values(X);
    const double var = (r.array() - r.mean()).square().mean();
    EXPECT_NEAR(var, 0.04, 0.05 * 0.04);
    EXPECT_TRUE(synth_target(X.topRows(10), 0.0, 3) == synth_regression_values(X.topRows(10)));
}

TEST(LoadCsv, SmallFixture) {
    const auto path = write_temp("small.csv", "1,2,3,0\n4,5,6,1\n7,8,9,2\n");
    const Dataset ds = load_csv(path);
    EXPECT_EQ(ds.X.rows(), 3);
    EXPECT_EQ(ds.X.cols(), 3);
    EXPECT_EQ(ds.Y, Eigen::Vector3d(0, 1, 2));
    EXPECT_EQ(ds.X(1, 2), 6.0);
    EXPECT_EQ(ds.meta.name, "ntklab_small.csv");
}

TEST(LoadCsv, HeaderSkipped) {
    const auto path = write_temp("header.csv", "a,b,label\n1,2,0\n3,4,1\n");
    const Dataset ds = load_csv(path);
    EXPECT_EQ(ds.X.rows(), 2);
}

TEST(LoadCsv, LabelColumnAndEncoding) {
    const auto path = write_temp("labels.csv", "3,1,2\n5,3,4\n");
    CsvOptions opt;
    opt.label_column = 0;
    opt.label_encoding = LabelEncoding::OneVsRest;
    opt.positive_class = 5;
    const Dataset ds = load_csv(path, opt);
    EXPECT_EQ(ds.Y, Eigen::Vector2d(0, 1));
    EXPECT_EQ(ds.X(1, 0), 3.0);
}

TEST(LoadCsv, ParseErrorLocation) {
    const auto path = write_temp("bad.csv", "1,2,3\n4,x,6\n");
    try {
        load_csv(path);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.row(), 2u);
        EXPECT_EQ(e.column(), 2u);
    }
    EXPECT_THROW(load_csv(write_temp("ragged.csv", "1,2,3\n4,5\n")), ParseError);
    EXPECT_THROW(load_csv(write_temp("inf.csv", "1,2,3\n4,inf,6\n")), ParseError);
}

TEST(LoadCsv, EmptyAndZeroNorm) {
    EXPECT_THROW(load_csv(write_temp("empty.csv", "")), EmptyDataset);
    EXPECT_THROW(load_csv(write_temp("onlyheader.csv", "a,b\n")), EmptyDataset);
    CsvOptions opt;
    opt.normalize = RowNormalization::UnitSphere;
    EXPECT_THROW(load_csv(write_temp("zero.csv", "1,0,1\n0,0,2\n"), opt), ZeroNormRow);
    const Dataset ds = load_csv(write_temp("norm.csv", "3,4,1\n"), opt);
    EXPECT_NEAR(ds.X.row(0).norm(), 1.0, 1e-15);
}

TEST(LoadCsv, SeededSubset) {
    std::string text;
    for (int i = 0; i < 60000; ++i) text += std::to_string(i) + "," + std::to_string(i % 10) + "\n";
    const auto path = write_temp("large.csv", text);
    CsvOptions opt;
    opt.max_rows = 3000;
    opt.seed = 11;
    const Dataset a = load_csv(path, opt), b = load_csv(path, opt);
    EXPECT_EQ(a.X.rows(), 3000);
    EXPECT_TRUE(a.X == b.X);
    opt.seed = 12;
    EXPECT_FALSE(a.X == load_csv(path, opt).X);
}

TEST(Smoothness, PlantedCoefficientsRecovered) {
    const EigenSystem e = axis_system(3000);
    const Dataset ds = planted(e, 1.25);
    SmoothnessOptions opt;
    opt.fit_min_index = 20;
    opt.fit_max_index = 100;
    opt.intrinsic_dim = 3;
    const SmoothnessReport r = smoothness_from_eigensystem(e, ds, opt);
    ASSERT_TRUE(r.fit);
    EXPECT_NEAR(r.fit->slope, -1.5, 0.05);
    EXPECT_NEAR(r.alpha_hat, std::abs(r.fit->slope) / (4.0 / 3.0), 1e-12);
    EXPECT_DOUBLE_EQ(r.d_lambda, 4.0 / 3.0);
}

TEST(Smoothness, ParsevalAndMonotoneTails) {
    const Points X = sample_sphere_gaussian(3, 200, 1);
    Dataset ds;
    ds.X = X;
    ds.Y = synth_target(X, 0.2, 2);
    SmoothnessOptions opt;
    opt.kernel.domain = KernelDomain::Sphere;
    const SmoothnessReport r = smoothness_estimate(ds, opt);
    EXPECT_NEAR(r.tail_sums[0], ds.Y.squaredNorm() / 200.0, 1e-8);
    for (std::size_t i = 1; i < r.tail_sums.size(); ++i) EXPECT_LE(r.tail_sums[i], r.tail_sums[i - 1]);
    EXPECT_DOUBLE_EQ(r.d_lambda_theoretical, 4.0 / 3.0);
    ASSERT_TRUE(r.d_lambda_fitted);
    EXPECT_FALSE(r.degenerate);
}

TEST(Smoothness, ScaleInvariant) {
    const Points X = sample_sphere_gaussian(3, 200, 3);
    Dataset ds;
    ds.X = X;
    ds.Y = synth_target(X, 0.2, 4);
    const EigenSystem e = eig_sym(gram(SmoothnessOptions{}.kernel, X));
    const SmoothnessReport a = smoothness_from_eigensystem(e, ds, {});
    ds.Y *= 17.5;
    const SmoothnessReport b = smoothness_from_eigensystem(e, ds, {});
    EXPECT_NEAR(a.fit->slope, b.fit->slope, 1e-10);
}

TEST(Smoothness, FirstEigenvectorIsDegenerate) {
    const Points X = sample_sphere_gaussian(3, 100, 5);
    const EigenSystem e = eig_sym(gram(SmoothnessOptions{}.kernel, X));
    Dataset ds;
    ds.X = X;
    ds.Y = e.vectors.col(0);
    const SmoothnessReport r = smoothness_from_eigensystem(e, ds, {});
    for (std::size_t i = 1; i < r.tail_sums.size(); ++i) EXPECT_EQ(r.tail_sums[i], 0.0);
    EXPECT_TRUE(r.degenerate);
    EXPECT_TRUE(std::isnan(r.alpha_hat));
}

TEST(Smoothness, FitWindowValidation) {
    const EigenSystem e = axis_system(100);
    SmoothnessOptions opt;
    opt.fit_max_index = 101;
    EXPECT_THROW(smoothness_from_eigensystem(e, planted(e, 1.0), opt), RangeError);
    opt.d_lambda_mode = DecayMode::Fitted;
    opt.fit_max_index = 0;
    const SmoothnessReport r = smoothness_from_eigensystem(e, planted(e, 1.0), opt);
    EXPECT_NEAR(r.d_lambda, 4.0 / 3.0, 1e-10);
}
