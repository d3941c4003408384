#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "adasim/numcore.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace adasim;

namespace {

MlpEncoder single_layer(Matrix w, Vector b, Activation act) {
  return MlpEncoder({DenseLayer{std::move(w), std::move(b), act}});
}

}  // namespace

TEST(L2Normalize, ThreeFour) {
  Vector v(2);
  v << 3.0, 4.0;
  const Vector u = l2_normalize(v);
  EXPECT_DOUBLE_EQ(u[0], 0.6);
  EXPECT_DOUBLE_EQ(u[1], 0.8);
}

TEST(L2Normalize, UnitVectorIsFixed) {
  Vector e = Vector::Zero(5);
  e[3] = 1.0;
  EXPECT_EQ(l2_normalize(e), e);
}

TEST(L2Normalize, IdempotentOnRandomVectors) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 100; ++t) {
    const Vector v = testutil::random_vector(1 + t % 17, rng, 3.0);
    const Vector once = l2_normalize(v);
    const Vector twice = l2_normalize(once);
    EXPECT_NEAR(once.norm(), 1.0, 1e-9);
    EXPECT_LE((twice - once).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(L2Normalize, ZeroVectorIsDegenerate) {
  EXPECT_ADASIM_ERROR(l2_normalize(Vector::Zero(3)), ErrorKind::kDegenerateInput);
}

TEST(L2Normalize, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  Matrix x = testutil::random_matrix(4, 3, rng);
  const Matrix c = testutil::random_matrix(4, 3, rng);
  Matrix y = x;
  const Vector norms = l2_normalize_columns(y);
  const Matrix dx = l2_normalize_backward(y, norms, c);
  auto f = [&](const std::vector<double>& flat) {
    Matrix m = Eigen::Map<const Matrix>(flat.data(), 4, 3);
    l2_normalize_columns(m);
    return (m.array() * c.array()).sum();
  };
  const auto num = oracle::numeric_gradient(f, std::vector<double>(x.data(), x.data() + x.size()));
  EXPECT_LT(oracle::vector_relative_error(std::vector<double>(dx.data(), dx.data() + dx.size()), num),
            1e-7);
}

TEST(MlpForward, IdentityLayer) {
  const MlpEncoder enc = MlpEncoder::identity(2);
  Vector x(2);
  x << 1.0, 2.0;
  EXPECT_EQ(mlp_forward(enc, x).first, x);
}

TEST(MlpForward, ReluClampsNegatives) {
  const MlpEncoder enc = single_layer(Matrix::Identity(2, 2), Vector::Zero(2), Activation::kRelu);
  Vector x(2);
  x << -1.0, 2.0;
  const Vector y = mlp_forward(enc, x).first;
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 2.0);
}

TEST(MlpForward, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(11);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MlpEncoder enc = testutil::random_mlp({7, 9, 5}, seed);
    const Vector x = testutil::random_vector(7, rng);
    const Vector y = mlp_forward(enc, x).first;
    const auto ref = oracle::forward(enc, oracle::to_std(x));
    ASSERT_EQ(y.size(), static_cast<Eigen::Index>(ref.size()));
    for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(y[static_cast<Eigen::Index>(k)], ref[k], 1e-12);
  }
}

TEST(MlpForward, BatchEqualsPerSample) {
  std::mt19937_64 rng(5);
  const MlpEncoder enc = testutil::random_mlp({6, 8, 4}, 2);
  const Matrix x = testutil::random_matrix(6, 5, rng);
  const Matrix y = mlp_forward_batch(enc, x);
  for (int c = 0; c < 5; ++c) {
    const Vector yc = mlp_forward(enc, x.col(c)).first;
    EXPECT_LE((y.col(c) - yc).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(MlpForward, SameSeedIsBitIdentical) {
  const MlpEncoder a = testutil::random_mlp({16, 32, 8}, 99);
  const MlpEncoder b = testutil::random_mlp({16, 32, 8}, 99);
  std::mt19937_64 rng(1);
  const Matrix x = testutil::random_matrix(16, 10, rng);
  EXPECT_EQ(mlp_forward_batch(a, x), mlp_forward_batch(b, x));
}

TEST(MlpForward, InitializationWithinFanInBound) {
  const MlpEncoder enc = testutil::random_mlp({25, 100, 4}, 0);
  for (const auto& l : enc.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), bound);
    EXPECT_LE(l.bias.cwiseAbs().maxCoeff(), bound);
  }
  EXPECT_EQ(enc.parameter_count(), 25u * 100 + 100 + 100 * 4 + 4);
}

TEST(MlpForward, ShapeMismatchThrows) {
  const MlpEncoder enc = MlpEncoder::identity(3);
  EXPECT_ADASIM_ERROR(mlp_forward(enc, Vector::Zero(4)), ErrorKind::kShape);
}

TEST(MlpEncoderShape, InconsistentLayersRejected) {
  std::vector<DenseLayer> layers = {{Matrix::Zero(4, 3), Vector::Zero(4), Activation::kRelu},
                                    {Matrix::Zero(2, 5), Vector::Zero(2), Activation::kIdentity}};
  EXPECT_ADASIM_ERROR(MlpEncoder{layers}, ErrorKind::kShape);
}

TEST(MlpBackward, ZeroUpstreamGivesZeroGradients) {
  const MlpEncoder enc = testutil::random_mlp({5, 7, 3}, 4);
  std::mt19937_64 rng(2);
  auto [y, tape] = mlp_forward(enc, testutil::random_vector(5, rng));
  const Gradients g = mlp_backward(enc, tape, Vector(Vector::Zero(3)));
  EXPECT_EQ(g.squared_norm(), 0.0);
}

TEST(MlpBackward, IdentityLayerHalfSquaredNorm) {
  // L = y.y/2 with y = Wx + b, so dL/dW = y x^T and dL/db = y.
  std::mt19937_64 rng(8);
  const MlpEncoder enc =
      single_layer(testutil::random_matrix(3, 4, rng), testutil::random_vector(3, rng), Activation::kIdentity);
  const Vector x = testutil::random_vector(4, rng);
  auto [y, tape] = mlp_forward(enc, x);
  const Gradients g = mlp_backward(enc, tape, y);
  const Matrix expected = y * x.transpose();
  EXPECT_LE((g.weight[0] - expected).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((g.bias[0] - y).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MlpBackward, TwoLayerReluFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MlpEncoder enc = testutil::random_mlp({6, 10, 4}, seed);
    std::mt19937_64 rng(seed + 100);
    const Matrix x = testutil::random_matrix(6, 3, rng);
    const Matrix c = testutil::random_matrix(4, 3, rng);
    Tape tape;
    mlp_forward_batch(enc, x, &tape);
    Matrix dx;
    const Gradients g = mlp_backward(enc, tape, c, &dx);

    MlpEncoder probe = enc;
    auto loss_of_params = [&](const std::vector<double>& p) {
      oracle::unflatten(probe, p);
      return (mlp_forward_batch(probe, x).array() * c.array()).sum();
    };
    const auto num = oracle::numeric_gradient(loss_of_params, oracle::flatten(enc));
    EXPECT_LT(oracle::vector_relative_error(oracle::flatten(g), num), 1e-4) << "seed " << seed;

    auto loss_of_input = [&](const std::vector<double>& flat) {
      const Matrix xi = Eigen::Map<const Matrix>(flat.data(), 6, 3);
      return (mlp_forward_batch(enc, xi).array() * c.array()).sum();
    };
    const auto num_dx = oracle::numeric_gradient(loss_of_input, std::vector<double>(x.data(), x.data() + x.size()));
    EXPECT_LT(oracle::vector_relative_error(std::vector<double>(dx.data(), dx.data() + dx.size()), num_dx), 1e-4);
  }
}

TEST(MlpBackward, StaleTapeRejected) {
  MlpEncoder enc = testutil::random_mlp({3, 4, 2}, 1);
  auto [y, tape] = mlp_forward(enc, Vector::Ones(3));
  enc.mutable_layers()[0].bias[0] += 1.0;
  EXPECT_ADASIM_ERROR(mlp_backward(enc, tape, Vector(Vector::Ones(2))), ErrorKind::kTape);
}

TEST(MlpBackward, TapeFromAnotherEncoderRejected) {
  const MlpEncoder a = testutil::random_mlp({3, 4, 2}, 1);
  const MlpEncoder b = a;
  auto [y, tape] = mlp_forward(a, Vector::Ones(3));
  EXPECT_ADASIM_ERROR(mlp_backward(b, tape, Vector(Vector::Ones(2))), ErrorKind::kTape);
}

TEST(SgdStep, ZeroLearningRateLeavesParameters) {
  MlpEncoder enc = testutil::random_mlp({3, 2}, 5);
  const auto before = oracle::flatten(enc);
  Gradients g = Gradients::zeros_like(enc);
  g.weight[0].setConstant(1.0);
  OptState st(0.0, 0.0);
  sgd_step(enc, g, st);
  EXPECT_EQ(oracle::flatten(enc), before);
}

TEST(SgdStep, PlainStepIsExact) {
  MlpEncoder enc = single_layer(Matrix::Constant(1, 1, 1.0), Vector::Constant(1, 1.0), Activation::kIdentity);
  Gradients g = Gradients::zeros_like(enc);
  g.weight[0](0, 0) = 0.5;
  g.bias[0][0] = 0.5;
  OptState st(1.0, 0.0);
  sgd_step(enc, g, st);
  EXPECT_EQ(enc.layers()[0].weight(0, 0), 0.5);
  EXPECT_EQ(enc.layers()[0].bias[0], 0.5);
}

TEST(SgdStep, MomentumTwoStepsMatchHandUnroll) {
  // v1 = g1, p1 = p0 - lr*v1; v2 = mu*v1 + g2, p2 = p1 - lr*v2.
  const double p0 = 2.0, g1 = 0.3, g2 = -0.7, lr = 0.1, mu = 0.9;
  MlpEncoder enc = single_layer(Matrix::Constant(1, 1, p0), Vector::Zero(1), Activation::kIdentity);
  OptState st(lr, mu);
  Gradients g = Gradients::zeros_like(enc);
  g.weight[0](0, 0) = g1;
  sgd_step(enc, g, st);
  g.weight[0](0, 0) = g2;
  sgd_step(enc, g, st);
  const double v1 = g1, p1 = p0 - lr * v1, v2 = mu * v1 + g2, p2 = p1 - lr * v2;
  EXPECT_DOUBLE_EQ(enc.layers()[0].weight(0, 0), p2);
}

TEST(SgdStep, WeightDecaySkipsBiases) {
  MlpEncoder enc = single_layer(Matrix::Constant(1, 1, 2.0), Vector::Constant(1, 2.0), Activation::kIdentity);
  OptState st(0.5, 0.0, 0.1);
  sgd_step(enc, Gradients::zeros_like(enc), st);
  EXPECT_DOUBLE_EQ(enc.layers()[0].weight(0, 0), 2.0 - 0.5 * 0.1 * 2.0);
  EXPECT_EQ(enc.layers()[0].bias[0], 2.0);
}

TEST(SgdStep, ShapeMismatchThrows) {
  MlpEncoder enc = testutil::random_mlp({3, 2}, 5);
  const MlpEncoder other = testutil::random_mlp({3, 4, 2}, 5);
  OptState st(0.1, 0.0);
  EXPECT_ADASIM_ERROR(sgd_step(enc, Gradients::zeros_like(other), st), ErrorKind::kShape);
}

TEST(EmaUpdate, LambdaOneKeepsTeacher) {
  MlpEncoder t = testutil::random_mlp({4, 3}, 1);
  const MlpEncoder s = testutil::random_mlp({4, 3}, 2);
  const auto before = oracle::flatten(t);
  ema_update(t, s, 1.0);
  EXPECT_EQ(oracle::flatten(t), before);
}

TEST(EmaUpdate, LambdaZeroCopiesStudent) {
  MlpEncoder t = testutil::random_mlp({4, 3}, 1);
  const MlpEncoder s = testutil::random_mlp({4, 3}, 2);
  ema_update(t, s, 0.0);
  EXPECT_EQ(oracle::flatten(t), oracle::flatten(s));
}

TEST(EmaUpdate, HalfIsArithmeticMean) {
  MlpEncoder t = single_layer(Matrix::Constant(1, 1, 2.0), Vector::Constant(1, 2.0), Activation::kIdentity);
  const MlpEncoder s = single_layer(Matrix::Constant(1, 1, 4.0), Vector::Constant(1, 4.0), Activation::kIdentity);
  ema_update(t, s, 0.5);
  EXPECT_EQ(t.layers()[0].weight(0, 0), 3.0);
  EXPECT_EQ(t.layers()[0].bias[0], 3.0);
}

TEST(EmaUpdate, FixedPointWhenEqual) {
  const MlpEncoder s = testutil::random_mlp({5, 6, 3}, 3);
  for (double lambda : {0.0, 0.3, 0.996, 1.0}) {
    MlpEncoder t = s;
    ema_update(t, s, lambda);
    const auto a = oracle::flatten(t), b = oracle::flatten(s);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-15) << lambda;
  }
}

TEST(EmaUpdate, LambdaOutOfRangeIsConfigError) {
  MlpEncoder t = testutil::random_mlp({4, 3}, 1);
  const MlpEncoder s = t;
  EXPECT_ADASIM_ERROR(ema_update(t, s, 1.5), ErrorKind::kConfig);
  EXPECT_ADASIM_ERROR(ema_update(t, s, -0.1), ErrorKind::kConfig);
}

TEST(Checkpoint, RoundTrip) {
  testutil::TempDir dir("ckpt");
  const MlpEncoder a = testutil::random_mlp({6, 8, 3}, 10);
  const MlpEncoder b = testutil::random_mlp({3, 3}, 11);
  save_checkpoint(dir / "x.ckpt", {{"student", &a}, {"predictor", &b}});
  const auto loaded = load_checkpoint(dir / "x.ckpt");
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(oracle::flatten(loaded.at("student")), oracle::flatten(a));
  EXPECT_EQ(oracle::flatten(loaded.at("predictor")), oracle::flatten(b));
  EXPECT_EQ(loaded.at("student").layers()[0].act, Activation::kRelu);
  EXPECT_EQ(loaded.at("student").layers()[1].act, Activation::kIdentity);
}

TEST(Checkpoint, StartsWithMagic) {
  testutil::TempDir dir("ckpt");
  const MlpEncoder a = testutil::random_mlp({2, 2}, 1);
  save_checkpoint(dir / "x.ckpt", {{"student", &a}});
  std::ifstream is(dir / "x.ckpt", std::ios::binary);
  std::string head(13, '\0');
  is.read(head.data(), 13);
  EXPECT_EQ(head, "ADASIM-CKPT-1");
}

TEST(Checkpoint, BadMagicAndTruncationAreFormatErrors) {
  testutil::TempDir dir("ckpt");
  {
    std::ofstream os(dir / "bad.ckpt", std::ios::binary);
    os << "NOT-A-CHECKPOINT-FILE";
  }
  EXPECT_ADASIM_ERROR(load_checkpoint(dir / "bad.ckpt"), ErrorKind::kFormat);

  const MlpEncoder a = testutil::random_mlp({6, 8, 3}, 10);
  save_checkpoint(dir / "full.ckpt", {{"student", &a}});
  const auto size = std::filesystem::file_size(dir / "full.ckpt");
  std::filesystem::copy_file(dir / "full.ckpt", dir / "cut.ckpt");
  std::filesystem::resize_file(dir / "cut.ckpt", size - 9);
  EXPECT_ADASIM_ERROR(load_checkpoint(dir / "cut.ckpt"), ErrorKind::kFormat);
  EXPECT_ADASIM_ERROR(load_checkpoint(dir / "missing.ckpt"), ErrorKind::kIo);
}
