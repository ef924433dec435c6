#include <gtest/gtest.h>

#include "m3dm/baseline.hpp"
#include "m3dm/errors.hpp"
#include "test_util.hpp"

using namespace m3dm;

namespace {

// Two-pass centering, independent of the library's mean update.
MatrixXd centered(const MatrixXd& P) {
  MatrixXd C = P;
  for (Eigen::Index r = 0; r < P.rows(); ++r) {
    double m = 0;
    for (Eigen::Index c = 0; c < P.cols(); ++c) m += P(r, c);
    m /= static_cast<double>(P.cols());
    for (Eigen::Index c = 0; c < P.cols(); ++c) C(r, c) -= m;
  }
  return C;
}

std::vector<EditPair> random_pairs(const VectorXd& p_hat, double alpha, double noise, int n, Rng& rng) {
  std::vector<EditPair> pairs;
  std::uniform_real_distribution<double> s(-2, 2);
  for (int i = 0; i < n; ++i) {
    EditPair e;
    e.p_src = testutil::gaussian(p_hat.size(), rng);
    e.s_src = s(rng);
    e.s_trg = s(rng);
    e.p_trg = e.p_src + alpha * (e.s_trg - e.s_src) * p_hat + testutil::gaussian(p_hat.size(), rng, noise);
    pairs.push_back(e);
  }
  return pairs;
}

}  // namespace

TEST(FitDirection, HandComputedCase) {
  MatrixXd P(2, 2);
  P << 1, -1, 2, -2;
  VectorXd a(2);
  a << 1, -1;
  const GlobalDirection d = fit_direction(P, a);
  EXPECT_NEAR(d.p_hat[0], 1.0, 1e-15);
  EXPECT_NEAR(d.p_hat[1], 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(d.scale_alpha, 1.0);
}

TEST(FitDirection, ExactRankOneRecovery) {
  Rng rng(1);
  const VectorXd p_star = testutil::gaussian(10, rng);
  VectorXd a = testutil::gaussian(50, rng);
  a.array() -= a.mean();
  const VectorXd offset = testutil::gaussian(10, rng);
  const MatrixXd P = (p_star * a.transpose()).colwise() + offset;
  EXPECT_LT((fit_direction(P, a).p_hat - p_star).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FitDirection, MatchesGradientDescentOracle) {
  Rng rng(2);
  const MatrixXd P = testutil::gaussian(8, 40, rng);
  const VectorXd a = testutil::gaussian(40, rng);
  const MatrixXd Pc = centered(P);
  // Minimize ||Pc - p a^T||_F^2 by plain gradient descent.
  VectorXd p = VectorXd::Zero(8);
  const double step = 0.3 / a.squaredNorm();
  for (int it = 0; it < 100000; ++it) {
    const VectorXd grad = -2.0 * (Pc - p * a.transpose()) * a;
    if (grad.norm() < 1e-12) break;
    p -= step * grad;
  }
  EXPECT_LT((fit_direction(P, a).p_hat - p).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FitDirection, Errors) {
  MatrixXd P = MatrixXd::Ones(3, 4);
  EXPECT_THROW(fit_direction(P, VectorXd::Zero(4)), ContractError);
  EXPECT_THROW(fit_direction(MatrixXd::Ones(3, 1), VectorXd::Ones(1)), ContractError);
  P(0, 0) = NAN;
  EXPECT_THROW(fit_direction(P, VectorXd::Ones(4)), NumericalError);
}

TEST(FitDirection, CenteringInvariance) {
  Rng rng(3);
  const MatrixXd P = testutil::gaussian(6, 30, rng);
  const VectorXd a = testutil::gaussian(30, rng);
  const VectorXd shift = testutil::gaussian(6, rng, 10.0);
  const MatrixXd Q = P.colwise() + shift;
  EXPECT_LT((fit_direction(P, a).p_hat - fit_direction(Q, a).p_hat).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FitDirection, ScaleHomogeneityAndRefitInvariance) {
  Rng rng(4);
  const MatrixXd P = testutil::gaussian(6, 30, rng);
  const VectorXd a = testutil::gaussian(30, rng);
  const double c = 3.7;
  const GlobalDirection d1 = fit_direction(P, a), dc = fit_direction(P, c * a);
  EXPECT_LT((dc.p_hat - d1.p_hat / c).cwiseAbs().maxCoeff(), 1e-10);

  const VectorXd truth = testutil::gaussian(6, rng);
  const auto pairs = random_pairs(truth, 1.0, 0.1, 20, rng);
  const GlobalDirection r1 = refit_scale(d1, pairs), rc = refit_scale(dc, pairs);
  const VectorXd p = testutil::gaussian(6, rng);
  EXPECT_LT((apply(r1, p, 0.3, -1.1) - apply(rc, p, 0.3, -1.1)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FitDirection, Deterministic) {
  Rng rng(5);
  const MatrixXd P = testutil::gaussian(6, 30, rng);
  const VectorXd a = testutil::gaussian(30, rng);
  EXPECT_TRUE(testutil::bit_equal(fit_direction(P, a).p_hat, fit_direction(P, a).p_hat));
}

TEST(Apply, NoScoreChangeIsIdentityAndLinear) {
  Rng rng(6);
  GlobalDirection d;
  d.p_hat = testutil::gaussian(5, rng);
  d.scale_alpha = 0.7;
  const VectorXd p = testutil::gaussian(5, rng);
  EXPECT_TRUE(testutil::bit_equal(apply(d, p, 1.3, 1.3), p));
  const double ds = 0.8;
  const VectorXd diff = apply(d, p, 0.0, 2 * ds) - apply(d, p, 0.0, ds);
  EXPECT_LT((diff - ds * d.scale_alpha * d.p_hat).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(apply(d, VectorXd::Zero(4), 0, 1), ContractError);
}

TEST(RefitScale, ExactRecovery) {
  Rng rng(7);
  GlobalDirection d;
  d.p_hat = testutil::gaussian(5, rng);
  const auto pairs = random_pairs(d.p_hat, 3.0, 0.0, 10, rng);
  EXPECT_NEAR(refit_scale(d, pairs).scale_alpha, 3.0, 1e-10);
}

TEST(RefitScale, SinglePairInterpolatesProjection) {
  Rng rng(8);
  GlobalDirection d;
  d.p_hat = testutil::gaussian(5, rng);
  const auto pairs = random_pairs(d.p_hat, 1.0, 0.5, 1, rng);
  const GlobalDirection r = refit_scale(d, pairs);
  const auto& e = pairs[0];
  const VectorXd u = d.p_hat.normalized();
  const VectorXd expect = e.p_src + (e.p_trg - e.p_src).dot(u) * u;
  EXPECT_LT((apply(r, e.p_src, e.s_src, e.s_trg) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RefitScale, MatchesGoldenSectionSearch) {
  Rng rng(9);
  GlobalDirection d;
  d.p_hat = testutil::gaussian(7, rng);
  const auto pairs = random_pairs(d.p_hat, 0.4, 0.3, 30, rng);
  auto objective = [&](long double alpha) {
    long double f = 0;
    for (const auto& e : pairs)
      for (Eigen::Index j = 0; j < d.p_hat.size(); ++j) {
        const long double r = static_cast<long double>(e.p_trg[j]) - e.p_src[j] -
                              alpha * (static_cast<long double>(e.s_trg) - e.s_src) * d.p_hat[j];
        f += r * r;
      }
    return f;
  };
  const long double phi = (std::sqrt(5.0L) - 1.0L) / 2.0L;
  long double lo = -10, hi = 10;
  long double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  long double f1 = objective(x1), f2 = objective(x2);
  while (hi - lo > 1e-13L) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = objective(x2);
    }
  }
  EXPECT_NEAR(refit_scale(d, pairs).scale_alpha, static_cast<double>(0.5L * (lo + hi)), 1e-8);
}

TEST(RefitScale, TrainingErrorNeverAboveUnitGain) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    GlobalDirection d;
    d.p_hat = testutil::gaussian(6, rng);
    const auto pairs = random_pairs(testutil::gaussian(6, rng), 1.5, 0.2, 25, rng);
    const GlobalDirection r = refit_scale(d, pairs);
    double sq1 = 0, sqr = 0;
    for (const auto& e : pairs) {
      sq1 += (e.p_trg - apply(d, e.p_src, e.s_src, e.s_trg)).squaredNorm();
      sqr += (e.p_trg - apply(r, e.p_src, e.s_src, e.s_trg)).squaredNorm();
    }
    EXPECT_LE(sqr, sq1 * (1 + 1e-12));
  }
}

TEST(RefitScale, AllDeltasZeroIsAnError) {
  GlobalDirection d;
  d.p_hat = VectorXd::Ones(3);
  std::vector<EditPair> pairs = {{VectorXd::Zero(3), 1.0, VectorXd::Ones(3), 1.0}};
  EXPECT_THROW(refit_scale(d, pairs), ContractError);
}

TEST(FitBaseline, StacksBothPairMembers) {
  Rng rng(11);
  const VectorXd dir = testutil::gaussian(4, rng);
  const VectorXd base = testutil::gaussian(4, rng);
  std::vector<PairedSample> samples;
  for (int i = 0; i < 50; ++i) {
    PairedSample s;
    s.id = static_cast<std::uint64_t>(i);
    s.s_pos = 1.0 + 0.01 * i;
    s.s_neg = -0.5 - 0.01 * i;
    s.p_pos = base + s.s_pos * dir;
    s.p_neg = base + s.s_neg * dir;
    samples.push_back(s);
  }
  std::unique_ptr<bool[]> coins(new bool[samples.size()]());
  const GlobalDirection g = fit_baseline(samples, std::span<const bool>(coins.get(), samples.size()), "x");
  EXPECT_EQ(g.train_size, 100u);
  EXPECT_EQ(g.attribute, "x");
  // One shared identity moved along a global direction: the refit baseline is exact.
  for (const auto& s : samples)
    EXPECT_LT((apply(g, s.p_neg, s.s_neg, s.s_pos) - s.p_pos).norm(), 1e-9);
}
