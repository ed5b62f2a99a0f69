#include <doctest.h>

#include "bdkf/linalg.hpp"
#include "bdkf/model.hpp"
#include "bdkf/random.hpp"
#include "oracles.hpp"

using namespace bdkf;
using oracle::Mat;

TEST_CASE("simulate: noiseless system stays put") {
  CoupledSystem s;
  s.c = 1;
  s.d = 1;
  s.r = 1;
  s.U = Mat::Zero(1, 1);
  s.subsystems.push_back({Mat::Identity(1, 1), Mat::Constant(1, 1, 2.0), Mat::Zero(1, 1),
                          Mat::Zero(1, 1), Mat::Ones(1, 1)});
  const Trajectory t = simulate(s, 5, Vec::Ones(1), {3});
  for (Index k = 0; k < 5; ++k) {
    CHECK(t.states(k, 0) == 1.0);
    CHECK(t.measurements(k, 0) == 2.0);
  }
}

TEST_CASE("simulate: the shared input moves every sub-system alike") {
  CoupledSystem s = make_identical_chain(0.3, 4);
  for (auto& b : s.subsystems) b.V.setZero();
  s.U = Mat::Constant(1, 1, 4.0);
  const Trajectory t = simulate(s, 20, Vec::Zero(8), {11});
  const Mat F = s.subsystems[0].F;
  for (Index k = 0; k + 1 < 20; ++k) {
    Eigen::Vector2d inc0;
    for (Index i = 0; i < 4; ++i) {
      const Eigen::Vector2d xk = t.states.row(k).segment(2 * i, 2).transpose();
      const Eigen::Vector2d xn = t.states.row(k + 1).segment(2 * i, 2).transpose();
      const Eigen::Vector2d inc = xn - F * xk;
      if (i == 0) inc0 = inc;
      CHECK((inc - inc0).norm() <= 1e-12);
      CHECK((inc - Mat(s.subsystems[i].G) * t.inputs(k, 0)).norm() <= 1e-12);
    }
  }
  CHECK(simulate(s, 20, Vec::Zero(8), {11}).states == t.states);
}

TEST_CASE("simulate rejects bad covariances") {
  CoupledSystem s = make_identical_chain(0.3, 2);
  s.subsystems[1].V(0, 0) = -1.0;
  CHECK_THROWS_AS(simulate(s, 3, Vec::Zero(4), {1}), ValidationError);
  CoupledSystem s2 = make_identical_chain(0.3, 2);
  s2.U(0, 0) = -1.0;
  CHECK_THROWS_AS(s2.validate(), ValidationError);
  CoupledSystem s3 = make_identical_chain(0.3, 2);
  s3.subsystems[0].H = Mat::Ones(2, 2);
  CHECK_THROWS_AS(s3.validate(), ValidationError);
}

TEST_CASE("identical chain") {
  const CoupledSystem s0 = make_identical_chain(0.0, 1);
  Mat F(2, 2);
  F << 0.9, 0.0, 0.0, 0.9;
  CHECK(Mat(s0.subsystems[0].F) == F);
  CHECK(Mat(s0.subsystems[0].H) == Mat::Ones(1, 2));
  CHECK(Mat(s0.subsystems[0].V) == Mat::Identity(2, 2));
  CHECK(Mat(s0.subsystems[0].R) == Mat::Ones(1, 1));
  CHECK(Mat(s0.subsystems[0].G) == Mat::Ones(2, 1));

  const CoupledSystem s = make_identical_chain(0.5, 3);
  CHECK(s.n() == 3);
  CHECK(Mat(s.U) == Mat::Ones(1, 1));
  for (const auto& b : s.subsystems) CHECK(b.F(0, 1) == 0.5);

  for (double beta : {0.0, 0.1, 0.5, 1.0, 2.0, 10.0}) {
    const CoupledSystem one = make_identical_chain(beta, 1);
    const Subsystem& b = one.subsystems[0];
    Mat O(2, 2);
    O << Mat(b.H), Mat(b.H) * Mat(b.F);
    Eigen::JacobiSVD<Mat> svd(O);
    // beta = 0 leaves Re - Im unobservable, but F is stable there
    if (beta != 0.0) CHECK(svd.singularValues()(1) > 1e-8 * svd.singularValues()(0));
    CHECK(is_detectable(b.F, b.H));
  }
}

TEST_CASE("random system") {
  const CoupledSystem z = make_random_system(3, 2, 2, 4, 0.0, {5});
  for (const auto& b : z.subsystems) CHECK(Mat(b.F).isZero(0.0));

  const CoupledSystem a = make_random_system(3, 2, 2, 4, 0.95, {5});
  const CoupledSystem b = make_random_system(3, 2, 2, 4, 0.95, {5});
  for (Index i = 0; i < 4; ++i) {
    CHECK(Mat(a.subsystems[i].F) == Mat(b.subsystems[i].F));
    CHECK(Mat(a.subsystems[i].G) == Mat(b.subsystems[i].G));
    Eigen::EigenSolver<Mat> es(a.subsystems[i].F);
    CHECK(es.eigenvalues().cwiseAbs().maxCoeff() <= 0.95 + 1e-12);
    CHECK(is_detectable(a.subsystems[i].F, a.subsystems[i].H));
  }
  a.validate();
  CHECK(Mat(a.U) != Mat(make_random_system(3, 2, 2, 4, 0.95, {6}).U));
}

TEST_CASE("speckle system") {
  const SpeckleSystem one = make_speckle_system(16, 1, 1.0);
  for (const auto& b : one.system.subsystems) CHECK(Mat(b.G) == Mat(one.system.subsystems[0].G));
  const SpeckleSystem s = make_speckle_system(64, 6, 2.0);
  CHECK(s.system.c == 2);
  CHECK(s.system.d == 1);
  CHECK(s.system.r == 6);
  CHECK(Mat(s.system.U) == 4.0 * Mat::Identity(6, 6));
  // modes are orthonormal over pixels
  const Mat gram = s.modes.transpose() * s.modes;
  CHECK((gram - Mat::Identity(gram.rows(), gram.cols())).norm() <= 1e-10);
  CHECK_THROWS_AS(make_speckle_system(16, 200, 1.0), ValidationError);
}

TEST_CASE("dense_stack") {
  const CoupledSystem s = make_random_system(2, 1, 2, 1, 0.9, {2});
  const DenseModel m = dense_stack(s);
  CHECK(m.F == Mat(s.subsystems[0].F));
  CHECK(m.H == Mat(s.subsystems[0].H));
  CHECK(m.G == Mat(s.subsystems[0].G));

  const DenseModel c = dense_stack(make_identical_chain(0.1, 2));
  Mat F = Mat::Zero(4, 4);
  F.block(0, 0, 2, 2) << 0.9, 0.1, 0.0, 0.9;
  F.block(2, 2, 2, 2) << 0.9, 0.1, 0.0, 0.9;
  CHECK(c.F == F);

  const CoupledSystem r = make_random_system(2, 2, 3, 5, 0.9, {4});
  const DenseModel d = dense_stack(r);
  const oracle::Stacked o = oracle::stack(r);
  CHECK(d.F == o.F);
  CHECK(d.H == o.H);
  CHECK(d.R == o.R);
  CHECK(oracle::rel(d.Q, o.Q) <= 1e-14);
  CHECK(oracle::rel(dense_stack(to_block_model(r)).Q, o.Q) <= 1e-14);
}

TEST_CASE("coupling helpers") {
  const CoupledSystem s = make_random_system(2, 1, 2, 3, 0.9, {8});
  CHECK(Mat(scale_coupling(s, 3.0).U) == 3.0 * Mat(s.U));
  const CoupledSystem z = without_coupling(s);
  CHECK(z.r == s.r);
  for (const auto& b : z.subsystems) CHECK(Mat(b.G).isZero(0.0));
}

TEST_CASE("rng streams") {
  Rng a({42}), b({42});
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
  CHECK(derive_stream({42}, 1).seed != derive_stream({42}, 2).seed);
  CHECK(derive_stream({42}, 1).seed == derive_stream({42}, 1).seed);
  CHECK_THROWS(Rng(RngSpec{1, "pcg64"}));

  Rng g({7});
  double sum = 0.0, sq = 0.0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    const double v = g.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / N) < 0.01);
  CHECK(std::abs(sq / N - 1.0) < 0.02);

  for (double mean : {0.5, 5.0, 80.0}) {
    double s = 0.0, s2 = 0.0;
    const int M = 100000;
    for (int i = 0; i < M; ++i) {
      const double v = static_cast<double>(g.poisson(mean));
      s += v;
      s2 += v * v;
    }
    const double m = s / M;
    CHECK(std::abs(m - mean) < 0.03 * mean + 0.01);
    CHECK(std::abs(s2 / M - m * m - mean) < 0.05 * mean + 0.02);
  }
}
