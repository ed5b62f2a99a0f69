#include <doctest.h>

#include "bdkf/filters.hpp"
#include "bdkf/linalg.hpp"
#include "oracles.hpp"

using namespace bdkf;
using oracle::Mat;
using oracle::Vec;

namespace {

BdFilterState bd_state(oracle::Gen& g, Index n, Index c) {
  BdFilterState st;
  st.x = g.vec(n * c);
  st.P = BlockDiagMat(n, c, c);
  for (Index i = 0; i < n; ++i) st.P.block(i) = g.spd(c);
  return st;
}

}  // namespace

TEST_CASE("full_kf_step special cases") {
  oracle::Gen g(1);
  const Mat F = g.gauss(3, 3), Q = g.spd(3), R = g.spd(2);
  DenseFilterState st{g.vec(3), g.spd(3), 0};

  const DenseFilterState none = full_kf_step(st, F, Mat::Zero(2, 3), Q, R, g.vec(2));
  CHECK(oracle::rel(none.P, F * st.P * F.transpose() + Q) <= 1e-13);
  CHECK(oracle::rel(none.x, F * st.x) <= 1e-14);
  CHECK(none.k == 1);

  // uninformative measurement: the update barely moves the prediction
  const Mat H = g.gauss(2, 3);
  const DenseFilterState vague = full_kf_step(st, F, H, Q, 1e12 * Mat::Identity(2, 2), g.vec(2));
  const Mat Ppred = F * st.P * F.transpose() + Q;
  const Mat K = Ppred * H.transpose() * (H * Ppred * H.transpose() + 1e12 * Mat::Identity(2, 2)).inverse();
  CHECK(K.norm() <= 1e-9);
  CHECK(oracle::rel(vague.P, Ppred) <= 1e-9);

  // scalar Riccati fixed point
  DenseFilterState s{Vec::Zero(1), Mat::Ones(1, 1), 0};
  const Mat one = Mat::Ones(1, 1);
  for (int k = 0; k < 200; ++k) s = full_kf_step(s, 0.9 * one, one, one, one, Vec::Zero(1));
  double p = 1.0;
  for (int k = 0; k < 10000; ++k) p = 0.81 * (p - p * p / (p + 1.0)) + 1.0;
  const double pminus = 0.81 * s.P(0, 0) + 1.0;
  CHECK(pminus == doctest::Approx(p).epsilon(1e-12));

  const Vec y = g.vec(2);
  const oracle::KfOut ref = oracle::kf(st.x, st.P, F, H, Q, R, y);
  const DenseFilterState got = full_kf_step(st, F, H, Q, R, y);
  CHECK(oracle::rel(got.P, ref.P) <= 1e-12);
  CHECK(oracle::rel(got.x, ref.x) <= 1e-12);

  CHECK_THROWS_AS(full_kf_step(st, F, Mat::Zero(2, 3), Q, -Mat::Identity(2, 2), y), SingularityError);
}

TEST_CASE("naive step equals the projected dense update") {
  const CoupledSystem s = make_identical_chain(0.5, 3);
  const BlockModel m = to_block_model(s);
  const oracle::Stacked o = oracle::stack(s);
  BdFilterState st{Vec::Zero(6), BlockDiagMat::identity(3, 2), 0};
  oracle::Gen g(2);
  const Vec y = g.vec(3);
  const NaiveStepResult got = bdkf_naive_step(st, m, y);
  const oracle::KfOut ref = oracle::bd(st.x, Mat::Identity(6, 6), o, 2, y);
  CHECK(oracle::rel(oracle::embed(got.state.P), ref.P) <= 1e-12);
  CHECK(oracle::rel(got.state.x, ref.x) <= 1e-12);
  CHECK(oracle::rel(got.gain, ref.K) <= 1e-12);
}

TEST_CASE("fast step equals the naive step") {
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + trial % 7, c = 1 + trial % 3, d = 1 + trial % 2, r = 1 + trial % 4;
    const CoupledSystem s = make_random_system(c, d, r, n, 0.95, {static_cast<std::uint64_t>(100 + trial)});
    const BlockModel m = to_block_model(s);
    oracle::Gen g(trial);
    BdFilterState st = bd_state(g, n, c);
    for (int k = 0; k < 5; ++k) {
      const Vec y = g.vec(n * d);
      const NaiveStepResult a = bdkf_naive_step(st, m, y);
      const FastStepResult b = bdkf_fast_step(st, m, y);
      CHECK(oracle::rel(oracle::embed(b.state.P), oracle::embed(a.state.P)) <= 1e-9);
      CHECK(oracle::rel(b.state.x, a.state.x) <= 1e-9);
      const Vec z = g.vec(n * d);
      CHECK(oracle::rel(b.work.gain.apply(z), a.gain * z) <= 1e-9);
      CHECK(oracle::rel(b.work.gain.to_dense(), a.gain) <= 1e-9);
      st = b.state;
    }
  }
}

TEST_CASE("degenerate coupling") {
  oracle::Gen g(3);
  CoupledSystem s = make_random_system(2, 1, 2, 4, 0.9, {9});
  s.U.setZero();
  const BlockModel m = to_block_model(s);
  const BdFilterState st = bd_state(g, 4, 2);
  const Vec y = g.vec(4);
  const BdFilterState band = banded_kf_step(st, m, y);
  const NaiveStepResult naive = bdkf_naive_step(st, m, y);
  const FastStepResult fast = bdkf_fast_step(st, m, y);
  CHECK(oracle::rel(oracle::embed(naive.state.P), oracle::embed(band.P)) <= 1e-12);
  CHECK(oracle::rel(oracle::embed(fast.state.P), oracle::embed(band.P)) <= 1e-12);
  CHECK(oracle::rel(fast.state.x, band.x) <= 1e-12);

  const BlockModel mg = to_block_model(without_coupling(make_random_system(2, 1, 2, 4, 0.9, {9})));
  const BdFilterState bg = banded_kf_step(st, mg, y);
  const NaiveStepResult ng = bdkf_naive_step(st, mg, y);
  CHECK(oracle::rel(oracle::embed(ng.state.P), oracle::embed(bg.P)) <= 1e-12);
  CHECK(oracle::rel(ng.state.x, bg.x) <= 1e-12);
}

TEST_CASE("single sub-system reduces to the dense filter") {
  oracle::Gen g(4);
  const CoupledSystem s = make_random_system(3, 2, 2, 1, 0.9, {12});
  const BlockModel m = to_block_model(s);
  const DenseModel dm = dense_stack(s);
  const BdFilterState st = bd_state(g, 1, 3);
  const Vec y = g.vec(2);
  const DenseFilterState full = full_kf_step({st.x, oracle::embed(st.P), 0}, dm, y);
  const BdFilterState band = banded_kf_step(st, m, y);
  const NaiveStepResult naive = bdkf_naive_step(st, m, y);
  const FastStepResult fast = bdkf_fast_step(st, m, y);
  for (const BdFilterState* b : {&band, &naive.state, &fast.state}) {
    CHECK(oracle::rel(oracle::embed(b->P), full.P) <= 1e-10);
    CHECK(oracle::rel(b->x, full.x) <= 1e-10);
  }
}

TEST_CASE("banded filter decouples identical sub-systems") {
  const CoupledSystem s = make_identical_chain(0.1, 4);
  const BlockModel m = to_block_model(s);
  const Subsystem& b = s.subsystems[0];
  const Mat Qi = Mat(b.V) + Mat(b.G) * Mat(s.U) * Mat(b.G).transpose();
  const Trajectory t = simulate(s, 50, Vec::Zero(8), {21});
  BdFilterState st{Vec::Zero(8), BlockDiagMat::identity(4, 2), 0};
  Mat P1 = Mat::Identity(2, 2);
  for (Index k = 0; k < 50; ++k) {
    st = banded_kf_step(st, m, t.measurements.row(k).transpose());
    P1 = oracle::kf(Vec::Zero(2), P1, b.F, b.H, Qi, b.R, Vec::Zero(1)).P;
  }
  for (Index i = 0; i < 4; ++i) CHECK(oracle::rel(Mat(st.P.block(i)), P1) <= 1e-12);
}

TEST_CASE("coupling posterior") {
  const CoupledSystem s = make_random_system(2, 1, 3, 5, 0.9, {31});
  oracle::Gen g(5);
  const BdFilterState st = bd_state(g, 5, 2);
  const FastStepResult r = bdkf_fast_step(st, to_block_model(s), g.vec(5));
  const InputPosterior zero = coupling_posterior(r.work, Vec::Zero(5));
  CHECK(zero.mu.isZero(0.0));
  CHECK(Mat(zero.sigma) == Mat(r.work.C1()));

  // dense oracle: mu = -C3 G' H' M^-1 z
  const Vec z = g.vec(5);
  const oracle::Stacked o = oracle::stack(s);
  const Mat L = o.F * oracle::embed(st.P) * o.F.transpose() + o.V;
  const Mat M = oracle::D(o.H * L * o.H.transpose() + o.R, 1);
  const Vec mu = -Mat(r.work.C3()) * o.G.transpose() * o.H.transpose() * M.inverse() * z;
  CHECK(oracle::rel(coupling_posterior(r.work, z).mu, mu) <= 1e-10);
}

TEST_CASE("poisson linearization") {
  using C = std::complex<double>;
  const std::vector<C> E{C(0, 0), C(1, 2), C(-0.5, 0.25)};
  const std::vector<C> dE{C(0, 0), C(2, 2), C(0.1, -0.3)};
  const PoissonLinearization lin = ekf_linearize_poisson(E, dE, 1.0);
  CHECK(lin.H.block(0).isZero(0.0));
  CHECK(lin.y_hat(0) == 0.0);
  CHECK(lin.R.block(0)(0, 0) == 1.0);
  CHECK(lin.y_hat(1) == 25.0);
  CHECK(lin.H.block(1)(0, 0) == 6.0);
  CHECK(lin.H.block(1)(0, 1) == 8.0);
  CHECK(lin.R.block(1)(0, 0) == 25.0);

  const double h = 1e-5;
  for (std::size_t p = 0; p < E.size(); ++p) {
    auto I = [&](C e) { return std::norm(e + dE[p]); };
    const double dre = (I(E[p] + C(h, 0)) - I(E[p] - C(h, 0))) / (2 * h);
    const double dim = (I(E[p] + C(0, h)) - I(E[p] - C(0, h))) / (2 * h);
    CHECK(std::abs(lin.H.block(p)(0, 0) - dre) <= 1e-6);
    CHECK(std::abs(lin.H.block(p)(0, 1) - dim) <= 1e-6);
  }

  const Vec x = state_from_field(E);
  CHECK(x.size() == 6);
  CHECK(x(3) == 2.0);
  CHECK(field_from_state(x) == E);
}

TEST_CASE("poisson EKF step") {
  using C = std::complex<double>;
  const SpeckleSystem sp = make_speckle_system(16, 3, 1.0);
  const BlockModel m = to_block_model(sp.system);
  const std::vector<C> zero_probe(16, C(0, 0));
  const std::vector<double> zero_counts(16, 0.0);
  BdFilterState st{Vec::Zero(32), BlockDiagMat::identity(16, 2), 0};
  for (EkfBackend be : {EkfBackend::banded, EkfBackend::bd_fast}) {
    const BdFilterState out = ekf_poisson_step(st, m.dyn, zero_probe, zero_counts, be);
    CHECK(out.x.isZero(0.0));
  }
  const DenseModel dm = dense_stack(sp.system);
  const DenseFilterState dout =
      ekf_poisson_step(DenseFilterState{Vec::Zero(32), Mat::Identity(32, 32), 0}, dm, zero_probe, zero_counts);
  CHECK(dout.x.isZero(0.0));

  // one pixel: D is the identity, so all backends agree
  const SpeckleSystem one = make_speckle_system(1, 1, 1.0);
  const BlockModel m1 = to_block_model(one.system);
  const DenseModel d1 = dense_stack(one.system);
  const std::vector<C> probe{C(1.5, -0.5)};
  const std::vector<double> counts{7.0};
  BdFilterState s1{Vec::Zero(2), BlockDiagMat::identity(1, 2, 0.5), 0};
  s1.x << 0.3, 0.2;
  const DenseFilterState f = ekf_poisson_step(DenseFilterState{s1.x, oracle::embed(s1.P), 0}, d1, probe, counts);
  for (EkfBackend be : {EkfBackend::banded, EkfBackend::bd_fast}) {
    const BdFilterState b = ekf_poisson_step(s1, m1.dyn, probe, counts, be);
    CHECK((b.x - f.x).norm() <= 1e-10);
    CHECK((oracle::embed(b.P) - f.P).norm() <= 1e-10);
  }
}

TEST_CASE("shape and singularity errors") {
  const BlockModel m = to_block_model(make_identical_chain(0.1, 3));
  BdFilterState st{Vec::Zero(6), BlockDiagMat::identity(3, 2), 0};
  CHECK_THROWS_AS(bdkf_fast_step(st, m, Vec::Zero(4)), ShapeError);
  BlockModel bad = m;
  bad.meas.R.block(1)(0, 0) = -10.0;
  try {
    bdkf_fast_step(st, bad, Vec::Zero(3));
    FAIL("expected SingularityError");
  } catch (const SingularityError& e) {
    CHECK(e.block() == 1);
  }
}
