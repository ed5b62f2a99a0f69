#include "bdkf/model.hpp"

#include <cmath>
#include <string>

#include "bdkf/linalg.hpp"

namespace bdkf {

namespace {

void check_shape(const SmallMat& m, Index rows, Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols)
    throw ValidationError(what + " has shape " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                          std::to_string(cols));
}

void check_psd(const SmallMat& m, const std::string& what) {
  if (!is_symmetric_psd(m, 1e-10)) throw ValidationError(what + " must be symmetric PSD");
}

}  // namespace

void CoupledSystem::validate() const {
  if (c < 1 || d < 1 || r < 1) throw ValidationError("c, d and r must be >= 1");
  if (subsystems.empty()) throw ValidationError("system needs at least one sub-system");
  check_shape(U, r, r, "U");
  check_psd(U, "U");
  for (size_t i = 0; i < subsystems.size(); ++i) {
    const auto& s = subsystems[i];
    const std::string tag = "subsystem " + std::to_string(i) + ": ";
    check_shape(s.F, c, c, tag + "F");
    check_shape(s.H, d, c, tag + "H");
    check_shape(s.V, c, c, tag + "V");
    check_shape(s.R, d, d, tag + "R");
    check_shape(s.G, c, r, tag + "G");
    check_psd(s.V, tag + "V");
    check_psd(s.R, tag + "R");
  }
}

BlockModel to_block_model(const CoupledSystem& sys) {
  sys.validate();
  const Index n = sys.n();
  BlockModel m{{BlockDiagMat(n, sys.c, sys.c), BlockDiagMat(n, sys.c, sys.c),
                TallBlockMat(n, sys.c, sys.r), sys.U},
               {BlockDiagMat(n, sys.d, sys.c), BlockDiagMat(n, sys.d, sys.d)}};
  for (Index i = 0; i < n; ++i) {
    const auto& s = sys.subsystems[i];
    m.dyn.F.block(i) = s.F;
    m.dyn.V.block(i) = s.V;
    m.dyn.G.block(i) = s.G;
    m.meas.H.block(i) = s.H;
    m.meas.R.block(i) = s.R;
  }
  return m;
}

DenseModel dense_stack(const BlockModel& model, bool allow_large) {
  if (!allow_large && model.n() * model.c() > kDenseStateLimit)
    throw ValidationError("dense_stack: state dimension " + std::to_string(model.n() * model.c()) +
                          " exceeds the dense limit");
  DenseModel out;
  out.F = model.dyn.F.to_dense();
  out.H = model.meas.H.to_dense();
  out.V = model.dyn.V.to_dense();
  out.R = model.meas.R.to_dense();
  out.G = model.dyn.G.to_dense();
  out.U = model.dyn.U;
  out.Q = out.V;
  out.Q.noalias() += out.G * out.U * out.G.transpose();
  return out;
}

DenseModel dense_stack(const CoupledSystem& sys, bool allow_large) {
  return dense_stack(to_block_model(sys), allow_large);
}

Trajectory simulate(const CoupledSystem& sys, Index horizon, const Vec& x0, const RngSpec& spec) {
  sys.validate();
  const Index n = sys.n();
  const Index c = sys.c;
  const Index d = sys.d;
  if (horizon < 1) throw ValidationError("simulate: horizon must be >= 1");
  if (x0.size() != n * c) throw ValidationError("simulate: x0 must have length n*c");

  std::vector<DenseMat> v_factor(n), w_factor(n);
  for (Index i = 0; i < n; ++i) {
    v_factor[i] = psd_factor(sys.subsystems[i].V);
    w_factor[i] = psd_factor(sys.subsystems[i].R);
  }
  const DenseMat u_factor = psd_factor(sys.U);

  Rng rng(spec);
  Trajectory traj{horizon, RowMatrix(horizon, n * c), RowMatrix(horizon, sys.r),
                  RowMatrix(horizon, n * d)};
  Vec x = x0;
  Vec next(n * c);
  for (Index k = 0; k < horizon; ++k) {
    traj.states.row(k) = x.transpose();
    for (Index i = 0; i < n; ++i) {
      const auto& s = sys.subsystems[i];
      const Vec w = w_factor[i] * rng.normal_vec(d);
      traj.measurements.row(k).segment(i * d, d) = (s.H * x.segment(i * c, c) + w).transpose();
    }
    const Vec u = u_factor * rng.normal_vec(sys.r);
    traj.inputs.row(k) = u.transpose();
    for (Index i = 0; i < n; ++i) {
      const auto& s = sys.subsystems[i];
      const Vec v = v_factor[i] * rng.normal_vec(c);
      next.segment(i * c, c) = s.F * x.segment(i * c, c) + v + s.G * u;
    }
    x.swap(next);
  }
  return traj;
}

CoupledSystem make_identical_chain(double beta, Index n) {
  if (n < 1) throw ValidationError("make_identical_chain: n must be >= 1");
  Subsystem s;
  s.F.resize(2, 2);
  s.F << 0.9, beta, 0.0, 0.9;
  s.H.resize(1, 2);
  s.H << 1.0, 1.0;
  s.V = SmallMat::Identity(2, 2);
  s.R = SmallMat::Ones(1, 1);
  s.G = SmallMat::Ones(2, 1);
  CoupledSystem sys;
  sys.subsystems.assign(static_cast<size_t>(n), s);
  sys.U = SmallMat::Ones(1, 1);
  sys.c = 2;
  sys.d = 1;
  sys.r = 1;
  return sys;
}

CoupledSystem make_random_system(Index c, Index d, Index r, Index n, double spectral_radius_cap,
                                 const RngSpec& spec) {
  if (c < 1 || d < 1 || r < 1 || n < 1)
    throw ValidationError("make_random_system: dimensions must be >= 1");
  if (spectral_radius_cap < 0.0)
    throw ValidationError("make_random_system: spectral radius cap must be >= 0");
  Rng rng(spec);
  auto gaussian = [&rng](Index rows, Index cols) {
    SmallMat m(rows, cols);
    for (Index a = 0; a < rows; ++a)
      for (Index b = 0; b < cols; ++b) m(a, b) = rng.normal();
    return m;
  };
  CoupledSystem sys;
  sys.c = c;
  sys.d = d;
  sys.r = r;
  {
    const SmallMat C = gaussian(r, r);
    sys.U = C * C.transpose() + 0.1 * SmallMat::Identity(r, r);
  }
  sys.subsystems.reserve(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Subsystem s;
    s.F = gaussian(c, c);
    const double rho = spectral_radius(s.F);
    if (spectral_radius_cap == 0.0 || rho == 0.0)
      s.F *= (spectral_radius_cap == 0.0 ? 0.0 : 1.0);
    else
      s.F *= spectral_radius_cap / rho;
    s.H = gaussian(d, c);
    const SmallMat A = gaussian(c, c);
    s.V = A * A.transpose() + 0.1 * SmallMat::Identity(c, c);
    const SmallMat B = gaussian(d, d);
    s.R = B * B.transpose() + 0.1 * SmallMat::Identity(d, d);
    s.G = gaussian(c, r);
    sys.subsystems.push_back(std::move(s));
  }
  return sys;
}

SpeckleSystem make_speckle_system(Index n_pixels, Index r_modes, double drift_scale) {
  if (r_modes < 1 || n_pixels < r_modes)
    throw ValidationError("make_speckle_system: need n_pixels >= r_modes >= 1");
  const Index re_modes = (r_modes + 1) / 2;
  const Index im_modes = r_modes - re_modes;
  const Index basis_size = (kSpeckleMaxDegree + 1) * (kSpeckleMaxDegree + 2) / 2;
  if (re_modes > basis_size)
    throw ValidationError("make_speckle_system: r_modes too large for the polynomial basis (max " +
                          std::to_string(2 * basis_size) + ")");

  const Index width = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(n_pixels))));
  const Index height = (n_pixels + width - 1) / width;
  auto coord = [](Index k, Index extent) {
    return extent > 1 ? 2.0 * static_cast<double>(k) / static_cast<double>(extent - 1) - 1.0 : 0.0;
  };

  // Monomials x^a y^b by increasing total degree, then modified Gram-Schmidt
  // (two passes) over the pixel set.
  DenseMat modes(n_pixels, re_modes);
  Index found = 0;
  for (Index degree = 0; degree <= kSpeckleMaxDegree && found < re_modes; ++degree) {
    for (Index b = 0; b <= degree && found < re_modes; ++b) {
      const Index a = degree - b;
      Vec f(n_pixels);
      for (Index p = 0; p < n_pixels; ++p)
        f(p) = std::pow(coord(p % width, width), static_cast<double>(a)) *
               std::pow(coord(p / width, height), static_cast<double>(b));
      const double raw_norm = f.norm();
      for (int pass = 0; pass < 2; ++pass)
        for (Index q = 0; q < found; ++q) f -= modes.col(q).dot(f) * modes.col(q);
      if (f.norm() <= 1e-10 * std::max(raw_norm, 1.0)) continue;  // dependent on the pixel set
      modes.col(found++) = f / f.norm();
    }
  }
  if (found < re_modes)
    throw ValidationError("make_speckle_system: pixel grid supports only " + std::to_string(found) +
                          " independent modes per channel");

  SpeckleSystem out;
  out.modes = modes;
  out.grid_width = width;
  auto& sys = out.system;
  sys.c = 2;
  sys.d = 1;
  sys.r = r_modes;
  sys.U = drift_scale * drift_scale * SmallMat::Identity(r_modes, r_modes);
  const double v_small = 1e-4 * drift_scale * drift_scale;
  sys.subsystems.reserve(static_cast<size_t>(n_pixels));
  for (Index p = 0; p < n_pixels; ++p) {
    Subsystem s;
    s.F = SmallMat::Identity(2, 2);
    s.H = SmallMat::Zero(1, 2);  // replaced by the EKF linearization each step
    s.V = v_small * SmallMat::Identity(2, 2);
    s.R = SmallMat::Ones(1, 1);
    s.G = SmallMat::Zero(2, r_modes);
    s.G.block(0, 0, 1, re_modes) = modes.row(p);
    if (im_modes > 0) s.G.block(1, re_modes, 1, im_modes) = modes.row(p).head(im_modes);
    sys.subsystems.push_back(std::move(s));
  }
  return out;
}

CoupledSystem scale_coupling(CoupledSystem sys, double factor) {
  sys.U *= factor;
  return sys;
}

CoupledSystem without_coupling(CoupledSystem sys) {
  for (auto& s : sys.subsystems) s.G.setZero();
  return sys;
}

}  // namespace bdkf
