#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "scorecast/profiles.hpp"
#include "scorecast/tensor.hpp"
#include "scorecast/util.hpp"

namespace scorecast {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline const double kLog2Pi = std::log(8.0 * std::atan(1.0));

enum class Variant { PMF, PTF, BPTF, CPTF, BCPTF };

inline bool has_metric_map(Variant v) { return v != Variant::PMF; }       // w, b present
inline bool has_hierarchy(Variant v) { return v == Variant::BPTF || v == Variant::BCPTF; }
inline bool has_profiles(Variant v) { return v == Variant::CPTF || v == Variant::BCPTF; }

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::PMF: return "pmf";
    case Variant::PTF: return "ptf";
    case Variant::BPTF: return "bptf";
    case Variant::CPTF: return "cptf";
    case Variant::BCPTF: return "bcptf";
  }
  return "pmf";
}

inline Variant variant_from_name(std::string name) {
  for (auto& c : name) c = static_cast<char>(std::tolower(c));
  if (name == "pmf") return Variant::PMF;
  if (name == "ptf") return Variant::PTF;
  if (name == "bptf") return Variant::BPTF;
  if (name == "cptf") return Variant::CPTF;
  if (name == "bcptf") return Variant::BCPTF;
  throw std::runtime_error("unknown variant '" + name + "' (expected pmf|ptf|bptf|cptf|bcptf)");
}

/// Observation-noise treatment: sigma sampled on the log scale under a
/// unit half-normal prior, or held fixed.
struct NoiseSpec {
  bool learned = true;
  double fixed_sigma = 1.0;
};

struct ModelSpecConfig {
  Variant variant = Variant::PMF;
  int D = 5;
  double sigma_U = 1.0, sigma_V = 1.0;
  double sigma_w = 1.0, sigma_b = 1.0;
  double sigma_Y = 1.0, sigma_X = 1.0;
  double eta = 2.0;     // LKJ shape
  double lambda = 1.0;  // Exponential rate on covariance scales
  NoiseSpec noise;

  void validate() const {
    if (D < 1) throw std::runtime_error("latent dimension D must be >= 1");
    for (double s : {sigma_U, sigma_V, sigma_w, sigma_b, sigma_Y, sigma_X})
      if (!(s > 0.0)) throw std::runtime_error("prior scales must be > 0");
    if (!(eta > 0.0)) throw std::runtime_error("LKJ eta must be > 0");
    if (!(lambda > 0.0)) throw std::runtime_error("Exponential lambda must be > 0");
    if (!noise.learned && !(noise.fixed_sigma > 0.0))
      throw std::runtime_error("fixed noise sigma must be > 0");
  }
};

struct Dims {
  int M = 0, N = 0, S = 0, D = 0, K = 0, J = 0;
};

inline Dims make_dims(const ModelSpecConfig& spec, std::size_t M, std::size_t N, std::size_t S,
                      const ProfileSet* profiles) {
  Dims d;
  d.M = static_cast<int>(M);
  d.N = static_cast<int>(N);
  d.S = static_cast<int>(S);
  d.D = spec.D;
  if (has_profiles(spec.variant)) {
    if (!profiles)
      throw std::runtime_error(variant_name(spec.variant) + " requires model/dataset profiles");
    if (profiles->H.rows() != d.M || profiles->G.rows() != d.N)
      throw std::invalid_argument("profile row counts do not match tensor dimensions");
    d.K = profiles->K();
    d.J = profiles->J();
  }
  return d;
}

/// Fixed flat layout of the unconstrained parameter vector. Block order:
/// U, V, w, b, mu_U, mu_V, chol_U, chol_V, sig_L_U, sig_L_V, Y, X, log_sigma;
/// absent blocks are skipped. Correlation blocks hold D(D-1)/2 partial-
/// correlation coordinates, scale blocks live on the log scale.
struct Packing {
  Dims dims;
  int off_U = -1, off_V = -1, off_w = -1, off_b = -1;
  int off_mu_U = -1, off_mu_V = -1, off_chol_U = -1, off_chol_V = -1;
  int off_sig_L_U = -1, off_sig_L_V = -1, off_Y = -1, off_X = -1;
  int off_log_sigma = -1;
  int size = 0;

  int corr_size() const { return dims.D * (dims.D - 1) / 2; }

  static Packing make(const ModelSpecConfig& spec, const Dims& dims) {
    Packing p;
    p.dims = dims;
    int at = 0;
    auto block = [&at](int len) {
      int off = at;
      at += len;
      return off;
    };
    p.off_U = block(dims.M * dims.D);
    p.off_V = block(dims.N * dims.D);
    if (has_metric_map(spec.variant)) {
      p.off_w = block(dims.S);
      p.off_b = block(dims.S);
    }
    if (has_hierarchy(spec.variant)) {
      p.off_mu_U = block(dims.D);
      p.off_mu_V = block(dims.D);
      p.off_chol_U = block(p.corr_size());
      p.off_chol_V = block(p.corr_size());
      p.off_sig_L_U = block(dims.D);
      p.off_sig_L_V = block(dims.D);
    }
    if (has_profiles(spec.variant)) {
      p.off_Y = block(dims.K * dims.D);
      p.off_X = block(dims.J * dims.D);
    }
    if (spec.noise.learned) p.off_log_sigma = block(1);
    p.size = at;
    return p;
  }
};

/// Canonical partial-correlation transform: D(D-1)/2 unconstrained reals ->
/// lower-triangular correlation Cholesky factor with unit row norms.
/// forward() keeps the intermediates needed for backward().
struct CorrChol {
  int D = 0;
  Eigen::MatrixXd L;      // the factor
  Eigen::MatrixXd z, c, s, sqrtc;
  double log_jacobian = 0.0;

  static CorrChol forward(const Eigen::Ref<const Eigen::VectorXd>& x, int D) {
    CorrChol r;
    r.D = D;
    r.L = Eigen::MatrixXd::Zero(D, D);
    r.z = r.c = r.s = r.sqrtc = Eigen::MatrixXd::Zero(D, D);
    r.L(0, 0) = 1.0;
    int idx = 0;
    for (int i = 1; i < D; ++i) {
      double s_cur = 1.0;
      for (int j = 0; j < i; ++j) {
        double zj = std::tanh(x(idx++));
        double cj = 1.0 - zj * zj;
        r.z(i, j) = zj;
        r.c(i, j) = cj;
        r.s(i, j) = s_cur;
        r.L(i, j) = zj * s_cur;
        r.log_jacobian += std::log(cj) + std::log(s_cur);
        double sq = std::sqrt(cj);
        r.sqrtc(i, j) = sq;
        s_cur *= sq;
      }
      r.L(i, i) = s_cur;
      r.s(i, i) = s_cur;
    }
    return r;
  }

  /// dL: adjoints of the lower triangle including the diagonal; jac_weight
  /// scales the contribution of log_jacobian to the objective.
  Eigen::VectorXd backward(const Eigen::MatrixXd& dL, double jac_weight) const {
    Eigen::VectorXd dx(D * (D - 1) / 2);
    int idx = static_cast<int>(dx.size());
    for (int i = D - 1; i >= 1; --i) {
      double ds = dL(i, i);
      for (int j = i - 1; j >= 0; --j) {
        --idx;
        double dc = ds * s(i, j) * 0.5 / sqrtc(i, j);
        double ds_prev = ds * sqrtc(i, j);
        double dz = dL(i, j) * s(i, j);
        ds_prev += dL(i, j) * z(i, j);
        dc += jac_weight / c(i, j);
        ds_prev += jac_weight / s(i, j);
        dz += dc * (-2.0 * z(i, j));
        dx(idx) = dz * c(i, j);
        ds = ds_prev;
      }
    }
    return dx;
  }
};

/// Recovers the unconstrained coordinates from a correlation Cholesky factor.
inline Eigen::VectorXd corr_chol_to_unconstrained(const Eigen::MatrixXd& L) {
  int D = static_cast<int>(L.rows());
  Eigen::VectorXd x(D * (D - 1) / 2);
  int idx = 0;
  for (int i = 1; i < D; ++i) {
    double s_cur = 1.0;
    for (int j = 0; j < i; ++j) {
      double zj = L(i, j) / s_cur;
      zj = std::clamp(zj, -1.0 + 1e-15, 1.0 - 1e-15);
      x(idx++) = std::atanh(zj);
      s_cur *= std::sqrt(1.0 - zj * zj);
    }
  }
  return x;
}

/// One point in parameter space on the constrained scale, with the
/// unconstrained coordinates retained so packing is exact.
struct LatentState {
  Dims dims;
  RowMat U, V;                   // M x D, N x D
  Eigen::VectorXd w, b;          // S (metric-mapped variants)
  Eigen::VectorXd mu_U, mu_V;    // D (hierarchical variants)
  Eigen::MatrixXd L_U, L_V;      // D x D correlation Cholesky factors
  Eigen::VectorXd sigma_L_U, sigma_L_V;  // D positive scales
  RowMat Y, X;                   // K x D, J x D (constrained variants)
  double sigma = 1.0;            // observation noise
  // unconstrained coordinates
  Eigen::VectorXd z_U, z_V;
  Eigen::VectorXd t_sig_L_U, t_sig_L_V;
  double log_sigma = 0.0;
};

inline LatentState unpack(const Eigen::VectorXd& v, const ModelSpecConfig& spec,
                          const Dims& dims) {
  Packing pk = Packing::make(spec, dims);
  if (v.size() != pk.size)
    throw std::invalid_argument("parameter vector has length " + std::to_string(v.size()) +
                                ", expected " + std::to_string(pk.size));
  LatentState st;
  st.dims = dims;
  st.U = Eigen::Map<const RowMat>(v.data() + pk.off_U, dims.M, dims.D);
  st.V = Eigen::Map<const RowMat>(v.data() + pk.off_V, dims.N, dims.D);
  if (pk.off_w >= 0) {
    st.w = v.segment(pk.off_w, dims.S);
    st.b = v.segment(pk.off_b, dims.S);
  }
  if (pk.off_mu_U >= 0) {
    st.mu_U = v.segment(pk.off_mu_U, dims.D);
    st.mu_V = v.segment(pk.off_mu_V, dims.D);
    st.z_U = v.segment(pk.off_chol_U, pk.corr_size());
    st.z_V = v.segment(pk.off_chol_V, pk.corr_size());
    st.L_U = CorrChol::forward(st.z_U, dims.D).L;
    st.L_V = CorrChol::forward(st.z_V, dims.D).L;
    st.t_sig_L_U = v.segment(pk.off_sig_L_U, dims.D);
    st.t_sig_L_V = v.segment(pk.off_sig_L_V, dims.D);
    st.sigma_L_U = st.t_sig_L_U.array().exp();
    st.sigma_L_V = st.t_sig_L_V.array().exp();
  }
  if (pk.off_Y >= 0) {
    st.Y = Eigen::Map<const RowMat>(v.data() + pk.off_Y, dims.K, dims.D);
    st.X = Eigen::Map<const RowMat>(v.data() + pk.off_X, dims.J, dims.D);
  }
  if (pk.off_log_sigma >= 0) {
    st.log_sigma = v(pk.off_log_sigma);
    st.sigma = std::exp(st.log_sigma);
  } else {
    st.sigma = spec.noise.fixed_sigma;
    st.log_sigma = std::log(st.sigma);
  }
  return st;
}

inline Eigen::VectorXd pack(const LatentState& st, const ModelSpecConfig& spec) {
  Packing pk = Packing::make(spec, st.dims);
  Eigen::VectorXd v(pk.size);
  Eigen::Map<RowMat>(v.data() + pk.off_U, st.dims.M, st.dims.D) = st.U;
  Eigen::Map<RowMat>(v.data() + pk.off_V, st.dims.N, st.dims.D) = st.V;
  if (pk.off_w >= 0) {
    v.segment(pk.off_w, st.dims.S) = st.w;
    v.segment(pk.off_b, st.dims.S) = st.b;
  }
  if (pk.off_mu_U >= 0) {
    v.segment(pk.off_mu_U, st.dims.D) = st.mu_U;
    v.segment(pk.off_mu_V, st.dims.D) = st.mu_V;
    v.segment(pk.off_chol_U, pk.corr_size()) = st.z_U;
    v.segment(pk.off_chol_V, pk.corr_size()) = st.z_V;
    v.segment(pk.off_sig_L_U, st.dims.D) = st.t_sig_L_U;
    v.segment(pk.off_sig_L_V, st.dims.D) = st.t_sig_L_V;
  }
  if (pk.off_Y >= 0) {
    Eigen::Map<RowMat>(v.data() + pk.off_Y, st.dims.K, st.dims.D) = st.Y;
    Eigen::Map<RowMat>(v.data() + pk.off_X, st.dims.J, st.dims.D) = st.X;
  }
  if (pk.off_log_sigma >= 0) v(pk.off_log_sigma) = st.log_sigma;
  return v;
}

namespace detail {

/// Exp(lambda) prior evaluated on the unconstrained coordinate t = log sigma,
/// log-transform Jacobian included; integrates to 1 over the real line.
inline double exp_prior_log_density_unconstrained(double t, double lambda) {
  return std::log(lambda) - lambda * std::exp(t) + t;
}

/// iid zero-mean Gaussian prior over a block; returns the log density and
/// accumulates -x/scale^2 into the gradient block when given.
inline double iid_gaussian_prior(const double* x, int len, double scale, double* grad) {
  double inv2 = 1.0 / (scale * scale);
  double lp = len * (-0.5 * kLog2Pi - std::log(scale));
  double ss = 0.0;
  for (int i = 0; i < len; ++i) {
    ss += x[i] * x[i];
    if (grad) grad[i] -= x[i] * inv2;
  }
  return lp - 0.5 * ss * inv2;
}

/// Hierarchical prior for one factor side: mu ~ N(0, AA^T) and each latent
/// row ~ N(mu, AA^T) with A = diag(sigma_L) L, L an LKJ-distributed
/// correlation Cholesky built from partial correlations, sigma_L ~ Exp(lambda)
/// on the log scale. All change-of-variable terms are included. Gradient
/// pointers may be null; d_rows must be pre-sized and is accumulated into.
inline double hierarchical_prior(const Eigen::Ref<const RowMat>& rows,
                                 const Eigen::Ref<const Eigen::VectorXd>& mu,
                                 const Eigen::Ref<const Eigen::VectorXd>& z_blk,
                                 const Eigen::Ref<const Eigen::VectorXd>& t_blk, double eta,
                                 double lambda, int D, RowMat* d_rows, Eigen::VectorXd* d_mu,
                                 Eigen::VectorXd* d_z, Eigen::VectorXd* d_t) {
  const int R = static_cast<int>(rows.rows());
  CorrChol cc = CorrChol::forward(z_blk, D);
  Eigen::VectorXd sigma_L = t_blk.array().exp();
  Eigen::MatrixXd A = sigma_L.asDiagonal() * cc.L;
  auto At = A.triangularView<Eigen::Lower>();
  double log_det_A = t_blk.sum() + cc.L.diagonal().array().log().sum();

  double lp = (R + 1) * (-0.5 * D * kLog2Pi - log_det_A);
  Eigen::MatrixXd dA = Eigen::MatrixXd::Zero(D, D);
  bool want_grad = d_rows != nullptr;

  auto add_row = [&](const Eigen::VectorXd& x, Eigen::VectorXd* dx_out, bool into_mu) {
    Eigen::VectorXd r = At.solve(x);
    lp += -0.5 * r.squaredNorm();
    if (!want_grad) return;
    Eigen::VectorXd q = At.transpose().solve(r);
    if (dx_out) *dx_out -= q;
    if (into_mu) *d_mu += q;
    dA.noalias() += q * r.transpose();
  };

  add_row(mu, d_mu, false);  // mu's own prior: d/d mu of -0.5||A^{-1}mu||^2
  for (int m = 0; m < R; ++m) {
    Eigen::VectorXd x = rows.row(m).transpose() - mu;
    Eigen::VectorXd dx(D);
    dx.setZero();
    add_row(x, &dx, true);
    if (want_grad) d_rows->row(m) += dx.transpose();
  }

  // LKJ density on the Cholesky factor (up to a constant in the parameters)
  for (int i = 1; i < D; ++i) lp += (D + 2.0 * eta - 3.0 - i) * std::log(cc.L(i, i));
  // Exponential prior on sigma_L plus the log-transform Jacobian
  for (int i = 0; i < D; ++i) lp += exp_prior_log_density_unconstrained(t_blk(i), lambda);
  lp += cc.log_jacobian;

  if (want_grad) {
    dA.diagonal() -= (R + 1) * A.diagonal().cwiseInverse();
    dA = dA.triangularView<Eigen::Lower>();
    Eigen::VectorXd d_sigma_L = Eigen::VectorXd::Zero(D);
    Eigen::MatrixXd dL = Eigen::MatrixXd::Zero(D, D);
    for (int i = 0; i < D; ++i)
      for (int j = 0; j <= i; ++j) {
        d_sigma_L(i) += dA(i, j) * cc.L(i, j);
        dL(i, j) = sigma_L(i) * dA(i, j);
      }
    for (int i = 1; i < D; ++i) dL(i, i) += (D + 2.0 * eta - 3.0 - i) / cc.L(i, i);
    *d_z = cc.backward(dL, 1.0);
    *d_t = d_sigma_L.cwiseProduct(sigma_L) + (1.0 - lambda * sigma_L.array()).matrix();
  }
  return lp;
}

}  // namespace detail

/// Log joint density of the model over the unconstrained parameter vector:
/// log prior + sum of Gaussian likelihood terms over the train entries,
/// including all change-of-variable Jacobians. Writes the analytic gradient
/// into *grad when given.
inline double eval_log_joint(const Eigen::VectorXd& v, const TrainSet& data,
                             const ModelSpecConfig& spec, const ProfileSet* profiles,
                             Eigen::VectorXd* grad) {
  spec.validate();
  const Dims dims = make_dims(spec, data.M, data.N, data.S, profiles);
  const Packing pk = Packing::make(spec, dims);
  if (v.size() != pk.size)
    throw std::invalid_argument("parameter vector has length " + std::to_string(v.size()) +
                                ", expected " + std::to_string(pk.size));
  const bool metric_map = has_metric_map(spec.variant);
  const bool hier = has_hierarchy(spec.variant);
  const bool constrained = has_profiles(spec.variant);
  const bool learned_noise = spec.noise.learned;

  if (grad) {
    grad->resize(pk.size);
    grad->setZero();
  }

  Eigen::Map<const RowMat> U(v.data() + pk.off_U, dims.M, dims.D);
  Eigen::Map<const RowMat> V(v.data() + pk.off_V, dims.N, dims.D);

  RowMat Up = U, Vp = V;
  if (constrained) {
    Eigen::Map<const RowMat> Y(v.data() + pk.off_Y, dims.K, dims.D);
    Eigen::Map<const RowMat> X(v.data() + pk.off_X, dims.J, dims.D);
    Up.noalias() += profiles->H * Y;
    Vp.noalias() += profiles->G * X;
  }

  const double* wp = metric_map ? v.data() + pk.off_w : nullptr;
  const double* bp = metric_map ? v.data() + pk.off_b : nullptr;

  double sigma = learned_noise ? std::exp(v(pk.off_log_sigma)) : spec.noise.fixed_sigma;
  double inv_sig2 = 1.0 / (sigma * sigma);
  double log_sigma = std::log(sigma);

  double lp = 0.0;
  RowMat dUp, dVp;
  Eigen::VectorXd dw, db;
  double dt_noise = 0.0;
  if (grad) {
    dUp = RowMat::Zero(dims.M, dims.D);
    dVp = RowMat::Zero(dims.N, dims.D);
    if (metric_map) {
      dw = Eigen::VectorXd::Zero(dims.S);
      db = Eigen::VectorXd::Zero(dims.S);
    }
  }

  // likelihood over the observed training entries
  const double entry_const = -0.5 * kLog2Pi - log_sigma;
  for (const TrainEntry& e : data.entries) {
    double dot = Up.row(e.m).dot(Vp.row(e.n));
    double pred = metric_map ? dot * wp[e.s] + bp[e.s] : dot;
    double resid = e.value - pred;
    lp += entry_const - 0.5 * resid * resid * inv_sig2;
    if (grad) {
      double g = resid * inv_sig2;
      if (metric_map) {
        dUp.row(e.m) += (g * wp[e.s]) * Vp.row(e.n);
        dVp.row(e.n) += (g * wp[e.s]) * Up.row(e.m);
        dw(e.s) += g * dot;
        db(e.s) += g;
      } else {
        dUp.row(e.m) += g * Vp.row(e.n);
        dVp.row(e.n) += g * Up.row(e.m);
      }
      if (learned_noise) dt_noise += -1.0 + resid * resid * inv_sig2;
    }
  }

  if (grad) {
    Eigen::Map<RowMat>(grad->data() + pk.off_U, dims.M, dims.D) += dUp;
    Eigen::Map<RowMat>(grad->data() + pk.off_V, dims.N, dims.D) += dVp;
    if (metric_map) {
      grad->segment(pk.off_w, dims.S) += dw;
      grad->segment(pk.off_b, dims.S) += db;
    }
    if (constrained) {
      Eigen::Map<RowMat>(grad->data() + pk.off_Y, dims.K, dims.D).noalias() +=
          profiles->H.transpose() * dUp;
      Eigen::Map<RowMat>(grad->data() + pk.off_X, dims.J, dims.D).noalias() +=
          profiles->G.transpose() * dVp;
    }
  }

  // priors
  if (!hier) {
    lp += detail::iid_gaussian_prior(v.data() + pk.off_U, dims.M * dims.D, spec.sigma_U,
                                     grad ? grad->data() + pk.off_U : nullptr);
    lp += detail::iid_gaussian_prior(v.data() + pk.off_V, dims.N * dims.D, spec.sigma_V,
                                     grad ? grad->data() + pk.off_V : nullptr);
  } else {
    for (int side = 0; side < 2; ++side) {
      bool u_side = side == 0;
      Eigen::Map<const RowMat> rows(v.data() + (u_side ? pk.off_U : pk.off_V),
                                    u_side ? dims.M : dims.N, dims.D);
      int off_mu = u_side ? pk.off_mu_U : pk.off_mu_V;
      int off_chol = u_side ? pk.off_chol_U : pk.off_chol_V;
      int off_sig = u_side ? pk.off_sig_L_U : pk.off_sig_L_V;
      RowMat d_rows;
      Eigen::VectorXd d_mu, d_z, d_t;
      if (grad) {
        d_rows = RowMat::Zero(rows.rows(), dims.D);
        d_mu = Eigen::VectorXd::Zero(dims.D);
      }
      lp += detail::hierarchical_prior(
          rows, v.segment(off_mu, dims.D), v.segment(off_chol, pk.corr_size()),
          v.segment(off_sig, dims.D), spec.eta, spec.lambda, dims.D,
          grad ? &d_rows : nullptr, grad ? &d_mu : nullptr, grad ? &d_z : nullptr,
          grad ? &d_t : nullptr);
      if (grad) {
        Eigen::Map<RowMat>(grad->data() + (u_side ? pk.off_U : pk.off_V), rows.rows(), dims.D) +=
            d_rows;
        grad->segment(off_mu, dims.D) += d_mu;
        grad->segment(off_chol, pk.corr_size()) += d_z;
        grad->segment(off_sig, dims.D) += d_t;
      }
    }
  }
  if (metric_map) {
    lp += detail::iid_gaussian_prior(wp, dims.S, spec.sigma_w,
                                     grad ? grad->data() + pk.off_w : nullptr);
    lp += detail::iid_gaussian_prior(bp, dims.S, spec.sigma_b,
                                     grad ? grad->data() + pk.off_b : nullptr);
  }
  if (constrained) {
    lp += detail::iid_gaussian_prior(v.data() + pk.off_Y, dims.K * dims.D, spec.sigma_Y,
                                     grad ? grad->data() + pk.off_Y : nullptr);
    lp += detail::iid_gaussian_prior(v.data() + pk.off_X, dims.J * dims.D, spec.sigma_X,
                                     grad ? grad->data() + pk.off_X : nullptr);
  }
  if (learned_noise) {
    // half-normal(1) prior on sigma, sampled as log sigma (Jacobian included)
    double t = v(pk.off_log_sigma);
    lp += std::log(2.0) - 0.5 * kLog2Pi - 0.5 * sigma * sigma + t;
    if (grad) (*grad)(pk.off_log_sigma) += dt_noise + 1.0 - sigma * sigma;
  }
  return lp;
}

inline double log_joint(const Eigen::VectorXd& v, const TrainSet& data,
                        const ModelSpecConfig& spec, const ProfileSet* profiles = nullptr) {
  return eval_log_joint(v, data, spec, profiles, nullptr);
}

inline Eigen::VectorXd grad_log_joint(const Eigen::VectorXd& v, const TrainSet& data,
                                      const ModelSpecConfig& spec,
                                      const ProfileSet* profiles = nullptr) {
  Eigen::VectorXd g;
  eval_log_joint(v, data, spec, profiles, &g);
  return g;
}

/// Dense M x N x S predictions on the normalized scale:
/// U'_m . V'_n for PMF (shared across metrics), (U'_m . V'_n) w_s + b_s
/// otherwise, with U' = U + H Y and V' = V + G X for constrained variants.
inline std::vector<double> reconstruct(const LatentState& st, const ModelSpecConfig& spec,
                                       const ProfileSet* profiles = nullptr) {
  const Dims& d = st.dims;
  RowMat Up = st.U, Vp = st.V;
  if (has_profiles(spec.variant)) {
    if (!profiles) throw std::runtime_error("reconstruct: constrained variant needs profiles");
    Up.noalias() += profiles->H * st.Y;
    Vp.noalias() += profiles->G * st.X;
  }
  Eigen::MatrixXd P = Up * Vp.transpose();
  std::vector<double> out(static_cast<std::size_t>(d.M) * d.N * d.S);
  const bool metric_map = has_metric_map(spec.variant);
  std::size_t at = 0;
  for (int m = 0; m < d.M; ++m)
    for (int n = 0; n < d.N; ++n)
      for (int s = 0; s < d.S; ++s)
        out[at++] = metric_map ? P(m, n) * st.w(s) + st.b(s) : P(m, n);
  return out;
}

/// Deterministic starting point: U, V, Y, X, w ~ N(0, 0.1^2) drawn in packing
/// order; b, mu, partial correlations and all log scales start at 0.
inline Eigen::VectorXd init_state(const ModelSpecConfig& spec, const Dims& dims,
                                  std::uint64_t seed) {
  Packing pk = Packing::make(spec, dims);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(pk.size);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 0.1);
  auto fill = [&](int off, int len) {
    for (int i = 0; i < len; ++i) v(off + i) = jitter(rng);
  };
  fill(pk.off_U, dims.M * dims.D);
  fill(pk.off_V, dims.N * dims.D);
  if (pk.off_w >= 0) fill(pk.off_w, dims.S);
  if (pk.off_Y >= 0) {
    fill(pk.off_Y, dims.K * dims.D);
    fill(pk.off_X, dims.J * dims.D);
  }
  return v;
}

inline nlohmann::ordered_json spec_to_json(const ModelSpecConfig& spec) {
  nlohmann::ordered_json j;
  j["variant"] = variant_name(spec.variant);
  j["d"] = spec.D;
  j["sigma_u"] = spec.sigma_U;
  j["sigma_v"] = spec.sigma_V;
  j["sigma_w"] = spec.sigma_w;
  j["sigma_b"] = spec.sigma_b;
  j["sigma_y"] = spec.sigma_Y;
  j["sigma_x"] = spec.sigma_X;
  j["eta"] = spec.eta;
  j["lambda"] = spec.lambda;
  j["noise"] = spec.noise.learned ? nlohmann::ordered_json("learned")
                                  : nlohmann::ordered_json(spec.noise.fixed_sigma);
  return j;
}

inline ModelSpecConfig spec_from_json(const nlohmann::json& j) {
  ModelSpecConfig spec;
  spec.variant = variant_from_name(j.at("variant").get<std::string>());
  spec.D = j.at("d").get<int>();
  spec.sigma_U = j.value("sigma_u", 1.0);
  spec.sigma_V = j.value("sigma_v", 1.0);
  spec.sigma_w = j.value("sigma_w", 1.0);
  spec.sigma_b = j.value("sigma_b", 1.0);
  spec.sigma_Y = j.value("sigma_y", 1.0);
  spec.sigma_X = j.value("sigma_x", 1.0);
  spec.eta = j.value("eta", 2.0);
  spec.lambda = j.value("lambda", 1.0);
  if (j.contains("noise") && j.at("noise").is_number()) {
    spec.noise.learned = false;
    spec.noise.fixed_sigma = j.at("noise").get<double>();
  } else {
    spec.noise.learned = true;
  }
  spec.validate();
  return spec;
}

namespace detail {

inline std::vector<double> to_flat(const Eigen::Ref<const RowMat>& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}
inline std::vector<double> to_flat_vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace detail

/// Flat JSON object keyed by block name with row-major arrays plus a spec
/// echo; the checkpoint format.
inline nlohmann::ordered_json latent_state_to_json(const LatentState& st,
                                                   const ModelSpecConfig& spec) {
  nlohmann::ordered_json j;
  j["spec"] = spec_to_json(spec);
  j["dims"] = {{"m", st.dims.M}, {"n", st.dims.N}, {"s", st.dims.S},
               {"d", st.dims.D}, {"k", st.dims.K}, {"j", st.dims.J}};
  j["u"] = detail::to_flat(st.U);
  j["v"] = detail::to_flat(st.V);
  if (st.w.size() > 0) {
    j["w"] = detail::to_flat_vec(st.w);
    j["b"] = detail::to_flat_vec(st.b);
  }
  if (st.mu_U.size() > 0) {
    j["mu_u"] = detail::to_flat_vec(st.mu_U);
    j["mu_v"] = detail::to_flat_vec(st.mu_V);
    RowMat lu = st.L_U, lv = st.L_V;
    j["l_u"] = detail::to_flat(lu);
    j["l_v"] = detail::to_flat(lv);
    j["sigma_l_u"] = detail::to_flat_vec(st.sigma_L_U);
    j["sigma_l_v"] = detail::to_flat_vec(st.sigma_L_V);
  }
  if (st.Y.size() > 0) {
    j["y"] = detail::to_flat(st.Y);
    j["x"] = detail::to_flat(st.X);
  }
  j["sigma"] = st.sigma;
  return j;
}

inline LatentState latent_state_from_json(const nlohmann::json& j) {
  LatentState st;
  ModelSpecConfig spec = spec_from_json(j.at("spec"));
  const auto& dj = j.at("dims");
  st.dims = {dj.at("m").get<int>(), dj.at("n").get<int>(), dj.at("s").get<int>(),
             dj.at("d").get<int>(), dj.at("k").get<int>(), dj.at("j").get<int>()};
  auto read_mat = [&](const char* key, int rows, int cols) {
    auto flat = j.at(key).get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != rows * cols)
      throw std::runtime_error(std::string("latent state block '") + key + "' has wrong size");
    return RowMat(Eigen::Map<const RowMat>(flat.data(), rows, cols));
  };
  auto read_vec = [&](const char* key, int len) {
    auto flat = j.at(key).get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != len)
      throw std::runtime_error(std::string("latent state block '") + key + "' has wrong size");
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(flat.data(), len));
  };
  st.U = read_mat("u", st.dims.M, st.dims.D);
  st.V = read_mat("v", st.dims.N, st.dims.D);
  if (j.contains("w")) {
    st.w = read_vec("w", st.dims.S);
    st.b = read_vec("b", st.dims.S);
  }
  if (j.contains("mu_u")) {
    st.mu_U = read_vec("mu_u", st.dims.D);
    st.mu_V = read_vec("mu_v", st.dims.D);
    st.L_U = read_mat("l_u", st.dims.D, st.dims.D);
    st.L_V = read_mat("l_v", st.dims.D, st.dims.D);
    st.sigma_L_U = read_vec("sigma_l_u", st.dims.D);
    st.sigma_L_V = read_vec("sigma_l_v", st.dims.D);
    st.z_U = corr_chol_to_unconstrained(st.L_U);
    st.z_V = corr_chol_to_unconstrained(st.L_V);
    st.t_sig_L_U = st.sigma_L_U.array().log();
    st.t_sig_L_V = st.sigma_L_V.array().log();
  }
  if (j.contains("y")) {
    st.Y = read_mat("y", st.dims.K, st.dims.D);
    st.X = read_mat("x", st.dims.J, st.dims.D);
  }
  st.sigma = j.at("sigma").get<double>();
  st.log_sigma = std::log(st.sigma);
  (void)spec;
  return st;
}

}  // namespace scorecast
