// Test-only reference evaluator. Computes the factor-model log joint and
// reconstruction with naive loops, straight from the density definitions,
// sharing no code with the library implementation: multivariate normals go
// through explicit covariance inversion, the LKJ term through det(LL^T), and
// the partial-correlation Jacobian through its closed form in z. Kept
// deliberately slow and literal.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "scorecast/model.hpp"
#include "scorecast/profiles.hpp"
#include "scorecast/tensor.hpp"

namespace refmodel {

using scorecast::Dims;
using scorecast::ModelSpecConfig;
using scorecast::ProfileSet;
using scorecast::TrainSet;
using scorecast::Variant;

using Grid = std::vector<std::vector<double>>;

inline double normal_logpdf(double x, double mu, double sd) {
  static const double log2pi = std::log(2.0 * 3.14159265358979323846);
  double z = (x - mu) / sd;
  return -0.5 * log2pi - std::log(sd) - 0.5 * z * z;
}

struct RefParams {
  Grid U, V;                  // M x D, N x D
  std::vector<double> w, b;   // S
  std::vector<double> mu_U, mu_V;
  Grid z_U, z_V;              // strict lower triangles of partial correlations
  std::vector<double> t_U, t_V;  // log scales
  double log_sigma = 0.0;
  bool learned_noise = true;
  double sigma = 1.0;
};

inline Grid zero_grid(int rows, int cols) {
  return Grid(rows, std::vector<double>(cols, 0.0));
}

/// Unpacks the documented flat layout: U, V, w, b, mu_U, mu_V, chol_U,
/// chol_V, sig_L_U, sig_L_V, Y, X, log_sigma, absent blocks skipped.
/// Y and X are appended to U's and V's grids conceptually; here they are
/// returned separately via out-params to keep the code literal.
struct RefUnpacked {
  RefParams p;
  Grid Y, X;  // K x D, J x D
};

inline RefUnpacked ref_unpack(const std::vector<double>& v, const ModelSpecConfig& spec,
                              const Dims& dims) {
  const bool wb = spec.variant != Variant::PMF;
  const bool hier = spec.variant == Variant::BPTF || spec.variant == Variant::BCPTF;
  const bool cons = spec.variant == Variant::CPTF || spec.variant == Variant::BCPTF;
  std::size_t at = 0;
  auto next = [&]() { return v.at(at++); };

  RefUnpacked out;
  RefParams& p = out.p;
  p.U = zero_grid(dims.M, dims.D);
  for (int m = 0; m < dims.M; ++m)
    for (int d = 0; d < dims.D; ++d) p.U[m][d] = next();
  p.V = zero_grid(dims.N, dims.D);
  for (int n = 0; n < dims.N; ++n)
    for (int d = 0; d < dims.D; ++d) p.V[n][d] = next();
  if (wb) {
    for (int s = 0; s < dims.S; ++s) p.w.push_back(next());
    for (int s = 0; s < dims.S; ++s) p.b.push_back(next());
  }
  if (hier) {
    for (int d = 0; d < dims.D; ++d) p.mu_U.push_back(next());
    for (int d = 0; d < dims.D; ++d) p.mu_V.push_back(next());
    p.z_U = zero_grid(dims.D, dims.D);
    for (int i = 1; i < dims.D; ++i)
      for (int j = 0; j < i; ++j) p.z_U[i][j] = std::tanh(next());
    p.z_V = zero_grid(dims.D, dims.D);
    for (int i = 1; i < dims.D; ++i)
      for (int j = 0; j < i; ++j) p.z_V[i][j] = std::tanh(next());
    for (int d = 0; d < dims.D; ++d) p.t_U.push_back(next());
    for (int d = 0; d < dims.D; ++d) p.t_V.push_back(next());
  }
  if (cons) {
    out.Y = zero_grid(dims.K, dims.D);
    for (int k = 0; k < dims.K; ++k)
      for (int d = 0; d < dims.D; ++d) out.Y[k][d] = next();
    out.X = zero_grid(dims.J, dims.D);
    for (int j = 0; j < dims.J; ++j)
      for (int d = 0; d < dims.D; ++d) out.X[j][d] = next();
  }
  p.learned_noise = spec.noise.learned;
  if (spec.noise.learned) {
    p.log_sigma = next();
    p.sigma = std::exp(p.log_sigma);
  } else {
    p.sigma = spec.noise.fixed_sigma;
  }
  if (at != v.size()) throw std::runtime_error("ref_unpack: length mismatch");
  return out;
}

/// Correlation Cholesky from partial correlations: row i entry j is
/// z_ij * sqrt(1 - sum of squares of the earlier entries in the row).
inline Grid chol_from_partial(const Grid& z, int D) {
  Grid L = zero_grid(D, D);
  L[0][0] = 1.0;
  for (int i = 1; i < D; ++i) {
    for (int j = 0; j < i; ++j) {
      double partial = 0.0;
      for (int jp = 0; jp < j; ++jp) partial += L[i][jp] * L[i][jp];
      L[i][j] = z[i][j] * std::sqrt(1.0 - partial);
    }
    double partial = 0.0;
    for (int jp = 0; jp < i; ++jp) partial += L[i][jp] * L[i][jp];
    L[i][i] = std::sqrt(1.0 - partial);
  }
  return L;
}

/// Gauss-Jordan inverse and determinant of a small dense matrix.
inline void invert_with_det(const Grid& A, Grid& inv, double& det) {
  int n = static_cast<int>(A.size());
  Grid aug = A;
  inv = zero_grid(n, n);
  for (int i = 0; i < n; ++i) inv[i][i] = 1.0;
  det = 1.0;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(aug[r][col]) > std::abs(aug[pivot][col])) pivot = r;
    if (pivot != col) {
      std::swap(aug[pivot], aug[col]);
      std::swap(inv[pivot], inv[col]);
      det = -det;
    }
    double p = aug[col][col];
    det *= p;
    for (int c = 0; c < n; ++c) {
      aug[col][c] /= p;
      inv[col][c] /= p;
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      double f = aug[r][col];
      for (int c = 0; c < n; ++c) {
        aug[r][c] -= f * aug[col][c];
        inv[r][c] -= f * inv[col][c];
      }
    }
  }
}

inline double mvn_logpdf(const std::vector<double>& x, const std::vector<double>& mu,
                         const Grid& cov) {
  static const double log2pi = std::log(2.0 * 3.14159265358979323846);
  int D = static_cast<int>(x.size());
  Grid prec;
  double det;
  invert_with_det(cov, prec, det);
  double quad = 0.0;
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) quad += (x[i] - mu[i]) * prec[i][j] * (x[j] - mu[j]);
  return -0.5 * D * log2pi - 0.5 * std::log(det) - 0.5 * quad;
}

struct RefHier {
  std::vector<double> mu;
  Grid z;
  std::vector<double> t;
};

/// Hierarchical prior for one side, straight from the definitions:
/// Lambda^{-1} = (diag(sigma_L) L)(diag(sigma_L) L)^T with L ~ LKJ(eta)
/// evaluated via det(LL^T)^{eta-1} plus the correlation-to-Cholesky Jacobian,
/// sigma_L ~ Exp(lambda) through the log transform, rows ~ N(mu, Lambda^{-1}).
inline double ref_hier_side(const Grid& rows, const RefHier& h, double eta, double lambda,
                            int D) {
  Grid L = chol_from_partial(h.z, D);
  std::vector<double> sigma_L(D);
  for (int d = 0; d < D; ++d) sigma_L[d] = std::exp(h.t[d]);

  // covariance (diag(sigma) L)(diag(sigma) L)^T, element by element
  Grid cov = zero_grid(D, D);
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) {
      double acc = 0.0;
      for (int k = 0; k < D; ++k) acc += sigma_L[i] * L[i][k] * sigma_L[j] * L[j][k];
      cov[i][j] = acc;
    }

  double lp = 0.0;
  std::vector<double> zero(D, 0.0);
  lp += mvn_logpdf(h.mu, zero, cov);
  for (const auto& row : rows) lp += mvn_logpdf(row, h.mu, cov);

  // LKJ(eta) on Omega = LL^T expressed through its Cholesky factor:
  // (eta-1) log det(Omega) plus the Omega -> L change of variables.
  double logdet_omega = 0.0;
  for (int d = 0; d < D; ++d) logdet_omega += 2.0 * std::log(L[d][d]);
  lp += (eta - 1.0) * logdet_omega;
  for (int j = 0; j < D; ++j) lp += (D - 1 - j) * std::log(L[j][j]);

  // z -> L Jacobian, closed form: each tanh coordinate (i,j) contributes
  // (1 + (i-1-j)/2) log(1 - z^2).
  for (int i = 1; i < D; ++i)
    for (int j = 0; j < i; ++j)
      lp += (1.0 + 0.5 * (i - 1 - j)) * std::log(1.0 - h.z[i][j] * h.z[i][j]);

  // Exponential prior through the log transform
  for (int d = 0; d < D; ++d) lp += std::log(lambda) - lambda * sigma_L[d] + h.t[d];
  return lp;
}

inline Grid effective_rows(const Grid& base, const Grid& profile, const Grid& effect) {
  if (effect.empty()) return base;
  Grid out = base;
  int rows = static_cast<int>(base.size());
  int D = static_cast<int>(base[0].size());
  int K = static_cast<int>(effect.size());
  for (int r = 0; r < rows; ++r)
    for (int d = 0; d < D; ++d)
      for (int k = 0; k < K; ++k) out[r][d] += profile[r][k] * effect[k][d];
  return out;
}

inline Grid profile_grid(const Eigen::MatrixXd& m) {
  Grid g = zero_grid(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

inline double ref_predict_cell(const RefUnpacked& up, const ModelSpecConfig& spec,
                               const Grid& Ueff, const Grid& Veff, int m, int n, int s) {
  double dot = 0.0;
  for (std::size_t d = 0; d < Ueff[m].size(); ++d) dot += Ueff[m][d] * Veff[n][d];
  if (spec.variant == Variant::PMF) return dot;
  return dot * up.p.w[s] + up.p.b[s];
}

inline double ref_log_joint(const std::vector<double>& v, const TrainSet& data,
                            const ModelSpecConfig& spec, const Dims& dims,
                            const ProfileSet* profiles) {
  RefUnpacked up = ref_unpack(v, spec, dims);
  const bool wb = spec.variant != Variant::PMF;
  const bool hier = spec.variant == Variant::BPTF || spec.variant == Variant::BCPTF;
  const bool cons = spec.variant == Variant::CPTF || spec.variant == Variant::BCPTF;

  Grid Ueff = up.p.U, Veff = up.p.V;
  if (cons) {
    Ueff = effective_rows(up.p.U, profile_grid(profiles->H), up.Y);
    Veff = effective_rows(up.p.V, profile_grid(profiles->G), up.X);
  }

  double lp = 0.0;
  for (const auto& e : data.entries) {
    double pred = ref_predict_cell(up, spec, Ueff, Veff, e.m, e.n, e.s);
    lp += normal_logpdf(e.value, pred, up.p.sigma);
  }

  if (!hier) {
    for (const auto& row : up.p.U)
      for (double x : row) lp += normal_logpdf(x, 0.0, spec.sigma_U);
    for (const auto& row : up.p.V)
      for (double x : row) lp += normal_logpdf(x, 0.0, spec.sigma_V);
  } else {
    RefHier hu{up.p.mu_U, up.p.z_U, up.p.t_U};
    RefHier hv{up.p.mu_V, up.p.z_V, up.p.t_V};
    lp += ref_hier_side(up.p.U, hu, spec.eta, spec.lambda, dims.D);
    lp += ref_hier_side(up.p.V, hv, spec.eta, spec.lambda, dims.D);
  }
  if (wb) {
    for (double x : up.p.w) lp += normal_logpdf(x, 0.0, spec.sigma_w);
    for (double x : up.p.b) lp += normal_logpdf(x, 0.0, spec.sigma_b);
  }
  if (cons) {
    for (const auto& row : up.Y)
      for (double x : row) lp += normal_logpdf(x, 0.0, spec.sigma_Y);
    for (const auto& row : up.X)
      for (double x : row) lp += normal_logpdf(x, 0.0, spec.sigma_X);
  }
  if (spec.noise.learned) {
    // half-normal(1) on sigma: 2 phi(sigma), plus the exp-transform Jacobian
    lp += std::log(2.0) + normal_logpdf(up.p.sigma, 0.0, 1.0) + up.p.log_sigma;
  }
  return lp;
}

inline std::vector<double> ref_reconstruct(const std::vector<double>& v,
                                           const ModelSpecConfig& spec, const Dims& dims,
                                           const ProfileSet* profiles) {
  RefUnpacked up = ref_unpack(v, spec, dims);
  const bool cons = spec.variant == Variant::CPTF || spec.variant == Variant::BCPTF;
  Grid Ueff = up.p.U, Veff = up.p.V;
  if (cons) {
    Ueff = effective_rows(up.p.U, profile_grid(profiles->H), up.Y);
    Veff = effective_rows(up.p.V, profile_grid(profiles->G), up.X);
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(dims.M) * dims.N * dims.S);
  for (int m = 0; m < dims.M; ++m)
    for (int n = 0; n < dims.N; ++n)
      for (int s = 0; s < dims.S; ++s)
        out.push_back(ref_predict_cell(up, spec, Ueff, Veff, m, n, s));
  return out;
}

}  // namespace refmodel
