#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scorecast/model.hpp"
#include "scorecast/profiles.hpp"
#include "scorecast/tensor.hpp"
#include "scorecast/util.hpp"

namespace scorecast {

/// Structural options layered on top of prior-forward generation:
///   RowGroups      - latent model rows cluster into groups (for oracle-profile tests)
///   ProfileEffects - one-hot group profiles with planted Y, X and fixed metric
///                    weights, so constrained fits have identifiable structure
///   OutlierRows    - the last model row is scaled up, far from column means
enum class PlantKind { None, RowGroups, ProfileEffects, OutlierRows };

inline PlantKind plant_from_name(std::string name) {
  for (auto& c : name) c = static_cast<char>(std::tolower(c));
  if (name == "none") return PlantKind::None;
  if (name == "row-groups") return PlantKind::RowGroups;
  if (name == "profile") return PlantKind::ProfileEffects;
  if (name == "outlier") return PlantKind::OutlierRows;
  throw std::runtime_error("unknown plant '" + name + "' (expected none|row-groups|profile|outlier)");
}

struct SynthResult {
  ScoreTensor tensor;  // fully observed
  LatentState truth;
  ModelSpecConfig spec;
  ProfileSet profiles;  // meaningful when has_profiles
  bool has_profiles = false;
};

namespace detail {

inline std::string padded_id(const char* prefix, int i, int count) {
  int width = 1;
  for (int c = count - 1; c >= 10; c /= 10) ++width;
  std::string num = std::to_string(i);
  return std::string(prefix) + std::string(width - static_cast<int>(num.size()) > 0
                                                ? width - num.size()
                                                : 0, '0') + num;
}

/// One-hot group profile over `count` rows split into `groups` contiguous blocks.
inline Eigen::MatrixXd contiguous_groups(int count, int groups) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(count, groups);
  for (int i = 0; i < count; ++i) {
    int g = static_cast<int>(static_cast<long long>(i) * groups / count);
    P(i, g) = 1.0;
  }
  return P;
}

inline double draw_beta(std::mt19937_64& rng, double a) {
  std::gamma_distribution<double> g(a, 1.0);
  double x = g(rng), y = g(rng);
  return x / (x + y);
}

/// Draws a correlation Cholesky factor from LKJ(eta) via independent
/// canonical partial correlations.
inline Eigen::MatrixXd draw_lkj_chol(std::mt19937_64& rng, int D, double eta) {
  Eigen::VectorXd x(D * (D - 1) / 2);
  int idx = 0;
  for (int i = 1; i < D; ++i)
    for (int j = 0; j < i; ++j) {
      double alpha = eta + (D - 2 - j) / 2.0;
      double z = 2.0 * draw_beta(rng, alpha) - 1.0;
      z = std::clamp(z, -1.0 + 1e-12, 1.0 - 1e-12);
      x(idx++) = std::atanh(z);
    }
  return CorrChol::forward(x, D).L;
}

}  // namespace detail

/// Samples a complete score tensor forward from the generative model:
/// latents from their priors, means per the variant's prediction rule, plus
/// Gaussian observation noise. Deterministic per seed.
inline SynthResult generate(const ModelSpecConfig& spec, int M, int N, int S, double noise_sd,
                            std::uint64_t seed, PlantKind plant = PlantKind::None) {
  spec.validate();
  if (M < 1 || N < 1 || S < 1) throw std::runtime_error("dimensions must be >= 1");
  if (noise_sd < 0.0) throw std::runtime_error("noise sd must be >= 0");
  const int D = spec.D;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> stdnorm(0.0, 1.0);

  SynthResult res;
  res.spec = spec;

  const bool constrained = has_profiles(spec.variant);
  const bool hier = has_hierarchy(spec.variant);
  const bool metric_map = has_metric_map(spec.variant);

  int K = 0, J = 0;
  if (constrained || plant == PlantKind::ProfileEffects) {
    K = std::min(4, M);
    J = std::min(4, N);
    res.profiles.H = detail::contiguous_groups(M, K);
    res.profiles.G = detail::contiguous_groups(N, J);
    for (int k = 0; k < K; ++k) res.profiles.h_names.push_back("model_group_" + std::to_string(k));
    for (int j = 0; j < J; ++j) res.profiles.g_names.push_back("dataset_group_" + std::to_string(j));
    res.profiles.h_onehot_blocks.push_back({0, K});
    res.profiles.g_onehot_blocks.push_back({0, J});
    res.has_profiles = true;
  }

  LatentState st;
  st.dims = {M, N, S, D, constrained ? K : 0, constrained ? J : 0};

  auto draw_rows = [&](int rows, double scale) {
    RowMat R(rows, D);
    for (int i = 0; i < rows; ++i)
      for (int d = 0; d < D; ++d) R(i, d) = scale * stdnorm(rng);
    return R;
  };

  if (!hier) {
    st.U = draw_rows(M, spec.sigma_U);
    st.V = draw_rows(N, spec.sigma_V);
  } else {
    auto draw_side = [&](int rows, Eigen::VectorXd& mu, Eigen::MatrixXd& L,
                         Eigen::VectorXd& sigma_L) {
      sigma_L.resize(D);
      std::exponential_distribution<double> expd(spec.lambda);
      for (int d = 0; d < D; ++d) sigma_L(d) = expd(rng);
      L = detail::draw_lkj_chol(rng, D, spec.eta);
      Eigen::MatrixXd A = sigma_L.asDiagonal() * L;
      Eigen::VectorXd z(D);
      for (int d = 0; d < D; ++d) z(d) = stdnorm(rng);
      mu = A * z;
      RowMat R(rows, D);
      for (int i = 0; i < rows; ++i) {
        for (int d = 0; d < D; ++d) z(d) = stdnorm(rng);
        R.row(i) = (mu + A * z).transpose();
      }
      return R;
    };
    st.U = draw_side(M, st.mu_U, st.L_U, st.sigma_L_U);
    st.V = draw_side(N, st.mu_V, st.L_V, st.sigma_L_V);
    st.z_U = corr_chol_to_unconstrained(st.L_U);
    st.z_V = corr_chol_to_unconstrained(st.L_V);
    st.t_sig_L_U = st.sigma_L_U.array().log();
    st.t_sig_L_V = st.sigma_L_V.array().log();
  }

  if (metric_map) {
    st.w.resize(S);
    st.b.resize(S);
    for (int s = 0; s < S; ++s) st.w(s) = spec.sigma_w * stdnorm(rng);
    for (int s = 0; s < S; ++s) st.b(s) = spec.sigma_b * stdnorm(rng);
    if (plant == PlantKind::ProfileEffects) {
      // fixed, identifiable metric map so the planted structure is testable
      for (int s = 0; s < S; ++s) {
        st.w(s) = s % 2 == 0 ? 1.0 : -0.7;
        st.b(s) = s % 2 == 0 ? 0.0 : 0.25;
      }
    }
  }

  if (constrained) {
    st.Y = draw_rows(K, spec.sigma_Y);
    st.X = draw_rows(J, spec.sigma_X);
  }

  if (plant == PlantKind::RowGroups) {
    int groups = std::min(3, M);
    RowMat base = draw_rows(groups, spec.sigma_U);
    for (int m = 0; m < M; ++m) {
      int g = static_cast<int>(static_cast<long long>(m) * groups / M);
      for (int d = 0; d < D; ++d) st.U(m, d) = base(g, d) + 0.1 * spec.sigma_U * stdnorm(rng);
    }
  } else if (plant == PlantKind::OutlierRows) {
    st.U.row(M - 1) *= 3.0;
  }

  st.sigma = noise_sd > 0.0 ? noise_sd : 1.0;
  st.log_sigma = std::log(st.sigma);

  std::vector<double> mean = reconstruct(st, spec, res.has_profiles ? &res.profiles : nullptr);

  ScoreTensor& t = res.tensor;
  for (int m = 0; m < M; ++m) t.model_ids.push_back(detail::padded_id("model_", m, M));
  for (int n = 0; n < N; ++n) t.dataset_ids.push_back(detail::padded_id("dataset_", n, N));
  for (int s = 0; s < S; ++s) t.metric_ids.push_back(detail::padded_id("metric_", s, S));
  t.values.resize(mean.size());
  t.observed.assign(mean.size(), 1);
  t.valid.assign(static_cast<std::size_t>(N) * S, 1);
  for (std::size_t c = 0; c < mean.size(); ++c)
    t.values[c] = mean[c] + (noise_sd > 0.0 ? noise_sd * stdnorm(rng) : 0.0);
  t.validate();

  res.truth = std::move(st);
  return res;
}

}  // namespace scorecast
