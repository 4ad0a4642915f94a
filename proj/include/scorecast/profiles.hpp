#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "scorecast/tensor.hpp"
#include "scorecast/util.hpp"

namespace scorecast {

/// Model profiles H (M x K) and dataset profiles G (N x J) with column names.
/// One-hot column blocks are recorded so the row-sum invariant can be checked.
struct ProfileSet {
  Eigen::MatrixXd H;
  Eigen::MatrixXd G;
  std::vector<std::string> h_names;
  std::vector<std::string> g_names;
  std::vector<std::pair<int, int>> h_onehot_blocks;  // (first column, width)
  std::vector<std::pair<int, int>> g_onehot_blocks;

  int K() const { return static_cast<int>(H.cols()); }
  int J() const { return static_cast<int>(G.cols()); }

  void validate() const {
    if (H.cols() < 1 || G.cols() < 1)
      throw std::runtime_error("profiles need at least one column per side");
    if (static_cast<int>(h_names.size()) != K() || static_cast<int>(g_names.size()) != J())
      throw std::runtime_error("profile column names out of sync");
    auto check_blocks = [](const Eigen::MatrixXd& P,
                           const std::vector<std::pair<int, int>>& blocks, const char* side) {
      for (auto [start, width] : blocks)
        for (int r = 0; r < P.rows(); ++r) {
          double sum = P.block(r, start, 1, width).sum();
          if (std::abs(sum - 1.0) > 1e-12)
            throw std::runtime_error(std::string("one-hot block row sum != 1 in ") + side);
        }
    };
    check_blocks(H, h_onehot_blocks, "H");
    check_blocks(G, g_onehot_blocks, "G");
  }
};

struct KMeansResult {
  std::vector<int> assignments;
  Eigen::MatrixXd centroids;  // k x dim
  double inertia = 0.0;
  int iterations = 0;
  std::vector<double> inertia_history;  // one entry per Lloyd iteration
};

namespace detail {

inline std::size_t count_distinct_rows(const Eigen::MatrixXd& pts) {
  std::vector<std::vector<double>> rows(pts.rows());
  for (int i = 0; i < pts.rows(); ++i) {
    rows[i].resize(pts.cols());
    for (int j = 0; j < pts.cols(); ++j) rows[i][static_cast<std::size_t>(j)] = pts(i, j);
  }
  std::sort(rows.begin(), rows.end());
  return static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Deterministic per seed.
/// Converges when assignments stop changing or max_iter is hit.
inline KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                           int max_iter = 300) {
  const int n = static_cast<int>(points.rows());
  const int dim = static_cast<int>(points.cols());
  if (n == 0) throw std::runtime_error("kmeans: empty input");
  if (k < 1) throw std::runtime_error("kmeans: k must be >= 1");
  if (static_cast<std::size_t>(k) > detail::count_distinct_rows(points))
    throw std::runtime_error("kmeans: k exceeds the number of distinct points");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // k-means++ seeding
  Eigen::MatrixXd centroids(k, dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  {
    int first = static_cast<int>(unif(rng) * n);
    if (first >= n) first = n - 1;
    centroids.row(0) = points.row(first);
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        double d = (points.row(i) - centroids.row(c - 1)).squaredNorm();
        d2[i] = std::min(d2[i], d);
        total += d2[i];
      }
      int chosen = n - 1;
      if (total > 0.0) {
        double target = unif(rng) * total, cum = 0.0;
        for (int i = 0; i < n; ++i) {
          cum += d2[i];
          if (cum >= target) { chosen = i; break; }
        }
      } else {
        chosen = static_cast<int>(unif(rng) * n);
        if (chosen >= n) chosen = n - 1;
      }
      centroids.row(c) = points.row(chosen);
    }
  }

  KMeansResult res;
  res.assignments.assign(n, -1);
  std::vector<int> counts(k);
  auto assign_all = [&](std::vector<int>& out) {
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (points.row(i) - centroids.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        double d = (points.row(i) - centroids.row(c)).squaredNorm();
        if (d < best_d) { best_d = d; best = c; }
      }
      out[i] = best;
      inertia += best_d;
    }
    return inertia;
  };
  std::vector<int> next(n);
  for (int iter = 0; iter < max_iter; ++iter) {
    double inertia = assign_all(next);
    bool changed = next != res.assignments;
    res.assignments = next;
    res.inertia_history.push_back(inertia);
    res.inertia = inertia;
    res.iterations = iter + 1;
    if (!changed) break;

    centroids.setZero();
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < n; ++i) {
      centroids.row(res.assignments[i]) += points.row(i);
      ++counts[res.assignments[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) centroids.row(c) /= double(counts[c]);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      // adopt the point farthest from its current centroid (smallest index wins ties)
      int far_i = 0;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        double d = (points.row(i) - centroids.row(res.assignments[i])).squaredNorm();
        if (d > far_d) { far_d = d; far_i = i; }
      }
      centroids.row(c) = points.row(far_i);
    }
  }
  // final pass so assignments and inertia match the returned centroids
  res.inertia = assign_all(res.assignments);
  res.centroids = std::move(centroids);
  return res;
}

/// Elbow rule on a precomputed inertia curve: the candidate k in
/// [k_lo, k_hi] maximizing the second difference (discrete curvature) of
/// inertia, both neighbors required. Ties go to the smaller k.
inline int elbow_from_inertia(const std::map<int, double>& inertia, int k_lo, int k_hi) {
  if (inertia.size() < 3)
    throw std::runtime_error("elbow_select: fewer than 3 candidate k values");
  int best_k = -1;
  double best_curv = -std::numeric_limits<double>::infinity();
  for (int k = k_lo; k <= k_hi; ++k) {
    auto prev = inertia.find(k - 1), cur = inertia.find(k), next = inertia.find(k + 1);
    if (prev == inertia.end() || cur == inertia.end() || next == inertia.end()) continue;
    double curv = prev->second - 2.0 * cur->second + next->second;
    if (best_k == -1 || curv > best_curv + 1e-12) {
      best_curv = curv;
      best_k = k;
    }
  }
  if (best_k == -1) throw std::runtime_error("elbow_select: no candidate k has both neighbors");
  return best_k;
}

/// Elbow rule over k-means runs: inertia is evaluated on [k_lo-1, k_hi+1]
/// clamped to the number of distinct points.
inline int elbow_select(const Eigen::MatrixXd& points, std::uint64_t seed, int k_lo = 2,
                        int k_hi = 10) {
  if (k_lo > k_hi) throw std::runtime_error("elbow_select: empty k range");
  int max_k = static_cast<int>(detail::count_distinct_rows(points));
  int lo = std::max(1, k_lo - 1);
  int hi = std::min(max_k, k_hi + 1);
  if (hi - lo + 1 < 3)
    throw std::runtime_error("elbow_select: fewer than 3 candidate k values");
  std::map<int, double> inertia;
  for (int k = lo; k <= hi; ++k)
    inertia[k] = kmeans(points, k, mix_seed(seed, static_cast<std::uint64_t>(k))).inertia;
  return elbow_from_inertia(inertia, k_lo, k_hi);
}

/// elbow_select with a fallback for degenerate inputs (too few distinct
/// points to form a curvature): use every distinct point as its own cluster,
/// capped at k_lo.
inline int elbow_or_degenerate(const Eigen::MatrixXd& points, std::uint64_t seed, int k_lo = 2,
                               int k_hi = 10) {
  int distinct = static_cast<int>(detail::count_distinct_rows(points));
  if (std::min(distinct, k_hi + 1) - std::max(1, k_lo - 1) + 1 < 3)
    return std::min(distinct, k_lo);
  return elbow_select(points, seed, k_lo, k_hi);
}

namespace detail {

inline Eigen::MatrixXd one_hot(const std::vector<int>& assignments, int k) {
  Eigen::MatrixXd oh = Eigen::MatrixXd::Zero(static_cast<int>(assignments.size()), k);
  for (std::size_t i = 0; i < assignments.size(); ++i) oh(static_cast<int>(i), assignments[i]) = 1.0;
  return oh;
}

}  // namespace detail

/// Oracle profiles from a fully observed score matrix: K-Means over rows for
/// H and over columns for G, cluster counts chosen by the elbow rule,
/// memberships encoded one-hot.
inline ProfileSet oracle_profiles(const Eigen::MatrixXd& full, std::uint64_t seed,
                                  int k_lo = 2, int k_hi = 10) {
  if (!full.allFinite())
    throw std::runtime_error("oracle_profiles: input matrix has missing entries");
  ProfileSet ps;
  {
    int k = elbow_or_degenerate(full, mix_seed(seed, 1), k_lo, k_hi);
    auto km = kmeans(full, k, mix_seed(seed, 2));
    ps.H = detail::one_hot(km.assignments, k);
    for (int c = 0; c < k; ++c) ps.h_names.push_back("model_cluster_" + std::to_string(c));
    ps.h_onehot_blocks.push_back({0, k});
  }
  {
    Eigen::MatrixXd cols = full.transpose();
    int k = elbow_or_degenerate(cols, mix_seed(seed, 3), k_lo, k_hi);
    auto km = kmeans(cols, k, mix_seed(seed, 4));
    ps.G = detail::one_hot(km.assignments, k);
    for (int c = 0; c < k; ++c) ps.g_names.push_back("dataset_cluster_" + std::to_string(c));
    ps.g_onehot_blocks.push_back({0, k});
  }
  ps.validate();
  return ps;
}

/// Extracts the complete matrix slice for one metric; throws if any valid
/// cell of that metric is unobserved.
inline Eigen::MatrixXd full_metric_slice(const ScoreTensor& t, std::size_t s) {
  Eigen::MatrixXd full(t.M(), t.N());
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t n = 0; n < t.N(); ++n) {
      if (!t.is_observed(m, n, s))
        throw std::runtime_error("oracle profiles need a fully observed metric slice; missing " +
                                 t.model_ids[m] + "/" + t.dataset_ids[n]);
      full(static_cast<int>(m), static_cast<int>(n)) = t.values[t.idx(m, n, s)];
    }
  return full;
}

namespace detail {

struct FeatureTable {
  std::vector<std::string> feature_names;          // column order
  std::vector<bool> numeric;                       // per feature
  std::vector<std::vector<std::string>> cells;     // per model (aligned to id list)
};

/// Parses the model feature file. Two layouts:
///   wide:      model_id,num:params,cat:family
///   key=value: model_id,params=7,family=A
inline FeatureTable parse_model_features(const std::string& path,
                                         const std::vector<std::string>& model_ids) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model feature file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty model feature file: " + path);
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "model_id")
    throw std::runtime_error(path + ": first header column must be model_id");

  bool wide = header.size() > 1 && (header[1].rfind("num:", 0) == 0 || header[1].rfind("cat:", 0) == 0);

  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < model_ids.size(); ++i) row_of[model_ids[i]] = i;

  FeatureTable tbl;
  std::vector<bool> seen(model_ids.size(), false);

  if (wide) {
    for (std::size_t c = 1; c < header.size(); ++c) {
      const std::string& h = header[c];
      if (h.rfind("num:", 0) == 0) {
        tbl.feature_names.push_back(h.substr(4));
        tbl.numeric.push_back(true);
      } else if (h.rfind("cat:", 0) == 0) {
        tbl.feature_names.push_back(h.substr(4));
        tbl.numeric.push_back(false);
      } else {
        throw std::runtime_error(path + ": header column '" + h +
                                 "' needs a num: or cat: prefix");
      }
    }
    tbl.cells.assign(model_ids.size(),
                     std::vector<std::string>(tbl.feature_names.size()));
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      auto f = split_csv_line(line);
      if (f.size() != header.size())
        throw std::runtime_error(path + ": row width does not match header");
      auto it = row_of.find(f[0]);
      if (it == row_of.end())
        throw std::runtime_error(path + ": unknown model_id '" + f[0] + "'");
      seen[it->second] = true;
      for (std::size_t c = 1; c < f.size(); ++c) tbl.cells[it->second][c - 1] = f[c];
    }
  } else {
    // key=value rows; feature order from first appearance, types inferred
    std::vector<std::map<std::string, std::string>> kv(model_ids.size());
    std::vector<std::string> order;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      auto f = split_csv_line(line);
      if (f.empty()) continue;
      auto it = row_of.find(f[0]);
      if (it == row_of.end())
        throw std::runtime_error(path + ": unknown model_id '" + f[0] + "'");
      seen[it->second] = true;
      for (std::size_t c = 1; c < f.size(); ++c) {
        auto eq = f[c].find('=');
        if (eq == std::string::npos)
          throw std::runtime_error(path + ": expected feature=value, got '" + f[c] + "'");
        std::string key = f[c].substr(0, eq), val = f[c].substr(eq + 1);
        if (!kv[it->second].count(key) && std::find(order.begin(), order.end(), key) == order.end())
          order.push_back(key);
        kv[it->second][key] = val;
      }
    }
    tbl.feature_names = order;
    tbl.numeric.assign(order.size(), true);
    tbl.cells.assign(model_ids.size(), std::vector<std::string>(order.size()));
    for (std::size_t i = 0; i < model_ids.size(); ++i) {
      if (!seen[i]) continue;
      for (std::size_t c = 0; c < order.size(); ++c) {
        auto it = kv[i].find(order[c]);
        if (it == kv[i].end())
          throw std::runtime_error(path + ": model '" + model_ids[i] + "' is missing feature '" +
                                   order[c] + "'");
        tbl.cells[i][c] = it->second;
        char* end = nullptr;
        std::strtod(it->second.c_str(), &end);
        if (end != it->second.c_str() + it->second.size() || it->second.empty())
          tbl.numeric[c] = false;
      }
    }
  }
  for (std::size_t i = 0; i < model_ids.size(); ++i)
    if (!seen[i])
      throw std::runtime_error(path + ": model '" + model_ids[i] + "' absent from feature file");
  return tbl;
}

}  // namespace detail

/// Custom profiles: H from a model feature file (numeric columns
/// standardized over models, categoricals one-hot in first-appearance
/// order); G from K-Means one-hot clusters of dataset embedding vectors,
/// k chosen by the elbow rule unless cluster_k is given.
inline ProfileSet custom_profiles(const std::vector<std::string>& model_ids,
                                  const std::string& model_feature_path,
                                  const std::vector<std::string>& dataset_ids,
                                  const std::string& embedding_path, int cluster_k,
                                  std::uint64_t seed, int k_lo = 2, int k_hi = 10) {
  ProfileSet ps;

  auto tbl = detail::parse_model_features(model_feature_path, model_ids);
  const auto Mn = model_ids.size();
  std::vector<Eigen::VectorXd> columns;
  for (std::size_t c = 0; c < tbl.feature_names.size(); ++c) {
    if (tbl.numeric[c]) {
      Eigen::VectorXd col(Mn);
      for (std::size_t i = 0; i < Mn; ++i)
        col(static_cast<int>(i)) =
            parse_double(tbl.cells[i][c], "feature " + tbl.feature_names[c]);
      double mean = col.mean();
      double sd = std::sqrt((col.array() - mean).square().sum() / double(Mn));
      if (sd <= 0.0) sd = 1.0;
      col = (col.array() - mean) / sd;
      columns.push_back(col);
      ps.h_names.push_back(tbl.feature_names[c]);
    } else {
      std::vector<std::string> cats;
      for (std::size_t i = 0; i < Mn; ++i)
        if (std::find(cats.begin(), cats.end(), tbl.cells[i][c]) == cats.end())
          cats.push_back(tbl.cells[i][c]);
      int start = static_cast<int>(columns.size());
      for (const auto& cat : cats) {
        Eigen::VectorXd col = Eigen::VectorXd::Zero(Mn);
        for (std::size_t i = 0; i < Mn; ++i)
          if (tbl.cells[i][c] == cat) col(static_cast<int>(i)) = 1.0;
        columns.push_back(col);
        ps.h_names.push_back(tbl.feature_names[c] + "=" + cat);
      }
      ps.h_onehot_blocks.push_back({start, static_cast<int>(cats.size())});
    }
  }
  if (columns.empty()) throw std::runtime_error("model feature file produced no columns");
  ps.H.resize(Mn, static_cast<int>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) ps.H.col(static_cast<int>(c)) = columns[c];

  // dataset embeddings
  std::ifstream in(embedding_path);
  if (!in) throw std::runtime_error("cannot open embedding file: " + embedding_path);
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < dataset_ids.size(); ++i) row_of[dataset_ids[i]] = i;
  std::vector<Eigen::VectorXd> emb(dataset_ids.size());
  std::string line;
  std::size_t dim = 0;
  bool first_line = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (first_line && !f.empty() && f[0] == "dataset_id") { first_line = false; continue; }
    first_line = false;
    if (f.size() < 2)
      throw std::runtime_error(embedding_path + ": expected dataset_id,v0,...");
    auto it = row_of.find(f[0]);
    if (it == row_of.end())
      throw std::runtime_error(embedding_path + ": unknown dataset_id '" + f[0] + "'");
    Eigen::VectorXd v(f.size() - 1);
    for (std::size_t c = 1; c < f.size(); ++c)
      v(static_cast<int>(c - 1)) = parse_double(f[c], embedding_path);
    if (dim == 0) dim = f.size() - 1;
    if (f.size() - 1 != dim)
      throw std::runtime_error(embedding_path + ": ragged embedding for '" + f[0] + "'");
    emb[it->second] = v;
  }
  for (std::size_t i = 0; i < dataset_ids.size(); ++i)
    if (emb[i].size() == 0)
      throw std::runtime_error(embedding_path + ": dataset '" + dataset_ids[i] +
                               "' absent from embedding file");
  Eigen::MatrixXd points(dataset_ids.size(), dim);
  for (std::size_t i = 0; i < dataset_ids.size(); ++i) points.row(static_cast<int>(i)) = emb[i];

  int k = cluster_k > 0 ? cluster_k : elbow_select(points, mix_seed(seed, 5), k_lo, k_hi);
  auto km = kmeans(points, k, mix_seed(seed, 6));
  ps.G = detail::one_hot(km.assignments, k);
  for (int c = 0; c < k; ++c) ps.g_names.push_back("dataset_cluster_" + std::to_string(c));
  ps.g_onehot_blocks.push_back({0, k});

  ps.validate();
  return ps;
}

}  // namespace scorecast
