#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "scorecast/profiles.hpp"

using namespace scorecast;
using Catch::Approx;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << content;
  return path;
}

Eigen::MatrixXd blobs(int per_blob, const std::vector<Eigen::Vector2d>& centers,
                      double jitter, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm(0.0, jitter);
  Eigen::MatrixXd pts(per_blob * centers.size(), 2);
  int at = 0;
  for (const auto& c : centers)
    for (int i = 0; i < per_blob; ++i) {
      pts(at, 0) = c(0) + norm(rng);
      pts(at, 1) = c(1) + norm(rng);
      ++at;
    }
  return pts;
}

// partition signature: sorted groups of sorted point indices
std::set<std::set<int>> partition_of(const std::vector<int>& assign) {
  std::map<int, std::set<int>> groups;
  for (std::size_t i = 0; i < assign.size(); ++i)
    groups[assign[i]].insert(static_cast<int>(i));
  std::set<std::set<int>> part;
  for (auto& [k, g] : groups) part.insert(g);
  return part;
}

}  // namespace

TEST_CASE("kmeans separates well-separated pairs", "[profiles]") {
  Eigen::MatrixXd pts(4, 2);
  pts << 0, 0, 0, 1, 10, 10, 10, 11;
  auto km = kmeans(pts, 2, 3);
  CHECK(km.inertia == Approx(1.0));
  CHECK(km.assignments[0] == km.assignments[1]);
  CHECK(km.assignments[2] == km.assignments[3]);
  CHECK(km.assignments[0] != km.assignments[2]);
}

TEST_CASE("kmeans with k equal to the point count has zero inertia", "[profiles]") {
  Eigen::MatrixXd pts(3, 2);
  pts << 0, 0, 5, 5, -3, 7;
  auto km = kmeans(pts, 3, 1);
  CHECK(km.inertia == Approx(0.0).margin(1e-15));
}

TEST_CASE("duplicate points collapse without error", "[profiles]") {
  Eigen::MatrixXd pts(4, 2);
  pts << 1, 1, 1, 1, 8, 8, 8, 8;
  auto km = kmeans(pts, 2, 5);
  CHECK(km.inertia == Approx(0.0).margin(1e-15));
  CHECK_THROWS(kmeans(pts, 3, 5));  // only 2 distinct points
}

TEST_CASE("kmeans rejects bad inputs", "[profiles]") {
  Eigen::MatrixXd empty(0, 2);
  CHECK_THROWS(kmeans(empty, 1, 0));
  Eigen::MatrixXd pts(2, 1);
  pts << 0, 1;
  CHECK_THROWS(kmeans(pts, 0, 0));
}

TEST_CASE("kmeans inertia is non-increasing across iterations", "[profiles]") {
  auto pts = blobs(20, {{0, 0}, {4, 1}, {-3, 5}}, 1.2, 7);
  auto km = kmeans(pts, 3, 11);
  for (std::size_t i = 1; i < km.inertia_history.size(); ++i)
    CHECK(km.inertia_history[i] <= km.inertia_history[i - 1] + 1e-9);
}

TEST_CASE("kmeans is deterministic per seed and stable under permutation", "[profiles]") {
  auto pts = blobs(15, {{0, 0}, {12, 12}, {-9, 6}}, 0.5, 13);
  auto a = kmeans(pts, 3, 21);
  auto b = kmeans(pts, 3, 21);
  CHECK(a.assignments == b.assignments);

  // shuffled input: same optimum on well-separated blobs, so equal inertia
  std::vector<int> perm(pts.rows());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(99));
  Eigen::MatrixXd shuffled(pts.rows(), pts.cols());
  for (int i = 0; i < pts.rows(); ++i) shuffled.row(i) = pts.row(perm[i]);
  auto c = kmeans(shuffled, 3, 21);
  CHECK(c.inertia == Approx(a.inertia).margin(1e-9));
}

TEST_CASE("elbow rule picks the curvature maximum on a constructed sequence",
          "[profiles]") {
  std::map<int, double> inertia = {{1, 100.0}, {2, 20.0}, {3, 18.0}, {4, 17.0}};
  CHECK(elbow_from_inertia(inertia, 2, 3) == 2);

  // linear decay: all curvatures equal, tie goes to the smallest k
  std::map<int, double> linear;
  for (int k = 1; k <= 8; ++k) linear[k] = 100.0 - 10.0 * k;
  CHECK(elbow_from_inertia(linear, 2, 7) == 2);

  std::map<int, double> tiny = {{1, 5.0}, {2, 1.0}};
  CHECK_THROWS(elbow_from_inertia(tiny, 2, 2));
}

TEST_CASE("elbow finds the true blob count", "[profiles]") {
  auto pts = blobs(25, {{0, 0}, {20, 0}, {0, 20}, {20, 20}}, 0.6, 3);
  CHECK(elbow_select(pts, 17, 2, 10) == 4);
}

TEST_CASE("oracle profiles split row-scale groups", "[profiles]") {
  // rank-1 matrix, rows in two scale groups
  Eigen::VectorXd v(6);
  v << 1, 2, 3, 4, 5, 6;
  Eigen::MatrixXd full(8, 6);
  for (int m = 0; m < 8; ++m) full.row(m) = (m < 4 ? 1.0 : 10.0) * v.transpose();
  auto ps = oracle_profiles(full, 5);
  REQUIRE(ps.H.cols() == 2);
  CHECK(ps.H(0, 0) == ps.H(3, 0));
  CHECK(ps.H(4, 0) != ps.H(0, 0));
  ps.validate();
  for (int m = 0; m < 8; ++m) CHECK(ps.H.row(m).sum() == Approx(1.0));
}

TEST_CASE("oracle profiles on identical rows give one all-ones column", "[profiles]") {
  Eigen::MatrixXd full(5, 4);
  for (int m = 0; m < 5; ++m)
    for (int n = 0; n < 4; ++n) full(m, n) = double(n);
  auto ps = oracle_profiles(full, 1);
  REQUIRE(ps.H.cols() == 1);
  for (int m = 0; m < 5; ++m) CHECK(ps.H(m, 0) == 1.0);
}

TEST_CASE("transposing swaps the oracle construction", "[profiles]") {
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(9, 6);
  for (int m = 0; m < 9; ++m)
    for (int n = 0; n < 6; ++n) block(m, n) = (m / 3) * 10.0 + (n / 3) * 100.0 + 0.01 * (m + n);
  auto ps = oracle_profiles(block, 4);
  auto ps_t = oracle_profiles(block.transpose(), 4);
  auto to_assign = [](const Eigen::MatrixXd& onehot) {
    std::vector<int> a(onehot.rows());
    for (int r = 0; r < onehot.rows(); ++r) {
      for (int c = 0; c < onehot.cols(); ++c)
        if (onehot(r, c) == 1.0) a[r] = c;
    }
    return a;
  };
  CHECK(partition_of(to_assign(ps.H)) == partition_of(to_assign(ps_t.G)));
  CHECK(partition_of(to_assign(ps.G)) == partition_of(to_assign(ps_t.H)));
}

TEST_CASE("oracle profiles reject missing entries", "[profiles]") {
  Eigen::MatrixXd full(3, 3);
  full.setZero();
  full(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(oracle_profiles(full, 0));
}

TEST_CASE("custom profiles encode model features", "[profiles]") {
  auto feat = write_temp("scorecast_feat.csv",
                         "model_id,num:params,cat:family\n"
                         "m0,7,A\n"
                         "m1,13,A\n");
  auto emb = write_temp("scorecast_emb.csv",
                        "dataset_id,v0,v1\n"
                        "d0,0,0\n"
                        "d1,0.1,0\n"
                        "d2,10,10\n"
                        "d3,10.1,10\n");
  std::vector<std::string> models = {"m0", "m1"};
  std::vector<std::string> datasets = {"d0", "d1", "d2", "d3"};
  auto ps = custom_profiles(models, feat, datasets, emb, 2, 5);
  REQUIRE(ps.H.cols() == 2);  // standardized params + one family level
  CHECK(ps.H(0, 0) == Approx(-1.0));
  CHECK(ps.H(1, 0) == Approx(1.0));
  CHECK(ps.H(0, 1) == 1.0);
  CHECK(ps.H(1, 1) == 1.0);
  CHECK(ps.h_names[0] == "params");
  CHECK(ps.h_names[1] == "family=A");
  REQUIRE(ps.G.cols() == 2);
  CHECK(ps.G.row(0) == ps.G.row(1));
  CHECK(ps.G.row(2) == ps.G.row(3));
  CHECK(ps.G.row(0) != ps.G.row(2));
}

TEST_CASE("custom profiles accept key=value feature rows", "[profiles]") {
  auto feat = write_temp("scorecast_feat_kv.csv",
                         "model_id,features\n"
                         "m0,params=7,family=A\n"
                         "m1,params=13,family=B\n");
  auto emb = write_temp("scorecast_emb2.csv",
                        "dataset_id,v0\n"
                        "d0,0\n"
                        "d1,5\n");
  std::vector<std::string> models = {"m0", "m1"};
  std::vector<std::string> datasets = {"d0", "d1"};
  auto ps = custom_profiles(models, feat, datasets, emb, 2, 5);
  // params numeric standardized; family becomes two one-hot levels
  REQUIRE(ps.H.cols() == 3);
  CHECK(ps.H(0, 0) == Approx(-1.0));
  CHECK(ps.H(0, 1) == 1.0);
  CHECK(ps.H(1, 2) == 1.0);
  ps.validate();
}

TEST_CASE("custom profiles report missing and unknown ids", "[profiles]") {
  auto feat = write_temp("scorecast_feat3.csv",
                         "model_id,num:params\n"
                         "m0,7\n");
  auto emb = write_temp("scorecast_emb3.csv",
                        "dataset_id,v0\n"
                        "d0,0\n");
  std::vector<std::string> datasets = {"d0", "d1"};
  CHECK_THROWS_WITH(custom_profiles({"m0"}, feat, datasets, emb, 1, 5),
                    Catch::Matchers::ContainsSubstring("d1"));
  std::vector<std::string> models = {"m0", "m1"};
  CHECK_THROWS_WITH(custom_profiles(models, feat, {"d0"}, emb, 1, 5),
                    Catch::Matchers::ContainsSubstring("m1"));
}

TEST_CASE("ragged embeddings are rejected", "[profiles]") {
  auto feat = write_temp("scorecast_feat4.csv",
                         "model_id,num:params\n"
                         "m0,7\n");
  auto emb = write_temp("scorecast_emb4.csv",
                        "dataset_id,v0,v1\n"
                        "d0,0,1\n"
                        "d1,5\n");
  CHECK_THROWS_WITH(custom_profiles({"m0"}, feat, {"d0", "d1"}, emb, 1, 5),
                    Catch::Matchers::ContainsSubstring("ragged"));
}
