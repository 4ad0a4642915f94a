#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "scorecast/sampler.hpp"

using namespace scorecast;
using Catch::Approx;

namespace {

// correlated 2-D Gaussian, mean 0, unit variances, correlation rho
struct Gaussian2 {
  double rho;
  Eigen::Matrix2d prec;
  explicit Gaussian2(double r) : rho(r) {
    Eigen::Matrix2d cov;
    cov << 1.0, r, r, 1.0;
    prec = cov.inverse();
  }
  double operator()(const Eigen::VectorXd& q, Eigen::VectorXd& g) const {
    g = -(prec * q);
    return -0.5 * q.dot(prec * q);
  }
};

}  // namespace

TEST_CASE("leapfrog closed-form step on a standard normal", "[sampler]") {
  GradFn grad = [](const Eigen::VectorXd& q) { return Eigen::VectorXd(-q); };
  Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 1.0);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
  auto [q1, p1] = leapfrog(q, p, 0.1, grad);
  CHECK(q1(0) == Approx(0.995).epsilon(1e-12));
  CHECK(p1(0) == Approx(-0.09975).epsilon(1e-12));
}

TEST_CASE("leapfrog rejects a zero step size", "[sampler]") {
  GradFn grad = [](const Eigen::VectorXd& q) { return Eigen::VectorXd(-q); };
  Eigen::VectorXd q = Eigen::VectorXd::Ones(2), p = Eigen::VectorXd::Zero(2);
  CHECK_THROWS(leapfrog(q, p, 0.0, grad));
}

TEST_CASE("leapfrog is reversible", "[sampler]") {
  GradFn grad = [](const Eigen::VectorXd& q) {
    return Eigen::VectorXd(-q.array().pow(3) - q.array());
  };
  std::mt19937_64 rng(11);
  std::normal_distribution<double> norm(0.0, 1.0);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd q(3), p(3);
    for (int i = 0; i < 3; ++i) {
      q(i) = norm(rng);
      p(i) = norm(rng);
    }
    auto [q1, p1] = leapfrog(q, p, 0.15, grad);
    auto [q2, p2] = leapfrog(q1, Eigen::VectorXd(-p1), 0.15, grad);
    CHECK((q2 - q).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((p2 + p).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("leapfrog preserves phase-space volume", "[sampler]") {
  GradFn grad = [](const Eigen::VectorXd& q) {
    return Eigen::VectorXd(-q.array().pow(3) - 0.5 * q.array());
  };
  std::mt19937_64 rng(23);
  std::normal_distribution<double> norm(0.0, 0.7);
  const double eps = 0.12, h = 1e-6;
  for (int rep = 0; rep < 3; ++rep) {
    Eigen::VectorXd z(6);
    for (int i = 0; i < 6; ++i) z(i) = norm(rng);
    auto flow = [&](const Eigen::VectorXd& zz) {
      auto [q1, p1] = leapfrog(zz.head(3), zz.tail(3), eps, grad);
      Eigen::VectorXd out(6);
      out << q1, p1;
      return out;
    };
    Eigen::MatrixXd Jac(6, 6);
    for (int i = 0; i < 6; ++i) {
      Eigen::VectorXd zp = z, zm = z;
      zp(i) += h;
      zm(i) -= h;
      Jac.col(i) = (flow(zp) - flow(zm)) / (2.0 * h);
    }
    CHECK(std::abs(Jac.determinant() - 1.0) < 1e-5);
  }
}

TEST_CASE("one-step energy error shrinks like eps cubed", "[sampler]") {
  GradFn grad = [](const Eigen::VectorXd& q) { return Eigen::VectorXd(-q); };
  Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 1.0);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(1, 0.5);
  auto hamiltonian = [](const Eigen::VectorXd& qq, const Eigen::VectorXd& pp) {
    return 0.5 * qq.squaredNorm() + 0.5 * pp.squaredNorm();
  };
  std::vector<double> epses = {0.2, 0.1, 0.05};
  std::vector<double> errs;
  for (double eps : epses) {
    auto [q1, p1] = leapfrog(q, p, eps, grad);
    errs.push_back(std::abs(hamiltonian(q1, p1) - hamiltonian(q, p)));
  }
  // least-squares slope of log err vs log eps
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < epses.size(); ++i) {
    double x = std::log(epses[i]), y = std::log(errs[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double n = double(epses.size());
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope > 2.4);
  CHECK(slope < 3.6);
}

TEST_CASE("dual averaging holds the step size at the fixed point", "[sampler]") {
  DualAveraging da(0.3, 0.8);
  double eps = 0.3;
  for (int i = 0; i < 200; ++i) eps = da.update(0.8);
  CHECK(eps == Approx(0.3).epsilon(0.02));
  CHECK(da.adapted() == Approx(0.3).epsilon(0.02));
}

TEST_CASE("dual averaging moves monotonically under saturated feedback", "[sampler]") {
  DualAveraging up(0.1, 0.8);
  double prev = 0.1;
  for (int i = 0; i < 50; ++i) {
    double eps = up.update(1.0);
    CHECK(eps > prev);
    prev = eps;
  }
  DualAveraging down(0.1, 0.8);
  prev = 0.1;
  for (int i = 0; i < 50; ++i) {
    double eps = down.update(0.0);
    CHECK(eps < prev);
    prev = eps;
  }
}

TEST_CASE("nuts recovers a correlated gaussian", "[sampler][slow]") {
  Gaussian2 target(0.5);
  LogDensityFn f = [&](const Eigen::VectorXd& q, Eigen::VectorXd& g) { return target(q, g); };
  SamplerConfig cfg;
  cfg.n_tune = 500;
  cfg.n_draws = 2000;
  cfg.seed = 42;
  PosteriorSamples out = nuts_sample(f, Eigen::VectorXd::Zero(2), cfg);
  REQUIRE(out.draws.size() == 2000);

  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& d : out.draws) mean += d;
  mean /= double(out.draws.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& d : out.draws) {
    Eigen::Vector2d c = d - mean;
    cov += c * c.transpose();
  }
  cov /= double(out.draws.size());

  CHECK(std::abs(mean(0)) < 0.1);
  CHECK(std::abs(mean(1)) < 0.1);
  CHECK(std::abs(cov(0, 0) - 1.0) < 0.1);
  CHECK(std::abs(cov(1, 1) - 1.0) < 0.1);
  CHECK(std::abs(cov(0, 1) - 0.5) < 0.1);
  CHECK(out.total_divergences() < 20);  // < 1% of 2000
  CHECK(out.chains[0].adapted_eps > 0.0);
}

TEST_CASE("nuts matches the gaussian tail mass", "[sampler][slow]") {
  LogDensityFn f = [](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    g = -q;
    return -0.5 * q.squaredNorm();
  };
  SamplerConfig cfg;
  cfg.n_tune = 300;
  cfg.n_draws = 5000;
  cfg.seed = 7;
  PosteriorSamples out = nuts_sample(f, Eigen::VectorXd::Zero(1), cfg);
  std::size_t tail = 0;
  for (const auto& d : out.draws) tail += std::abs(d(0)) > 1.96 ? 1 : 0;
  double frac = double(tail) / double(out.draws.size());
  CHECK(frac == Approx(0.05).margin(0.02));
}

TEST_CASE("factorizable gaussian moments sit inside monte carlo bands", "[sampler][slow]") {
  Eigen::Vector3d sd(1.0, 2.0, 0.5);
  LogDensityFn f = [&](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    g = -(q.array() / sd.array().square()).matrix();
    return -0.5 * (q.array() / sd.array()).square().sum();
  };
  SamplerConfig cfg;
  cfg.n_tune = 400;
  cfg.n_draws = 2000;
  cfg.seed = 99;
  PosteriorSamples out = nuts_sample(f, Eigen::VectorXd::Zero(3), cfg);
  // allow an effective sample size of n/5 when sizing the bands
  double n_eff = double(out.draws.size()) / 5.0;
  for (int i = 0; i < 3; ++i) {
    double m = 0, v = 0;
    for (const auto& d : out.draws) m += d(i);
    m /= double(out.draws.size());
    for (const auto& d : out.draws) v += (d(i) - m) * (d(i) - m);
    v /= double(out.draws.size());
    CHECK(std::abs(m) < 3.0 * sd(i) / std::sqrt(n_eff));
    double var = sd(i) * sd(i);
    CHECK(std::abs(v - var) < 3.0 * var * std::sqrt(2.0 / n_eff));
  }
}

TEST_CASE("nuts draws are deterministic per seed", "[sampler]") {
  Gaussian2 target(0.3);
  LogDensityFn f = [&](const Eigen::VectorXd& q, Eigen::VectorXd& g) { return target(q, g); };
  SamplerConfig cfg;
  cfg.n_tune = 50;
  cfg.n_draws = 40;
  cfg.seed = 5;
  auto a = nuts_sample(f, Eigen::VectorXd::Zero(2), cfg);
  auto b = nuts_sample(f, Eigen::VectorXd::Zero(2), cfg);
  REQUIRE(a.draws.size() == b.draws.size());
  for (std::size_t i = 0; i < a.draws.size(); ++i)
    CHECK((a.draws[i] - b.draws[i]).norm() == 0.0);
  cfg.seed = 6;
  auto c = nuts_sample(f, Eigen::VectorXd::Zero(2), cfg);
  bool same = true;
  for (std::size_t i = 0; i < a.draws.size() && same; ++i)
    same = (a.draws[i] - c.draws[i]).norm() == 0.0;
  CHECK_FALSE(same);
}

TEST_CASE("multiple chains concatenate draws", "[sampler]") {
  LogDensityFn f = [](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    g = -q;
    return -0.5 * q.squaredNorm();
  };
  SamplerConfig cfg;
  cfg.n_tune = 50;
  cfg.n_draws = 30;
  cfg.n_chains = 3;
  cfg.seed = 2;
  auto out = nuts_sample(f, Eigen::VectorXd::Zero(2), cfg);
  CHECK(out.draws.size() == 90);
  CHECK(out.chains.size() == 3);
  for (const auto& lj : out.log_joint) CHECK(std::isfinite(lj));
}

TEST_CASE("non-finite initial density is rejected", "[sampler]") {
  LogDensityFn f = [](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    g = -q;
    return -std::numeric_limits<double>::infinity();
  };
  SamplerConfig cfg;
  cfg.n_tune = 10;
  cfg.n_draws = 10;
  CHECK_THROWS(nuts_sample(f, Eigen::VectorXd::Zero(2), cfg));
}

TEST_CASE("sampler config invariants are enforced", "[sampler]") {
  SamplerConfig cfg;
  cfg.n_draws = 0;
  CHECK_THROWS(cfg.validate());
  cfg = SamplerConfig{};
  cfg.target_accept = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = SamplerConfig{};
  cfg.max_tree_depth = 16;
  CHECK_THROWS(cfg.validate());
}
