#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "scorecast/util.hpp"

namespace scorecast {

/// Joint log-density with gradient: returns log p(q) and fills grad.
using LogDensityFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;
using LogProbFn = std::function<double(const Eigen::VectorXd&)>;
using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct SamplerConfig {
  int n_tune = 500;
  int n_draws = 100;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 0;
  int n_chains = 1;

  void validate() const {
    if (n_tune < 0) throw std::runtime_error("n_tune must be >= 0");
    if (n_draws < 1) throw std::runtime_error("n_draws must be >= 1");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw std::runtime_error("target_accept must lie strictly between 0 and 1");
    if (max_tree_depth < 1 || max_tree_depth > 15)
      throw std::runtime_error("max_tree_depth must lie in [1, 15]");
    if (n_chains < 1) throw std::runtime_error("n_chains must be >= 1");
  }
};

struct ChainDiagnostics {
  double accept_mean = 0.0;
  double adapted_eps = 0.0;
  int divergences = 0;
  int draws = 0;
};

/// Post-tune draws from all chains, concatenated in chain order.
struct PosteriorSamples {
  std::vector<Eigen::VectorXd> draws;
  std::vector<double> log_joint;
  std::vector<ChainDiagnostics> chains;

  int total_divergences() const {
    int d = 0;
    for (const auto& c : chains) d += c.divergences;
    return d;
  }
};

inline nlohmann::ordered_json diagnostics_to_json(const PosteriorSamples& s) {
  nlohmann::ordered_json j;
  j["chains"] = nlohmann::ordered_json::array();
  for (const auto& c : s.chains)
    j["chains"].push_back({{"accept_mean", c.accept_mean},
                           {"adapted_eps", c.adapted_eps},
                           {"divergences", c.divergences},
                           {"draws", c.draws}});
  j["total_draws"] = s.draws.size();
  j["total_divergences"] = s.total_divergences();
  return j;
}

/// One leapfrog step: half momentum kick, full position drift, half momentum
/// kick. Two gradient evaluations. Non-finite results are passed through for
/// the caller to treat as a divergence.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> leapfrog(const Eigen::VectorXd& q,
                                                            const Eigen::VectorXd& p,
                                                            double eps, const GradFn& grad) {
  if (!(eps > 0.0)) throw std::runtime_error("leapfrog step size must be > 0");
  Eigen::VectorXd p_half = p + 0.5 * eps * grad(q);
  Eigen::VectorXd q_next = q + eps * p_half;
  Eigen::VectorXd p_next = p_half + 0.5 * eps * grad(q_next);
  return {std::move(q_next), std::move(p_next)};
}

/// Nesterov-style dual averaging driving the acceptance statistic toward the
/// target. The shrinkage point is log(eps0), so constant-at-target feedback
/// keeps the step size where it started.
class DualAveraging {
 public:
  DualAveraging(double eps0, double target, double gamma = 0.05, double t0 = 10.0,
                double kappa = 0.75)
      : mu_(std::log(eps0)), target_(target), gamma_(gamma), t0_(t0), kappa_(kappa),
        log_eps_(std::log(eps0)) {}

  /// Feed one acceptance statistic; returns the step size for the next
  /// iteration.
  double update(double accept_stat) {
    ++m_;
    double eta = 1.0 / (m_ + t0_);
    hbar_ = (1.0 - eta) * hbar_ + eta * (target_ - accept_stat);
    log_eps_ = mu_ - std::sqrt(double(m_)) / gamma_ * hbar_;
    double w = std::pow(double(m_), -kappa_);
    log_eps_bar_ = w * log_eps_ + (1.0 - w) * log_eps_bar_;
    return std::exp(log_eps_);
  }

  double current() const { return std::exp(log_eps_); }
  double adapted() const { return m_ == 0 ? std::exp(log_eps_) : std::exp(log_eps_bar_); }

 private:
  double mu_, target_, gamma_, t0_, kappa_;
  double log_eps_, log_eps_bar_ = 0.0, hbar_ = 0.0;
  long m_ = 0;
};

namespace detail {

struct PhasePoint {
  Eigen::VectorXd q, p, grad;
  double logp = 0.0;
  double joint = 0.0;  // logp - kinetic energy
};

struct NutsTree {
  PhasePoint minus, plus, prop;
  double log_weight = -std::numeric_limits<double>::infinity();
  double sum_alpha = 0.0;
  long n_alpha = 0;
  bool turning = false;
  bool diverged = false;
};

inline double log_sum_exp(double a, double b) {
  double m = std::max(a, b);
  if (!std::isfinite(m)) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline bool uturn(const PhasePoint& minus, const PhasePoint& plus) {
  Eigen::VectorXd dq = plus.q - minus.q;
  return dq.dot(minus.p) < 0.0 || dq.dot(plus.p) < 0.0;
}

class NutsChain {
 public:
  NutsChain(const LogDensityFn& f, std::uint64_t seed) : f_(f), rng_(seed) {}

  PhasePoint make_point(const Eigen::VectorXd& q) {
    PhasePoint pt;
    pt.q = q;
    pt.grad.resize(q.size());
    pt.logp = f_(q, pt.grad);
    return pt;
  }

  double unif() { return unif_(rng_); }
  bool coin() { return unif_(rng_) < 0.5; }

  Eigen::VectorXd momentum(Eigen::Index n) {
    Eigen::VectorXd p(n);
    for (Eigen::Index i = 0; i < n; ++i) p(i) = normal_(rng_);
    return p;
  }

  /// One leapfrog from `from` with signed step; one density evaluation.
  PhasePoint step(const PhasePoint& from, double signed_eps) {
    PhasePoint next;
    Eigen::VectorXd p_half = from.p + 0.5 * signed_eps * from.grad;
    next.q = from.q + signed_eps * p_half;
    next.grad.resize(next.q.size());
    next.logp = f_(next.q, next.grad);
    next.p = p_half + 0.5 * signed_eps * next.grad;
    next.joint = next.logp - 0.5 * next.p.squaredNorm();
    return next;
  }

  NutsTree build_tree(const PhasePoint& from, int depth, int dir, double joint0, double eps) {
    if (depth == 0) {
      PhasePoint next = step(from, dir * eps);
      NutsTree leaf;
      bool finite = std::isfinite(next.joint);
      leaf.diverged = !finite || (joint0 - next.joint > 1000.0);
      leaf.log_weight = finite ? next.joint : -std::numeric_limits<double>::infinity();
      leaf.sum_alpha = finite ? std::min(1.0, std::exp(next.joint - joint0)) : 0.0;
      leaf.n_alpha = 1;
      leaf.prop = next;
      leaf.minus = next;
      leaf.plus = std::move(next);
      return leaf;
    }
    NutsTree first = build_tree(from, depth - 1, dir, joint0, eps);
    if (first.diverged || first.turning) return first;
    const PhasePoint& edge = dir > 0 ? first.plus : first.minus;
    NutsTree second = build_tree(edge, depth - 1, dir, joint0, eps);
    NutsTree merged;
    merged.sum_alpha = first.sum_alpha + second.sum_alpha;
    merged.n_alpha = first.n_alpha + second.n_alpha;
    merged.diverged = second.diverged;
    merged.minus = dir > 0 ? std::move(first.minus) : std::move(second.minus);
    merged.plus = dir > 0 ? std::move(second.plus) : std::move(first.plus);
    if (second.diverged) {
      merged.turning = true;
      merged.prop = std::move(first.prop);
      merged.log_weight = first.log_weight;
      return merged;
    }
    merged.log_weight = log_sum_exp(first.log_weight, second.log_weight);
    double p_second = std::exp(second.log_weight - merged.log_weight);
    merged.prop = (std::isfinite(p_second) && unif() < p_second) ? std::move(second.prop)
                                                                 : std::move(first.prop);
    merged.turning = second.turning || uturn(merged.minus, merged.plus);
    return merged;
  }

  /// One NUTS transition; updates cur in place. Returns (accept_stat, diverged).
  std::pair<double, bool> transition(PhasePoint& cur, double eps, int max_depth) {
    cur.p = momentum(cur.q.size());
    cur.joint = cur.logp - 0.5 * cur.p.squaredNorm();
    double joint0 = cur.joint;

    NutsTree traj;
    traj.minus = cur;
    traj.plus = cur;
    traj.prop = cur;
    traj.log_weight = joint0;

    double sum_alpha = 0.0;
    long n_alpha = 0;
    bool diverged = false;
    for (int depth = 0; depth < max_depth; ++depth) {
      int dir = coin() ? 1 : -1;
      const PhasePoint& edge = dir > 0 ? traj.plus : traj.minus;
      NutsTree sub = build_tree(edge, depth, dir, joint0, eps);
      sum_alpha += sub.sum_alpha;
      n_alpha += sub.n_alpha;
      if (sub.diverged) {
        diverged = true;
        break;
      }
      if (!sub.turning) {
        double p_accept = std::min(1.0, std::exp(sub.log_weight - traj.log_weight));
        if (unif() < p_accept) traj.prop = sub.prop;
      }
      if (dir > 0)
        traj.plus = std::move(sub.plus);
      else
        traj.minus = std::move(sub.minus);
      traj.log_weight = log_sum_exp(traj.log_weight, sub.log_weight);
      if (sub.turning || uturn(traj.minus, traj.plus)) break;
    }
    cur = std::move(traj.prop);
    double accept_stat = n_alpha > 0 ? sum_alpha / double(n_alpha) : 0.0;
    return {accept_stat, diverged};
  }

  /// Doubling/halving heuristic for the starting step size.
  double find_reasonable_epsilon(const PhasePoint& origin) {
    double eps = 1.0;
    PhasePoint start = origin;
    start.p = momentum(start.q.size());
    start.joint = start.logp - 0.5 * start.p.squaredNorm();
    auto joint_after = [&](double e) {
      PhasePoint next = step(start, e);
      return next.joint;
    };
    double j1 = joint_after(eps);
    int guard = 0;
    while (!std::isfinite(j1) && guard++ < 60) {
      eps *= 0.5;
      j1 = joint_after(eps);
    }
    if (!std::isfinite(j1)) return 1e-6;
    double a = (j1 - start.joint > std::log(0.5)) ? 1.0 : -1.0;
    while (a * (j1 - start.joint) > -a * std::log(2.0) && guard++ < 120) {
      eps *= std::pow(2.0, a);
      j1 = joint_after(eps);
      if (!std::isfinite(j1)) {
        if (a > 0) eps *= 0.5;  // step back from the blow-up
        break;
      }
    }
    return std::clamp(eps, 1e-10, 1e6);
  }

 private:
  const LogDensityFn& f_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace detail

/// No-U-Turn sampling from an unnormalized log density: tree doubling with
/// the original termination criterion and multinomial leaf selection, step
/// size adapted during tuning by dual averaging and then frozen. Chains run
/// sequentially; their draws are concatenated. Deterministic per seed.
inline PosteriorSamples nuts_sample(const LogDensityFn& f, const Eigen::VectorXd& init,
                                    const SamplerConfig& cfg) {
  cfg.validate();
  PosteriorSamples out;
  out.draws.reserve(static_cast<std::size_t>(cfg.n_draws) * cfg.n_chains);

  for (int chain = 0; chain < cfg.n_chains; ++chain) {
    detail::NutsChain nc(f, mix_seed(cfg.seed, static_cast<std::uint64_t>(chain)));
    detail::PhasePoint cur = nc.make_point(init);
    if (!std::isfinite(cur.logp))
      throw std::runtime_error("log density is not finite at the initial point");

    double eps = nc.find_reasonable_epsilon(cur);
    DualAveraging da(eps, cfg.target_accept);
    int tune_divergences = 0;
    for (int it = 0; it < cfg.n_tune; ++it) {
      auto [accept_stat, diverged] = nc.transition(cur, eps, cfg.max_tree_depth);
      if (diverged) ++tune_divergences;
      eps = da.update(accept_stat);
    }
    if (cfg.n_tune > 0 && tune_divergences == cfg.n_tune)
      throw std::runtime_error("every tuning transition diverged; start point or model is "
                               "numerically unusable (chain " + std::to_string(chain) + ")");
    eps = da.adapted();

    ChainDiagnostics diag;
    diag.adapted_eps = eps;
    double accept_sum = 0.0;
    for (int it = 0; it < cfg.n_draws; ++it) {
      auto [accept_stat, diverged] = nc.transition(cur, eps, cfg.max_tree_depth);
      accept_sum += accept_stat;
      if (diverged) ++diag.divergences;
      out.draws.push_back(cur.q);
      out.log_joint.push_back(cur.logp);
    }
    diag.accept_mean = accept_sum / double(cfg.n_draws);
    diag.draws = cfg.n_draws;
    out.chains.push_back(diag);
  }
  return out;
}

/// Convenience overload for separate density and gradient callables.
inline PosteriorSamples nuts_sample(const LogProbFn& logp, const GradFn& grad,
                                    const Eigen::VectorXd& init, const SamplerConfig& cfg) {
  LogDensityFn f = [&](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    g = grad(q);
    return logp(q);
  };
  return nuts_sample(f, init, cfg);
}

}  // namespace scorecast
