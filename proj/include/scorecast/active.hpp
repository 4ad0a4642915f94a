#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "scorecast/fit.hpp"
#include "scorecast/model.hpp"
#include "scorecast/predictor.hpp"
#include "scorecast/sampler.hpp"
#include "scorecast/tensor.hpp"
#include "scorecast/util.hpp"

namespace scorecast {

enum class Strategy { Uncertainty, Random, Oracle };

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Uncertainty: return "uncertainty";
    case Strategy::Random: return "random";
    case Strategy::Oracle: return "oracle";
  }
  return "uncertainty";
}

inline Strategy strategy_from_name(std::string name) {
  for (auto& c : name) c = static_cast<char>(std::tolower(c));
  if (name == "uncertainty") return Strategy::Uncertainty;
  if (name == "random") return Strategy::Random;
  if (name == "oracle") return Strategy::Oracle;
  throw std::runtime_error("unknown strategy '" + name +
                           "' (expected uncertainty|random|oracle)");
}

struct ActiveConfig {
  Strategy strategy = Strategy::Uncertainty;
  double init_fraction = 0.2;
  double batch_fraction = 0.05;
  std::size_t budget = 0;  // max entries revealed in total; 0 = until exhausted
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  ModelSpecConfig model;
  SamplerConfig sampler;
  unsigned threads = 1;

  void validate(std::size_t hidden_entries) const {
    if (!(init_fraction > 0.0 && init_fraction < 1.0))
      throw std::runtime_error("init fraction must lie strictly between 0 and 1");
    if (!(batch_fraction > 0.0 && batch_fraction < 1.0))
      throw std::runtime_error("batch fraction must lie strictly between 0 and 1");
    if (seeds.empty()) throw std::runtime_error("need at least one seed");
    if (budget > hidden_entries)
      throw std::runtime_error("budget exceeds the number of hidden entries");
  }
};

struct ActiveRound {
  int round = 0;
  double fraction = 0.0;  // observed fraction of the ground-truth universe
  double rmse = 0.0;
  double mae = 0.0;
};

struct ActiveCurve {
  Strategy strategy = Strategy::Uncertainty;
  std::vector<ActiveRound> mean_rounds;                // seed-averaged
  std::vector<std::vector<ActiveRound>> seed_rounds;   // [seed][round]
};

/// Orders cells by descending score; ties broken by ascending cell index
/// (which is ascending (model, dataset, metric)).
inline std::vector<std::size_t> rank_by_uncertainty(const std::vector<double>& score,
                                                    const Mask& unobserved) {
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < unobserved.size(); ++c)
    if (unobserved[c]) order.push_back(c);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

namespace detail {

struct SeedRun {
  std::vector<ActiveRound> rounds;
};

inline SeedRun run_active_seed(const ScoreTensor& data, const ActiveConfig& cfg,
                               std::uint64_t seed) {
  // universe: all observed ground-truth cells
  std::vector<std::size_t> universe;
  for (std::size_t c = 0; c < data.cell_count(); ++c)
    if (data.observed[c]) universe.push_back(c);
  const std::size_t total = universe.size();

  Normalizer ref_nz;  // for normalized-scale oracle errors and std ranking
  Mask current(data.cell_count(), 0);
  {
    std::vector<std::size_t> shuffled = universe;
    std::mt19937_64 rng(mix_seed(seed, 0xACE0ULL));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto n_init = static_cast<std::size_t>(std::llround(cfg.init_fraction * double(total)));
    n_init = std::clamp<std::size_t>(n_init, 2, total);
    for (std::size_t i = 0; i < n_init; ++i) current[shuffled[i]] = 1;
  }
  std::mt19937_64 reveal_rng(mix_seed(seed, 0xBEEFULL));

  auto batch_n = static_cast<std::size_t>(std::llround(cfg.batch_fraction * double(total)));
  batch_n = std::max<std::size_t>(batch_n, 1);

  SeedRun out;
  std::size_t revealed = 0;
  int round = 0;
  while (true) {
    // fit on the currently observed cells, score the still-hidden ones
    SamplerConfig scfg = cfg.sampler;
    scfg.seed = mix_seed(seed, 0xF17000ULL + static_cast<std::uint64_t>(round));
    Normalizer nz = fit_normalizer(data, current);
    PosteriorSamples samples = fit_samples(data, current, cfg.model, scfg, nullptr);
    Dims dims = make_dims(cfg.model, data.M(), data.N(), data.S(), nullptr);
    std::vector<double> mean, sd;
    predict(samples, cfg.model, dims, nullptr, nz, mean, sd);

    Mask hidden(data.cell_count(), 0);
    std::size_t n_hidden = 0;
    for (std::size_t c : universe)
      if (!current[c]) {
        hidden[c] = 1;
        ++n_hidden;
      }
    if (n_hidden == 0) break;

    ActiveRound rec;
    rec.round = round;
    rec.fraction = double(total - n_hidden) / double(total);
    rec.rmse = rmse(mean, data.values, hidden);
    rec.mae = mae(mean, data.values, hidden);
    out.rounds.push_back(rec);

    if (cfg.budget > 0 && revealed >= cfg.budget) break;
    std::size_t take = std::min(batch_n, n_hidden);
    if (cfg.budget > 0) take = std::min(take, cfg.budget - revealed);
    if (take == 0) break;

    std::vector<std::size_t> chosen;
    if (cfg.strategy == Strategy::Random) {
      std::vector<std::size_t> pool;
      for (std::size_t c : universe)
        if (!current[c]) pool.push_back(c);
      std::shuffle(pool.begin(), pool.end(), reveal_rng);
      chosen.assign(pool.begin(), pool.begin() + static_cast<long>(take));
    } else {
      // rank on the normalized scale so metrics are commensurate
      std::vector<double> score(data.cell_count(), 0.0);
      for (std::size_t c = 0; c < data.cell_count(); ++c) {
        if (!hidden[c]) continue;
        std::size_t s = c % data.S();
        if (cfg.strategy == Strategy::Uncertainty)
          score[c] = sd[c] / nz.sd[s];
        else
          score[c] = std::abs(mean[c] - data.values[c]) / nz.sd[s];
      }
      auto order = rank_by_uncertainty(score, hidden);
      chosen.assign(order.begin(), order.begin() + static_cast<long>(take));
    }
    for (std::size_t c : chosen) current[c] = 1;
    revealed += take;
    ++round;
  }
  return out;
}

}  // namespace detail

/// Simulated active evaluation: starting from a random fraction of the
/// ground truth, repeatedly fit, score the hidden cells, and reveal the next
/// batch by the configured strategy. Seeds run independently (optionally in
/// parallel) and the curve is their per-round average.
inline ActiveCurve run_active(const ScoreTensor& data, const ActiveConfig& cfg) {
  std::size_t n_obs = data.observed_count();
  auto n_init = static_cast<std::size_t>(std::llround(cfg.init_fraction * double(n_obs)));
  cfg.validate(n_obs - std::min(n_obs, n_init));
  if (n_obs < 4) throw std::runtime_error("active evaluation needs at least 4 observed cells");

  ActiveCurve curve;
  curve.strategy = cfg.strategy;
  curve.seed_rounds.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t i) {
    curve.seed_rounds[i] = detail::run_active_seed(data, cfg, cfg.seeds[i]).rounds;
  });

  std::size_t n_rounds = curve.seed_rounds.front().size();
  for (const auto& rounds : curve.seed_rounds) n_rounds = std::min(n_rounds, rounds.size());
  for (std::size_t r = 0; r < n_rounds; ++r) {
    ActiveRound avg;
    avg.round = static_cast<int>(r);
    for (const auto& rounds : curve.seed_rounds) {
      avg.fraction += rounds[r].fraction;
      avg.rmse += rounds[r].rmse;
      avg.mae += rounds[r].mae;
    }
    double k = double(curve.seed_rounds.size());
    avg.fraction /= k;
    avg.rmse /= k;
    avg.mae /= k;
    curve.mean_rounds.push_back(avg);
  }
  return curve;
}

/// strategy,round,fraction,rmse,mae - one row per seed-averaged round.
inline void write_active_curve_csv(const std::string& path, const ActiveCurve& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "strategy,round,fraction,rmse,mae\n";
  for (const auto& r : curve.mean_rounds)
    out << strategy_name(curve.strategy) << ',' << r.round << ',' << format_double(r.fraction)
        << ',' << format_double(r.rmse) << ',' << format_double(r.mae) << '\n';
}

/// strategy,seed,round,fraction,rmse,mae - raw per-seed rows.
inline void write_active_seeds_csv(const std::string& path, const ActiveCurve& curve,
                                   const std::vector<std::uint64_t>& seeds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "strategy,seed,round,fraction,rmse,mae\n";
  for (std::size_t i = 0; i < curve.seed_rounds.size(); ++i)
    for (const auto& r : curve.seed_rounds[i])
      out << strategy_name(curve.strategy) << ',' << seeds[i] << ',' << r.round << ','
          << format_double(r.fraction) << ',' << format_double(r.rmse) << ','
          << format_double(r.mae) << '\n';
}

}  // namespace scorecast
