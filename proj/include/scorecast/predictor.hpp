#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorecast/model.hpp"
#include "scorecast/sampler.hpp"
#include "scorecast/tensor.hpp"
#include "scorecast/util.hpp"

namespace scorecast {

struct MetricScores {
  double rmse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
  std::size_t count = 0;
};

struct MetricsSummary {
  MetricScores overall;
  std::vector<std::pair<std::string, MetricScores>> per_metric;
};

/// Per-entry posterior mean and standard deviation on the original score
/// scale, plus the evaluation bookkeeping.
struct PredictionReport {
  std::vector<double> mean;    // M*N*S, denormalized; NaN where not covered
  std::vector<double> stddev;  // M*N*S, denormalized scale
  Mask covered;                // cells with a prediction
  Mask eval_mask;              // test and valid and covered
  MetricsSummary metrics;      // over eval_mask
};

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth,
                   const Mask& mask) {
  double ss = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      double d = pred[i] - truth[i];
      ss += d * d;
      ++n;
    }
  if (n == 0) throw std::runtime_error("rmse: empty mask");
  return std::sqrt(ss / double(n));
}

inline double mae(const std::vector<double>& pred, const std::vector<double>& truth,
                  const Mask& mask) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      sum += std::abs(pred[i] - truth[i]);
      ++n;
    }
  if (n == 0) throw std::runtime_error("mae: empty mask");
  return sum / double(n);
}

/// R^2 = 1 - SS_res / SS_tot with SS_tot about the mean of the masked truth.
inline double r_squared(const std::vector<double>& pred, const std::vector<double>& truth,
                        const Mask& mask) {
  double mean_truth = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      mean_truth += truth[i];
      ++n;
    }
  if (n == 0) throw std::runtime_error("r2: empty mask");
  mean_truth /= double(n);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
      ss_tot += (truth[i] - mean_truth) * (truth[i] - mean_truth);
    }
  if (ss_tot == 0.0)
    return ss_res == 0.0 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
  return 1.0 - ss_res / ss_tot;
}

inline MetricScores score_block(const std::vector<double>& pred,
                                const std::vector<double>& truth, const Mask& mask) {
  MetricScores ms;
  ms.rmse = rmse(pred, truth, mask);
  ms.mae = mae(pred, truth, mask);
  ms.r2 = r_squared(pred, truth, mask);
  for (auto b : mask) ms.count += b ? 1 : 0;
  return ms;
}

/// Overall (pooled over all masked cells) plus per-metric scores; metrics
/// with no masked cells are omitted.
inline MetricsSummary compute_metrics(const std::vector<double>& pred, const ScoreTensor& t,
                                      const Mask& mask) {
  MetricsSummary sum;
  sum.overall = score_block(pred, t.values, mask);
  for (std::size_t s = 0; s < t.S(); ++s) {
    Mask ms(mask.size(), 0);
    std::size_t n = 0;
    for (std::size_t m = 0; m < t.M(); ++m)
      for (std::size_t nn = 0; nn < t.N(); ++nn) {
        std::size_t c = t.idx(m, nn, s);
        if (mask[c]) {
          ms[c] = 1;
          ++n;
        }
      }
    if (n > 0) sum.per_metric.emplace_back(t.metric_ids[s], score_block(pred, t.values, ms));
  }
  return sum;
}

/// Posterior mean and population standard deviation over the draws, on the
/// normalized scale of the fitted model.
inline void posterior_mean_std_normalized(const PosteriorSamples& samples,
                                          const ModelSpecConfig& spec, const Dims& dims,
                                          const ProfileSet* profiles,
                                          std::vector<double>& mean_out,
                                          std::vector<double>& std_out) {
  if (samples.draws.empty()) throw std::runtime_error("predict needs at least one draw");
  const std::size_t cells = static_cast<std::size_t>(dims.M) * dims.N * dims.S;
  const double inv_n = 1.0 / double(samples.draws.size());
  // two passes (mean, then squared deviations) to avoid cancellation
  mean_out.assign(cells, 0.0);
  for (const auto& draw : samples.draws) {
    std::vector<double> pred = reconstruct(unpack(draw, spec, dims), spec, profiles);
    for (std::size_t c = 0; c < cells; ++c) mean_out[c] += pred[c];
  }
  for (std::size_t c = 0; c < cells; ++c) mean_out[c] *= inv_n;
  std_out.assign(cells, 0.0);
  for (const auto& draw : samples.draws) {
    std::vector<double> pred = reconstruct(unpack(draw, spec, dims), spec, profiles);
    for (std::size_t c = 0; c < cells; ++c) {
      double d = pred[c] - mean_out[c];
      std_out[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < cells; ++c) std_out[c] = std::sqrt(std_out[c] * inv_n);
}

/// Denormalized posterior predictions: mean through the inverse transform,
/// std scaled by the metric's sd.
inline void predict(const PosteriorSamples& samples, const ModelSpecConfig& spec,
                    const Dims& dims, const ProfileSet* profiles, const Normalizer& nz,
                    std::vector<double>& mean_out, std::vector<double>& std_out) {
  posterior_mean_std_normalized(samples, spec, dims, profiles, mean_out, std_out);
  std::size_t at = 0;
  for (int m = 0; m < dims.M; ++m)
    for (int n = 0; n < dims.N; ++n)
      for (int s = 0; s < dims.S; ++s) {
        mean_out[at] = nz.denormalize(static_cast<std::size_t>(s), mean_out[at]);
        std_out[at] *= nz.sd[static_cast<std::size_t>(s)];
        ++at;
      }
}

/// Every cell of metric s gets the train-observed mean of that metric;
/// metrics without train entries fall back to the pooled train mean.
inline std::vector<double> global_mean_baseline(const ScoreTensor& t, const Mask& train) {
  std::vector<double> sum(t.S(), 0.0);
  std::vector<std::size_t> cnt(t.S(), 0);
  double pooled_sum = 0.0;
  std::size_t pooled_cnt = 0;
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t n = 0; n < t.N(); ++n)
      for (std::size_t s = 0; s < t.S(); ++s)
        if (train[t.idx(m, n, s)]) {
          double v = t.values[t.idx(m, n, s)];
          sum[s] += v;
          ++cnt[s];
          pooled_sum += v;
          ++pooled_cnt;
        }
  if (pooled_cnt == 0) throw std::runtime_error("baseline needs a non-empty train mask");
  double pooled = pooled_sum / double(pooled_cnt);
  std::vector<double> out(t.cell_count());
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t n = 0; n < t.N(); ++n)
      for (std::size_t s = 0; s < t.S(); ++s)
        out[t.idx(m, n, s)] = cnt[s] > 0 ? sum[s] / double(cnt[s]) : pooled;
  return out;
}

/// prediction(m,n,s) = (row mean + column mean + global mean) / 3 per metric;
/// a missing row or column mean falls back to the metric's global mean.
inline std::vector<double> mean_of_means_baseline(const ScoreTensor& t, const Mask& train) {
  const std::size_t M = t.M(), N = t.N(), S = t.S();
  std::vector<double> row_sum(M * S, 0.0), col_sum(N * S, 0.0), glob_sum(S, 0.0);
  std::vector<std::size_t> row_cnt(M * S, 0), col_cnt(N * S, 0), glob_cnt(S, 0);
  double pooled_sum = 0.0;
  std::size_t pooled_cnt = 0;
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t s = 0; s < S; ++s)
        if (train[t.idx(m, n, s)]) {
          double v = t.values[t.idx(m, n, s)];
          row_sum[m * S + s] += v;
          ++row_cnt[m * S + s];
          col_sum[n * S + s] += v;
          ++col_cnt[n * S + s];
          glob_sum[s] += v;
          ++glob_cnt[s];
          pooled_sum += v;
          ++pooled_cnt;
        }
  if (pooled_cnt == 0) throw std::runtime_error("baseline needs a non-empty train mask");
  double pooled = pooled_sum / double(pooled_cnt);
  std::vector<double> out(t.cell_count());
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        double g = glob_cnt[s] > 0 ? glob_sum[s] / double(glob_cnt[s]) : pooled;
        double r = row_cnt[m * S + s] > 0 ? row_sum[m * S + s] / double(row_cnt[m * S + s]) : g;
        double c = col_cnt[n * S + s] > 0 ? col_sum[n * S + s] / double(col_cnt[n * S + s]) : g;
        out[t.idx(m, n, s)] = (r + c + g) / 3.0;
      }
  return out;
}

inline nlohmann::ordered_json metric_scores_to_json(const MetricScores& ms) {
  nlohmann::ordered_json j;
  j["rmse"] = ms.rmse;
  j["mae"] = ms.mae;
  if (std::isfinite(ms.r2))
    j["r2"] = ms.r2;
  else
    j["r2"] = nullptr;
  j["count"] = ms.count;
  return j;
}

inline nlohmann::ordered_json metrics_to_json(const MetricsSummary& sum) {
  nlohmann::ordered_json j;
  j["overall"] = metric_scores_to_json(sum.overall);
  j["per_metric"] = nlohmann::ordered_json::object();
  for (const auto& [name, ms] : sum.per_metric) j["per_metric"][name] = metric_scores_to_json(ms);
  return j;
}

/// CSV export: one row per covered cell.
/// model_id,dataset_id,metric_id,mean,std,observed,in_test,truth
inline void write_prediction_csv(const std::string& path, const ScoreTensor& t,
                                 const PredictionReport& report, const Mask& test) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "model_id,dataset_id,metric_id,mean,std,observed,in_test,truth\n";
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t n = 0; n < t.N(); ++n)
      for (std::size_t s = 0; s < t.S(); ++s) {
        std::size_t c = t.idx(m, n, s);
        if (!report.covered[c]) continue;
        out << t.model_ids[m] << ',' << t.dataset_ids[n] << ',' << t.metric_ids[s] << ','
            << format_double(report.mean[c]) << ',' << format_double(report.stddev[c]) << ','
            << int(t.observed[c]) << ',' << int(test[c]) << ',';
        if (t.observed[c]) out << format_double(t.values[c]);
        out << '\n';
      }
}

}  // namespace scorecast
