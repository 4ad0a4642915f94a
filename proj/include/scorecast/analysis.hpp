#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "scorecast/fit.hpp"
#include "scorecast/model.hpp"
#include "scorecast/predictor.hpp"
#include "scorecast/profiles.hpp"
#include "scorecast/sampler.hpp"
#include "scorecast/tensor.hpp"
#include "scorecast/util.hpp"

namespace scorecast {

/// Descending singular values of a complete matrix.
inline Eigen::VectorXd singular_spectrum(const Eigen::MatrixXd& matrix) {
  if (!matrix.allFinite())
    throw std::runtime_error("singular_spectrum: matrix has non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(matrix);
  return svd.singularValues();
}

struct SweepRow {
  int D = 0;
  double train_rmse = 0.0;
  double test_rmse = 0.0;
};

/// Refits the model at each latent dimension and reports train/test RMSE,
/// averaged over n_reps fit seeds.
inline std::vector<SweepRow> dimension_sweep(const ScoreTensor& t, const MaskSplit& split,
                                             const ModelSpecConfig& base_spec,
                                             const std::vector<int>& d_values,
                                             const SamplerConfig& scfg, int n_reps = 1,
                                             unsigned threads = 1) {
  if (d_values.empty()) throw std::runtime_error("dimension sweep needs at least one D");
  for (int d : d_values)
    if (d < 1) throw std::runtime_error("dimension sweep: D values must be >= 1");
  Mask train_eval(t.cell_count(), 0), test_eval(t.cell_count(), 0);
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t n = 0; n < t.N(); ++n)
      for (std::size_t s = 0; s < t.S(); ++s) {
        std::size_t c = t.idx(m, n, s);
        if (!t.is_valid(n, s)) continue;
        if (split.train[c]) train_eval[c] = 1;
        if (split.test[c]) test_eval[c] = 1;
      }

  std::vector<SweepRow> rows(d_values.size());
  std::vector<std::pair<std::size_t, int>> tasks;  // (d index, rep)
  for (std::size_t i = 0; i < d_values.size(); ++i)
    for (int rep = 0; rep < n_reps; ++rep) tasks.push_back({i, rep});
  std::vector<std::pair<double, double>> task_rmse(tasks.size());

  parallel_for(tasks.size(), threads, [&](std::size_t ti) {
    auto [i, rep] = tasks[ti];
    ModelSpecConfig spec = base_spec;
    spec.D = d_values[i];
    SamplerConfig cfg = scfg;
    cfg.seed = mix_seed(scfg.seed, 0xD1500ULL + static_cast<std::uint64_t>(rep));
    FitRun run = run_fit(t, split, spec, cfg, nullptr, MultiMode::Joint);
    PredictionReport rep_out = report_from_run(t, split, run, nullptr);
    task_rmse[ti] = {rmse(rep_out.mean, t.values, train_eval),
                     rmse(rep_out.mean, t.values, test_eval)};
  });

  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    auto [i, rep] = tasks[ti];
    rows[i].D = d_values[i];
    rows[i].train_rmse += task_rmse[ti].first / double(n_reps);
    rows[i].test_rmse += task_rmse[ti].second / double(n_reps);
  }
  return rows;
}

/// Posterior-mean effect of one model-profile column on every dataset:
/// effect(n) = E[ Y_k . V'_n ] over the draws, with V' = V + G X.
inline Eigen::VectorXd profile_effect(const PosteriorSamples& samples,
                                      const ModelSpecConfig& spec, const Dims& dims,
                                      const ProfileSet& profiles,
                                      const std::string& feature_name) {
  if (!has_profiles(spec.variant))
    throw std::runtime_error("profile_effect needs a constrained variant fit");
  auto it = std::find(profiles.h_names.begin(), profiles.h_names.end(), feature_name);
  if (it == profiles.h_names.end())
    throw std::runtime_error("unknown profile feature '" + feature_name + "'");
  int k = static_cast<int>(it - profiles.h_names.begin());
  if (samples.draws.empty()) throw std::runtime_error("profile_effect needs draws");

  Eigen::VectorXd effects = Eigen::VectorXd::Zero(dims.N);
  for (const auto& draw : samples.draws) {
    LatentState st = unpack(draw, spec, dims);
    RowMat Vp = st.V;
    Vp.noalias() += profiles.G * st.X;
    effects += Vp * st.Y.row(k).transpose();
  }
  effects /= double(samples.draws.size());
  return effects;
}

enum class InformativenessAxis { Models, Datasets };

struct InformativenessRow {
  std::string entity_id;
  double delta_rmse = 0.0;
};

/// RMSE improvement from revealing the full results of one model (or
/// dataset): refit with the candidate's row (column) added to the train mask
/// and score the still-hidden cells outside that row (column). Candidates
/// whose rows add nothing score exactly 0 without refitting.
inline std::vector<InformativenessRow> informativeness(const ScoreTensor& t,
                                                       const Mask& base_train,
                                                       const ModelSpecConfig& spec,
                                                       const SamplerConfig& scfg,
                                                       InformativenessAxis axis,
                                                       unsigned threads = 1) {
  FitRun base_run;
  {
    MaskSplit dummy;
    dummy.train = base_train;
    dummy.test.assign(t.cell_count(), 0);
    base_run = run_fit(t, dummy, spec, scfg, nullptr, MultiMode::Joint);
  }
  MaskSplit dummy;
  dummy.train = base_train;
  dummy.test.assign(t.cell_count(), 0);
  PredictionReport base_rep = report_from_run(t, dummy, base_run, nullptr);

  Mask hidden(t.cell_count(), 0);
  for (std::size_t c = 0; c < t.cell_count(); ++c)
    if (t.observed[c] && !base_train[c]) hidden[c] = 1;

  const bool by_model = axis == InformativenessAxis::Models;
  const std::size_t n_entities = by_model ? t.M() : t.N();
  std::vector<InformativenessRow> rows(n_entities);

  parallel_for(n_entities, threads, [&](std::size_t e) {
    rows[e].entity_id = by_model ? t.model_ids[e] : t.dataset_ids[e];
    Mask add(t.cell_count(), 0);
    Mask scoring = hidden;
    std::size_t n_add = 0, n_score = 0;
    for (std::size_t m = 0; m < t.M(); ++m)
      for (std::size_t n = 0; n < t.N(); ++n)
        for (std::size_t s = 0; s < t.S(); ++s) {
          std::size_t c = t.idx(m, n, s);
          bool in_entity = by_model ? (m == e) : (n == e);
          if (in_entity) {
            scoring[c] = 0;
            if (hidden[c]) {
              add[c] = 1;
              ++n_add;
            }
          } else if (scoring[c]) {
            ++n_score;
          }
        }
    if (n_add == 0 || n_score == 0) {
      rows[e].delta_rmse = 0.0;  // mask unchanged or nothing left to score
      return;
    }
    Mask new_train = base_train;
    for (std::size_t c = 0; c < t.cell_count(); ++c)
      if (add[c]) new_train[c] = 1;
    MaskSplit ms;
    ms.train = new_train;
    ms.test.assign(t.cell_count(), 0);
    SamplerConfig cfg = scfg;
    cfg.seed = mix_seed(scfg.seed, 0x1F0ULL + e);
    FitRun run = run_fit(t, ms, spec, cfg, nullptr, MultiMode::Joint);
    PredictionReport rep = report_from_run(t, ms, run, nullptr);
    rows[e].delta_rmse =
        rmse(base_rep.mean, t.values, scoring) - rmse(rep.mean, t.values, scoring);
  });
  return rows;
}

inline void write_spectrum_csv(const std::string& path, const Eigen::VectorXd& sigma) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "index,sigma\n";
  for (Eigen::Index i = 0; i < sigma.size(); ++i)
    out << i << ',' << format_double(sigma(i)) << '\n';
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "d,train_rmse,test_rmse\n";
  for (const auto& r : rows)
    out << r.D << ',' << format_double(r.train_rmse) << ',' << format_double(r.test_rmse)
        << '\n';
}

inline void write_effect_csv(const std::string& path, const std::vector<std::string>& dataset_ids,
                             const Eigen::VectorXd& effects) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "dataset_id,effect\n";
  for (Eigen::Index n = 0; n < effects.size(); ++n)
    out << dataset_ids[static_cast<std::size_t>(n)] << ',' << format_double(effects(n)) << '\n';
}

inline void write_informativeness_csv(const std::string& path,
                                      const std::vector<InformativenessRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "entity_id,delta_rmse\n";
  for (const auto& r : rows) out << r.entity_id << ',' << format_double(r.delta_rmse) << '\n';
}

}  // namespace scorecast
