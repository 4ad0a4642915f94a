#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorecast/model.hpp"
#include "scorecast/predictor.hpp"
#include "scorecast/profiles.hpp"
#include "scorecast/sampler.hpp"
#include "scorecast/synth.hpp"
#include "scorecast/tensor.hpp"

namespace scorecast {

/// How a fit treats the metric axis:
///   Joint  - one model over the full tensor (any variant)
///   Sep    - an independent fit per metric slice
///   OneMat - designated metrics flattened into one (model x column) matrix
enum class MultiMode { Joint, Sep, OneMat };

inline std::string mode_name(MultiMode m) {
  switch (m) {
    case MultiMode::Joint: return "joint";
    case MultiMode::Sep: return "sep";
    case MultiMode::OneMat: return "onemat";
  }
  return "joint";
}

inline MultiMode mode_from_name(std::string name) {
  for (auto& c : name) c = static_cast<char>(std::tolower(c));
  if (name == "joint") return MultiMode::Joint;
  if (name == "sep") return MultiMode::Sep;
  if (name == "onemat") return MultiMode::OneMat;
  throw std::runtime_error("unknown mode '" + name + "' (expected joint|sep|onemat)");
}

struct FitSlice {
  std::string label;  // "*" for joint, metric id for sep, "onemat" for onemat
  Dims dims;
  PosteriorSamples samples;
  std::vector<std::pair<int, int>> columns;  // onemat: (dataset, metric) per column
};

struct FitRun {
  MultiMode mode = MultiMode::Joint;
  ModelSpecConfig spec;
  std::vector<FitSlice> slices;
};

/// NUTS fit of one model over the given training mask; the tensor is
/// normalized internally with a normalizer fitted on that mask.
inline PosteriorSamples fit_samples(const ScoreTensor& t, const Mask& train,
                                    const ModelSpecConfig& spec, const SamplerConfig& scfg,
                                    const ProfileSet* profiles) {
  Normalizer nz = fit_normalizer(t, train);
  TrainSet ts = make_train_set(t, train, nz);
  Dims dims = make_dims(spec, t.M(), t.N(), t.S(), profiles);
  LogDensityFn f = [&](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
    return eval_log_joint(q, ts, spec, profiles, &g);
  };
  Eigen::VectorXd init = init_state(spec, dims, mix_seed(scfg.seed, 0xC0FFEEULL));
  return nuts_sample(f, init, scfg);
}

namespace detail {

inline ScoreTensor metric_slice_tensor(const ScoreTensor& t, std::size_t s) {
  ScoreTensor slice;
  slice.model_ids = t.model_ids;
  slice.dataset_ids = t.dataset_ids;
  slice.metric_ids = {t.metric_ids[s]};
  slice.values.resize(t.M() * t.N());
  slice.observed.resize(t.M() * t.N());
  slice.valid.resize(t.N());
  for (std::size_t n = 0; n < t.N(); ++n) slice.valid[n] = t.valid[t.vidx(n, s)];
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t n = 0; n < t.N(); ++n) {
      slice.values[m * t.N() + n] = t.values[t.idx(m, n, s)];
      slice.observed[m * t.N() + n] = t.observed[t.idx(m, n, s)];
    }
  return slice;
}

inline Mask metric_slice_mask(const ScoreTensor& t, const Mask& mask, std::size_t s) {
  Mask out(t.M() * t.N(), 0);
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t n = 0; n < t.N(); ++n) out[m * t.N() + n] = mask[t.idx(m, n, s)];
  return out;
}

/// Flattened (model x column) view used by the OneMat driver. Values are on
/// the outer per-metric normalized scale so incommensurate metrics can share
/// one matrix.
struct OneMatView {
  ScoreTensor flat;
  Mask train, test;
  std::vector<std::pair<int, int>> columns;  // (dataset, metric)
  Normalizer outer;
};

inline std::vector<std::size_t> metric_indices(const ScoreTensor& t,
                                               const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  if (names.empty()) {
    for (std::size_t s = 0; s < t.S(); ++s) idx.push_back(s);
    return idx;
  }
  for (const auto& name : names) {
    auto it = std::find(t.metric_ids.begin(), t.metric_ids.end(), name);
    if (it == t.metric_ids.end())
      throw std::runtime_error("unknown metric '" + name + "'");
    idx.push_back(static_cast<std::size_t>(it - t.metric_ids.begin()));
  }
  return idx;
}

inline OneMatView make_onemat_view(const ScoreTensor& t, const MaskSplit& split,
                                   const std::vector<std::string>& metric_names) {
  OneMatView v;
  v.outer = fit_normalizer(t, split.train);
  auto metrics = metric_indices(t, metric_names);
  for (std::size_t n = 0; n < t.N(); ++n)
    for (std::size_t s : metrics)
      if (t.is_valid(n, s)) v.columns.push_back({static_cast<int>(n), static_cast<int>(s)});
  if (v.columns.empty()) throw std::runtime_error("onemat: no valid (dataset, metric) columns");

  ScoreTensor& f = v.flat;
  f.model_ids = t.model_ids;
  for (auto [n, s] : v.columns)
    f.dataset_ids.push_back(t.dataset_ids[n] + "#" + t.metric_ids[s]);
  f.metric_ids = {"onemat"};
  const std::size_t C = v.columns.size();
  f.values.assign(t.M() * C, std::numeric_limits<double>::quiet_NaN());
  f.observed.assign(t.M() * C, 0);
  f.valid.assign(C, 1);
  v.train.assign(t.M() * C, 0);
  v.test.assign(t.M() * C, 0);
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t c = 0; c < C; ++c) {
      auto [n, s] = v.columns[c];
      std::size_t src = t.idx(m, n, s);
      if (!t.observed[src]) continue;
      f.observed[m * C + c] = 1;
      f.values[m * C + c] = v.outer.normalize(s, t.values[src]);
      v.train[m * C + c] = split.train[src];
      v.test[m * C + c] = split.test[src];
    }
  return v;
}

}  // namespace detail

/// Fits under the requested metric treatment. Sep and OneMat are thin
/// drivers over the same core fit.
inline FitRun run_fit(const ScoreTensor& t, const MaskSplit& split, const ModelSpecConfig& spec,
                      const SamplerConfig& scfg, const ProfileSet* profiles, MultiMode mode,
                      const std::vector<std::string>& onemat_metrics = {}) {
  FitRun run;
  run.mode = mode;
  run.spec = spec;
  if (mode == MultiMode::Joint) {
    FitSlice slice;
    slice.label = "*";
    slice.dims = make_dims(spec, t.M(), t.N(), t.S(), profiles);
    slice.samples = fit_samples(t, split.train, spec, scfg, profiles);
    run.slices.push_back(std::move(slice));
  } else if (mode == MultiMode::Sep) {
    for (std::size_t s = 0; s < t.S(); ++s) {
      ScoreTensor slice_t = detail::metric_slice_tensor(t, s);
      Mask slice_train = detail::metric_slice_mask(t, split.train, s);
      SamplerConfig slice_cfg = scfg;
      slice_cfg.seed = mix_seed(scfg.seed, 0x5EB0000ULL + s);
      FitSlice slice;
      slice.label = t.metric_ids[s];
      slice.dims = make_dims(spec, slice_t.M(), slice_t.N(), 1, profiles);
      slice.samples = fit_samples(slice_t, slice_train, spec, slice_cfg, profiles);
      run.slices.push_back(std::move(slice));
    }
  } else {
    auto view = detail::make_onemat_view(t, split, onemat_metrics);
    FitSlice slice;
    slice.label = "onemat";
    slice.dims = make_dims(spec, view.flat.M(), view.flat.N(), 1, nullptr);
    if (has_profiles(spec.variant))
      throw std::runtime_error("onemat mode does not support constrained variants");
    slice.samples = fit_samples(view.flat, view.train, spec, scfg, nullptr);
    slice.columns = view.columns;
    run.slices.push_back(std::move(slice));
  }
  return run;
}

/// Rebuilds the prediction report for a fit run. Normalizers are refit from
/// the tensor and split, so the result is a pure function of its inputs.
inline PredictionReport report_from_run(const ScoreTensor& t, const MaskSplit& split,
                                        const FitRun& run, const ProfileSet* profiles) {
  PredictionReport rep;
  const std::size_t cells = t.cell_count();
  rep.mean.assign(cells, std::numeric_limits<double>::quiet_NaN());
  rep.stddev.assign(cells, 0.0);
  rep.covered.assign(cells, 0);

  if (run.mode == MultiMode::Joint) {
    Normalizer nz = fit_normalizer(t, split.train);
    const FitSlice& slice = run.slices.at(0);
    predict(slice.samples, run.spec, slice.dims, profiles, nz, rep.mean, rep.stddev);
    std::fill(rep.covered.begin(), rep.covered.end(), 1);
  } else if (run.mode == MultiMode::Sep) {
    for (std::size_t s = 0; s < t.S(); ++s) {
      ScoreTensor slice_t = detail::metric_slice_tensor(t, s);
      Mask slice_train = detail::metric_slice_mask(t, split.train, s);
      Normalizer nz = fit_normalizer(slice_t, slice_train);
      const FitSlice& slice = run.slices.at(s);
      std::vector<double> mean, sd;
      predict(slice.samples, run.spec, slice.dims, profiles, nz, mean, sd);
      for (std::size_t m = 0; m < t.M(); ++m)
        for (std::size_t n = 0; n < t.N(); ++n) {
          std::size_t c = t.idx(m, n, s);
          rep.mean[c] = mean[m * t.N() + n];
          rep.stddev[c] = sd[m * t.N() + n];
          rep.covered[c] = 1;
        }
    }
  } else {
    auto view = detail::make_onemat_view(t, split, {});
    const FitSlice& slice = run.slices.at(0);
    // the stored column map is authoritative (metric subset may differ)
    const auto& columns = slice.columns;
    ScoreTensor flat = view.flat;
    Normalizer outer = view.outer;
    if (columns != view.columns) {
      // rebuild the view for the stored metric subset
      std::vector<std::string> names;
      std::vector<bool> seen(t.S(), false);
      for (auto [n, s] : columns)
        if (!seen[s]) {
          seen[s] = true;
          names.push_back(t.metric_ids[s]);
        }
      view = detail::make_onemat_view(t, split, names);
      flat = view.flat;
      outer = view.outer;
    }
    Normalizer inner = fit_normalizer(flat, view.train);
    std::vector<double> mean, sd;
    predict(slice.samples, run.spec, slice.dims, nullptr, inner, mean, sd);
    const std::size_t C = columns.size();
    for (std::size_t m = 0; m < t.M(); ++m)
      for (std::size_t c = 0; c < C; ++c) {
        auto [n, s] = columns[c];
        std::size_t dst = t.idx(m, n, s);
        rep.mean[dst] = outer.denormalize(s, mean[m * C + c]);
        rep.stddev[dst] = sd[m * C + c] * outer.sd[s];
        rep.covered[dst] = 1;
      }
  }

  rep.eval_mask.assign(cells, 0);
  bool any_eval = false;
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t n = 0; n < t.N(); ++n)
      for (std::size_t s = 0; s < t.S(); ++s) {
        std::size_t c = t.idx(m, n, s);
        if (split.test[c] && t.is_valid(n, s) && rep.covered[c]) {
          rep.eval_mask[c] = 1;
          any_eval = true;
        }
      }
  if (any_eval) rep.metrics = compute_metrics(rep.mean, t, rep.eval_mask);
  return rep;
}

inline nlohmann::ordered_json sampler_config_to_json(const SamplerConfig& cfg) {
  nlohmann::ordered_json j;
  j["tune"] = cfg.n_tune;
  j["draws"] = cfg.n_draws;
  j["target_accept"] = cfg.target_accept;
  j["max_tree_depth"] = cfg.max_tree_depth;
  j["seed"] = cfg.seed;
  j["chains"] = cfg.n_chains;
  return j;
}

inline SamplerConfig sampler_config_from_json(const nlohmann::json& j) {
  SamplerConfig cfg;
  cfg.n_tune = j.at("tune").get<int>();
  cfg.n_draws = j.at("draws").get<int>();
  cfg.target_accept = j.value("target_accept", 0.8);
  cfg.max_tree_depth = j.value("max_tree_depth", 10);
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.n_chains = j.value("chains", 1);
  return cfg;
}

inline nlohmann::ordered_json dims_to_json(const Dims& d) {
  return {{"m", d.M}, {"n", d.N}, {"s", d.S}, {"d", d.D}, {"k", d.K}, {"j", d.J}};
}

inline Dims dims_from_json(const nlohmann::json& j) {
  return {j.at("m").get<int>(), j.at("n").get<int>(), j.at("s").get<int>(),
          j.at("d").get<int>(), j.at("k").get<int>(), j.at("j").get<int>()};
}

inline nlohmann::ordered_json fit_run_to_json(const FitRun& run) {
  nlohmann::ordered_json j;
  j["mode"] = mode_name(run.mode);
  j["spec"] = spec_to_json(run.spec);
  j["slices"] = nlohmann::ordered_json::array();
  for (const auto& slice : run.slices) {
    nlohmann::ordered_json sj;
    sj["label"] = slice.label;
    sj["dims"] = dims_to_json(slice.dims);
    if (!slice.columns.empty()) {
      sj["columns"] = nlohmann::ordered_json::array();
      for (auto [n, s] : slice.columns) sj["columns"].push_back({n, s});
    }
    sj["log_joint"] = slice.samples.log_joint;
    sj["draws"] = nlohmann::ordered_json::array();
    for (const auto& d : slice.samples.draws)
      sj["draws"].push_back(std::vector<double>(d.data(), d.data() + d.size()));
    j["slices"].push_back(std::move(sj));
  }
  return j;
}

inline FitRun fit_run_from_json(const nlohmann::json& j) {
  FitRun run;
  run.mode = mode_from_name(j.at("mode").get<std::string>());
  run.spec = spec_from_json(j.at("spec"));
  for (const auto& sj : j.at("slices")) {
    FitSlice slice;
    slice.label = sj.at("label").get<std::string>();
    slice.dims = dims_from_json(sj.at("dims"));
    if (sj.contains("columns"))
      for (const auto& col : sj.at("columns"))
        slice.columns.push_back({col.at(0).get<int>(), col.at(1).get<int>()});
    slice.samples.log_joint = sj.at("log_joint").get<std::vector<double>>();
    for (const auto& dj : sj.at("draws")) {
      auto flat = dj.get<std::vector<double>>();
      slice.samples.draws.emplace_back(
          Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size())));
    }
    run.slices.push_back(std::move(slice));
  }
  return run;
}

inline void write_json_file(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace scorecast
