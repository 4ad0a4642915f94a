#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "scorecast/util.hpp"

namespace scorecast {

using Mask = std::vector<std::uint8_t>;  // M*N*S, row-major (model, dataset, metric)

/// Sparse model x dataset x metric score tensor. `values` is dense with NaN
/// where unobserved; `observed` marks which cells hold a score; `valid` marks
/// which (dataset, metric) pairs are meaningful at all. Immutable by
/// convention once built.
struct ScoreTensor {
  std::vector<std::string> model_ids;
  std::vector<std::string> dataset_ids;
  std::vector<std::string> metric_ids;
  std::vector<double> values;         // size M*N*S
  std::vector<std::uint8_t> observed; // size M*N*S
  std::vector<std::uint8_t> valid;    // size N*S

  std::size_t M() const { return model_ids.size(); }
  std::size_t N() const { return dataset_ids.size(); }
  std::size_t S() const { return metric_ids.size(); }
  std::size_t cell_count() const { return values.size(); }

  std::size_t idx(std::size_t m, std::size_t n, std::size_t s) const {
    return (m * N() + n) * S() + s;
  }
  std::size_t vidx(std::size_t n, std::size_t s) const { return n * S() + s; }

  bool is_observed(std::size_t m, std::size_t n, std::size_t s) const {
    return observed[idx(m, n, s)] != 0;
  }
  bool is_valid(std::size_t n, std::size_t s) const {
    return valid[vidx(n, s)] != 0;
  }

  std::size_t observed_count() const {
    return static_cast<std::size_t>(
        std::count(observed.begin(), observed.end(), std::uint8_t{1}));
  }

  void validate() const {
    if (model_ids.empty() || dataset_ids.empty() || metric_ids.empty())
      throw std::runtime_error("score tensor needs at least one model, dataset and metric");
    auto check_unique = [](const std::vector<std::string>& ids, const char* axis) {
      std::set<std::string> seen(ids.begin(), ids.end());
      if (seen.size() != ids.size())
        throw std::runtime_error(std::string("duplicate ") + axis + " identifier");
    };
    check_unique(model_ids, "model");
    check_unique(dataset_ids, "dataset");
    check_unique(metric_ids, "metric");
    if (values.size() != M() * N() * S() || observed.size() != values.size() ||
        valid.size() != N() * S())
      throw std::runtime_error("score tensor buffer sizes are inconsistent");
    for (std::size_t m = 0; m < M(); ++m)
      for (std::size_t n = 0; n < N(); ++n)
        for (std::size_t s = 0; s < S(); ++s) {
          if (!is_observed(m, n, s)) continue;
          if (!is_valid(n, s))
            throw std::runtime_error("observation on invalid (dataset, metric) pair: " +
                                     dataset_ids[n] + "/" + metric_ids[s]);
          if (!std::isfinite(values[idx(m, n, s)]))
            throw std::runtime_error("non-finite observed score at " + model_ids[m] + "/" +
                                     dataset_ids[n] + "/" + metric_ids[s]);
        }
  }
};

/// Disjoint train/test partition of the observed cells.
struct MaskSplit {
  Mask train;
  Mask test;
  double test_ratio = 0.0;
  std::uint64_t seed = 0;
};

/// Per-metric affine transform fitted on train-observed entries only.
struct Normalizer {
  std::vector<double> mu;  // length S
  std::vector<double> sd;  // length S, always > 0

  double normalize(std::size_t s, double x) const { return (x - mu[s]) / sd[s]; }
  double denormalize(std::size_t s, double z) const { return z * sd[s] + mu[s]; }
};

enum class ScoreFormat { LongCsv, Json };

inline ScoreFormat format_from_path(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (auto& c : ext) c = static_cast<char>(std::tolower(c));
  if (ext == "json") return ScoreFormat::Json;
  return ScoreFormat::LongCsv;
}

namespace detail {

struct ScoreRecord {
  std::string model_id, dataset_id, metric_id;
  double value;
};

inline ScoreTensor tensor_from_records(const std::vector<ScoreRecord>& records) {
  if (records.empty()) throw std::runtime_error("no records");
  ScoreTensor t;
  std::unordered_map<std::string, std::size_t> mi, ni, si;
  auto intern = [](std::unordered_map<std::string, std::size_t>& map,
                   std::vector<std::string>& ids, const std::string& id) {
    auto it = map.find(id);
    if (it != map.end()) return it->second;
    std::size_t k = ids.size();
    ids.push_back(id);
    map.emplace(id, k);
    return k;
  };
  for (const auto& r : records) {
    intern(mi, t.model_ids, r.model_id);
    intern(ni, t.dataset_ids, r.dataset_id);
    intern(si, t.metric_ids, r.metric_id);
  }
  t.values.assign(t.M() * t.N() * t.S(), std::numeric_limits<double>::quiet_NaN());
  t.observed.assign(t.values.size(), 0);
  t.valid.assign(t.N() * t.S(), 0);
  for (const auto& r : records) {
    if (!std::isfinite(r.value))
      throw std::runtime_error("non-finite value for " + r.model_id + "/" + r.dataset_id +
                               "/" + r.metric_id);
    std::size_t m = mi[r.model_id], n = ni[r.dataset_id], s = si[r.metric_id];
    std::size_t c = t.idx(m, n, s);
    if (t.observed[c])
      throw std::runtime_error("duplicate cell " + r.model_id + "/" + r.dataset_id + "/" +
                               r.metric_id);
    t.values[c] = r.value;
    t.observed[c] = 1;
    t.valid[t.vidx(n, s)] = 1;  // default validity: any observation makes (n,s) valid
  }
  t.validate();
  return t;
}

}  // namespace detail

/// Reads a score file. Long CSV header: model_id,dataset_id,metric_id,value.
/// JSON: array of objects with the same four fields. Axis order is
/// first-appearance order of the identifiers.
inline ScoreTensor load_scores(const std::string& path, ScoreFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open score file: " + path);
  std::vector<detail::ScoreRecord> records;
  if (format == ScoreFormat::LongCsv) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("no records");
    auto header = split_csv_line(line);
    if (header.size() != 4 || header[0] != "model_id" || header[1] != "dataset_id" ||
        header[2] != "metric_id" || header[3] != "value")
      throw std::runtime_error("bad header in " + path +
                               " (expected model_id,dataset_id,metric_id,value)");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      auto f = split_csv_line(line);
      if (f.size() != 4)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 4 fields");
      records.push_back({f[0], f[1], f[2],
                         parse_double(f[3], path + ":" + std::to_string(lineno))});
    }
  } else {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw std::runtime_error("cannot parse JSON " + path + ": " + e.what());
    }
    if (!j.is_array()) throw std::runtime_error(path + ": expected a JSON array of records");
    for (const auto& rec : j) {
      if (!rec.contains("model_id") || !rec.contains("dataset_id") ||
          !rec.contains("metric_id") || !rec.contains("value"))
        throw std::runtime_error(path + ": record missing one of the four score fields");
      records.push_back({rec.at("model_id").get<std::string>(),
                         rec.at("dataset_id").get<std::string>(),
                         rec.at("metric_id").get<std::string>(),
                         rec.at("value").get<double>()});
    }
  }
  return detail::tensor_from_records(records);
}

/// Applies an explicit validity file (CSV dataset_id,metric_id,valid with
/// valid in {0,1}). The file fully defines the map; unlisted pairs become
/// invalid. Fails if an observation would land on an invalid pair.
inline void apply_validity_file(ScoreTensor& t, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open validity file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty validity file: " + path);
  auto header = split_csv_line(line);
  if (header.size() != 3 || header[0] != "dataset_id" || header[1] != "metric_id" ||
      header[2] != "valid")
    throw std::runtime_error("bad header in " + path +
                             " (expected dataset_id,metric_id,valid)");
  std::unordered_map<std::string, std::size_t> ni, si;
  for (std::size_t n = 0; n < t.N(); ++n) ni[t.dataset_ids[n]] = n;
  for (std::size_t s = 0; s < t.S(); ++s) si[t.metric_ids[s]] = s;
  std::vector<std::uint8_t> valid(t.N() * t.S(), 0);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 3)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 3 fields");
    auto nit = ni.find(f[0]);
    if (nit == ni.end())
      throw std::runtime_error(path + ": unknown dataset_id '" + f[0] + "'");
    auto sit = si.find(f[1]);
    if (sit == si.end())
      throw std::runtime_error(path + ": unknown metric_id '" + f[1] + "'");
    if (f[2] != "0" && f[2] != "1")
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": valid must be 0 or 1");
    valid[t.vidx(nit->second, sit->second)] = static_cast<std::uint8_t>(f[2] == "1");
  }
  t.valid = std::move(valid);
  t.validate();
}

/// Writes observed entries in the long-csv format load_scores reads.
inline void save_scores_csv(const ScoreTensor& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "model_id,dataset_id,metric_id,value\n";
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t n = 0; n < t.N(); ++n)
      for (std::size_t s = 0; s < t.S(); ++s)
        if (t.is_observed(m, n, s))
          out << t.model_ids[m] << ',' << t.dataset_ids[n] << ',' << t.metric_ids[s] << ','
              << format_double(t.values[t.idx(m, n, s)]) << '\n';
}

/// Partitions the observed cells into train/test by shuffled selection:
/// exactly round(test_ratio * |observed|) cells go to test.
inline MaskSplit split_mask(const ScoreTensor& t, double test_ratio, std::uint64_t seed) {
  if (!(test_ratio > 0.0 && test_ratio < 1.0))
    throw std::runtime_error("test-ratio must lie strictly between 0 and 1");
  std::vector<std::size_t> cells;
  for (std::size_t c = 0; c < t.cell_count(); ++c)
    if (t.observed[c]) cells.push_back(c);
  if (cells.size() < 2)
    throw std::runtime_error("need at least 2 observed entries to split");
  std::mt19937_64 rng(seed);
  std::shuffle(cells.begin(), cells.end(), rng);
  auto n_test = static_cast<std::size_t>(std::llround(test_ratio * double(cells.size())));
  MaskSplit split;
  split.test_ratio = test_ratio;
  split.seed = seed;
  split.train.assign(t.cell_count(), 0);
  split.test.assign(t.cell_count(), 0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i < n_test)
      split.test[cells[i]] = 1;
    else
      split.train[cells[i]] = 1;
  }
  return split;
}

/// Per-metric mean/sd over the masked entries. Population sd; metrics with
/// fewer than 2 distinct masked values get sd 1, metrics with no masked
/// entries get mu 0, sd 1.
inline Normalizer fit_normalizer(const ScoreTensor& t, const Mask& mask) {
  Normalizer nz;
  nz.mu.assign(t.S(), 0.0);
  nz.sd.assign(t.S(), 1.0);
  for (std::size_t s = 0; s < t.S(); ++s) {
    std::vector<double> vals;
    for (std::size_t m = 0; m < t.M(); ++m)
      for (std::size_t n = 0; n < t.N(); ++n)
        if (mask[t.idx(m, n, s)]) vals.push_back(t.values[t.idx(m, n, s)]);
    if (vals.empty()) continue;
    double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / double(vals.size());
    nz.mu[s] = mean;
    std::set<double> distinct(vals.begin(), vals.end());
    if (distinct.size() < 2) continue;
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    nz.sd[s] = std::sqrt(ss / double(vals.size()));
  }
  return nz;
}

/// One observed training entry on the normalized scale.
struct TrainEntry {
  std::uint32_t m, n, s;
  double value;
};

/// Likelihood view of (tensor, train mask) after normalization.
struct TrainSet {
  std::size_t M = 0, N = 0, S = 0;
  std::vector<TrainEntry> entries;
};

inline TrainSet make_train_set(const ScoreTensor& t, const Mask& mask,
                               const Normalizer& nz) {
  TrainSet ts;
  ts.M = t.M();
  ts.N = t.N();
  ts.S = t.S();
  for (std::size_t m = 0; m < t.M(); ++m)
    for (std::size_t n = 0; n < t.N(); ++n)
      for (std::size_t s = 0; s < t.S(); ++s)
        if (mask[t.idx(m, n, s)])
          ts.entries.push_back({static_cast<std::uint32_t>(m), static_cast<std::uint32_t>(n),
                                static_cast<std::uint32_t>(s),
                                nz.normalize(s, t.values[t.idx(m, n, s)])});
  return ts;
}

}  // namespace scorecast
