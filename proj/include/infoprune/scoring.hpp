#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "infoprune/manifest.hpp"
#include "infoprune/parallel.hpp"

namespace infoprune {

enum class DistanceMetric { euclidean, manhattan, chebyshev, cosine };

inline const char* to_string(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::euclidean: return "euclidean";
    case DistanceMetric::manhattan: return "manhattan";
    case DistanceMetric::chebyshev: return "chebyshev";
    case DistanceMetric::cosine: return "cosine";
  }
  return "?";
}

inline DistanceMetric parse_distance_metric(const std::string& s) {
  if (s == "euclidean") return DistanceMetric::euclidean;
  if (s == "manhattan") return DistanceMetric::manhattan;
  if (s == "chebyshev") return DistanceMetric::chebyshev;
  if (s == "cosine") return DistanceMetric::cosine;
  fail("unknown distance metric '" + s + "'");
}

struct ScoringConfig {
  /// Weight of capacity against independence in the combined score.
  double sigma = 0.8;
  /// Number of nearest sibling kernels summed per kernel; nullopt sums all.
  std::optional<std::int64_t> m_nearest;
  /// Filter-to-filter distance for independence. Kernel-to-kernel distances
  /// inside a filter are always euclidean.
  DistanceMetric metric = DistanceMetric::euclidean;

  void validate() const {
    require(sigma >= 0.0 && sigma <= 1.0, "scoring: sigma must lie in [0,1]");
    require(!m_nearest || *m_nearest >= 1, "scoring: m_nearest must be a positive integer");
  }
  bool operator==(const ScoringConfig&) const = default;
};

/// A filter as `kernels` consecutive blocks of `kernel_size` values
/// (input channels x flattened k*k window). Linear rows are filters of
/// 1x1 kernels.
struct FilterView {
  std::span<const float> values;
  std::int64_t kernels = 0;
  std::int64_t kernel_size = 0;

  std::span<const float> kernel(std::int64_t q) const {
    return values.subspan(static_cast<std::size_t>(q * kernel_size),
                          static_cast<std::size_t>(kernel_size));
  }
};

/// One layer's filters: `count` rows of `kernels * kernel_size` values.
struct LayerView {
  std::span<const float> values;
  std::int64_t count = 0;
  std::int64_t kernels = 0;
  std::int64_t kernel_size = 0;

  std::int64_t filter_len() const { return kernels * kernel_size; }
  FilterView filter(std::int64_t i) const {
    return {values.subspan(static_cast<std::size_t>(i * filter_len()),
                           static_cast<std::size_t>(filter_len())),
            kernels, kernel_size};
  }
};

/// View over a conv2d [n, c, k, k] or linear [n, c] weight tensor.
inline LayerView layer_view(const Tensor& weight) {
  require(weight.shape.size() == 4 || weight.shape.size() == 2,
          "scoring: weight '" + weight.name + "' must be rank 4 (conv) or 2 (linear)");
  const std::int64_t ks = weight.shape.size() == 4 ? weight.dim(2) * weight.dim(3) : 1;
  return {weight.data, weight.dim(0), weight.dim(1), ks};
}

// ---------------------------------------------------------------------------
// distances
// ---------------------------------------------------------------------------

inline double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline double distance(DistanceMetric metric, std::span<const float> a, std::span<const float> b) {
  switch (metric) {
    case DistanceMetric::euclidean:
      return euclidean_distance(a, b);
    case DistanceMetric::manhattan: {
      double acc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i)
        acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
      return acc;
    }
    case DistanceMetric::chebyshev: {
      double m = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
      return m;
    }
    case DistanceMetric::cosine: {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i], y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
      }
      // A zero filter has no direction; treat it as maximally dissimilar.
      if (na == 0.0 || nb == 0.0) return 1.0;
      return std::clamp(1.0 - dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 2.0);
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// information capacity
// ---------------------------------------------------------------------------

/// Per kernel, the summed euclidean distance to its sibling kernels in the
/// same filter. With `m_nearest`, only the M closest siblings count (M is
/// clamped to kernels-1); otherwise all siblings count.
inline std::vector<double> kernel_similarity(const FilterView& f,
                                             std::optional<std::int64_t> m_nearest = std::nullopt) {
  const auto n = f.kernels;
  require(n >= 1, "kernel_similarity: filter has no kernels");
  require(!m_nearest || *m_nearest >= 1, "kernel_similarity: m_nearest must be positive");

  std::vector<double> dist(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t q = 0; q < n; ++q)
    for (std::int64_t r = q + 1; r < n; ++r) {
      const double d = euclidean_distance(f.kernel(q), f.kernel(r));
      dist[static_cast<std::size_t>(q * n + r)] = d;
      dist[static_cast<std::size_t>(r * n + q)] = d;
    }

  std::vector<double> sim(static_cast<std::size_t>(n), 0.0);
  std::vector<double> row;
  for (std::int64_t q = 0; q < n; ++q) {
    const double* d = dist.data() + q * n;
    if (!m_nearest) {
      double acc = 0.0;
      for (std::int64_t r = 0; r < n; ++r)
        if (r != q) acc += d[r];
      sim[static_cast<std::size_t>(q)] = acc;
      continue;
    }
    row.clear();
    for (std::int64_t r = 0; r < n; ++r)
      if (r != q) row.push_back(d[r]);
    const auto m = static_cast<std::size_t>(std::min<std::int64_t>(*m_nearest, n - 1));
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(m), row.end());
    double acc = 0.0;
    for (std::size_t r = 0; r < m; ++r) acc += row[r];
    sim[static_cast<std::size_t>(q)] = acc;
  }
  return sim;
}

/// Softmax over kernel similarities, shifted by the maximum.
inline std::vector<double> kernel_probabilities(std::span<const double> sim) {
  require(!sim.empty(), "kernel_probabilities: empty input");
  const double top = *std::max_element(sim.begin(), sim.end());
  std::vector<double> p(sim.size());
  double total = 0.0;
  for (std::size_t q = 0; q < sim.size(); ++q) {
    p[q] = std::exp(sim[q] - top);
    total += p[q];
  }
  for (auto& v : p) v /= total;
  return p;
}

/// Shannon entropy in bits; 0 log 0 is taken as 0.
inline double filter_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

/// Entropy in bits of softmax(sim), evaluated in the log domain:
/// H = log2 Z + sum_q p_q (top - sim_q) / ln 2 with Z = sum_q exp(sim_q - top).
/// Both terms are non-negative, so a nearly one-hot distribution keeps full
/// relative precision, which the entropy of rounded probabilities cannot.
inline double similarity_entropy(std::span<const double> sim) {
  require(!sim.empty(), "similarity_entropy: empty input");
  const auto top_it = std::max_element(sim.begin(), sim.end());
  const double top = *top_it;
  double rest = 0.0;
  for (auto it = sim.begin(); it != sim.end(); ++it)
    if (it != top_it) rest += std::exp(*it - top);
  const double z = 1.0 + rest;
  double spread = 0.0;
  for (double s : sim) spread += std::exp(s - top) / z * (top - s);
  const double log2_z = rest < 1.0 ? std::log1p(rest) / std::numbers::ln2 : std::log2(z);
  return log2_z + spread / std::numbers::ln2;
}

/// Entropy of a filter's kernel-distance distribution.
inline double filter_sim_entropy(const FilterView& f,
                                 std::optional<std::int64_t> m_nearest = std::nullopt) {
  return similarity_entropy(kernel_similarity(f, m_nearest));
}

/// 1 - entropy; can be negative. Only the per-layer order matters downstream.
inline double information_capacity(const FilterView& f,
                                   std::optional<std::int64_t> m_nearest = std::nullopt) {
  return 1.0 - filter_sim_entropy(f, m_nearest);
}

// ---------------------------------------------------------------------------
// information independence
// ---------------------------------------------------------------------------

/// Per filter, the summed distance to every other filter of the layer.
inline std::vector<double> information_independence(const LayerView& layer,
                                                    DistanceMetric metric = DistanceMetric::euclidean) {
  const auto n = layer.count;
  require(n >= 1, "information_independence: layer has no filters");
  std::vector<double> dist(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) {
      const double d = distance(metric, layer.filter(i).values, layer.filter(j).values);
      dist[static_cast<std::size_t>(i * n + j)] = d;
      dist[static_cast<std::size_t>(j * n + i)] = d;
    }
  std::vector<double> ind(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < n; ++j)
      if (j != i) acc += dist[static_cast<std::size_t>(i * n + j)];
    ind[static_cast<std::size_t>(i)] = acc;
  }
  return ind;
}

// ---------------------------------------------------------------------------
// integration
// ---------------------------------------------------------------------------

/// Min-max normalization to [0,1]; a constant array maps to all zeros.
inline std::vector<double> min_max_normalize(std::span<const double> x) {
  std::vector<double> out(x.size(), 0.0);
  if (x.empty()) return out;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp((x[i] - *lo) / range, 0.0, 1.0);
  return out;
}

/// sigma * Norm(capacity) + (1 - sigma) * Norm(independence).
inline std::vector<double> combine_scores(std::span<const double> capacity,
                                          std::span<const double> independence, double sigma) {
  require(capacity.size() == independence.size(), "combine_scores: length mismatch");
  const auto cap = min_max_normalize(capacity);
  const auto ind = min_max_normalize(independence);
  std::vector<double> out(cap.size());
  for (std::size_t i = 0; i < cap.size(); ++i) out[i] = sigma * cap[i] + (1.0 - sigma) * ind[i];
  return out;
}

struct LayerScores {
  std::string layer_id;
  std::vector<double> sim_entropy;
  std::vector<double> capacity_raw;
  std::vector<double> independence_raw;
  std::vector<double> capacity_norm;
  std::vector<double> independence_norm;
  std::vector<double> combined;

  bool operator==(const LayerScores&) const = default;
};

struct ScoreTable {
  ScoringConfig config;
  std::vector<LayerScores> layers;

  const LayerScores* find(const std::string& id) const {
    for (const auto& l : layers)
      if (l.layer_id == id) return &l;
    return nullptr;
  }
  bool operator==(const ScoreTable&) const = default;
};

inline LayerScores score_layer(const LayerView& layer, const ScoringConfig& config,
                               std::string layer_id = {}) {
  config.validate();
  require(layer.count >= 1, "score_layer: layer has no filters");
  LayerScores s;
  s.layer_id = std::move(layer_id);
  s.sim_entropy.resize(static_cast<std::size_t>(layer.count));
  s.capacity_raw.resize(s.sim_entropy.size());
  for (std::int64_t i = 0; i < layer.count; ++i) {
    const double h = filter_sim_entropy(layer.filter(i), config.m_nearest);
    s.sim_entropy[static_cast<std::size_t>(i)] = h;
    s.capacity_raw[static_cast<std::size_t>(i)] = 1.0 - h;
  }
  s.independence_raw = information_independence(layer, config.metric);
  s.capacity_norm = min_max_normalize(s.capacity_raw);
  s.independence_norm = min_max_normalize(s.independence_raw);
  s.combined.resize(s.capacity_norm.size());
  for (std::size_t i = 0; i < s.combined.size(); ++i)
    s.combined[i] = config.sigma * s.capacity_norm[i] + (1.0 - config.sigma) * s.independence_norm[i];
  return s;
}

/// Scores every prunable layer, in topological order. Layers are
/// independent, so `workers` threads split them; output does not depend on
/// the worker count.
inline ScoreTable score_model(const ModelManifest& m, const TensorMap& tensors,
                              const ScoringConfig& config, unsigned workers = 1) {
  config.validate();
  const ModelGraph g = analyze(m);
  std::vector<const LayerSpec*> targets;
  for (auto i : g.order)
    if (m.layers[i].prunable) targets.push_back(&m.layers[i]);

  ScoreTable table{config, std::vector<LayerScores>(targets.size())};
  auto weight_of = [&](const LayerSpec& l) -> const Tensor& {
    const auto& name = l.kind == LayerKind::conv2d ? l.conv().weight : l.linear().weight;
    auto it = tensors.find(name);
    require(it != tensors.end(), "layer '" + l.id + "': dangling reference to missing tensor '" + name + "'");
    return it->second;
  };
  auto run = [&](std::size_t k) {
    table.layers[k] = score_layer(layer_view(weight_of(*targets[k])), config, targets[k]->id);
  };

  parallel_for(targets.size(), workers, run);
  return table;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json to_json(const ScoringConfig& c) {
  json j;
  j["sigma"] = c.sigma;
  j["m_nearest"] = c.m_nearest ? json(*c.m_nearest) : json("exact");
  j["metric"] = to_string(c.metric);
  j["normalization_scope"] = "per-layer";
  return j;
}

inline ScoringConfig scoring_config_from_json(const json& j) {
  detail::check_keys(j, {"sigma", "m_nearest", "metric", "normalization_scope"}, "scoring config");
  ScoringConfig c;
  c.sigma = detail::get_field<double>(j, "sigma", "scoring config");
  const auto& m = j.at("m_nearest");
  if (m.is_string()) {
    require(m.get<std::string>() == "exact", "scoring config: m_nearest must be an integer or \"exact\"");
  } else {
    c.m_nearest = detail::get_field<std::int64_t>(j, "m_nearest", "scoring config");
  }
  c.metric = parse_distance_metric(detail::get_field<std::string>(j, "metric", "scoring config"));
  c.validate();
  return c;
}

inline json to_json(const ScoreTable& t) {
  json j;
  j["config"] = to_json(t.config);
  j["layers"] = json::array();
  for (const auto& l : t.layers) {
    j["layers"].push_back({{"id", l.layer_id},
                           {"sim_entropy", l.sim_entropy},
                           {"capacity_raw", l.capacity_raw},
                           {"independence_raw", l.independence_raw},
                           {"capacity_norm", l.capacity_norm},
                           {"independence_norm", l.independence_norm},
                           {"combined", l.combined}});
  }
  return j;
}

inline ScoreTable score_table_from_json(const json& j) {
  detail::check_keys(j, {"config", "layers", "provenance"}, "score table");
  ScoreTable t;
  t.config = scoring_config_from_json(j.at("config"));
  for (const auto& jl : j.at("layers")) {
    LayerScores l;
    l.layer_id = jl.at("id").get<std::string>();
    l.sim_entropy = jl.at("sim_entropy").get<std::vector<double>>();
    l.capacity_raw = jl.at("capacity_raw").get<std::vector<double>>();
    l.independence_raw = jl.at("independence_raw").get<std::vector<double>>();
    l.capacity_norm = jl.at("capacity_norm").get<std::vector<double>>();
    l.independence_norm = jl.at("independence_norm").get<std::vector<double>>();
    l.combined = jl.at("combined").get<std::vector<double>>();
    t.layers.push_back(std::move(l));
  }
  return t;
}

}  // namespace infoprune
