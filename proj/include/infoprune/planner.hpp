#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "infoprune/archive.hpp"
#include "infoprune/manifest.hpp"
#include "infoprune/scoring.hpp"

namespace infoprune {

using IndexSet = std::vector<std::int64_t>;  // sorted ascending

enum class SelectionStrategy { least_important, most_important, random };

inline const char* to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::least_important: return "least";
    case SelectionStrategy::most_important: return "most";
    case SelectionStrategy::random: return "random";
  }
  return "?";
}

inline SelectionStrategy parse_strategy(const std::string& s) {
  if (s == "least" || s == "least_important") return SelectionStrategy::least_important;
  if (s == "most" || s == "most_important") return SelectionStrategy::most_important;
  if (s == "random") return SelectionStrategy::random;
  fail("unknown selection strategy '" + s + "'");
}

/// Number of filters kept at pruning rate `rate`: ceil((1 - rate) * n).
/// Products that land within rounding error of an integer are snapped to it,
/// so decimal rates such as 0.7 give the exact ceiling.
inline std::int64_t keep_count(double rate, std::int64_t n) {
  require(rate >= 0.0 && rate < 1.0, "keep_count: pruning rate must lie in [0,1), got " +
                                         std::to_string(rate));
  require(n >= 1, "keep_count: layer must have at least one filter");
  const double x = (1.0 - rate) * static_cast<double>(n);
  const double nearest = std::round(x);
  const double kept = std::abs(x - nearest) <= 1e-9 * std::max(1.0, x) ? nearest : std::ceil(x);
  return std::clamp<std::int64_t>(static_cast<std::int64_t>(kept), 1, n);
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Uniform draw in [0, bound) by rejection; independent of the standard
/// library's distribution implementation.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do v = rng();
  while (v >= limit);
  return v % bound;
}

}  // namespace detail

/// Picks which `keep` of the scored filters survive.
/// least_important drops the lowest scores, most_important drops the highest,
/// random keeps a seed-determined uniform subset. Equal scores favour keeping
/// the smaller index.
inline IndexSet select_filters(std::span<const double> scores, std::int64_t keep,
                               SelectionStrategy strategy, std::uint64_t seed = 0) {
  const auto n = static_cast<std::int64_t>(scores.size());
  require(keep >= 0 && keep <= n, "select_filters: keep count out of range");
  IndexSet idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);

  switch (strategy) {
    case SelectionStrategy::least_important:
      std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) {
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
      });
      break;
    case SelectionStrategy::most_important:
      std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) {
        return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
      });
      break;
    case SelectionStrategy::random: {
      std::mt19937_64 rng(detail::splitmix64(seed));
      for (std::int64_t i = 0; i < keep; ++i) {
        const auto j = i + static_cast<std::int64_t>(
                               detail::bounded(rng, static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      }
      break;
    }
  }
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// ---------------------------------------------------------------------------
// channel flow
// ---------------------------------------------------------------------------

/// A set of producer layers (conv2d / linear) whose output channels share one
/// kept set: a coupling group, or a single layer.
struct PruningUnit {
  std::vector<std::string> members;
  std::int64_t size = 0;
  bool prunable = false;
};

/// Which unit's channels flow through a node's output. `block` is the
/// number of consecutive features per channel after a flatten.
struct ChannelSource {
  int unit = -1;  // -1: not tied to any prunable unit (network input, mixed add)
  std::int64_t block = 1;
};

struct ChannelFlow {
  std::vector<PruningUnit> units;
  std::map<std::string, int> unit_of;       // producer layer id -> unit
  std::vector<ChannelSource> out_source;    // per manifest layer
  /// add layers whose two inputs come from different units: [layer, unit a, unit b].
  std::vector<std::tuple<std::string, int, int>> mixed_adds;

  ChannelSource source_of(const std::string& ref, const ModelGraph& g) const {
    if (ref == kInputId) return {};
    return out_source.at(g.index.at(ref));
  }
};

inline ChannelFlow trace_channels(const ModelManifest& m, const ModelGraph& g) {
  ChannelFlow flow;
  for (const auto& grp : m.coupling_groups) {
    const int u = static_cast<int>(flow.units.size());
    PruningUnit unit{grp.layer_ids, 0, true};
    unit.size = m.layers[g.index.at(grp.layer_ids.front())].out_units();
    for (const auto& id : grp.layer_ids) flow.unit_of[id] = u;
    flow.units.push_back(std::move(unit));
  }
  for (auto i : g.order) {
    const auto& l = m.layers[i];
    if ((l.kind == LayerKind::conv2d || l.kind == LayerKind::linear) && !flow.unit_of.count(l.id)) {
      flow.unit_of[l.id] = static_cast<int>(flow.units.size());
      flow.units.push_back({{l.id}, l.out_units(), l.prunable});
    }
  }

  flow.out_source.assign(m.layers.size(), {});
  for (auto i : g.order) {
    const auto& l = m.layers[i];
    auto& out = flow.out_source[i];
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::linear:
        out = {flow.unit_of.at(l.id), 1};
        break;
      case LayerKind::flatten: {
        const auto in = flow.source_of(l.inputs[0], g);
        out = {in.unit, l.flatten().height * l.flatten().width};
        break;
      }
      case LayerKind::add: {
        const auto a = flow.source_of(l.inputs[0], g);
        const auto b = flow.source_of(l.inputs[1], g);
        if (a.unit == b.unit && a.block == b.block) {
          out = a;
        } else {
          flow.mixed_adds.emplace_back(l.id, a.unit, b.unit);
          out = {};
        }
        break;
      }
      default:
        out = flow.source_of(l.inputs[0], g);
        break;
    }
  }
  return flow;
}

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

struct PruningRates {
  std::optional<double> global;
  std::map<std::string, double> per_layer;
  /// nullopt selects the default: the network's final linear layer.
  std::optional<std::set<std::string>> protected_layers;

  bool operator==(const PruningRates&) const = default;
};

struct LayerKeep {
  std::string layer_id;
  std::int64_t original = 0;
  double rate = 0.0;
  IndexSet kept;

  bool operator==(const LayerKeep&) const = default;
};

/// Input-side removal implied by a producer's output removal.
struct DerivedKeep {
  std::string layer_id;
  std::string dim;  // "in_channels", "in_features" or "channels"
  std::int64_t original = 0;
  IndexSet kept;

  bool operator==(const DerivedKeep&) const = default;
};

struct PruningPlan {
  std::string source_fingerprint;
  ScoringConfig scoring;
  SelectionStrategy strategy = SelectionStrategy::least_important;
  std::uint64_t seed = 0;
  PruningRates rates;
  std::vector<std::string> protected_layers;  // effective set
  std::vector<LayerKeep> layers;              // every prunable layer
  std::vector<DerivedKeep> derived;

  const LayerKeep* find_layer(const std::string& id) const {
    for (const auto& l : layers)
      if (l.layer_id == id) return &l;
    return nullptr;
  }
  const DerivedKeep* find_derived(const std::string& id) const {
    for (const auto& d : derived)
      if (d.layer_id == id) return &d;
    return nullptr;
  }
  bool operator==(const PruningPlan&) const = default;
};

/// Default protected set: the last linear layer in topological order.
inline std::set<std::string> default_protected(const ModelManifest& m, const ModelGraph& g) {
  for (auto it = g.order.rbegin(); it != g.order.rend(); ++it)
    if (m.layers[*it].kind == LayerKind::linear) return {m.layers[*it].id};
  return {};
}

/// Expands kept channels to kept feature columns for a flatten boundary.
inline IndexSet expand_blocks(const IndexSet& kept, std::int64_t block) {
  if (block == 1) return kept;
  IndexSet out;
  out.reserve(kept.size() * static_cast<std::size_t>(block));
  for (auto c : kept)
    for (std::int64_t b = 0; b < block; ++b) out.push_back(c * block + b);
  return out;
}

namespace detail {

inline bool unit_pruned(const ChannelFlow& flow, const std::vector<IndexSet>& unit_kept, int u) {
  return u >= 0 && static_cast<std::int64_t>(unit_kept[static_cast<std::size_t>(u)].size()) <
                       flow.units[static_cast<std::size_t>(u)].size;
}

}  // namespace detail

inline void check_mixed_adds(const ChannelFlow& flow, const std::vector<IndexSet>& unit_kept) {
  for (const auto& [id, a, b] : flow.mixed_adds)
    require(!detail::unit_pruned(flow, unit_kept, a) && !detail::unit_pruned(flow, unit_kept, b),
            "plan: add '" + id + "' joins channels of layers outside one coupling group; "
            "group its producers or leave them unpruned");
}

/// Input-side keeps of every conv2d / linear / batchnorm2d whose input
/// channels come from a pruned unit, in topological order.
inline std::vector<DerivedKeep> derive_input_keeps(const ModelManifest& m, const ModelGraph& g,
                                                   const ChannelFlow& flow,
                                                   const std::vector<IndexSet>& unit_kept) {
  std::vector<DerivedKeep> derived;
  for (auto i : g.order) {
    const auto& l = m.layers[i];
    if (l.kind != LayerKind::conv2d && l.kind != LayerKind::linear && l.kind != LayerKind::batchnorm2d)
      continue;
    const auto src = flow.source_of(l.inputs[0], g);
    if (!detail::unit_pruned(flow, unit_kept, src.unit)) continue;
    const auto& kept = unit_kept[static_cast<std::size_t>(src.unit)];
    switch (l.kind) {
      case LayerKind::conv2d:
        derived.push_back({l.id, "in_channels", l.conv().in_channels, kept});
        break;
      case LayerKind::batchnorm2d:
        derived.push_back({l.id, "channels", l.bn().channels, kept});
        break;
      default:
        derived.push_back({l.id, "in_features", l.linear().in_features, expand_blocks(kept, src.block)});
        break;
    }
  }
  return derived;
}

struct PlanOptions {
  SelectionStrategy strategy = SelectionStrategy::least_important;
  std::uint64_t seed = 0;
  std::string source_fingerprint;
};

/// One-shot plan for the whole network: per-unit keep counts, per-unit
/// selection over (summed) combined scores, then propagation of the kept
/// sets to every consumer's input dimension.
inline PruningPlan build_plan(const ModelManifest& m, const ScoreTable& scores,
                              const PruningRates& rates, const PlanOptions& options) {
  const ModelGraph g = analyze(m);
  const ChannelFlow flow = trace_channels(m, g);

  PruningPlan plan;
  plan.source_fingerprint = options.source_fingerprint;
  plan.scoring = scores.config;
  plan.strategy = options.strategy;
  plan.seed = options.seed;
  plan.rates = rates;

  if (rates.global) require(*rates.global >= 0.0 && *rates.global < 1.0, "rates: global rate must lie in [0,1)");
  for (const auto& [id, r] : rates.per_layer) {
    auto it = g.index.find(id);
    require(it != g.index.end() && m.layers[it->second].prunable,
            "rates: '" + id + "' is not a prunable layer");
    require(r >= 0.0 && r < 1.0, "rates: rate for '" + id + "' must lie in [0,1)");
  }
  const std::set<std::string> protect =
      rates.protected_layers ? *rates.protected_layers : default_protected(m, g);
  for (const auto& id : protect)
    require(g.index.count(id), "rates: protected layer '" + id + "' does not exist");
  plan.protected_layers.assign(protect.begin(), protect.end());

  std::vector<IndexSet> unit_kept(flow.units.size());
  std::vector<double> unit_rate(flow.units.size(), 0.0);
  for (std::size_t u = 0; u < flow.units.size(); ++u) {
    const auto& unit = flow.units[u];
    IndexSet all(static_cast<std::size_t>(unit.size));
    std::iota(all.begin(), all.end(), 0);
    if (!unit.prunable) {
      unit_kept[u] = std::move(all);
      continue;
    }

    std::optional<double> rate;
    bool is_protected = false;
    for (const auto& id : unit.members) {
      is_protected = is_protected || protect.count(id);
      auto it = rates.per_layer.find(id);
      if (it == rates.per_layer.end()) continue;
      require(!rate || *rate == it->second,
              "rates: coupling group member '" + id + "' has a rate conflicting with another member");
      rate = it->second;
    }
    if (!rate) rate = rates.global;
    require(rate.has_value(), "rates: no rate given for layer '" + unit.members.front() + "'");
    if (is_protected) rate = 0.0;
    unit_rate[u] = *rate;

    std::vector<double> summed(static_cast<std::size_t>(unit.size), 0.0);
    for (const auto& id : unit.members) {
      const auto* row = scores.find(id);
      require(row != nullptr, "plan: missing score row for layer '" + id + "'");
      require(static_cast<std::int64_t>(row->combined.size()) == unit.size,
              "plan: score row for '" + id + "' has the wrong length");
      for (std::size_t i = 0; i < summed.size(); ++i) summed[i] += row->combined[i];
    }
    const auto keep = keep_count(*rate, unit.size);
    unit_kept[u] = select_filters(summed, keep, options.strategy,
                                  detail::splitmix64(options.seed ^ (0x5851f42d4c957f2dull * (u + 1))));
  }

  check_mixed_adds(flow, unit_kept);
  for (auto i : g.order) {
    const auto& l = m.layers[i];
    if (!l.prunable) continue;
    const auto u = static_cast<std::size_t>(flow.unit_of.at(l.id));
    plan.layers.push_back({l.id, l.out_units(), unit_rate[u], unit_kept[u]});
  }
  plan.derived = derive_input_keeps(m, g, flow, unit_kept);
  return plan;
}


/// Checks a plan against a manifest and returns the kept set of every
/// channel unit (all indices for untouched units). Any disagreement means the
/// plan was built for a different model.
inline std::vector<IndexSet> resolve_plan(const ModelManifest& m, const ModelGraph& g,
                                          const ChannelFlow& flow, const PruningPlan& plan) {
  const std::string mismatch = "plan/archive mismatch: ";
  std::vector<std::optional<IndexSet>> kept(flow.units.size());
  std::set<std::string> seen;
  for (const auto& lk : plan.layers) {
    auto it = g.index.find(lk.layer_id);
    require(it != g.index.end(), mismatch + "unknown layer '" + lk.layer_id + "'");
    const auto& l = m.layers[it->second];
    require(l.prunable, mismatch + "layer '" + l.id + "' is not prunable");
    require(seen.insert(l.id).second, mismatch + "layer '" + l.id + "' listed twice");
    require(lk.original == l.out_units(),
            mismatch + "layer '" + l.id + "' has " + std::to_string(l.out_units()) +
                " outputs, plan expects " + std::to_string(lk.original));
    require(!lk.kept.empty(), mismatch + "layer '" + l.id + "' keeps no filters");
    for (std::size_t k = 0; k < lk.kept.size(); ++k) {
      require(lk.kept[k] >= 0 && lk.kept[k] < lk.original,
              mismatch + "kept index out of range in layer '" + l.id + "'");
      require(k == 0 || lk.kept[k] > lk.kept[k - 1],
              mismatch + "kept indices of '" + l.id + "' are not strictly ascending");
    }
    auto& slot = kept[static_cast<std::size_t>(flow.unit_of.at(l.id))];
    require(!slot || *slot == lk.kept,
            mismatch + "coupling group member '" + l.id + "' disagrees with its group");
    slot = lk.kept;
  }
  std::vector<IndexSet> out(flow.units.size());
  for (std::size_t u = 0; u < flow.units.size(); ++u) {
    const auto& unit = flow.units[u];
    if (unit.prunable) {
      require(kept[u].has_value(), mismatch + "no entry for layer '" + unit.members.front() + "'");
      out[u] = *kept[u];
    } else {
      out[u].resize(static_cast<std::size_t>(unit.size));
      std::iota(out[u].begin(), out[u].end(), 0);
    }
  }
  check_mixed_adds(flow, out);
  require(derive_input_keeps(m, g, flow, out) == plan.derived,
          mismatch + "derived input removals do not follow from the kept sets");
  return out;
}

/// The manifest after applying `plan`: channel and feature counts shrink,
/// tensor names and everything else stay.
inline ModelManifest planned_manifest(const ModelManifest& m, const PruningPlan& plan) {
  const ModelGraph g = analyze(m);
  const ChannelFlow flow = trace_channels(m, g);
  resolve_plan(m, g, flow, plan);
  ModelManifest out = m;
  for (auto& l : out.layers) {
    const auto count = [](const IndexSet& s) { return static_cast<std::int64_t>(s.size()); };
    if (const auto* lk = plan.find_layer(l.id)) {
      if (l.kind == LayerKind::conv2d) l.conv().out_channels = count(lk->kept);
      else l.linear().out_features = count(lk->kept);
    }
    if (const auto* d = plan.find_derived(l.id)) {
      if (l.kind == LayerKind::conv2d) l.conv().in_channels = count(d->kept);
      else if (l.kind == LayerKind::linear) l.linear().in_features = count(d->kept);
      else l.bn().channels = count(d->kept);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json to_json(const PruningRates& r) {
  json j = json::object();
  j["global"] = r.global ? json(*r.global) : json(nullptr);
  j["layers"] = json::object();
  for (const auto& [id, v] : r.per_layer) j["layers"][id] = v;
  if (r.protected_layers)
    j["protected"] = std::vector<std::string>(r.protected_layers->begin(), r.protected_layers->end());
  return j;
}

/// Rates file: {"global": 0.5, "layers": {"conv1": 0.3}, "protected": ["fc"]}.
inline PruningRates rates_from_json(const json& j) {
  detail::check_keys(j, {"global", "layers", "protected"}, "rates");
  PruningRates r;
  if (j.contains("global") && !j.at("global").is_null())
    r.global = detail::get_field<double>(j, "global", "rates");
  if (j.contains("layers")) r.per_layer = detail::get_field<std::map<std::string, double>>(j, "layers", "rates");
  if (j.contains("protected")) {
    auto v = detail::get_field<std::vector<std::string>>(j, "protected", "rates");
    r.protected_layers = std::set<std::string>(v.begin(), v.end());
  }
  return r;
}

inline json to_json(const PruningPlan& p) {
  json j;
  j["source_fingerprint"] = p.source_fingerprint;
  j["config"] = {{"scoring", to_json(p.scoring)},
                 {"strategy", to_string(p.strategy)},
                 {"seed", p.seed},
                 {"rates", to_json(p.rates)}};
  j["protected_layers"] = p.protected_layers;
  j["layers"] = json::array();
  for (const auto& l : p.layers)
    j["layers"].push_back({{"id", l.layer_id},
                           {"original_out", l.original},
                           {"rate", l.rate},
                           {"kept_count", l.kept.size()},
                           {"kept_out_indices", l.kept}});
  j["derived"] = json::array();
  for (const auto& d : p.derived)
    j["derived"].push_back({{"id", d.layer_id}, {"dim", d.dim}, {"original", d.original}, {"kept_indices", d.kept}});
  return j;
}

inline PruningPlan plan_from_json(const json& j) {
  using detail::get_field;
  detail::check_keys(j, {"source_fingerprint", "config", "protected_layers", "layers", "derived", "provenance"},
                     "plan");
  PruningPlan p;
  try {
    p.source_fingerprint = get_field<std::string>(j, "source_fingerprint", "plan");
    const auto& c = j.at("config");
    p.scoring = scoring_config_from_json(c.at("scoring"));
    p.strategy = parse_strategy(c.at("strategy").get<std::string>());
    p.seed = c.at("seed").get<std::uint64_t>();
    p.rates = rates_from_json(c.at("rates"));
    p.protected_layers = get_field<std::vector<std::string>>(j, "protected_layers", "plan");
    for (const auto& jl : j.at("layers")) {
      LayerKeep l{jl.at("id").get<std::string>(), jl.at("original_out").get<std::int64_t>(),
                  jl.at("rate").get<double>(), jl.at("kept_out_indices").get<IndexSet>()};
      require(jl.at("kept_count").get<std::size_t>() == l.kept.size(),
              "plan: kept_count disagrees with kept_out_indices for '" + l.layer_id + "'");
      p.layers.push_back(std::move(l));
    }
    for (const auto& jd : j.at("derived"))
      p.derived.push_back({jd.at("id").get<std::string>(), jd.at("dim").get<std::string>(),
                           jd.at("original").get<std::int64_t>(), jd.at("kept_indices").get<IndexSet>()});
  } catch (const json::exception& e) {
    fail(std::string("plan: malformed JSON: ") + e.what());
  }
  return p;
}

/// Hash of the plan's canonical JSON, used in provenance records.
inline std::string plan_hash(const PruningPlan& p) {
  detail::Fnv1a h;
  h.update(to_json(p).dump());
  return h.hex();
}

}  // namespace infoprune
