#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "infoprune/planner.hpp"

namespace infoprune {

/// Counting convention used throughout: one multiply-accumulate is one FLOP;
/// batch norm, activations and pooling cost no FLOPs; batch norm contributes
/// its two learnable vectors to the parameter count.
inline constexpr const char* kCostConvention =
    "1 MAC = 1 FLOP; conv2d/linear FLOPs only; BN counts 2 learnable params per channel";

struct LayerCost {
  std::string layer_id;
  LayerKind kind = LayerKind::relu;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  bool operator==(const LayerCost&) const = default;
};

struct CostSummary {
  std::vector<LayerCost> layers;  // topological order
  std::int64_t params = 0;
  std::int64_t flops = 0;

  const LayerCost* find(const std::string& id) const {
    for (const auto& l : layers)
      if (l.layer_id == id) return &l;
    return nullptr;
  }
};

struct CostReport {
  CostSummary baseline;
  std::optional<CostSummary> pruned;

  /// 100 * (1 - pruned / baseline); 0 without a plan.
  double flops_pr() const { return pruned ? reduction(baseline.flops, pruned->flops) : 0.0; }
  double params_pr() const { return pruned ? reduction(baseline.params, pruned->params) : 0.0; }

  static double reduction(std::int64_t base, std::int64_t after) {
    if (base == 0) return 0.0;
    return 100.0 * (1.0 - static_cast<double>(after) / static_cast<double>(base));
  }
};

inline CostSummary count_costs(const ModelManifest& m) {
  const ModelGraph g = analyze(m);
  CostSummary s;
  for (auto i : g.order) {
    const auto& l = m.layers[i];
    LayerCost c{l.id, l.kind, 0, 0};
    switch (l.kind) {
      case LayerKind::conv2d: {
        const auto& p = l.conv();
        const auto& out = g.out_shapes[i];
        c.params = p.out_channels * p.in_channels * p.kernel * p.kernel + (p.has_bias ? p.out_channels : 0);
        c.flops = p.out_channels * p.in_channels * p.kernel * p.kernel * out[1] * out[2];
        break;
      }
      case LayerKind::linear: {
        const auto& p = l.linear();
        c.params = p.out_features * p.in_features + (p.has_bias ? p.out_features : 0);
        c.flops = p.out_features * p.in_features;
        break;
      }
      case LayerKind::batchnorm2d:
        c.params = 2 * l.bn().channels;
        break;
      default:
        break;
    }
    s.params += c.params;
    s.flops += c.flops;
    s.layers.push_back(std::move(c));
  }
  return s;
}

inline CostReport evaluate_plan_costs(const ModelManifest& m, const PruningPlan* plan = nullptr) {
  CostReport r;
  r.baseline = count_costs(m);
  if (plan) r.pruned = count_costs(planned_manifest(m, *plan));
  return r;
}

inline json to_json(const CostSummary& s) {
  json j;
  j["params"] = s.params;
  j["flops"] = s.flops;
  j["layers"] = json::array();
  for (const auto& l : s.layers)
    j["layers"].push_back({{"id", l.layer_id}, {"kind", to_string(l.kind)}, {"params", l.params}, {"flops", l.flops}});
  return j;
}

inline json to_json(const CostReport& r) {
  json j;
  j["convention"] = kCostConvention;
  j["baseline"] = to_json(r.baseline);
  if (r.pruned) {
    j["pruned"] = to_json(*r.pruned);
    j["flops_pr"] = r.flops_pr();
    j["params_pr"] = r.params_pr();
  }
  return j;
}

/// Aligned text table: one row per costed layer plus a total row, in the
/// "FLOPs[M] / PR[%] | Params[M] / PR[%]" layout.
inline std::string format_cost_table(const CostReport& r) {
  std::string out;
  char line[256];
  auto mega = [](std::int64_t v) { return static_cast<double>(v) / 1e6; };
  std::snprintf(line, sizeof line, "# %s\n", kCostConvention);
  out += line;
  std::snprintf(line, sizeof line, "%-24s %-12s %22s %22s\n", "layer", "kind", "FLOPs[M] / PR[%]",
                "Params[M] / PR[%]");
  out += line;
  auto row = [&](const std::string& id, const std::string& kind, std::int64_t bf, std::int64_t pf,
                 std::int64_t bp, std::int64_t pp) {
    char f[64], p[64];
    std::snprintf(f, sizeof f, "%.4f / %.1f", mega(pf), CostReport::reduction(bf, pf));
    std::snprintf(p, sizeof p, "%.4f / %.1f", mega(pp), CostReport::reduction(bp, pp));
    std::snprintf(line, sizeof line, "%-24s %-12s %22s %22s\n", id.c_str(), kind.c_str(), f, p);
    out += line;
  };
  for (const auto& b : r.baseline.layers) {
    if (b.params == 0 && b.flops == 0) continue;
    const LayerCost* a = r.pruned ? r.pruned->find(b.layer_id) : &b;
    row(b.layer_id, to_string(b.kind), b.flops, a->flops, b.params, a->params);
  }
  const auto& after = r.pruned ? *r.pruned : r.baseline;
  row("total", "", r.baseline.flops, after.flops, r.baseline.params, after.params);
  return out;
}

}  // namespace infoprune
