#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "infoprune/error.hpp"
#include "infoprune/tensor.hpp"

namespace infoprune {

using json = nlohmann::json;

/// Reserved id of the network input; every graph has exactly this one source.
inline constexpr const char* kInputId = "input";

enum class LayerKind { conv2d, linear, batchnorm2d, relu, maxpool2d, avgpool2d, flatten, add };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::linear: return "linear";
    case LayerKind::batchnorm2d: return "batchnorm2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::avgpool2d: return "avgpool2d";
    case LayerKind::flatten: return "flatten";
    case LayerKind::add: return "add";
  }
  return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  static const std::map<std::string, LayerKind> kinds = {
      {"conv2d", LayerKind::conv2d},       {"linear", LayerKind::linear},
      {"batchnorm2d", LayerKind::batchnorm2d}, {"relu", LayerKind::relu},
      {"maxpool2d", LayerKind::maxpool2d}, {"avgpool2d", LayerKind::avgpool2d},
      {"flatten", LayerKind::flatten},     {"add", LayerKind::add}};
  auto it = kinds.find(s);
  if (it == kinds.end()) fail("unsupported layer kind '" + s + "'");
  return it->second;
}

struct Conv2dParams {
  std::int64_t out_channels = 0;
  std::int64_t in_channels = 0;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  bool has_bias = false;
  std::string weight;
  std::string bias;  // empty unless has_bias
  bool operator==(const Conv2dParams&) const = default;
};

struct LinearParams {
  std::int64_t out_features = 0;
  std::int64_t in_features = 0;
  bool has_bias = false;
  std::string weight;
  std::string bias;
  bool operator==(const LinearParams&) const = default;
};

struct BatchNormParams {
  std::int64_t channels = 0;
  std::string gamma, beta, mean, var;
  double epsilon = 1e-5;
  bool operator==(const BatchNormParams&) const = default;
};

struct PoolParams {
  std::int64_t kernel = 2;
  std::int64_t stride = 2;
  bool operator==(const PoolParams&) const = default;
};

/// Spatial size the flatten expects on its input, so removed channels can be
/// mapped to blocks of downstream linear columns.
struct FlattenParams {
  std::int64_t height = 1;
  std::int64_t width = 1;
  bool operator==(const FlattenParams&) const = default;
};

struct NoParams {
  bool operator==(const NoParams&) const = default;
};

using LayerParams =
    std::variant<NoParams, Conv2dParams, LinearParams, BatchNormParams, PoolParams, FlattenParams>;

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;
  LayerParams params;
  bool prunable = false;

  const Conv2dParams& conv() const { return std::get<Conv2dParams>(params); }
  Conv2dParams& conv() { return std::get<Conv2dParams>(params); }
  const LinearParams& linear() const { return std::get<LinearParams>(params); }
  LinearParams& linear() { return std::get<LinearParams>(params); }
  const BatchNormParams& bn() const { return std::get<BatchNormParams>(params); }
  BatchNormParams& bn() { return std::get<BatchNormParams>(params); }
  const PoolParams& pool() const { return std::get<PoolParams>(params); }
  const FlattenParams& flatten() const { return std::get<FlattenParams>(params); }

  /// Output channels (conv) or output features (linear); 0 for other kinds.
  std::int64_t out_units() const {
    if (kind == LayerKind::conv2d) return conv().out_channels;
    if (kind == LayerKind::linear) return linear().out_features;
    return 0;
  }

  bool operator==(const LayerSpec&) const = default;
};

struct CouplingGroup {
  std::vector<std::string> layer_ids;
  bool operator==(const CouplingGroup&) const = default;
};

struct ModelManifest {
  std::vector<LayerSpec> layers;
  std::vector<CouplingGroup> coupling_groups;
  Shape input_shape;  // [channels, height, width]

  bool operator==(const ModelManifest&) const = default;
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  require(obj.is_object(), where + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = std::any_of(allowed.begin(), allowed.end(),
                          [&](const char* a) { return it.key() == a; });
    require(ok, where + ": unknown field '" + it.key() + "'");
  }
}

template <typename T>
T get_field(const json& obj, const char* key, const std::string& where) {
  require(obj.contains(key), where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(where + ": field '" + key + "' has the wrong type");
  }
}

template <typename T>
T get_field_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  return get_field<T>(obj, key, where);
}

inline std::string bias_name(const json& p, bool has_bias, const std::string& where) {
  if (!has_bias) {
    require(!p.contains("bias"), where + ": 'bias' given but has_bias is false");
    return {};
  }
  return get_field<std::string>(p, "bias", where);
}

inline LayerParams params_from_json(LayerKind kind, const json& p, const std::string& where) {
  switch (kind) {
    case LayerKind::conv2d: {
      check_keys(p, {"out_channels", "in_channels", "kernel", "stride", "padding", "groups",
                     "has_bias", "weight", "bias"}, where);
      if (get_field_or<std::int64_t>(p, "groups", 1, where) != 1)
        fail(where + ": unsupported: grouped conv (depthwise/grouped convolution)");
      Conv2dParams c;
      c.out_channels = get_field<std::int64_t>(p, "out_channels", where);
      c.in_channels = get_field<std::int64_t>(p, "in_channels", where);
      c.kernel = get_field<std::int64_t>(p, "kernel", where);
      c.stride = get_field_or<std::int64_t>(p, "stride", 1, where);
      c.padding = get_field_or<std::int64_t>(p, "padding", 0, where);
      c.has_bias = get_field<bool>(p, "has_bias", where);
      c.weight = get_field<std::string>(p, "weight", where);
      c.bias = bias_name(p, c.has_bias, where);
      return c;
    }
    case LayerKind::linear: {
      check_keys(p, {"out_features", "in_features", "has_bias", "weight", "bias"}, where);
      LinearParams l;
      l.out_features = get_field<std::int64_t>(p, "out_features", where);
      l.in_features = get_field<std::int64_t>(p, "in_features", where);
      l.has_bias = get_field<bool>(p, "has_bias", where);
      l.weight = get_field<std::string>(p, "weight", where);
      l.bias = bias_name(p, l.has_bias, where);
      return l;
    }
    case LayerKind::batchnorm2d: {
      check_keys(p, {"channels", "gamma", "beta", "mean", "var", "epsilon"}, where);
      BatchNormParams b;
      b.channels = get_field<std::int64_t>(p, "channels", where);
      b.gamma = get_field<std::string>(p, "gamma", where);
      b.beta = get_field<std::string>(p, "beta", where);
      b.mean = get_field<std::string>(p, "mean", where);
      b.var = get_field<std::string>(p, "var", where);
      b.epsilon = get_field_or<double>(p, "epsilon", 1e-5, where);
      return b;
    }
    case LayerKind::maxpool2d:
    case LayerKind::avgpool2d: {
      check_keys(p, {"kernel", "stride"}, where);
      PoolParams pp;
      pp.kernel = get_field<std::int64_t>(p, "kernel", where);
      pp.stride = get_field_or<std::int64_t>(p, "stride", pp.kernel, where);
      return pp;
    }
    case LayerKind::flatten: {
      check_keys(p, {"height", "width"}, where);
      return FlattenParams{get_field<std::int64_t>(p, "height", where),
                           get_field<std::int64_t>(p, "width", where)};
    }
    case LayerKind::relu:
    case LayerKind::add:
      check_keys(p, {}, where);
      return NoParams{};
  }
  return NoParams{};
}

}  // namespace detail

inline json params_to_json(const LayerParams& params) {
  return std::visit(
      [](const auto& p) -> json {
        using P = std::decay_t<decltype(p)>;
        json j = json::object();
        if constexpr (std::is_same_v<P, Conv2dParams>) {
          j["out_channels"] = p.out_channels;
          j["in_channels"] = p.in_channels;
          j["kernel"] = p.kernel;
          j["stride"] = p.stride;
          j["padding"] = p.padding;
          j["has_bias"] = p.has_bias;
          j["weight"] = p.weight;
          if (p.has_bias) j["bias"] = p.bias;
        } else if constexpr (std::is_same_v<P, LinearParams>) {
          j["out_features"] = p.out_features;
          j["in_features"] = p.in_features;
          j["has_bias"] = p.has_bias;
          j["weight"] = p.weight;
          if (p.has_bias) j["bias"] = p.bias;
        } else if constexpr (std::is_same_v<P, BatchNormParams>) {
          j["channels"] = p.channels;
          j["gamma"] = p.gamma;
          j["beta"] = p.beta;
          j["mean"] = p.mean;
          j["var"] = p.var;
          j["epsilon"] = p.epsilon;
        } else if constexpr (std::is_same_v<P, PoolParams>) {
          j["kernel"] = p.kernel;
          j["stride"] = p.stride;
        } else if constexpr (std::is_same_v<P, FlattenParams>) {
          j["height"] = p.height;
          j["width"] = p.width;
        }
        return j;
      },
      params);
}

inline json to_json(const ModelManifest& m) {
  json j;
  j["input_shape"] = m.input_shape;
  j["layers"] = json::array();
  for (const auto& l : m.layers) {
    json jl;
    jl["id"] = l.id;
    jl["kind"] = to_string(l.kind);
    jl["inputs"] = l.inputs;
    jl["prunable"] = l.prunable;
    jl["params"] = params_to_json(l.params);
    j["layers"].push_back(std::move(jl));
  }
  j["coupling_groups"] = json::array();
  for (const auto& g : m.coupling_groups) j["coupling_groups"].push_back({{"layer_ids", g.layer_ids}});
  return j;
}

inline ModelManifest manifest_from_json(const json& j) {
  using detail::check_keys;
  using detail::get_field;
  check_keys(j, {"input_shape", "layers", "coupling_groups"}, "manifest");
  ModelManifest m;
  m.input_shape = get_field<Shape>(j, "input_shape", "manifest");
  require(j.contains("layers") && j.at("layers").is_array(), "manifest: 'layers' must be an array");
  for (const auto& jl : j.at("layers")) {
    std::string where = "layer";
    if (jl.is_object() && jl.contains("id") && jl.at("id").is_string())
      where = "layer '" + jl.at("id").get<std::string>() + "'";
    check_keys(jl, {"id", "kind", "inputs", "prunable", "params"}, where);
    LayerSpec l;
    l.id = get_field<std::string>(jl, "id", where);
    l.kind = parse_layer_kind(get_field<std::string>(jl, "kind", where));
    l.inputs = get_field<std::vector<std::string>>(jl, "inputs", where);
    l.prunable = detail::get_field_or<bool>(jl, "prunable", false, where);
    l.params = detail::params_from_json(l.kind, jl.value("params", json::object()), where);
    m.layers.push_back(std::move(l));
  }
  if (j.contains("coupling_groups")) {
    require(j.at("coupling_groups").is_array(), "manifest: 'coupling_groups' must be an array");
    for (const auto& jg : j.at("coupling_groups")) {
      check_keys(jg, {"layer_ids"}, "coupling group");
      m.coupling_groups.push_back(
          {get_field<std::vector<std::string>>(jg, "layer_ids", "coupling group")});
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Graph analysis
// ---------------------------------------------------------------------------

/// Structural facts derived from a validated manifest.
struct ModelGraph {
  std::vector<std::size_t> order;                 // topological, ties by manifest position
  std::map<std::string, std::size_t> index;       // layer id -> position in manifest
  std::vector<std::vector<std::size_t>> consumers;
  std::vector<Shape> out_shapes;                  // [C,H,W] or [F] per layer
  std::size_t sink = 0;

  /// Shape produced by an input reference (layer id or the reserved input).
  const Shape& shape_of(const std::string& ref, const Shape& input_shape) const {
    if (ref == kInputId) return input_shape;
    return out_shapes.at(index.at(ref));
  }
};

namespace detail {

inline std::int64_t window_out(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                               std::int64_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

inline Shape infer_shape(const LayerSpec& l, const std::vector<Shape>& in) {
  const std::string where = "layer '" + l.id + "'";
  auto need_spatial = [&](const Shape& s) {
    require(s.size() == 3, where + ": expects a [C,H,W] input, got " + shape_str(s));
  };
  switch (l.kind) {
    case LayerKind::conv2d: {
      const auto& c = l.conv();
      need_spatial(in[0]);
      require(in[0][0] == c.in_channels,
              where + ": in_channels " + std::to_string(c.in_channels) + " but input has " +
                  std::to_string(in[0][0]) + " channels");
      auto h = window_out(in[0][1], c.kernel, c.stride, c.padding);
      auto w = window_out(in[0][2], c.kernel, c.stride, c.padding);
      require(h > 0 && w > 0, where + ": empty output spatial size");
      return {c.out_channels, h, w};
    }
    case LayerKind::linear: {
      const auto& p = l.linear();
      require(in[0].size() == 1, where + ": expects a flat input, got " + shape_str(in[0]));
      require(in[0][0] == p.in_features,
              where + ": in_features " + std::to_string(p.in_features) + " but input has " +
                  std::to_string(in[0][0]));
      return {p.out_features};
    }
    case LayerKind::batchnorm2d:
      need_spatial(in[0]);
      require(in[0][0] == l.bn().channels, where + ": channel count mismatch with its input");
      return in[0];
    case LayerKind::relu:
      return in[0];
    case LayerKind::maxpool2d:
    case LayerKind::avgpool2d: {
      need_spatial(in[0]);
      const auto& p = l.pool();
      auto h = window_out(in[0][1], p.kernel, p.stride, 0);
      auto w = window_out(in[0][2], p.kernel, p.stride, 0);
      require(h > 0 && w > 0, where + ": empty output spatial size");
      return {in[0][0], h, w};
    }
    case LayerKind::flatten: {
      need_spatial(in[0]);
      const auto& f = l.flatten();
      require(in[0][1] == f.height && in[0][2] == f.width,
              where + ": recorded spatial size " + std::to_string(f.height) + "x" +
                  std::to_string(f.width) + " but input is " + shape_str(in[0]));
      return {in[0][0] * f.height * f.width};
    }
    case LayerKind::add:
      require(in[0].size() == in[1].size(), where + ": add rank mismatch");
      require(in[0][0] == in[1][0], where + ": add channel mismatch (" +
                                        std::to_string(in[0][0]) + " vs " +
                                        std::to_string(in[1][0]) + ")");
      require(in[0] == in[1], where + ": add spatial mismatch " + shape_str(in[0]) + " vs " +
                                  shape_str(in[1]));
      return in[0];
  }
  return {};
}

inline void check_params(const LayerSpec& l) {
  const std::string where = "layer '" + l.id + "'";
  switch (l.kind) {
    case LayerKind::conv2d: {
      const auto& c = l.conv();
      require(c.out_channels > 0 && c.in_channels > 0 && c.kernel > 0 && c.stride > 0 &&
                  c.padding >= 0,
              where + ": invalid conv2d parameters");
      break;
    }
    case LayerKind::linear:
      require(l.linear().out_features > 0 && l.linear().in_features > 0,
              where + ": invalid linear parameters");
      break;
    case LayerKind::batchnorm2d:
      require(l.bn().channels > 0 && l.bn().epsilon >= 0.0, where + ": invalid batchnorm2d parameters");
      break;
    case LayerKind::maxpool2d:
    case LayerKind::avgpool2d:
      require(l.pool().kernel > 0 && l.pool().stride > 0, where + ": invalid pool parameters");
      break;
    case LayerKind::flatten:
      require(l.flatten().height > 0 && l.flatten().width > 0, where + ": invalid flatten size");
      break;
    default:
      break;
  }
  require(!l.prunable || l.kind == LayerKind::conv2d || l.kind == LayerKind::linear,
          where + ": only conv2d and linear layers can be prunable");
}

}  // namespace detail

/// Validates the manifest on its own (graph structure, shapes, coupling
/// groups) and returns the derived graph. Tensor contents are checked by
/// validate_archive.
inline ModelGraph analyze(const ModelManifest& m) {
  require(m.input_shape.size() == 3 &&
              std::all_of(m.input_shape.begin(), m.input_shape.end(), [](auto d) { return d > 0; }),
          "manifest: input_shape must be [channels, height, width] with positive entries");
  require(!m.layers.empty(), "manifest: no layers");

  ModelGraph g;
  const std::size_t n = m.layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = m.layers[i];
    require(!l.id.empty() && l.id != kInputId, "manifest: invalid layer id '" + l.id + "'");
    require(g.index.emplace(l.id, i).second, "manifest: duplicate layer id '" + l.id + "'");
    detail::check_params(l);
  }

  g.consumers.assign(n, {});
  std::vector<std::size_t> indegree(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = m.layers[i];
    const std::size_t arity = l.kind == LayerKind::add ? 2 : 1;
    require(l.inputs.size() == arity, "layer '" + l.id + "': expects " + std::to_string(arity) +
                                          " input(s), got " + std::to_string(l.inputs.size()));
    for (const auto& ref : l.inputs) {
      if (ref == kInputId) continue;
      auto it = g.index.find(ref);
      require(it != g.index.end(), "layer '" + l.id + "': dangling input reference '" + ref + "'");
      require(it->second != i, "layer '" + l.id + "': cyclic graph (self-loop)");
      g.consumers[it->second].push_back(i);
      ++indegree[i];
    }
  }

  // Kahn, preferring earlier manifest positions.
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(i);
  while (!ready.empty()) {
    auto i = ready.top();
    ready.pop();
    g.order.push_back(i);
    for (auto c : g.consumers[i])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (g.order.size() != n) {
    for (std::size_t i = 0; i < n; ++i)
      if (indegree[i] > 0) fail("manifest: cyclic graph through layer '" + m.layers[i].id + "'");
  }

  std::vector<std::size_t> sinks;
  for (std::size_t i = 0; i < n; ++i)
    if (g.consumers[i].empty()) sinks.push_back(i);
  require(sinks.size() == 1, "manifest: graph must have a single sink, found " +
                                 std::to_string(sinks.size()));
  g.sink = sinks.front();

  g.out_shapes.assign(n, {});
  for (auto i : g.order) {
    const auto& l = m.layers[i];
    std::vector<Shape> in;
    for (const auto& ref : l.inputs) in.push_back(g.shape_of(ref, m.input_shape));
    if (l.kind == LayerKind::batchnorm2d) {
      const auto& src = l.inputs[0];
      require(src != kInputId && m.layers[g.index.at(src)].kind == LayerKind::conv2d,
              "layer '" + l.id + "': batchnorm2d input must be a conv2d layer");
    }
    g.out_shapes[i] = detail::infer_shape(l, in);
  }

  std::set<std::string> grouped;
  for (const auto& grp : m.coupling_groups) {
    require(!grp.layer_ids.empty(), "coupling group: empty");
    std::int64_t units = -1;
    for (const auto& id : grp.layer_ids) {
      auto it = g.index.find(id);
      require(it != g.index.end(), "coupling group: unknown layer '" + id + "'");
      const auto& l = m.layers[it->second];
      require(l.prunable, "coupling group: layer '" + id + "' is not prunable");
      require(grouped.insert(id).second,
              "coupling group: layer '" + id + "' belongs to more than one group");
      if (units < 0) units = l.out_units();
      require(l.out_units() == units,
              "coupling group: layer '" + id + "' out-channel count differs from its group");
    }
  }
  return g;
}

/// Tensor names and shapes a layer references.
inline std::vector<std::pair<std::string, Shape>> expected_tensors(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::conv2d: {
      const auto& c = l.conv();
      std::vector<std::pair<std::string, Shape>> r{
          {c.weight, {c.out_channels, c.in_channels, c.kernel, c.kernel}}};
      if (c.has_bias) r.push_back({c.bias, {c.out_channels}});
      return r;
    }
    case LayerKind::linear: {
      const auto& p = l.linear();
      std::vector<std::pair<std::string, Shape>> r{{p.weight, {p.out_features, p.in_features}}};
      if (p.has_bias) r.push_back({p.bias, {p.out_features}});
      return r;
    }
    case LayerKind::batchnorm2d: {
      const auto& b = l.bn();
      return {{b.gamma, {b.channels}}, {b.beta, {b.channels}}, {b.mean, {b.channels}},
              {b.var, {b.channels}}};
    }
    default:
      return {};
  }
}

/// Tensor names double as file names inside the archive directory.
inline bool valid_tensor_name(const std::string& name) {
  if (name.empty() || name.front() == '.') return false;
  return std::all_of(name.begin(), name.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.';
  });
}

/// Full archive validation: manifest graph plus every referenced tensor.
/// With `exhaustive`, tensors not referenced by any layer are also an error.
inline ModelGraph validate_archive(const ModelManifest& m, const TensorMap& tensors,
                                   bool exhaustive = true) {
  ModelGraph g = analyze(m);
  std::set<std::string> seen;
  for (const auto& l : m.layers) {
    for (const auto& [name, shape] : expected_tensors(l)) {
      require(valid_tensor_name(name), "layer '" + l.id + "': invalid tensor name '" + name + "'");
      require(seen.insert(name).second, "tensor '" + name + "' is referenced more than once");
      auto it = tensors.find(name);
      require(it != tensors.end(),
              "layer '" + l.id + "': dangling reference to missing tensor '" + name + "'");
      require(it->second.name == name, "tensor '" + name + "': record name does not match its key");
      require(it->second.shape == shape, "tensor '" + name + "': shape mismatch, layer '" + l.id +
                                             "' expects " + shape_str(shape) + ", got " +
                                             shape_str(it->second.shape));
      validate_tensor(it->second);
    }
  }
  if (exhaustive) {
    for (const auto& [name, t] : tensors)
      require(seen.count(name), "tensor '" + name + "' is not referenced by any layer");
  }
  return g;
}

}  // namespace infoprune
