#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include "infoprune/diagnostics.hpp"
#include "infoprune/planner.hpp"

namespace infoprune {

/// Values at one graph node: [C,H,W] before a flatten, [F] after.
struct Activation {
  Shape shape;
  std::vector<float> values;

  Activation() = default;
  explicit Activation(Shape s)
      : shape(std::move(s)), values(static_cast<std::size_t>(shape_product(shape)), 0.0f) {}
  Activation(Shape s, std::vector<float> v) : shape(std::move(s)), values(std::move(v)) {}

  bool operator==(const Activation&) const = default;
};

/// Per prunable layer, which output channels survive.
using ChannelMask = std::map<std::string, std::vector<bool>>;

inline ChannelMask mask_from_plan(const PruningPlan& plan) {
  ChannelMask mask;
  for (const auto& l : plan.layers) {
    std::vector<bool> keep(static_cast<std::size_t>(l.original), false);
    for (auto i : l.kept) keep.at(static_cast<std::size_t>(i)) = true;
    mask.emplace(l.layer_id, std::move(keep));
  }
  return mask;
}

namespace detail {

inline const Tensor& tensor_at(const TensorMap& t, const std::string& name) {
  auto it = t.find(name);
  require(it != t.end(), "refnet: missing tensor '" + name + "'");
  return it->second;
}

inline Activation conv2d(const Conv2dParams& p, const TensorMap& tensors, const Activation& in,
                         const Shape& out_shape) {
  const auto& w = tensor_at(tensors, p.weight).data;
  const float* bias = p.has_bias ? tensor_at(tensors, p.bias).data.data() : nullptr;
  const auto c_in = in.shape[0], h_in = in.shape[1], w_in = in.shape[2];
  const auto h_out = out_shape[1], w_out = out_shape[2], k = p.kernel;
  Activation out(out_shape);
  for (std::int64_t o = 0; o < p.out_channels; ++o)
    for (std::int64_t y = 0; y < h_out; ++y)
      for (std::int64_t x = 0; x < w_out; ++x) {
        double acc = 0.0;
        for (std::int64_t c = 0; c < c_in; ++c)
          for (std::int64_t ky = 0; ky < k; ++ky) {
            const auto iy = y * p.stride - p.padding + ky;
            if (iy < 0 || iy >= h_in) continue;
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const auto ix = x * p.stride - p.padding + kx;
              if (ix < 0 || ix >= w_in) continue;
              acc += static_cast<double>(w[static_cast<std::size_t>(((o * c_in + c) * k + ky) * k + kx)]) *
                     static_cast<double>(in.values[static_cast<std::size_t>((c * h_in + iy) * w_in + ix)]);
            }
          }
        if (bias) acc += bias[o];
        out.values[static_cast<std::size_t>((o * h_out + y) * w_out + x)] = static_cast<float>(acc);
      }
  return out;
}

inline Activation linear(const LinearParams& p, const TensorMap& tensors, const Activation& in) {
  const auto& w = tensor_at(tensors, p.weight).data;
  const float* bias = p.has_bias ? tensor_at(tensors, p.bias).data.data() : nullptr;
  Activation out(Shape{p.out_features});
  for (std::int64_t o = 0; o < p.out_features; ++o) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < p.in_features; ++i)
      acc += static_cast<double>(w[static_cast<std::size_t>(o * p.in_features + i)]) *
             static_cast<double>(in.values[static_cast<std::size_t>(i)]);
    if (bias) acc += bias[o];
    out.values[static_cast<std::size_t>(o)] = static_cast<float>(acc);
  }
  return out;
}

inline Activation batchnorm(const BatchNormParams& p, const TensorMap& tensors, const Activation& in) {
  const auto& gamma = tensor_at(tensors, p.gamma).data;
  const auto& beta = tensor_at(tensors, p.beta).data;
  const auto& mean = tensor_at(tensors, p.mean).data;
  const auto& var = tensor_at(tensors, p.var).data;
  Activation out(in.shape);
  const auto plane = in.shape[1] * in.shape[2];
  for (std::int64_t c = 0; c < in.shape[0]; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const double scale = static_cast<double>(gamma[ci]) / std::sqrt(static_cast<double>(var[ci]) + p.epsilon);
    for (std::int64_t i = 0; i < plane; ++i) {
      const auto at = static_cast<std::size_t>(c * plane + i);
      out.values[at] = static_cast<float>((static_cast<double>(in.values[at]) - mean[ci]) * scale + beta[ci]);
    }
  }
  return out;
}

inline Activation pool(const PoolParams& p, bool is_max, const Activation& in, const Shape& out_shape) {
  Activation out(out_shape);
  const auto h_in = in.shape[1], w_in = in.shape[2];
  const auto h_out = out_shape[1], w_out = out_shape[2];
  for (std::int64_t c = 0; c < in.shape[0]; ++c)
    for (std::int64_t y = 0; y < h_out; ++y)
      for (std::int64_t x = 0; x < w_out; ++x) {
        double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
        for (std::int64_t ky = 0; ky < p.kernel; ++ky)
          for (std::int64_t kx = 0; kx < p.kernel; ++kx) {
            const double v =
                in.values[static_cast<std::size_t>((c * h_in + y * p.stride + ky) * w_in + x * p.stride + kx)];
            acc = is_max ? std::max(acc, v) : acc + v;
          }
        if (!is_max) acc /= static_cast<double>(p.kernel * p.kernel);
        out.values[static_cast<std::size_t>((c * h_out + y) * w_out + x)] = static_cast<float>(acc);
      }
  return out;
}

/// Zeroes the channels (or flattened channel blocks) a mask removes.
inline void apply_channel_mask(Activation& a, const std::vector<bool>& keep, std::int64_t block) {
  const auto per_channel = a.shape.size() == 3 ? a.shape[1] * a.shape[2] : block;
  for (std::size_t c = 0; c < keep.size(); ++c) {
    if (keep[c]) continue;
    const auto begin = static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(c) * per_channel);
    std::fill(a.values.begin() + begin, a.values.begin() + begin + per_channel, 0.0f);
  }
}

}  // namespace detail

/// Runs the network and returns every node's activation, indexed like
/// m.layers. With a mask, removed channels are zeroed on every activation
/// they flow through (conv / BN / ReLU / pool / add outputs), so consumers
/// see exactly zero on them.
inline std::vector<Activation> forward_all(const ModelManifest& m, const TensorMap& tensors,
                                           const Activation& input, const ChannelMask* mask = nullptr) {
  const ModelGraph g = analyze(m);
  require(input.shape == m.input_shape, "refnet: input shape " + shape_str(input.shape) +
                                            " does not match manifest " + shape_str(m.input_shape));
  require(static_cast<std::int64_t>(input.values.size()) == shape_product(input.shape),
          "refnet: input value count mismatch");

  std::optional<ChannelFlow> flow;
  std::vector<std::optional<std::vector<bool>>> unit_mask;
  if (mask) {
    flow = trace_channels(m, g);
    unit_mask.resize(flow->units.size());
    for (const auto& [id, keep] : *mask) {
      auto it = flow->unit_of.find(id);
      require(it != flow->unit_of.end() && g.index.count(id) && m.layers[g.index.at(id)].prunable,
              "refnet: mask names unknown or non-prunable layer '" + id + "'");
      const auto u = static_cast<std::size_t>(it->second);
      require(static_cast<std::int64_t>(keep.size()) == flow->units[u].size,
              "refnet: mask for '" + id + "' has the wrong length");
      require(!unit_mask[u] || *unit_mask[u] == keep,
              "refnet: coupling group member '" + id + "' has a different mask");
      unit_mask[u] = keep;
    }
  }

  std::vector<Activation> acts(m.layers.size());
  auto value_of = [&](const std::string& ref) -> const Activation& {
    return ref == kInputId ? input : acts[g.index.at(ref)];
  };
  for (auto i : g.order) {
    const auto& l = m.layers[i];
    const auto& in = value_of(l.inputs[0]);
    require(in.shape == g.shape_of(l.inputs[0], m.input_shape),
            "refnet: shape mismatch at node '" + l.id + "'");
    Activation out;
    switch (l.kind) {
      case LayerKind::conv2d:
        out = detail::conv2d(l.conv(), tensors, in, g.out_shapes[i]);
        break;
      case LayerKind::linear:
        out = detail::linear(l.linear(), tensors, in);
        break;
      case LayerKind::batchnorm2d:
        out = detail::batchnorm(l.bn(), tensors, in);
        break;
      case LayerKind::relu:
        out = in;
        for (auto& v : out.values) v = std::max(v, 0.0f);
        break;
      case LayerKind::maxpool2d:
      case LayerKind::avgpool2d:
        out = detail::pool(l.pool(), l.kind == LayerKind::maxpool2d, in, g.out_shapes[i]);
        break;
      case LayerKind::flatten:
        out = Activation(g.out_shapes[i], in.values);
        break;
      case LayerKind::add: {
        const auto& rhs = value_of(l.inputs[1]);
        require(rhs.shape == in.shape, "refnet: shape mismatch at node '" + l.id + "'");
        out = in;
        for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] += rhs.values[k];
        break;
      }
    }
    if (mask) {
      const auto src = flow->out_source[i];
      if (src.unit >= 0 && unit_mask[static_cast<std::size_t>(src.unit)])
        detail::apply_channel_mask(out, *unit_mask[static_cast<std::size_t>(src.unit)], src.block);
    }
    acts[i] = std::move(out);
  }
  return acts;
}

/// Network output (the single sink's activation).
inline Activation forward(const ModelManifest& m, const TensorMap& tensors, const Activation& input,
                          const ChannelMask* mask = nullptr) {
  const ModelGraph g = analyze(m);
  auto acts = forward_all(m, tensors, input, mask);
  return std::move(acts[g.sink]);
}

/// Output dimensions of the original network that survive `plan`
/// (all of them when the output layer is untouched).
inline IndexSet kept_output_dims(const ModelManifest& m, const PruningPlan& plan) {
  const ModelGraph g = analyze(m);
  const ChannelFlow flow = trace_channels(m, g);
  const auto unit_kept = resolve_plan(m, g, flow, plan);
  const auto& shape = g.out_shapes[g.sink];
  const auto src = flow.out_source[g.sink];
  if (src.unit < 0 || !detail::unit_pruned(flow, unit_kept, src.unit)) {
    IndexSet all(static_cast<std::size_t>(shape_product(shape)));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  const std::int64_t per_channel = shape.size() == 3 ? shape[1] * shape[2] : src.block;
  return expand_blocks(unit_kept[static_cast<std::size_t>(src.unit)], per_channel);
}

/// Largest |pruned(x) - gather(masked_original(x))| over the inputs: the
/// structural pruning must agree with zeroing the removed channels.
inline double masked_equivalence_deviation(const ModelManifest& original, const TensorMap& original_tensors,
                                           const PruningPlan& plan, const ModelManifest& pruned,
                                           const TensorMap& pruned_tensors, std::span<const Activation> inputs) {
  const auto mask = mask_from_plan(plan);
  const auto dims = kept_output_dims(original, plan);
  double worst = 0.0;
  for (const auto& x : inputs) {
    const auto reference = forward(original, original_tensors, x, &mask);
    const auto actual = forward(pruned, pruned_tensors, x);
    require(actual.values.size() == dims.size(), "verify: pruned output has " +
                                                     std::to_string(actual.values.size()) +
                                                     " values, plan keeps " + std::to_string(dims.size()));
    for (std::size_t k = 0; k < dims.size(); ++k)
      worst = std::max(worst, std::abs(static_cast<double>(actual.values[k]) -
                                       static_cast<double>(reference.values[static_cast<std::size_t>(dims[k])])));
  }
  return worst;
}

/// Post-conv (pre-activation) maps of every channel of conv layer
/// `layer_id` over the given images.
inline std::vector<FeatureMapSample> capture_feature_maps(const ModelManifest& m, const TensorMap& tensors,
                                                          std::span<const Activation> inputs,
                                                          const std::string& layer_id) {
  require(inputs.size() >= 2, "capture_feature_maps: s ≥ 2 required");
  const ModelGraph g = analyze(m);
  auto it = g.index.find(layer_id);
  require(it != g.index.end(), "capture_feature_maps: unknown layer id '" + layer_id + "'");
  require(m.layers[it->second].kind == LayerKind::conv2d,
          "capture_feature_maps: layer '" + layer_id + "' is not a conv2d layer");
  const auto& shape = g.out_shapes[it->second];
  const auto s = static_cast<std::int64_t>(inputs.size());
  const auto plane = shape[1] * shape[2];

  std::vector<FeatureMapSample> maps(static_cast<std::size_t>(shape[0]));
  for (std::int64_t c = 0; c < shape[0]; ++c) {
    auto& f = maps[static_cast<std::size_t>(c)];
    f.layer_id = layer_id;
    f.channel = c;
    f.samples = s;
    f.height = shape[1];
    f.width = shape[2];
    f.values.resize(static_cast<std::size_t>(s * plane));
  }
  for (std::int64_t a = 0; a < s; ++a) {
    const auto acts = forward_all(m, tensors, inputs[static_cast<std::size_t>(a)]);
    const auto& v = acts[it->second].values;
    for (std::int64_t c = 0; c < shape[0]; ++c)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(c * plane), plane,
                  maps[static_cast<std::size_t>(c)].values.begin() + static_cast<std::ptrdiff_t>(a * plane));
  }
  return maps;
}

}  // namespace infoprune
