#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "infoprune/manifest.hpp"

namespace infoprune {

/// Appends layers to a manifest while tracking the current output shape.
class ManifestBuilder {
 public:
  explicit ManifestBuilder(Shape input_shape) : shape_(input_shape) { m_.input_shape = std::move(input_shape); }

  const std::string& last() const { return last_; }
  const Shape& shape() const { return shape_; }

  std::string conv(const std::string& id, std::int64_t out, std::int64_t kernel, std::int64_t stride = 1,
                   std::int64_t padding = 0, bool bias = false, bool prunable = true,
                   std::string input = {}) {
    Conv2dParams p{out, shape_of(input)[0], kernel, stride, padding, bias, id + ".weight",
                   bias ? id + ".bias" : ""};
    const auto& in = shape_of(input);
    Shape s{out, (in[1] + 2 * padding - kernel) / stride + 1, (in[2] + 2 * padding - kernel) / stride + 1};
    return push({id, LayerKind::conv2d, {ref(input)}, p, prunable}, s);
  }

  std::string bn(const std::string& id, std::string input = {}) {
    const auto c = shape_of(input)[0];
    BatchNormParams p{c, id + ".gamma", id + ".beta", id + ".mean", id + ".var", 1e-5};
    return push({id, LayerKind::batchnorm2d, {ref(input)}, p, false}, shape_of(input));
  }

  std::string relu(const std::string& id, std::string input = {}) {
    return push({id, LayerKind::relu, {ref(input)}, NoParams{}, false}, shape_of(input));
  }

  std::string pool(const std::string& id, bool is_max, std::int64_t kernel, std::int64_t stride,
                   std::string input = {}) {
    const auto& in = shape_of(input);
    Shape s{in[0], (in[1] - kernel) / stride + 1, (in[2] - kernel) / stride + 1};
    return push({id, is_max ? LayerKind::maxpool2d : LayerKind::avgpool2d, {ref(input)},
                 PoolParams{kernel, stride}, false},
                s);
  }

  std::string flatten(const std::string& id, std::string input = {}) {
    const auto& in = shape_of(input);
    return push({id, LayerKind::flatten, {ref(input)}, FlattenParams{in[1], in[2]}, false},
                Shape{in[0] * in[1] * in[2]});
  }

  std::string linear(const std::string& id, std::int64_t out, bool bias = true, bool prunable = true,
                     std::string input = {}) {
    LinearParams p{out, shape_of(input)[0], bias, id + ".weight", bias ? id + ".bias" : ""};
    return push({id, LayerKind::linear, {ref(input)}, p, prunable}, Shape{out});
  }

  std::string add(const std::string& id, const std::string& a, const std::string& b) {
    return push({id, LayerKind::add, {a, b}, NoParams{}, false}, shape_of(a));
  }

  void couple(std::vector<std::string> ids) { m_.coupling_groups.push_back({std::move(ids)}); }

  ModelManifest build() const { return m_; }

 private:
  std::string ref(const std::string& input) const {
    if (!input.empty()) return input;
    return last_.empty() ? std::string(kInputId) : last_;
  }
  const Shape& shape_of(const std::string& input) const {
    const auto r = ref(input);
    if (r == kInputId) return m_.input_shape;
    return shapes_.at(r);
  }
  std::string push(LayerSpec l, Shape s) {
    last_ = l.id;
    shapes_[l.id] = std::move(s);
    shape_ = shapes_[l.id];
    m_.layers.push_back(std::move(l));
    return last_;
  }

  ModelManifest m_;
  std::map<std::string, Shape> shapes_;
  std::string last_;
  Shape shape_;
};

/// VGG-16 for 32x32 inputs: 13 3x3 conv+BN+ReLU layers, five max pools,
/// then a 512-512-classes head.
inline ModelManifest vgg16_cifar(std::int64_t classes = 10) {
  const std::vector<std::int64_t> cfg = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0,
                                         512, 512, 512, 0, 512, 512, 512, 0};
  ManifestBuilder b({3, 32, 32});
  int conv = 0, pool = 0;
  for (auto c : cfg) {
    if (c == 0) {
      b.pool("pool" + std::to_string(++pool), true, 2, 2);
      continue;
    }
    const auto id = "conv" + std::to_string(++conv);
    b.conv(id, c, 3, 1, 1, true);
    b.bn(id + "_bn");
    b.relu(id + "_relu");
  }
  b.flatten("flatten");
  b.linear("fc1", 512);
  b.relu("fc1_relu");
  b.linear("fc2", classes);
  return b.build();
}

/// CIFAR ResNet of depth 6n+2 (n basic blocks per stage, widths 16/32/64).
/// Downsampling shortcuts are 1x1 stride-2 conv+BN. Every conv feeding a
/// stage's residual adds joins that stage's coupling group.
inline ModelManifest resnet_cifar(int depth = 56, std::int64_t classes = 10) {
  require((depth - 2) % 6 == 0 && depth >= 8, "resnet_cifar: depth must be 6n+2");
  const int blocks = (depth - 2) / 6;
  ManifestBuilder b({3, 32, 32});
  b.conv("stem", 16, 3, 1, 1);
  b.bn("stem_bn");
  std::string x = b.relu("stem_relu");
  std::vector<std::string> group = {"stem"};
  const std::int64_t widths[3] = {16, 32, 64};
  for (int s = 0; s < 3; ++s) {
    for (int k = 0; k < blocks; ++k) {
      const auto p = "s" + std::to_string(s + 1) + "b" + std::to_string(k + 1);
      const bool down = s > 0 && k == 0;
      if (down) {
        b.couple(group);
        group.clear();
      }
      b.conv(p + "_conv1", widths[s], 3, down ? 2 : 1, 1, false, true, x);
      b.bn(p + "_bn1");
      b.relu(p + "_relu1");
      b.conv(p + "_conv2", widths[s], 3, 1, 1);
      const auto main = b.bn(p + "_bn2");
      group.push_back(p + "_conv2");
      std::string shortcut = x;
      if (down) {
        b.conv(p + "_down", widths[s], 1, 2, 0, false, true, x);
        shortcut = b.bn(p + "_down_bn");
        group.push_back(p + "_down");
      }
      b.add(p + "_add", main, shortcut);
      x = b.relu(p + "_out");
    }
  }
  b.couple(group);
  b.pool("gap", false, 8, 8, x);
  b.flatten("flatten");
  b.linear("fc", classes);
  return b.build();
}

/// Fills every tensor the manifest references with seeded random values:
/// He-scaled normal weights, small biases, BN statistics with positive
/// variance.
inline TensorMap random_tensors(const ModelManifest& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_real_distribution<float> uniform(0.5f, 1.5f);
  TensorMap t;
  auto fill = [&](const std::string& name, const Shape& shape, auto gen) {
    Tensor x(name, shape);
    for (auto& v : x.data) v = gen();
    t.emplace(name, std::move(x));
  };
  for (const auto& l : m.layers) {
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::linear: {
        const auto tensors = expected_tensors(l);
        const auto& ws = tensors[0].second;
        const auto fan_in = shape_product(ws) / ws[0];
        const float scale = std::sqrt(2.0f / static_cast<float>(fan_in));
        fill(tensors[0].first, ws, [&] { return normal(rng) * scale; });
        if (tensors.size() > 1) fill(tensors[1].first, tensors[1].second, [&] { return 0.1f * normal(rng); });
        break;
      }
      case LayerKind::batchnorm2d: {
        const auto& p = l.bn();
        fill(p.gamma, {p.channels}, [&] { return uniform(rng); });
        fill(p.beta, {p.channels}, [&] { return 0.1f * normal(rng); });
        fill(p.mean, {p.channels}, [&] { return 0.1f * normal(rng); });
        fill(p.var, {p.channels}, [&] { return uniform(rng); });
        break;
      }
      default:
        break;
    }
  }
  return t;
}

/// Small chain: conv8-bn-relu-conv4-relu-flatten-fc10 on 3x6x6 inputs.
inline ModelManifest toy_chain() {
  ManifestBuilder b({3, 6, 6});
  b.conv("conv1", 8, 3, 1, 1, true);
  b.bn("bn1");
  b.relu("relu1");
  b.conv("conv2", 4, 3, 1, 0, true);
  b.relu("relu2");
  b.flatten("flatten");
  b.linear("fc", 10);
  return b.build();
}

}  // namespace infoprune
