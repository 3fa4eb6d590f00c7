#pragma once

// Test-only oracles and generators. Nothing here calls into the code paths it
// is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "infoprune/infoprune.hpp"

namespace infoprune::testing {

/// Softmax as p_q = 1 / sum_r exp(sim_r - sim_q), in long double.
inline std::vector<double> oracle_softmax(const std::vector<double>& sim) {
  std::vector<double> p(sim.size());
  for (std::size_t q = 0; q < sim.size(); ++q) {
    long double denom = 0.0L;
    for (double r : sim) denom += std::exp(static_cast<long double>(r) - static_cast<long double>(sim[q]));
    p[q] = static_cast<double>(1.0L / denom);
  }
  return p;
}

/// -sum p ln p / ln 2, in long double.
inline double oracle_entropy(const std::vector<double>& p) {
  long double h = 0.0L;
  for (double v : p)
    if (v > 0.0) h -= static_cast<long double>(v) * std::log(static_cast<long double>(v));
  return static_cast<double>(h / std::log(2.0L));
}

/// Sum over every ordered pair (q, r != q) of the flattened euclidean distance.
inline std::vector<double> oracle_sim_exact(const std::vector<float>& w, int kernels, int ksize) {
  std::vector<double> sim(static_cast<std::size_t>(kernels), 0.0);
  for (int q = 0; q < kernels; ++q) {
    long double acc = 0.0L;
    for (int r = 0; r < kernels; ++r) {
      if (r == q) continue;
      long double d2 = 0.0L;
      for (int e = 0; e < ksize; ++e) {
        const long double d = static_cast<long double>(w[static_cast<std::size_t>(q * ksize + e)]) -
                              static_cast<long double>(w[static_cast<std::size_t>(r * ksize + e)]);
        d2 += d * d;
      }
      acc += std::sqrt(d2);
    }
    sim[static_cast<std::size_t>(q)] = static_cast<double>(acc);
  }
  return sim;
}

/// Entropy in bits of softmax(sim), entirely in long double.
inline double oracle_softmax_entropy(const std::vector<long double>& sim) {
  long double h = 0.0L;
  for (auto s : sim) {
    long double denom = 0.0L;
    for (auto r : sim) denom += std::exp(r - s);
    const long double p = 1.0L / denom;
    h -= p * std::log(p);
  }
  return static_cast<double>(h / std::log(2.0L));
}

/// The same, starting from the raw kernel values of one filter.
inline double oracle_sim_entropy(const std::vector<float>& w, int kernels, int ksize) {
  std::vector<long double> sim(static_cast<std::size_t>(kernels), 0.0L);
  for (int q = 0; q < kernels; ++q)
    for (int r = 0; r < kernels; ++r) {
      long double d2 = 0.0L;
      for (int e = 0; e < ksize; ++e) {
        const long double d = static_cast<long double>(w[static_cast<std::size_t>(q * ksize + e)]) -
                              static_cast<long double>(w[static_cast<std::size_t>(r * ksize + e)]);
        d2 += d * d;
      }
      sim[static_cast<std::size_t>(q)] += std::sqrt(d2);
    }
  return oracle_softmax_entropy(sim);
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix (row-major n x n).
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n) {
  auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i * n + j)]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(at(p, q)) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = at(i, i);
  return ev;
}

/// Renyi alpha-entropy of flattened samples with a Gaussian kernel, via the
/// Jacobi solver. Rows of `x` are samples.
inline double oracle_renyi(const std::vector<std::vector<double>>& x, double alpha, double width) {
  const int n = static_cast<int>(x.size());
  std::vector<double> k(static_cast<std::size_t>(n * n));
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      double d2 = 0.0;
      for (std::size_t e = 0; e < x[0].size(); ++e) d2 += (x[a][e] - x[b][e]) * (x[a][e] - x[b][e]);
      k[static_cast<std::size_t>(a * n + b)] = std::exp(-d2 / (2.0 * width * width));
    }
  double tr = 0.0;
  for (int a = 0; a < n; ++a) tr += k[static_cast<std::size_t>(a * n + a)];
  for (auto& v : k) v /= tr;
  double total = 0.0;
  for (double l : jacobi_eigenvalues(k, n))
    if (l > 0.0) total += std::pow(l, alpha);
  return std::log2(total) / (1.0 - alpha);
}

/// Pearson r by the raw-moment formula.
inline double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double n = static_cast<long double>(x.size()), sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
  }
  return static_cast<double>((n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy)));
}

/// ceil((10 - tenths) * n / 10) in integers.
inline std::int64_t oracle_keep_count(int tenths, std::int64_t n) { return ((10 - tenths) * n + 9) / 10; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("infoprune_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) { return detail::read_file(p); }

inline std::vector<float> random_floats(std::mt19937_64& rng, std::size_t n, float scale = 1.0f) {
  std::normal_distribution<float> normal(0.0f, scale);
  std::vector<float> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

inline Activation random_input(const Shape& shape, std::mt19937_64& rng) {
  Activation a(shape);
  a.values = random_floats(rng, a.values.size());
  return a;
}

/// Random chain: 1-3 conv blocks (optional BN / ReLU / pooling), a flatten
/// and one or two linear layers.
inline ModelManifest random_chain(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 1000);
  const std::int64_t size = 6 + pick(rng) % 5;
  ManifestBuilder b({1 + pick(rng) % 3, size, size});
  const int convs = 1 + pick(rng) % 3;
  for (int i = 0; i < convs; ++i) {
    const auto id = "conv" + std::to_string(i + 1);
    const std::int64_t k = (b.shape()[1] >= 3 && pick(rng) % 2) ? 3 : 1;
    const std::int64_t stride = (b.shape()[1] >= 6 && pick(rng) % 3 == 0) ? 2 : 1;
    b.conv(id, 4 + pick(rng) % 9, k, stride, k == 3 ? pick(rng) % 2 : 0, pick(rng) % 2);
    if (pick(rng) % 2) b.bn(id + "_bn");
    if (pick(rng) % 4) b.relu(id + "_relu");
    if (b.shape()[1] >= 4 && pick(rng) % 3 == 0) b.pool(id + "_pool", pick(rng) % 2, 2, 2);
  }
  b.flatten("flatten");
  if (pick(rng) % 2) {
    b.linear("fc1", 6 + pick(rng) % 8);
    b.relu("fc1_relu");
  }
  b.linear("fc", 5);
  return b.build();
}

/// Stem + two residual blocks (identity, then downsampling with a 1x1 conv
/// shortcut) + global pool + flatten + linear, with coupling groups.
inline ModelManifest random_residual(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 1000);
  const std::int64_t c1 = 4 + pick(rng) % 5, c2 = 6 + pick(rng) % 5;
  ManifestBuilder b({3, 8, 8});
  b.conv("stem", c1, 3, 1, 1);
  b.bn("stem_bn");
  auto x = b.relu("stem_relu");
  b.conv("b1_conv1", c1, 3, 1, 1, false, true, x);
  b.bn("b1_bn1");
  b.relu("b1_relu1");
  b.conv("b1_conv2", c1, 3, 1, 1);
  auto main = b.bn("b1_bn2");
  b.add("b1_add", main, x);
  x = b.relu("b1_out");
  b.couple({"stem", "b1_conv2"});

  b.conv("b2_conv1", c2, 3, 2, 1, false, true, x);
  b.bn("b2_bn1");
  b.relu("b2_relu1");
  b.conv("b2_conv2", c2, 3, 1, 1);
  main = b.bn("b2_bn2");
  b.conv("b2_down", c2, 1, 2, 0, false, true, x);
  auto shortcut = b.bn("b2_down_bn");
  b.add("b2_add", main, shortcut);
  b.relu("b2_out");
  b.couple({"b2_conv2", "b2_down"});
  b.pool("gap", false, 4, 4);
  b.flatten("flatten");
  b.linear("fc", 5);
  return b.build();
}

/// Score table with seeded random combined scores for every prunable layer;
/// stands in for real scoring where only the plan's shape matters.
inline ScoreTable synthetic_scores(const ModelManifest& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScoreTable t;
  for (const auto& l : m.layers) {
    if (!l.prunable) continue;
    LayerScores s;
    s.layer_id = l.id;
    s.combined.resize(static_cast<std::size_t>(l.out_units()));
    for (auto& v : s.combined) v = u(rng);
    t.layers.push_back(std::move(s));
  }
  return t;
}

inline PruningPlan synthetic_plan(const ModelManifest& m, const TensorMap& t, double rate,
                                  std::uint64_t seed = 0) {
  PruningRates rates;
  rates.global = rate;
  return build_plan(m, synthetic_scores(m, seed), rates, {SelectionStrategy::least_important, 0,
                                                           archive_fingerprint(m, t)});
}

inline PruningPlan plan_for(const ModelManifest& m, const TensorMap& t, double rate,
                            SelectionStrategy strategy = SelectionStrategy::least_important,
                            std::uint64_t seed = 0, const ScoringConfig& cfg = {}) {
  const auto scores = score_model(m, t, cfg);
  PruningRates rates;
  rates.global = rate;
  return build_plan(m, scores, rates, {strategy, seed, archive_fingerprint(m, t)});
}

}  // namespace infoprune::testing
