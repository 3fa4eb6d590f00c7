#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "infoprune/error.hpp"

namespace infoprune {

/// One channel's feature maps over s input images, row-major [s, h, w].
struct FeatureMapSample {
  std::string layer_id;
  std::int64_t channel = 0;
  std::int64_t samples = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<double> values;

  std::int64_t map_size() const { return height * width; }
  std::span<const double> image(std::int64_t a) const {
    return {values.data() + static_cast<std::size_t>(a * map_size()), static_cast<std::size_t>(map_size())};
  }
};

namespace detail {

inline void check_sample(const FeatureMapSample& s) {
  require(s.samples >= 2, "feature map diagnostics: s ≥ 2 required");
  require(s.height > 0 && s.width > 0, "feature map diagnostics: empty map");
  require(static_cast<std::int64_t>(s.values.size()) == s.samples * s.map_size(),
          "feature map diagnostics: value count does not match [s,h,w]");
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

}  // namespace detail

/// Median of the pairwise euclidean distances between the s flattened maps;
/// 1 when all maps coincide (any width then gives the same rank-one Gram).
inline double median_kernel_width(const FeatureMapSample& s) {
  detail::check_sample(s);
  std::vector<double> d;
  for (std::int64_t a = 0; a < s.samples; ++a)
    for (std::int64_t b = a + 1; b < s.samples; ++b)
      d.push_back(std::sqrt(detail::squared_distance(s.image(a), s.image(b))));
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  const double med = n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
  return med > 0.0 ? med : 1.0;
}

/// Gaussian Gram matrix exp(-|x_a - x_b|^2 / (2 width^2)) over the maps.
inline Eigen::MatrixXd gaussian_gram(const FeatureMapSample& s, double kernel_width) {
  detail::check_sample(s);
  require(kernel_width > 0.0, "renyi entropy: kernel width must be positive");
  const auto n = s.samples;
  Eigen::MatrixXd k(n, n);
  for (std::int64_t a = 0; a < n; ++a) {
    k(a, a) = 1.0;
    for (std::int64_t b = a + 1; b < n; ++b) {
      const double v =
          std::exp(-detail::squared_distance(s.image(a), s.image(b)) / (2.0 * kernel_width * kernel_width));
      k(a, b) = v;
      k(b, a) = v;
    }
  }
  return k;
}

/// Matrix-based Renyi alpha-entropy, in bits, of a PSD Gram matrix:
/// normalize to unit trace, then (1/(1-alpha)) log2 sum(lambda^alpha).
inline double renyi_entropy_of_gram(const Eigen::MatrixXd& gram, double alpha) {
  require(alpha > 0.0 && alpha != 1.0, "renyi entropy: alpha must be positive and not 1");
  require(gram.rows() == gram.cols() && gram.rows() >= 1, "renyi entropy: Gram matrix must be square");
  const double trace = gram.trace();
  require(trace > 0.0, "renyi entropy: Gram matrix has non-positive trace");
  const Eigen::MatrixXd a = gram / trace;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
  require(eig.info() == Eigen::Success, "renyi entropy: eigendecomposition failed");
  double total = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    const double lambda = eig.eigenvalues()(i);
    require(lambda > -1e-8, "renyi entropy: Gram matrix is not positive semi-definite "
                            "(eigenvalue " + std::to_string(lambda) + "); check the kernel width");
    if (lambda > 0.0) total += std::pow(lambda, alpha);
  }
  const double h = std::log2(total) / (1.0 - alpha);
  return std::clamp(h, 0.0, std::log2(static_cast<double>(gram.rows())));
}

inline double renyi_matrix_entropy(const FeatureMapSample& s, double alpha = 2.0,
                                   std::optional<double> kernel_width = std::nullopt) {
  const double width = kernel_width ? *kernel_width : median_kernel_width(s);
  return renyi_entropy_of_gram(gaussian_gram(s, width), alpha);
}

/// Rank of the per-image-averaged h x w map: singular values above
/// tol * largest.
inline std::int64_t feature_rank(const FeatureMapSample& s, double tol = 1e-6) {
  detail::check_sample(s);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(s.height, s.width);
  for (std::int64_t a = 0; a < s.samples; ++a) {
    auto img = s.image(a);
    for (std::int64_t y = 0; y < s.height; ++y)
      for (std::int64_t x = 0; x < s.width; ++x) mean(y, x) += img[static_cast<std::size_t>(y * s.width + x)];
  }
  mean /= static_cast<double>(s.samples);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mean);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  std::int64_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol * sv(0)) ++rank;
  return rank;
}

/// Pearson correlation coefficient.
inline double correlate(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "correlate: arrays differ in length");
  require(x.size() >= 2, "correlate: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0 && syy > 0.0, "correlate: zero-variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace infoprune
