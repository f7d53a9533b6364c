#ifndef TOKENPOSE_HEATMAP_HPP
#define TOKENPOSE_HEATMAP_HPP

#include <cmath>
#include <iostream>
#include <vector>

#include "tokenpose/ops.hpp"

// Keypoint-token -> heatmap head, ground-truth synthesis, masked MSE and
// coordinate decoding.

namespace tokenpose {

template <typename T>
struct HeatmapSet {
  Tensor<T> maps;  // [N, H, W]

  std::size_t count() const { return maps.dim(0); }
  std::size_t height() const { return maps.dim(1); }
  std::size_t width() const { return maps.dim(2); }
};

enum class DecodeMode { argmax, subpixel };

struct DecodedPose {
  std::vector<double> x, y;   // input-image pixel units
  std::vector<double> score;  // peak heatmap value per keypoint
};

// Single linear map of each keypoint token to an H*W vector, reshaped
// row-major.
template <typename T>
HeatmapSet<T> head_forward(const Tensor<T>& kp_tokens, const Tensor<T>& weight,
                           const Tensor<T>& bias, std::size_t h, std::size_t w) {
  if (kp_tokens.rank() != 2 || weight.rank() != 2 || kp_tokens.dim(1) != weight.dim(0) ||
      weight.dim(1) != h * w)
    throw ShapeMismatch("head_forward shape mismatch: tokens " + shape_str(kp_tokens.shape()) +
                        ", weight " + shape_str(weight.shape()));
  Tensor<T> flat = matmul(kp_tokens, weight);
  if (bias.defined()) flat = add_bias(flat, bias);
  HeatmapSet<T> set;
  set.maps = reshape(flat, {kp_tokens.dim(0), h, w});
  return set;
}

// G(p) = exp(-|p - c|^2 / (2 sigma^2)) on the integer lattice; exactly 1 at c
// when c is integral. Centers outside the map give a (near-)zero map.
template <typename T>
Tensor<T> gaussian_target(double cx, double cy, double sigma, std::size_t h, std::size_t w) {
  if (sigma <= 0.0) throw InvalidArgument("gaussian_target sigma must be > 0");
  std::vector<T> out(h * w);
  double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double dx = static_cast<double>(x) - cx;
      double dy = static_cast<double>(y) - cy;
      out[y * w + x] = static_cast<T>(std::exp(-(dx * dx + dy * dy) * inv));
    }
  return Tensor<T>::from({h, w}, std::move(out));
}

// Mean over visible keypoints of the per-map mean squared error. Invisible
// keypoints contribute nothing and do not enter the denominator.
template <typename T>
Tensor<T> mse_loss(const HeatmapSet<T>& pred, const HeatmapSet<T>& target,
                   const std::vector<int>& visibility) {
  if (pred.maps.shape() != target.maps.shape())
    throw ShapeMismatch("mse_loss shape mismatch: " + shape_str(pred.maps.shape()) + " vs " +
                        shape_str(target.maps.shape()));
  std::size_t n = pred.count(), hw = pred.height() * pred.width();
  if (visibility.size() != n)
    throw ShapeMismatch("mse_loss visibility length " + std::to_string(visibility.size()) +
                        " != keypoint count " + std::to_string(n));
  std::size_t visible = 0;
  std::vector<T> mask(n * hw, T(0));
  for (std::size_t i = 0; i < n; ++i)
    if (visibility[i] > 0) {
      ++visible;
      std::fill(mask.begin() + i * hw, mask.begin() + (i + 1) * hw, T(1));
    }
  if (visible == 0) {
    std::cerr << "[tokenpose] warning: mse_loss with no visible keypoints, loss is 0\n";
    return Tensor<T>::scalar(T(0));
  }
  Tensor<T> diff = sub(pred.maps, target.maps);
  Tensor<T> masked = mul(mul(diff, diff), Tensor<T>::from(pred.maps.shape(), std::move(mask)));
  return scale(sum(masked), static_cast<T>(1.0 / (static_cast<double>(visible) * hw)));
}

namespace detail {

// Row-major argmax; ties keep the lowest index.
template <typename T>
inline void heatmap_peak(const T* map, std::size_t h, std::size_t w, std::size_t& px,
                         std::size_t& py, double& value) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < h * w; ++i)
    if (map[i] > map[best]) best = i;
  py = best / w;
  px = best % w;
  value = static_cast<double>(map[best]);
}

// One Taylor step on the log-heatmap about the peak. Returns false when the
// peak touches the border, the Hessian is not invertible, or the step is
// larger than one pixel (flat or degenerate neighborhoods).
template <typename T>
inline bool taylor_refine(const T* map, std::size_t h, std::size_t w, std::size_t px,
                          std::size_t py, double& outx, double& outy) {
  if (px < 1 || py < 1 || px + 1 >= w || py + 1 >= h) return false;
  auto lg = [&](std::size_t y, std::size_t x) {
    double v = static_cast<double>(map[y * w + x]);
    return std::log(std::max(v, 1e-10));
  };
  double dx = (lg(py, px + 1) - lg(py, px - 1)) * 0.5;
  double dy = (lg(py + 1, px) - lg(py - 1, px)) * 0.5;
  double dxx = lg(py, px + 1) - 2.0 * lg(py, px) + lg(py, px - 1);
  double dyy = lg(py + 1, px) - 2.0 * lg(py, px) + lg(py - 1, px);
  double dxy = (lg(py + 1, px + 1) - lg(py + 1, px - 1) - lg(py - 1, px + 1) +
                lg(py - 1, px - 1)) * 0.25;
  double det = dxx * dyy - dxy * dxy;
  if (std::fabs(det) < 1e-12) return false;
  double offx = -(dyy * dx - dxy * dy) / det;
  double offy = -(-dxy * dx + dxx * dy) / det;
  if (std::fabs(offx) > 1.0 || std::fabs(offy) > 1.0) return false;
  outx = static_cast<double>(px) + offx;
  outy = static_cast<double>(py) + offy;
  return true;
}

}  // namespace detail

// Peak extraction, optionally refined to sub-pixel precision, scaled from
// heatmap to input-image units.
template <typename T>
DecodedPose decode(const HeatmapSet<T>& pred, DecodeMode mode, std::size_t input_h,
                   std::size_t input_w) {
  std::size_t n = pred.count(), h = pred.height(), w = pred.width();
  double sx = static_cast<double>(input_w) / static_cast<double>(w);
  double sy = static_cast<double>(input_h) / static_cast<double>(h);
  DecodedPose pose;
  pose.x.resize(n);
  pose.y.resize(n);
  pose.score.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* map = pred.maps.values().data() + i * h * w;
    std::size_t px, py;
    double value;
    detail::heatmap_peak(map, h, w, px, py, value);
    double fx = static_cast<double>(px), fy = static_cast<double>(py);
    if (mode == DecodeMode::subpixel) detail::taylor_refine(map, h, w, px, py, fx, fy);
    fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    pose.x[i] = fx * sx;
    pose.y[i] = fy * sy;
    pose.score[i] = value;
  }
  return pose;
}

}  // namespace tokenpose

#endif
