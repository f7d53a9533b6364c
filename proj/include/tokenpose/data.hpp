#ifndef TOKENPOSE_DATA_HPP
#define TOKENPOSE_DATA_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tokenpose/config.hpp"
#include "tokenpose/image_io.hpp"

namespace tokenpose {

// Articulated stick figure: joints with canonical coordinates (unit scale,
// y down, roughly [-0.5, 0.5]^2), a tree of limbs, and draw styles.
struct SkeletonTemplate {
  std::string name;
  std::vector<std::string> joint_names;
  std::vector<std::array<double, 2>> rest_pose;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // (parent, child)
  std::vector<std::pair<std::size_t, std::size_t>> symmetry_pairs;
  std::pair<std::size_t, std::size_t> head_edge{0, 0};  // rendered length = PCKh head size
  std::vector<double> joint_intensity;
  double disc_radius = 2.0;
  double limb_radius = 1.2;
  double limb_intensity = 0.35;
  std::vector<double> oks_k;

  std::size_t size() const { return joint_names.size(); }
  void validate() const;  // TemplateInvalid unless edges form a tree etc.

  static SkeletonTemplate coco17();
  static SkeletonTemplate stick8();
  static SkeletonTemplate by_name(const std::string& name);
};

struct PoseSample {
  std::string id;
  std::string file_name;
  std::size_t width = 0, height = 0;
  Image image;  // may be empty until loaded
  std::vector<double> kx, ky;
  std::vector<int> v;  // >0 labeled, 0 unlabeled/occluded
  double bbox_x = 0, bbox_y = 0, bbox_w = 0, bbox_h = 0;
  double head_size = -1.0;

  double scale() const;  // sqrt(bbox area)
  bool loaded() const { return !image.pixels.empty(); }
};

// Deterministic function of (seed, count, template, cfg). Images are 8-bit
// quantized at render time so in-memory and round-tripped datasets match.
std::vector<PoseSample> generate_synthetic(std::uint64_t seed, std::size_t count,
                                           const SkeletonTemplate& tpl, const DataConfig& cfg);

struct Dataset {
  std::vector<PoseSample> samples;
  std::vector<std::string> joint_names;
  std::vector<double> oks_k;
  std::vector<std::pair<std::size_t, std::size_t>> flip_pairs;
  std::string base_dir;

  std::size_t size() const { return samples.size(); }
  // Lazy image access; loads from disk on first touch.
  const Image& image(std::size_t index);
};

// COCO-style keypoint annotations (subset; unknown fields ignored).
Dataset load_annotations(const std::string& path);

// Writes images/<id> files plus annotations.json with coordinates rounded to
// two decimals.
void save_dataset(const std::vector<PoseSample>& samples, const SkeletonTemplate& tpl,
                  const std::string& out_dir);

// Diagonal affine between input-crop coordinates and original image
// coordinates.
struct Affine {
  double sx = 1.0, sy = 1.0, tx = 0.0, ty = 0.0;

  std::pair<double, double> apply(double x, double y) const { return {sx * x + tx, sy * y + ty}; }
  Affine inverse() const { return {1.0 / sx, 1.0 / sy, -tx / sx, -ty / sy}; }
};

struct CropResult {
  Image input;            // (input_h, input_w), bilinear resampled
  Affine input_to_orig;   // maps input coords back to original image coords
  std::vector<double> kx, ky;  // keypoints in input coords
  std::vector<int> v;
};

// Expands the bbox to the model aspect about its center and resamples.
CropResult crop_to_input(const PoseSample& sample, const Image& img, const ModelConfig& cfg);

// Mirror image and keypoints about the vertical axis, swapping symmetric
// joints. Training augmentation; off by default.
void flip_horizontal(Image& img, std::vector<double>& kx,
                     const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                     std::vector<double>& ky, std::vector<int>& v);

}  // namespace tokenpose

#endif
