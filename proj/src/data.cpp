#include "tokenpose/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "tokenpose/errors.hpp"
#include "tokenpose/metrics.hpp"
#include "tokenpose/rng.hpp"

namespace fs = std::filesystem;

namespace tokenpose {

using nlohmann::json;

void SkeletonTemplate::validate() const {
  std::size_t n = joint_names.size();
  if (n == 0) throw TemplateInvalid("template has no joints");
  if (rest_pose.size() != n || joint_intensity.size() != n || oks_k.size() != n)
    throw TemplateInvalid("template field lengths disagree");
  if (edges.size() + 1 != n)
    throw TemplateInvalid("template edges do not form a tree (need n-1 edges)");
  // every child reached exactly once, no cycles
  std::vector<int> indeg(n, 0);
  for (auto [p, c] : edges) {
    if (p >= n || c >= n) throw TemplateInvalid("template edge index out of range");
    ++indeg[c];
  }
  std::size_t roots = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (indeg[i] > 1) throw TemplateInvalid("template joint has two parents");
    if (indeg[i] == 0) ++roots;
  }
  if (roots != 1) throw TemplateInvalid("template must have exactly one root");
  std::vector<char> seen(n, 0);
  for (auto [a, b] : symmetry_pairs) {
    if (a >= n || b >= n || a == b) throw TemplateInvalid("bad symmetry pair");
    if (seen[a] || seen[b]) throw TemplateInvalid("symmetry pairs must be disjoint");
    seen[a] = seen[b] = 1;
  }
  if (head_edge.first >= n || head_edge.second >= n || head_edge.first == head_edge.second)
    throw TemplateInvalid("bad head edge");
}

SkeletonTemplate SkeletonTemplate::coco17() {
  SkeletonTemplate t;
  t.name = "coco17";
  t.joint_names = {"nose",        "left_eye",   "right_eye",  "left_ear",    "right_ear",
                   "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
                   "left_wrist",  "right_wrist", "left_hip",   "right_hip",   "left_knee",
                   "right_knee",  "left_ankle", "right_ankle"};
  t.rest_pose = {{0.00, -0.40},  // nose
                 {-0.05, -0.44}, {0.05, -0.44},   // eyes
                 {-0.11, -0.40}, {0.11, -0.40},   // ears
                 {-0.14, -0.26}, {0.14, -0.26},   // shoulders
                 {-0.23, -0.08}, {0.23, -0.08},   // elbows
                 {-0.27, 0.08},  {0.27, 0.08},    // wrists
                 {-0.09, 0.06},  {0.09, 0.06},    // hips
                 {-0.11, 0.28},  {0.11, 0.28},    // knees
                 {-0.12, 0.48},  {0.12, 0.48}};   // ankles
  t.edges = {{0, 1}, {1, 3}, {0, 2}, {2, 4}, {0, 5}, {0, 6}, {5, 7}, {7, 9},
             {6, 8}, {8, 10}, {5, 11}, {6, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16}};
  t.symmetry_pairs = {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}};
  t.head_edge = {3, 4};  // ear-to-ear span stands in for the MPII head segment
  t.joint_intensity.resize(17);
  for (std::size_t i = 0; i < 17; ++i) t.joint_intensity[i] = 0.55 + 0.025 * static_cast<double>(i);
  t.oks_k = coco17_oks_k();
  t.validate();
  return t;
}

SkeletonTemplate SkeletonTemplate::stick8() {
  SkeletonTemplate t;
  t.name = "stick8";
  t.joint_names = {"head", "neck", "chest", "pelvis", "left_hand", "right_hand", "left_foot",
                   "right_foot"};
  t.rest_pose = {{0.00, -0.46}, {0.00, -0.24}, {0.00, -0.05}, {0.00, 0.16},
                 {-0.34, 0.02}, {0.34, 0.02},  {-0.16, 0.48}, {0.16, 0.48}};
  t.edges = {{1, 0}, {2, 1}, {2, 3}, {2, 4}, {2, 5}, {3, 6}, {3, 7}};
  t.symmetry_pairs = {{4, 5}, {6, 7}};
  t.head_edge = {1, 0};  // neck -> head
  t.joint_intensity = {0.95, 0.60, 0.65, 0.70, 0.80, 0.85, 0.75, 0.90};
  t.oks_k.assign(8, default_oks_k());
  t.validate();
  return t;
}

SkeletonTemplate SkeletonTemplate::by_name(const std::string& name) {
  if (name == "coco17") return coco17();
  if (name == "stick8") return stick8();
  throw InvalidArgument("unknown skeleton template \"" + name + "\"");
}

double PoseSample::scale() const {
  double area = bbox_w * bbox_h;
  return area > 0.0 ? std::sqrt(area) : 0.0;
}

namespace {

// max-blend an anti-aliased disc at (cx, cy)
void draw_disc(std::vector<float>& lum, std::size_t h, std::size_t w, double cx, double cy,
               double radius, double intensity) {
  long x0 = std::max(0L, static_cast<long>(std::floor(cx - radius - 1)));
  long x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(cx + radius + 1)));
  long y0 = std::max(0L, static_cast<long>(std::floor(cy - radius - 1)));
  long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(cy + radius + 1)));
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      float& px = lum[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
      px = std::max(px, static_cast<float>(intensity * cover));
    }
}

// max-blend an anti-aliased capsule from a to b
void draw_segment(std::vector<float>& lum, std::size_t h, std::size_t w, double ax, double ay,
                  double bx, double by, double radius, double intensity) {
  double len2 = (bx - ax) * (bx - ax) + (by - ay) * (by - ay);
  long x0 = std::max(0L, static_cast<long>(std::floor(std::min(ax, bx) - radius - 1)));
  long x1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(std::max(ax, bx) + radius + 1)));
  long y0 = std::max(0L, static_cast<long>(std::floor(std::min(ay, by) - radius - 1)));
  long y1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(std::max(ay, by) + radius + 1)));
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      double px = static_cast<double>(x), py = static_cast<double>(y);
      double t = len2 > 0.0 ? ((px - ax) * (bx - ax) + (py - ay) * (by - ay)) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      double d = std::hypot(px - (ax + t * (bx - ax)), py - (ay + t * (by - ay)));
      double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      float& pix = lum[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
      pix = std::max(pix, static_cast<float>(intensity * cover));
    }
}

}  // namespace

std::vector<PoseSample> generate_synthetic(std::uint64_t seed, std::size_t count,
                                           const SkeletonTemplate& tpl, const DataConfig& cfg) {
  if (count < 1) throw InvalidArgument("generate_synthetic count must be >= 1");
  tpl.validate();
  cfg.validate();
  std::size_t n = tpl.size();
  std::size_t h = cfg.img_h, w = cfg.img_w;
  double base = 0.52 * static_cast<double>(std::min(h, w));
  double margin = tpl.disc_radius + 2.0;

  std::vector<PoseSample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, i));
    double scale = rng.uniform(0.7, 1.3);
    double theta = rng.uniform(-M_PI / 6.0, M_PI / 6.0);
    double ct = std::cos(theta), st = std::sin(theta);

    std::vector<double> jx(n), jy(n);
    double minx = 1e30, maxx = -1e30, miny = 1e30, maxy = -1e30;
    for (std::size_t j = 0; j < n; ++j) {
      double ux = tpl.rest_pose[j][0], uy = tpl.rest_pose[j][1];
      jx[j] = (ct * ux - st * uy) * scale * base;
      jy[j] = (st * ux + ct * uy) * scale * base;
      minx = std::min(minx, jx[j]);
      maxx = std::max(maxx, jx[j]);
      miny = std::min(miny, jy[j]);
      maxy = std::max(maxy, jy[j]);
    }
    // translation keeping the whole figure (plus margin) in frame
    double cx_lo = margin - minx, cx_hi = static_cast<double>(w) - 1.0 - margin - maxx;
    double cy_lo = margin - miny, cy_hi = static_cast<double>(h) - 1.0 - margin - maxy;
    double cx = cx_lo < cx_hi ? rng.uniform(cx_lo, cx_hi) : 0.5 * (cx_lo + cx_hi);
    double cy = cy_lo < cy_hi ? rng.uniform(cy_lo, cy_hi) : 0.5 * (cy_lo + cy_hi);
    for (std::size_t j = 0; j < n; ++j) {
      jx[j] += cx;
      jy[j] += cy;
    }

    std::vector<float> lum(h * w, 0.0f);
    for (auto [p, c] : tpl.edges)
      draw_segment(lum, h, w, jx[p], jy[p], jx[c], jy[c], tpl.limb_radius, tpl.limb_intensity);
    for (std::size_t j = 0; j < n; ++j)
      draw_disc(lum, h, w, jx[j], jy[j], tpl.disc_radius, tpl.joint_intensity[j]);

    std::vector<int> vis(n, 2);
    if (rng.uniform() < cfg.occlusion_prob) {
      // rectangle over at most 3 joints; a few placement attempts
      for (int attempt = 0; attempt < 8; ++attempt) {
        double rw = rng.uniform(0.12, 0.30) * (maxx - minx);
        double rh = rng.uniform(0.12, 0.30) * (maxy - miny);
        double rx = rng.uniform(minx + cx, maxx + cx - rw);
        double ry = rng.uniform(miny + cy, maxy + cy - rh);
        std::vector<std::size_t> covered;
        for (std::size_t j = 0; j < n; ++j)
          if (jx[j] >= rx && jx[j] <= rx + rw && jy[j] >= ry && jy[j] <= ry + rh)
            covered.push_back(j);
        if (covered.empty() || covered.size() > 3) continue;
        long px0 = std::max(0L, static_cast<long>(std::floor(rx)));
        long px1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(rx + rw)));
        long py0 = std::max(0L, static_cast<long>(std::floor(ry)));
        long py1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(ry + rh)));
        for (long y = py0; y <= py1; ++y)
          for (long x = px0; x <= px1; ++x)
            lum[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = 0.08f;
        for (std::size_t j : covered) vis[j] = 0;
        break;
      }
    }

    // quantize to the 8-bit grid the files use
    for (float& v : lum) v = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;

    PoseSample s;
    s.id = "synth_" + std::to_string(seed) + "_" + std::to_string(i);
    s.file_name = "images/" + s.id + (cfg.channels == 1 ? ".pgm" : ".ppm");
    s.width = w;
    s.height = h;
    s.image.channels = cfg.channels;
    s.image.height = h;
    s.image.width = w;
    if (cfg.channels == 1) {
      s.image.pixels = lum;
    } else {
      s.image.pixels.resize(3 * h * w);
      for (std::size_t c = 0; c < 3; ++c)
        std::copy(lum.begin(), lum.end(), s.image.pixels.begin() + c * h * w);
    }
    s.kx = jx;
    s.ky = jy;
    s.v = vis;
    double bx0 = std::max(0.0, minx + cx - margin);
    double by0 = std::max(0.0, miny + cy - margin);
    double bx1 = std::min(static_cast<double>(w) - 1.0, maxx + cx + margin);
    double by1 = std::min(static_cast<double>(h) - 1.0, maxy + cy + margin);
    s.bbox_x = bx0;
    s.bbox_y = by0;
    s.bbox_w = bx1 - bx0;
    s.bbox_h = by1 - by0;
    s.head_size = std::hypot(jx[tpl.head_edge.first] - jx[tpl.head_edge.second],
                             jy[tpl.head_edge.first] - jy[tpl.head_edge.second]);
    samples.push_back(std::move(s));
  }
  return samples;
}

const Image& Dataset::image(std::size_t index) {
  PoseSample& s = samples.at(index);
  if (!s.loaded()) {
    fs::path p = fs::path(base_dir) / s.file_name;
    s.image = read_image(p.string());
  }
  return s.image;
}

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string id_to_string(const json& j, const std::string& path) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  if (j.is_number()) return std::to_string(j.get<double>());
  throw SchemaError(path + ": id must be a string or number");
}

}  // namespace

Dataset load_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }

  Dataset ds;
  ds.base_dir = fs::path(path).parent_path().string();

  std::size_t n_joints = 0;
  if (j.contains("categories") && j.at("categories").is_array() && !j.at("categories").empty()) {
    const json& cat = j.at("categories").at(0);
    if (cat.contains("keypoints")) {
      for (const auto& name : cat.at("keypoints")) ds.joint_names.push_back(name.get<std::string>());
      n_joints = ds.joint_names.size();
    }
    if (cat.contains("oks_k")) {
      for (const auto& v : cat.at("oks_k")) ds.oks_k.push_back(v.get<double>());
    }
    if (cat.contains("flip_pairs")) {
      for (const auto& p : cat.at("flip_pairs"))
        ds.flip_pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
    }
  }

  struct ImageMeta {
    std::string file_name;
    std::size_t width = 0, height = 0;
  };
  std::unordered_map<std::string, ImageMeta> images;
  if (!j.contains("images") || !j.at("images").is_array())
    throw SchemaError("images: missing or not an array");
  {
    std::size_t idx = 0;
    for (const auto& im : j.at("images")) {
      std::string p = "images[" + std::to_string(idx) + "]";
      if (!im.contains("id")) throw SchemaError(p + ".id: missing");
      if (!im.contains("file_name")) throw SchemaError(p + ".file_name: missing");
      ImageMeta meta;
      meta.file_name = im.at("file_name").get<std::string>();
      if (im.contains("width")) meta.width = im.at("width").get<std::size_t>();
      if (im.contains("height")) meta.height = im.at("height").get<std::size_t>();
      images[id_to_string(im.at("id"), p)] = meta;
      ++idx;
    }
  }

  if (!j.contains("annotations") || !j.at("annotations").is_array())
    throw SchemaError("annotations: missing or not an array");
  std::size_t idx = 0;
  for (const auto& an : j.at("annotations")) {
    std::string p = "annotations[" + std::to_string(idx) + "]";
    if (!an.contains("image_id")) throw SchemaError(p + ".image_id: missing");
    if (!an.contains("keypoints")) throw SchemaError(p + ".keypoints: missing");
    if (!an.contains("bbox")) throw SchemaError(p + ".bbox: missing");
    std::string image_id = id_to_string(an.at("image_id"), p);
    auto img_it = images.find(image_id);
    if (img_it == images.end())
      throw SchemaError(p + ".image_id: no such image \"" + image_id + "\"");

    const json& kp = an.at("keypoints");
    if (!kp.is_array()) throw SchemaError(p + ".keypoints: not an array");
    if (n_joints == 0) {
      if (kp.size() % 3 != 0) throw SchemaError(p + ".keypoints: length not a multiple of 3");
      n_joints = kp.size() / 3;
    }
    if (kp.size() != 3 * n_joints)
      throw SchemaError(p + ".keypoints: expected " + std::to_string(3 * n_joints) +
                        " values, got " + std::to_string(kp.size()));

    PoseSample s;
    s.id = an.contains("id") ? id_to_string(an.at("id"), p) : image_id;
    s.file_name = img_it->second.file_name;
    s.width = img_it->second.width;
    s.height = img_it->second.height;
    for (std::size_t i = 0; i < n_joints; ++i) {
      try {
        s.kx.push_back(kp.at(3 * i).get<double>());
        s.ky.push_back(kp.at(3 * i + 1).get<double>());
        s.v.push_back(static_cast<int>(kp.at(3 * i + 2).get<double>()));
      } catch (const json::exception& e) {
        throw SchemaError(p + ".keypoints[" + std::to_string(3 * i) + "]: " + e.what());
      }
    }
    const json& bb = an.at("bbox");
    if (!bb.is_array() || bb.size() != 4) throw SchemaError(p + ".bbox: expected [x,y,w,h]");
    try {
      s.bbox_x = bb.at(0).get<double>();
      s.bbox_y = bb.at(1).get<double>();
      s.bbox_w = bb.at(2).get<double>();
      s.bbox_h = bb.at(3).get<double>();
    } catch (const json::exception& e) {
      throw SchemaError(p + ".bbox: " + e.what());
    }
    if (an.contains("head_size")) s.head_size = an.at("head_size").get<double>();
    ds.samples.push_back(std::move(s));
    ++idx;
  }

  if (ds.oks_k.empty()) {
    // shipped defaults: COCO constants when the joint list matches, flat otherwise
    if (n_joints == 17)
      ds.oks_k = coco17_oks_k();
    else
      ds.oks_k.assign(n_joints, default_oks_k());
  }
  if (ds.joint_names.empty())
    for (std::size_t i = 0; i < n_joints; ++i) ds.joint_names.push_back("joint_" + std::to_string(i));
  return ds;
}

void save_dataset(const std::vector<PoseSample>& samples, const SkeletonTemplate& tpl,
                  const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "images");
  json images = json::array();
  json annotations = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PoseSample& s = samples[i];
    write_image((fs::path(out_dir) / s.file_name).string(), s.image);
    images.push_back({{"id", s.id},
                      {"file_name", s.file_name},
                      {"width", s.width},
                      {"height", s.height}});
    json kp = json::array();
    for (std::size_t jn = 0; jn < s.kx.size(); ++jn) {
      kp.push_back(round2(s.kx[jn]));
      kp.push_back(round2(s.ky[jn]));
      kp.push_back(s.v[jn]);
    }
    json an = {{"id", s.id + "_a"},
               {"image_id", s.id},
               {"keypoints", kp},
               {"bbox", {round2(s.bbox_x), round2(s.bbox_y), round2(s.bbox_w), round2(s.bbox_h)}}};
    if (s.head_size > 0.0) an["head_size"] = round2(s.head_size);
    annotations.push_back(an);
  }
  json skeleton = json::array();
  for (auto [p, c] : tpl.edges) skeleton.push_back({p, c});
  json flip = json::array();
  for (auto [a, b] : tpl.symmetry_pairs) flip.push_back({a, b});
  json root = {{"images", images},
               {"annotations", annotations},
               {"categories", json::array({{{"id", 1},
                                            {"name", tpl.name},
                                            {"keypoints", tpl.joint_names},
                                            {"skeleton", skeleton},
                                            {"oks_k", tpl.oks_k},
                                            {"flip_pairs", flip}}})}};
  std::ofstream out(fs::path(out_dir) / "annotations.json");
  if (!out) throw IoError("cannot write annotations under " + out_dir);
  out << root.dump(1) << "\n";
}

CropResult crop_to_input(const PoseSample& sample, const Image& img, const ModelConfig& cfg) {
  if (sample.bbox_w <= 0.0 || sample.bbox_h <= 0.0)
    throw DegenerateBox("crop_to_input: bbox " + std::to_string(sample.bbox_w) + "x" +
                        std::to_string(sample.bbox_h));
  double target_aspect = static_cast<double>(cfg.input_w) / static_cast<double>(cfg.input_h);
  double cx = sample.bbox_x + sample.bbox_w / 2.0;
  double cy = sample.bbox_y + sample.bbox_h / 2.0;
  double crop_w = sample.bbox_w, crop_h = sample.bbox_h;
  if (crop_w / crop_h > target_aspect)
    crop_h = crop_w / target_aspect;
  else
    crop_w = crop_h * target_aspect;
  double x0 = cx - crop_w / 2.0;
  double y0 = cy - crop_h / 2.0;

  CropResult res;
  res.input_to_orig = {crop_w / static_cast<double>(cfg.input_w),
                       crop_h / static_cast<double>(cfg.input_h), x0, y0};
  Affine inv = res.input_to_orig.inverse();

  res.input.channels = img.channels;
  res.input.height = cfg.input_h;
  res.input.width = cfg.input_w;
  res.input.pixels.assign(img.channels * cfg.input_h * cfg.input_w, 0.0f);
  auto sample_bilinear = [&](std::size_t c, double x, double y) -> float {
    x = std::clamp(x, 0.0, static_cast<double>(img.width) - 1.0);
    y = std::clamp(y, 0.0, static_cast<double>(img.height) - 1.0);
    std::size_t x0i = static_cast<std::size_t>(x), y0i = static_cast<std::size_t>(y);
    std::size_t x1i = std::min(x0i + 1, img.width - 1), y1i = std::min(y0i + 1, img.height - 1);
    double fx = x - static_cast<double>(x0i), fy = y - static_cast<double>(y0i);
    double v00 = img.at(c, y0i, x0i), v01 = img.at(c, y0i, x1i);
    double v10 = img.at(c, y1i, x0i), v11 = img.at(c, y1i, x1i);
    return static_cast<float>((v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                              (v10 * (1 - fx) + v11 * fx) * fy);
  };
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < cfg.input_h; ++y)
      for (std::size_t x = 0; x < cfg.input_w; ++x) {
        auto [ox, oy] = res.input_to_orig.apply(static_cast<double>(x), static_cast<double>(y));
        res.input.pixels[(c * cfg.input_h + y) * cfg.input_w + x] = sample_bilinear(c, ox, oy);
      }

  res.v = sample.v;
  res.kx.resize(sample.kx.size());
  res.ky.resize(sample.ky.size());
  for (std::size_t i = 0; i < sample.kx.size(); ++i) {
    auto [ix, iy] = inv.apply(sample.kx[i], sample.ky[i]);
    res.kx[i] = ix;
    res.ky[i] = iy;
  }
  return res;
}

void flip_horizontal(Image& img, std::vector<double>& kx,
                     const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                     std::vector<double>& ky, std::vector<int>& v) {
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y) {
      float* row = img.pixels.data() + (c * img.height + y) * img.width;
      std::reverse(row, row + img.width);
    }
  double w1 = static_cast<double>(img.width) - 1.0;
  for (double& x : kx) x = w1 - x;
  for (auto [a, b] : pairs) {
    std::swap(kx[a], kx[b]);
    std::swap(ky[a], ky[b]);
    std::swap(v[a], v[b]);
  }
}

}  // namespace tokenpose
