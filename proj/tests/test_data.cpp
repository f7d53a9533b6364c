#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tokenpose/data.hpp"
#include "tokenpose/errors.hpp"
#include "tokenpose/metrics.hpp"

using namespace tokenpose;
namespace fs = std::filesystem;

namespace {

DataConfig toy_data_cfg() {
  DataConfig cfg;
  cfg.skeleton = "stick8";
  cfg.count = 4;
  cfg.seed = 11;
  cfg.img_h = 64;
  cfg.img_w = 64;
  cfg.channels = 1;
  return cfg;
}

}  // namespace

TEST_CASE("skeleton templates validate; malformed ones do not") {
  CHECK_NOTHROW(SkeletonTemplate::coco17().validate());
  CHECK_NOTHROW(SkeletonTemplate::stick8().validate());
  CHECK_THROWS_AS(SkeletonTemplate::by_name("nope"), InvalidArgument);

  SkeletonTemplate bad = SkeletonTemplate::stick8();
  bad.edges.push_back({0, 7});  // second parent for joint 7
  CHECK_THROWS_AS(bad.validate(), TemplateInvalid);

  SkeletonTemplate overlap = SkeletonTemplate::stick8();
  overlap.symmetry_pairs.push_back({4, 6});  // 4 already paired
  CHECK_THROWS_AS(overlap.validate(), TemplateInvalid);
}

TEST_CASE("template symmetry holds about the figure axis before rotation") {
  for (const auto& tpl : {SkeletonTemplate::coco17(), SkeletonTemplate::stick8()}) {
    for (auto [a, b] : tpl.symmetry_pairs) {
      CHECK(tpl.rest_pose[a][0] == doctest::Approx(-tpl.rest_pose[b][0]).epsilon(1e-12));
      CHECK(tpl.rest_pose[a][1] == doctest::Approx(tpl.rest_pose[b][1]).epsilon(1e-12));
    }
  }
}

TEST_CASE("generate_synthetic is a pure function of its inputs") {
  DataConfig cfg = toy_data_cfg();
  auto tpl = SkeletonTemplate::stick8();
  auto a = generate_synthetic(7, 6, tpl, cfg);
  auto b = generate_synthetic(7, 6, tpl, cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.pixels == b[i].image.pixels);
    CHECK(a[i].kx == b[i].kx);
    CHECK(a[i].ky == b[i].ky);
    CHECK(a[i].v == b[i].v);
  }
  auto c = generate_synthetic(8, 6, tpl, cfg);
  CHECK(a[0].image.pixels != c[0].image.pixels);
}

TEST_CASE("zero occlusion rate leaves every joint visible") {
  DataConfig cfg = toy_data_cfg();
  cfg.count = 16;
  auto samples = generate_synthetic(3, cfg.count, SkeletonTemplate::stick8(), cfg);
  for (const auto& s : samples)
    for (int v : s.v) CHECK(v > 0);
}

TEST_CASE("occlusion masks at most three joints and sets v to zero") {
  DataConfig cfg = toy_data_cfg();
  cfg.count = 40;
  cfg.occlusion_prob = 1.0;
  auto samples = generate_synthetic(5, cfg.count, SkeletonTemplate::stick8(), cfg);
  std::size_t occluded_samples = 0;
  for (const auto& s : samples) {
    std::size_t hidden = 0;
    for (int v : s.v)
      if (v == 0) ++hidden;
    CHECK(hidden <= 3);
    if (hidden > 0) ++occluded_samples;
  }
  CHECK(occluded_samples > 0);
}

TEST_CASE("rendered joint pixel carries the joint's disc intensity") {
  DataConfig cfg = toy_data_cfg();
  auto tpl = SkeletonTemplate::stick8();
  auto samples = generate_synthetic(21, 3, tpl, cfg);
  for (const auto& s : samples) {
    // probe the left hand: well separated from every other joint
    std::size_t j = 4;
    auto px = static_cast<std::size_t>(std::lround(s.kx[j]));
    auto py = static_cast<std::size_t>(std::lround(s.ky[j]));
    float expect = static_cast<float>(std::lround(tpl.joint_intensity[j] * 255.0)) / 255.0f;
    CHECK(s.image.at(0, py, px) == expect);
  }
}

TEST_CASE("generated samples keep visible keypoints inside image and bbox") {
  DataConfig cfg = toy_data_cfg();
  cfg.count = 24;
  auto samples = generate_synthetic(9, cfg.count, SkeletonTemplate::stick8(), cfg);
  for (const auto& s : samples) {
    CHECK(s.head_size > 0.0);
    CHECK(s.scale() > 0.0);
    for (std::size_t j = 0; j < s.kx.size(); ++j) {
      if (s.v[j] <= 0) continue;
      CHECK(s.kx[j] >= 0.0);
      CHECK(s.kx[j] <= static_cast<double>(cfg.img_w - 1));
      CHECK(s.kx[j] >= s.bbox_x - 1e-9);
      CHECK(s.kx[j] <= s.bbox_x + s.bbox_w + 1e-9);
      CHECK(s.ky[j] >= s.bbox_y - 1e-9);
      CHECK(s.ky[j] <= s.bbox_y + s.bbox_h + 1e-9);
    }
  }
}

TEST_CASE("dataset save/load round-trips coordinates to two decimals") {
  DataConfig cfg = toy_data_cfg();
  auto tpl = SkeletonTemplate::stick8();
  auto samples = generate_synthetic(13, 4, tpl, cfg);
  fs::path dir = fs::temp_directory_path() / "tkp_ds_roundtrip";
  fs::remove_all(dir);
  save_dataset(samples, tpl, dir.string());

  Dataset ds = load_annotations((dir / "annotations.json").string());
  REQUIRE(ds.size() == samples.size());
  CHECK(ds.joint_names == tpl.joint_names);
  CHECK(ds.oks_k == tpl.oks_k);
  CHECK(ds.flip_pairs == tpl.symmetry_pairs);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < samples[i].kx.size(); ++j) {
      CHECK(std::round(ds.samples[i].kx[j] * 100.0) ==
            std::round(samples[i].kx[j] * 100.0));
      CHECK(std::round(ds.samples[i].ky[j] * 100.0) ==
            std::round(samples[i].ky[j] * 100.0));
      CHECK(ds.samples[i].v[j] == samples[i].v[j]);
    }
    // lazy image loading by id: identical pixels after the 8-bit round trip
    const Image& img = ds.image(i);
    CHECK(img.pixels == samples[i].image.pixels);
  }

  // second save from the loaded dataset preserves the decimals
  fs::path dir2 = fs::temp_directory_path() / "tkp_ds_roundtrip2";
  fs::remove_all(dir2);
  save_dataset(ds.samples, tpl, dir2.string());
  Dataset ds2 = load_annotations((dir2 / "annotations.json").string());
  for (std::size_t i = 0; i < ds.size(); ++i)
    CHECK(ds2.samples[i].kx == ds.samples[i].kx);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("loader schema errors carry the JSON path") {
  fs::path dir = fs::temp_directory_path() / "tkp_schema";
  fs::create_directories(dir);
  fs::path file = dir / "bad.json";
  {
    std::ofstream out(file);
    out << R"({"images":[{"id":1,"file_name":"x.pgm"}],
               "annotations":[{"id":1,"image_id":1,"keypoints":[1,2,3,4],"bbox":[0,0,5,5]}],
               "categories":[{"id":1,"name":"t","keypoints":["a","b"]}]})";
  }
  try {
    load_annotations(file.string());
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    std::string msg = e.what();
    CHECK(msg.find("annotations[0].keypoints") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("minimal one-annotation file loads 17 triples") {
  fs::path dir = fs::temp_directory_path() / "tkp_minimal";
  fs::create_directories(dir);
  fs::path file = dir / "one.json";
  {
    std::ofstream out(file);
    out << R"({"images":[{"id":7,"file_name":"img.pgm","width":32,"height":32}],)"
        << R"("annotations":[{"id":1,"image_id":7,"keypoints":[)";
    for (int i = 0; i < 17; ++i) out << (i ? "," : "") << "1,2,2";
    out << R"(],"bbox":[0,0,10,10],"extra_unknown_field":42}],"categories":[]})";
  }
  Dataset ds = load_annotations(file.string());
  REQUIRE(ds.size() == 1);
  CHECK(ds.samples[0].kx.size() == 17);
  CHECK(ds.oks_k == coco17_oks_k());  // shipped defaults kick in for 17 joints
  fs::remove_all(dir);
}

TEST_CASE("crop_to_input: aspect-matched bbox copies and round-trips") {
  DataConfig dcfg = toy_data_cfg();
  auto samples = generate_synthetic(17, 1, SkeletonTemplate::stick8(), dcfg);
  PoseSample& s = samples[0];

  ModelConfig mcfg;
  mcfg.input_h = 64;
  mcfg.input_w = 64;
  mcfg.channels = 1;
  mcfg.patch_h = 8;
  mcfg.patch_w = 8;
  mcfg.embed_dim = 64;
  mcfg.num_heads = 4;
  mcfg.num_keypoints = 8;
  mcfg.heatmap_h = 16;
  mcfg.heatmap_w = 16;

  // bbox already at input aspect: transform is a pure scale+shift whose
  // round trip is identity
  s.bbox_x = 8;
  s.bbox_y = 8;
  s.bbox_w = 32;
  s.bbox_h = 32;
  CropResult crop = crop_to_input(s, s.image, mcfg);
  Affine inv = crop.input_to_orig.inverse();
  for (double x : {0.0, 10.5, 63.0})
    for (double y : {0.0, 31.25, 63.0}) {
      auto [ox, oy] = crop.input_to_orig.apply(x, y);
      auto [bx, by] = inv.apply(ox, oy);
      CHECK(std::fabs(bx - x) < 1e-6);
      CHECK(std::fabs(by - y) < 1e-6);
    }

  // keypoint at bbox center maps to the input center
  PoseSample centered = s;
  centered.kx = {s.bbox_x + s.bbox_w / 2};
  centered.ky = {s.bbox_y + s.bbox_h / 2};
  centered.v = {2};
  CropResult c2 = crop_to_input(centered, centered.image, mcfg);
  CHECK(c2.kx[0] == doctest::Approx(32.0).epsilon(1e-9));
  CHECK(c2.ky[0] == doctest::Approx(32.0).epsilon(1e-9));

  PoseSample degenerate = s;
  degenerate.bbox_w = 0;
  CHECK_THROWS_AS(crop_to_input(degenerate, degenerate.image, mcfg), DegenerateBox);
}

TEST_CASE("horizontal flip mirrors keypoints and swaps symmetric joints") {
  DataConfig cfg = toy_data_cfg();
  auto tpl = SkeletonTemplate::stick8();
  auto samples = generate_synthetic(23, 1, tpl, cfg);
  PoseSample s = samples[0];
  double lx = s.kx[4], rx = s.kx[5];
  flip_horizontal(s.image, s.kx, tpl.symmetry_pairs, s.ky, s.v);
  double w1 = static_cast<double>(s.image.width) - 1.0;
  CHECK(s.kx[4] == doctest::Approx(w1 - rx).epsilon(1e-12));
  CHECK(s.kx[5] == doctest::Approx(w1 - lx).epsilon(1e-12));
  // double flip restores the original
  flip_horizontal(s.image, s.kx, tpl.symmetry_pairs, s.ky, s.v);
  CHECK(s.kx[4] == doctest::Approx(samples[0].kx[4]).epsilon(1e-9));
  CHECK(s.image.pixels == samples[0].image.pixels);
}
