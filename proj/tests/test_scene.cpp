#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "fusedet/scene.hpp"
#include "oracles.hpp"

using namespace fusedet;
using namespace fusedet::scene;

namespace {

const char* kSampleCalib =
    "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
    "P2: 721.5377 0.0 609.5593 44.85728 0.0 721.5377 172.854 0.2163791 0.0 0.0 1.0 "
    "0.002745884\n"
    "R0_rect: 0.9999239 0.00983776 -0.007445048 -0.0098698 0.9999421 -0.004278459 0.007402527 "
    "0.004351614 0.9999631\n"
    "Tr_velo_to_cam: 0.007533745 -0.9999714 -0.000616602 -0.004069766 0.01480249 0.0007280733 "
    "-0.9998902 -0.07631618 0.9998621 0.00752379 0.0001480755 -0.2717806\n";

std::string sample_label_line() {
  return "Car 0.000000 0 1.550000 614.240000 181.780000 727.310000 284.770000 1.570000 "
         "1.730000 4.150000 1.000000 1.750000 13.220000 1.620000\n";
}

}  // namespace

TEST_SUITE_BEGIN("scene");

TEST_CASE("parse_calib reads the three matrices") {
  const KittiCalib calib = parse_calib(kSampleCalib);
  CHECK(calib.p2[0] == doctest::Approx(721.5377));
  CHECK(calib.p2[3] == doctest::Approx(44.85728));
  CHECK(calib.p2[11] == doctest::Approx(0.002745884));
  CHECK(calib.r0_rect[0] == doctest::Approx(0.9999239));
  CHECK(calib.tr_velo[3] == doctest::Approx(-0.004069766));
}

TEST_CASE("identity rectification composes to P2") {
  KittiCalib calib;
  calib.p2 = {700, 0, 320, 10, 0, 700, 240, 0, 0, 0, 1, 0};
  calib.r0_rect = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  calib.tr_velo = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  const geom::CalibMatrix composed = compose_projection(calib, 640, 480);
  for (std::size_t i = 0; i < 12; ++i) CHECK(composed.p[i] == doctest::Approx(calib.p2[i]));
}

TEST_CASE("composed projection matches the hand matrix chain") {
  // Rotation about the vertical axis inside Tr, plus a small rectification.
  const double a = 0.3;
  KittiCalib calib;
  calib.p2 = {500, 0, 64, 20, 0, 500, 48, -3, 0, 0, 1, 0.01};
  calib.r0_rect = {std::cos(0.02), -std::sin(0.02), 0, std::sin(0.02), std::cos(0.02), 0, 0, 0, 1};
  calib.tr_velo = {std::cos(a), 0, std::sin(a), 0.5, 0, 1, 0, -0.2,
                   -std::sin(a), 0, std::cos(a), 1.5};
  const geom::CalibMatrix composed = compose_projection(calib, 128, 96);

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const geom::Vec3 p{rng.uniform(-5, 5), rng.uniform(-2, 2), rng.uniform(3, 30)};
    // Independent chain: camera point via R0 * (Tr * p), then P2.
    const geom::Vec3 cam = velo_to_cam(calib, p);
    const double hu = calib.p2[0] * cam.x + calib.p2[1] * cam.y + calib.p2[2] * cam.z + calib.p2[3];
    const double hv = calib.p2[4] * cam.x + calib.p2[5] * cam.y + calib.p2[6] * cam.z + calib.p2[7];
    const double hw = calib.p2[8] * cam.x + calib.p2[9] * cam.y + calib.p2[10] * cam.z +
                      calib.p2[11];
    const auto proj = geom::project_points({p}, composed);
    CHECK(proj.uv[0][0] == doctest::Approx(hu / hw).epsilon(1e-9));
    CHECK(proj.uv[0][1] == doctest::Approx(hv / hw).epsilon(1e-9));
  }
}

TEST_CASE("calib parse errors name the key and line") {
  CHECK_THROWS_WITH_AS(parse_calib("R0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n"),
                       doctest::Contains("P2"), ParseError);
  const std::string short_p2 =
      "P2: 1 2 3\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  CHECK_THROWS_WITH_AS(parse_calib(short_p2), doctest::Contains("line 1"), ParseError);
  try {
    parse_calib(short_p2);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("P2") != std::string::npos);
  }
}

TEST_CASE("calib serialize then parse is the identity at 6 decimals") {
  const KittiCalib calib = parse_calib(kSampleCalib);
  const KittiCalib again = parse_calib(serialize_calib(calib));
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(again.p2[i] - calib.p2[i]) < 1e-6);
  for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(again.r0_rect[i] - calib.r0_rect[i]) < 1e-6);
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(again.tr_velo[i] - calib.tr_velo[i]) < 1e-6);
  // A second serialize is byte-identical once values are 6-decimal clean.
  CHECK(serialize_calib(again) == serialize_calib(calib));
}

TEST_CASE("parse_labels typed records and filtering") {
  CHECK(parse_labels("").empty());

  const auto one = parse_labels(sample_label_line());
  REQUIRE(one.size() == 1);
  CHECK(one[0].category == "Car");
  CHECK(one[0].h == doctest::Approx(1.57));
  CHECK(one[0].w == doctest::Approx(1.73));
  CHECK(one[0].l == doctest::Approx(4.15));
  CHECK(one[0].x == doctest::Approx(1.0));
  CHECK(one[0].y == doctest::Approx(1.75));
  CHECK(one[0].z == doctest::Approx(13.22));
  CHECK(one[0].rotation_y == doctest::Approx(1.62));

  const std::string with_dontcare =
      sample_label_line() +
      "DontCare -1.000000 -1 -10.000000 0.000000 0.000000 0.000000 0.000000 -1.000000 -1.000000 "
      "-1.000000 -1000.000000 -1000.000000 -1000.000000 -10.000000\n";
  CHECK(parse_labels(with_dontcare).size() == 1);

  CHECK_THROWS_WITH_AS(parse_labels(sample_label_line() + "Car 1 2 3\n"),
                       doctest::Contains("line 2"), ParseError);
}

TEST_CASE("labels serialize then parse is the identity at 6 decimals") {
  Rng rng(5);
  std::vector<KittiLabel> labels;
  for (int i = 0; i < 6; ++i) {
    KittiLabel b = from_box3d(geom::Box3D(rng.uniform(-20, 20), rng.uniform(0, 2),
                                          rng.uniform(5, 60), rng.uniform(1, 2),
                                          rng.uniform(1, 2), rng.uniform(2, 5),
                                          rng.uniform(-geom::kPi, geom::kPi)),
                              i % 2 ? "Pedestrian" : "Car");
    b.truncation = rng.uniform(0, 1);
    b.occlusion = static_cast<int>(rng.below(3));
    b.bbox2d = {rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(100, 300),
                rng.uniform(100, 300)};
    labels.push_back(std::move(b));
  }
  const std::string text = serialize_labels(labels);
  const auto parsed = parse_labels(text);
  REQUIRE(parsed.size() == labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    CHECK(parsed[i].category == labels[i].category);
    CHECK(std::abs(parsed[i].h - labels[i].h) < 1e-6);
    CHECK(std::abs(parsed[i].x - labels[i].x) < 1e-6);
    CHECK(std::abs(parsed[i].rotation_y - labels[i].rotation_y) < 1e-6);
  }
  CHECK(serialize_labels(parsed) == text);
}

TEST_CASE("label box conversion shifts the vertical center") {
  KittiLabel label = parse_labels(sample_label_line())[0];
  const geom::Box3D box = to_box3d(label);
  CHECK(box.y == doctest::Approx(label.y - 0.5 * label.h));
  const KittiLabel back = from_box3d(box, label.category);
  CHECK(back.y == doctest::Approx(label.y));
  CHECK(back.rotation_y == doctest::Approx(label.rotation_y));
}

TEST_CASE("crop_and_subsample bounds and determinism") {
  CropRanges ranges;
  PointCloud cloud;
  cloud.points = {{0, 0, 10}, {41.0, 0, 10}, {40.0, 0, 10}, {-3, 2.5, 60}};
  cloud.intensity = {1, 2, 3, 4};

  // x = 41 is out; x = 40 is kept (closed interval).
  const PointCloud cropped = crop_and_subsample(cloud, ranges, 3, 7);
  CHECK(cropped.size() == 3);
  for (const auto& p : cropped.points) {
    CHECK(ranges.contains(p));
    CHECK(p.x != 41.0);
  }

  // Identity up to permutation when everything fits exactly.
  PointCloud exact;
  exact.points = {{0, 0, 10}, {1, 0, 12}, {2, 0, 14}};
  const PointCloud same = crop_and_subsample(exact, ranges, 3, 9);
  CHECK(same.size() == 3);
  double sum = 0;
  for (const auto& p : same.points) sum += p.x;
  CHECK(sum == doctest::Approx(3.0));

  // Deterministic under a fixed seed.
  PointCloud big;
  Rng rng(11);
  for (int i = 0; i < 500; ++i)
    big.points.push_back({rng.uniform(-39, 39), rng.uniform(-0.9, 2.9), rng.uniform(1, 70)});
  const PointCloud a = crop_and_subsample(big, ranges, 128, 42);
  const PointCloud b = crop_and_subsample(big, ranges, 128, 42);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.points[i].x == b.points[i].x);
    CHECK(a.points[i].z == b.points[i].z);
  }
  const PointCloud c = crop_and_subsample(big, ranges, 128, 43);
  bool any_differ = false;
  for (std::size_t i = 0; i < c.size(); ++i) any_differ |= c.points[i].x != a.points[i].x;
  CHECK(any_differ);

  // Padding with replacement reaches the target exactly.
  const PointCloud padded = crop_and_subsample(exact, ranges, 10, 3);
  CHECK(padded.size() == 10);

  PointCloud empty;
  empty.points = {{100, 0, 10}};
  CHECK_THROWS_AS(crop_and_subsample(empty, ranges, 4, 1), EmptySceneError);
}

TEST_CASE("scene config parsing") {
  const SceneConfig cfg = parse_scene_config(
      "# harness scene\nobjects = 3\npoints = 512\nnoise = 0.1\nimage_width = 64\n"
      "image_height = 48\nimage_channels = 5\n");
  CHECK(cfg.objects == 3);
  CHECK(cfg.points == 512);
  CHECK(cfg.noise == doctest::Approx(0.1));
  CHECK(cfg.image_width == 64);
  CHECK(cfg.image_channels == 5);

  CHECK_THROWS_WITH_AS(parse_scene_config("object_count = 3\n"), doctest::Contains("unknown key"),
                       ParseError);
  CHECK_THROWS_AS(parse_scene_config("objects = many\n"), ParseError);
  CHECK_THROWS_AS(parse_scene_config("objects: 3\n"), ParseError);
}

TEST_CASE("generate_scene basic structure") {
  SceneConfig cfg;
  cfg.objects = 3;
  cfg.points = 400;
  const SceneSample sample = generate_scene(cfg, 2024);

  CHECK(sample.objects.size() == 3);
  CHECK(sample.cloud.size() == 400);
  CHECK(sample.image_features.size() == 4);
  CHECK(sample.image_features[0].shape == Shape{96, 128, 6});
  CHECK(sample.image_features[3].shape == Shape{12, 16, 6});

  const CropRanges crop;
  for (const auto& p : sample.cloud.points) CHECK(crop.contains(p));
  for (const auto& obj : sample.objects) CHECK(crop.contains(obj.box.center()));

  // Footprints disjoint by construction.
  for (std::size_t i = 0; i < sample.objects.size(); ++i)
    for (std::size_t j = i + 1; j < sample.objects.size(); ++j)
      CHECK(geom::iou_bev(sample.objects[i].box, sample.objects[j].box) == 0.0);

  // Projected corners inside the image.
  for (const auto& obj : sample.objects) {
    const auto corners = scene::detail::box_corners(obj.box);
    const auto proj = geom::project_points({corners.begin(), corners.end()}, sample.calib);
    for (std::size_t i = 0; i < 8; ++i) CHECK(proj.in_frustum[i]);
  }
}

TEST_CASE("generate_scene with zero objects and zero noise") {
  SceneConfig cfg;
  cfg.objects = 0;
  cfg.points = 100;
  const SceneSample empty = generate_scene(cfg, 1);
  CHECK(empty.objects.empty());
  CHECK(empty.cloud.size() == 100);

  // One box, no noise: the object points (first 60%) lie on the box surface.
  cfg.objects = 1;
  cfg.noise = 0.0;
  cfg.points = 200;
  const SceneSample sample = generate_scene(cfg, 5);
  REQUIRE(sample.objects.size() == 1);
  const std::size_t on_object = (200 * 3) / 5;
  for (std::size_t i = 0; i < on_object; ++i)
    CHECK(geom::point_in_box(sample.objects[0].box, sample.cloud.points[i]));
}

TEST_CASE("generate_scene is reproducible from the seed") {
  SceneConfig cfg;
  cfg.objects = 4;
  cfg.points = 300;
  const SceneSample a = generate_scene(cfg, 77);
  const SceneSample b = generate_scene(cfg, 77);
  REQUIRE(a.cloud.size() == b.cloud.size());
  for (std::size_t i = 0; i < a.cloud.size(); ++i) {
    CHECK(a.cloud.points[i].x == b.cloud.points[i].x);
    CHECK(a.cloud.points[i].y == b.cloud.points[i].y);
    CHECK(a.cloud.points[i].z == b.cloud.points[i].z);
  }
  REQUIRE(a.objects.size() == b.objects.size());
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].box.x == b.objects[i].box.x);
    CHECK(a.objects[i].box.theta == b.objects[i].box.theta);
    CHECK(a.objects[i].category == b.objects[i].category);
  }
  for (std::size_t l = 0; l < 4; ++l) CHECK(a.image_features[l].data == b.image_features[l].data);

  const SceneSample c = generate_scene(cfg, 78);
  CHECK(a.cloud.points[0].x != c.cloud.points[0].x);
}

TEST_CASE("category metadata") {
  CHECK(std::string(kCategoryNames[0]) == "Car");
  CHECK(std::string(kCategoryNames[1]) == "Pedestrian");
  CHECK(std::string(kCategoryNames[2]) == "Cyclist");
  CHECK(kCategoryIouThresholds[0] == 0.7);
  CHECK(kCategoryIouThresholds[1] == 0.5);
  CHECK(kCategoryIouThresholds[2] == 0.5);
}

TEST_CASE("point cloud binary and csv round trips") {
  Rng rng(9);
  PointCloud cloud;
  for (int i = 0; i < 50; ++i) {
    cloud.points.push_back({rng.uniform(-30, 30), rng.uniform(-1, 3), rng.uniform(0, 70)});
    cloud.intensity.push_back(rng.uniform(0, 1));
  }

  const auto tmp = std::filesystem::temp_directory_path() / "fusedet_cloud_test.bin";
  save_point_cloud_bin(cloud, tmp.string());
  const PointCloud loaded = load_point_cloud_bin(tmp.string());
  REQUIRE(loaded.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CHECK(loaded.points[i].x == doctest::Approx(cloud.points[i].x).epsilon(1e-6));
    CHECK(loaded.intensity[i] == doctest::Approx(cloud.intensity[i]).epsilon(1e-6));
  }
  std::filesystem::remove(tmp);

  const std::string csv = serialize_point_cloud_csv(cloud);
  const PointCloud reparsed = parse_point_cloud_csv(csv);
  REQUIRE(reparsed.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i)
    CHECK(reparsed.points[i].z == doctest::Approx(cloud.points[i].z).epsilon(1e-6));
  CHECK(serialize_point_cloud_csv(reparsed) == csv);

  CHECK_THROWS_AS(parse_point_cloud_csv("x,y,z,intensity\n1,2,3\n"), ParseError);
  CHECK_THROWS_AS(load_point_cloud_bin("/nonexistent/path/cloud.bin"), IoError);
}

TEST_SUITE_END();
