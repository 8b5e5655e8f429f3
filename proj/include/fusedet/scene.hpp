// scene.hpp - data ingestion and synthesis: KITTI calibration and label
// files, point-cloud IO, crop/subsample per the detector's working ranges,
// and a seeded synthetic scene generator for harness experiments.
//
// The working frame is camera-style (x right, y down, z forward); crop
// ranges apply in that frame. LiDAR-frame inputs go through the calibration
// before filtering.
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fusedet/errors.hpp"
#include "fusedet/geometry.hpp"
#include "fusedet/numerics.hpp"
#include "fusedet/rng.hpp"

namespace fusedet::scene {

// ---- KITTI calibration ---------------------------------------------------------

// Raw calibration matrices as stored on disk; kept separate so the file can
// be serialized back without loss.
struct KittiCalib {
  std::array<double, 12> p2{};        // camera projection, 3x4
  std::array<double, 9> r0_rect{};    // rectification, 3x3
  std::array<double, 12> tr_velo{};   // LiDAR -> camera, 3x4
};

namespace detail {

inline std::vector<double> parse_numbers(const std::string& text) {
  std::vector<double> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
      throw ParseError("expected a number, got '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

// 3x4 result of a 3x4 by 4x4 product.
inline std::array<double, 12> mul_34_44(const std::array<double, 12>& a,
                                        const std::array<double, 16>& b) {
  std::array<double, 12> out{};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 4; ++k) out[i * 4 + j] += a[i * 4 + k] * b[k * 4 + j];
  return out;
}

inline std::array<double, 16> expand_r0(const std::array<double, 9>& r) {
  return {r[0], r[1], r[2], 0, r[3], r[4], r[5], 0, r[6], r[7], r[8], 0, 0, 0, 0, 1};
}

inline std::array<double, 16> expand_tr(const std::array<double, 12>& t) {
  return {t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7], t[8], t[9], t[10], t[11], 0, 0, 0, 1};
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

// Parses the "KEY: v1 ... vN" calibration format. P2, R0_rect and
// Tr_velo_to_cam are required; other keys pass through unchecked.
inline KittiCalib parse_calib(const std::string& text) {
  KittiCalib calib;
  bool saw_p2 = false, saw_r0 = false, saw_tr = false;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    std::vector<double> values;
    try {
      values = detail::parse_numbers(line.substr(colon + 1));
    } catch (const ParseError& e) {
      throw ParseError("calib line " + std::to_string(line_no) + " (" + key + "): " + e.what());
    }
    const auto want = [&](std::size_t n, auto& dst, bool& flag) {
      if (values.size() != n)
        throw ParseError("calib key " + key + " on line " + std::to_string(line_no) + " has " +
                         std::to_string(values.size()) + " values, want " + std::to_string(n));
      std::copy(values.begin(), values.end(), dst.begin());
      flag = true;
    };
    if (key == "P2") want(12, calib.p2, saw_p2);
    else if (key == "R0_rect") want(9, calib.r0_rect, saw_r0);
    else if (key == "Tr_velo_to_cam") want(12, calib.tr_velo, saw_tr);
  }
  if (!saw_p2) throw ParseError("calib: missing key P2");
  if (!saw_r0) throw ParseError("calib: missing key R0_rect");
  if (!saw_tr) throw ParseError("calib: missing key Tr_velo_to_cam");
  return calib;
}

inline std::string serialize_calib(const KittiCalib& calib) {
  std::ostringstream os;
  const auto row = [&os](const char* key, const double* v, std::size_t n) {
    os << key << ':';
    for (std::size_t i = 0; i < n; ++i) os << ' ' << detail::fmt(v[i]);
    os << '\n';
  };
  row("P2", calib.p2.data(), 12);
  row("R0_rect", calib.r0_rect.data(), 9);
  row("Tr_velo_to_cam", calib.tr_velo.data(), 12);
  return os.str();
}

// Composed projection P2 * [R0|0; 0 1] * [Tr; 0 0 0 1] mapping LiDAR-frame
// homogeneous points to the left color image.
inline geom::CalibMatrix compose_projection(const KittiCalib& calib, int image_width,
                                            int image_height) {
  const auto rect = detail::mul_34_44(calib.p2, detail::expand_r0(calib.r0_rect));
  const auto full = detail::mul_34_44(rect, detail::expand_tr(calib.tr_velo));
  return geom::CalibMatrix(full, image_width, image_height);
}

// LiDAR frame to rectified camera frame (R0 * Tr * x).
inline geom::Vec3 velo_to_cam(const KittiCalib& calib, const geom::Vec3& p) {
  const auto& t = calib.tr_velo;
  const double cx = t[0] * p.x + t[1] * p.y + t[2] * p.z + t[3];
  const double cy = t[4] * p.x + t[5] * p.y + t[6] * p.z + t[7];
  const double cz = t[8] * p.x + t[9] * p.y + t[10] * p.z + t[11];
  const auto& r = calib.r0_rect;
  return {r[0] * cx + r[1] * cy + r[2] * cz, r[3] * cx + r[4] * cy + r[5] * cz,
          r[6] * cx + r[7] * cy + r[8] * cz};
}

// ---- KITTI labels ----------------------------------------------------------------

struct KittiLabel {
  std::string category;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  std::array<double, 4> bbox2d{};
  double h = 0.0, w = 0.0, l = 0.0;  // meters
  double x = 0.0, y = 0.0, z = 0.0;  // bottom-face center, camera frame
  double rotation_y = 0.0;
};

// 15 whitespace-separated fields per line; DontCare entries are dropped.
inline std::vector<KittiLabel> parse_labels(const std::string& text) {
  std::vector<KittiLabel> out;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<std::string> fields;
    std::string tok;
    while (ls >> tok) fields.push_back(tok);
    if (fields.size() != 15)
      throw ParseError("label line " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, want 15");
    KittiLabel label;
    label.category = fields[0];
    std::vector<double> nums;
    for (std::size_t i = 1; i < 15; ++i) {
      char* end = nullptr;
      nums.push_back(std::strtod(fields[i].c_str(), &end));
      if (end == fields[i].c_str() || *end != '\0')
        throw ParseError("label line " + std::to_string(line_no) + ": bad number '" + fields[i] +
                         "'");
    }
    label.truncation = nums[0];
    label.occlusion = static_cast<int>(nums[1]);
    label.alpha = nums[2];
    label.bbox2d = {nums[3], nums[4], nums[5], nums[6]};
    label.h = nums[7];
    label.w = nums[8];
    label.l = nums[9];
    label.x = nums[10];
    label.y = nums[11];
    label.z = nums[12];
    label.rotation_y = geom::wrap_angle(nums[13]);
    if (label.category == "DontCare") continue;
    if (!(label.h > 0.0 && label.w > 0.0 && label.l > 0.0))
      throw ParseError("label line " + std::to_string(line_no) + ": non-positive box size");
    out.push_back(std::move(label));
  }
  return out;
}

inline std::string serialize_labels(const std::vector<KittiLabel>& labels) {
  std::ostringstream os;
  for (const KittiLabel& b : labels) {
    os << b.category << ' ' << detail::fmt(b.truncation) << ' ' << b.occlusion << ' '
       << detail::fmt(b.alpha);
    for (double v : b.bbox2d) os << ' ' << detail::fmt(v);
    os << ' ' << detail::fmt(b.h) << ' ' << detail::fmt(b.w) << ' ' << detail::fmt(b.l) << ' '
       << detail::fmt(b.x) << ' ' << detail::fmt(b.y) << ' ' << detail::fmt(b.z) << ' '
       << detail::fmt(b.rotation_y) << '\n';
  }
  return os.str();
}

// KITTI stores the bottom-face center; Box3D uses the volumetric center.
inline geom::Box3D to_box3d(const KittiLabel& label) {
  return geom::Box3D(label.x, label.y - 0.5 * label.h, label.z, label.h, label.w, label.l,
                     label.rotation_y);
}

inline KittiLabel from_box3d(const geom::Box3D& box, const std::string& category) {
  KittiLabel label;
  label.category = category;
  label.h = box.h;
  label.w = box.w;
  label.l = box.l;
  label.x = box.x;
  label.y = box.y + 0.5 * box.h;
  label.z = box.z;
  label.rotation_y = box.theta;
  label.alpha = geom::wrap_angle(box.theta - std::atan2(box.x, box.z));
  return label;
}

// ---- point clouds ------------------------------------------------------------------

struct PointCloud {
  std::vector<geom::Vec3> points;
  std::vector<double> intensity;  // parallel to points; may be empty

  std::size_t size() const { return points.size(); }
};

// Little-endian float32 quadruples (x, y, z, intensity).
inline PointCloud load_point_cloud_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open point cloud: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0)
    throw ParseError("point cloud " + path + ": " + std::to_string(bytes.size()) +
                     " bytes is not a multiple of 16");
  PointCloud cloud;
  const std::size_t n = bytes.size() / 16;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    float v[4];
    std::memcpy(v, bytes.data() + i * 16, 16);
    cloud.points.push_back({v[0], v[1], v[2]});
    cloud.intensity.push_back(v[3]);
  }
  return cloud;
}

inline void save_point_cloud_bin(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write point cloud: " + path);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const float v[4] = {static_cast<float>(cloud.points[i].x),
                        static_cast<float>(cloud.points[i].y),
                        static_cast<float>(cloud.points[i].z),
                        cloud.intensity.empty() ? 0.0f : static_cast<float>(cloud.intensity[i])};
    out.write(reinterpret_cast<const char*>(v), 16);
  }
}

// CSV alternative: header row then "x,y,z,intensity" per point.
inline std::string serialize_point_cloud_csv(const PointCloud& cloud) {
  std::ostringstream os;
  os << "x,y,z,intensity\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    os << detail::fmt(cloud.points[i].x) << ',' << detail::fmt(cloud.points[i].y) << ','
       << detail::fmt(cloud.points[i].z) << ','
       << detail::fmt(cloud.intensity.empty() ? 0.0 : cloud.intensity[i]) << '\n';
  }
  return os.str();
}

inline PointCloud parse_point_cloud_csv(const std::string& text) {
  PointCloud cloud;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (line_no == 1 && line.rfind("x,", 0) == 0) continue;  // header
    std::replace(line.begin(), line.end(), ',', ' ');
    std::vector<double> nums;
    try {
      nums = detail::parse_numbers(line);
    } catch (const ParseError& e) {
      throw ParseError("point CSV line " + std::to_string(line_no) + ": " + e.what());
    }
    if (nums.size() != 4)
      throw ParseError("point CSV line " + std::to_string(line_no) + " has " +
                       std::to_string(nums.size()) + " fields, want 4");
    cloud.points.push_back({nums[0], nums[1], nums[2]});
    cloud.intensity.push_back(nums[3]);
  }
  return cloud;
}

// ---- cropping and subsampling --------------------------------------------------------

struct CropRanges {
  std::array<double, 2> x{-40.0, 40.0};
  std::array<double, 2> y{-1.0, 3.0};
  std::array<double, 2> z{0.0, 70.4};

  bool contains(const geom::Vec3& p) const {
    return p.x >= x[0] && p.x <= x[1] && p.y >= y[0] && p.y <= y[1] && p.z >= z[0] && p.z <= z[1];
  }
};

// Removes out-of-range points (closed intervals), then resamples to exactly
// target_count: a seeded uniform draw without replacement when there are
// too many, with replacement when too few.
inline PointCloud crop_and_subsample(const PointCloud& cloud, const CropRanges& ranges,
                                     std::size_t target_count, std::uint64_t seed) {
  if (target_count == 0) throw ContractError("crop_and_subsample: target_count must be positive");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (ranges.contains(cloud.points[i])) keep.push_back(i);
  if (keep.empty()) throw EmptySceneError("crop_and_subsample: no points inside the crop ranges");

  Rng rng(seed);
  std::vector<std::size_t> chosen;
  if (keep.size() > target_count) {
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < target_count; ++i) {
      const std::size_t j = i + rng.below(keep.size() - i);
      std::swap(keep[i], keep[j]);
    }
    chosen.assign(keep.begin(), keep.begin() + static_cast<long>(target_count));
  } else {
    chosen = keep;
    while (chosen.size() < target_count) chosen.push_back(keep[rng.below(keep.size())]);
  }

  PointCloud out;
  out.points.reserve(target_count);
  const bool has_intensity = !cloud.intensity.empty();
  if (has_intensity) out.intensity.reserve(target_count);
  for (std::size_t i : chosen) {
    out.points.push_back(cloud.points[i]);
    if (has_intensity) out.intensity.push_back(cloud.intensity[i]);
  }
  return out;
}

// ---- synthetic scenes ------------------------------------------------------------------

struct SceneConfig {
  int objects = 4;
  int points = 1024;
  double noise = 0.05;
  int image_width = 128;
  int image_height = 96;
  int image_channels = 6;

  void validate() const {
    if (objects < 0) throw ContractError("SceneConfig: objects must be >= 0");
    if (points <= 0) throw ContractError("SceneConfig: points must be positive");
    if (noise < 0) throw ContractError("SceneConfig: noise must be >= 0");
    if (image_width < 16 || image_height < 16 || image_width % 8 || image_height % 8)
      throw ContractError("SceneConfig: image size must be multiples of 8, at least 16x16");
    if (image_channels < 4) throw ContractError("SceneConfig: at least 4 image channels");
  }
};

// Flat "key = value" config file; '#' starts a comment; unknown keys are
// rejected.
inline SceneConfig parse_scene_config(const std::string& text) {
  SceneConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("scene config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto trim = [](std::string& s) {
      const std::size_t a = s.find_first_not_of(" \t\r");
      const std::size_t b = s.find_last_not_of(" \t\r");
      s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
    };
    trim(key);
    trim(value);
    double number = 0.0;
    {
      char* end = nullptr;
      number = std::strtod(value.c_str(), &end);
      if (end == value.c_str() || *end != '\0')
        throw ParseError("scene config line " + std::to_string(line_no) + ": bad value '" + value +
                         "'");
    }
    if (key == "objects") cfg.objects = static_cast<int>(number);
    else if (key == "points") cfg.points = static_cast<int>(number);
    else if (key == "noise") cfg.noise = number;
    else if (key == "image_width") cfg.image_width = static_cast<int>(number);
    else if (key == "image_height") cfg.image_height = static_cast<int>(number);
    else if (key == "image_channels") cfg.image_channels = static_cast<int>(number);
    else
      throw ParseError("scene config line " + std::to_string(line_no) + ": unknown key '" + key +
                       "'");
  }
  cfg.validate();
  return cfg;
}

inline constexpr const char* kCategoryNames[3] = {"Car", "Pedestrian", "Cyclist"};
// Per-category evaluation thresholds (car, pedestrian, cyclist).
inline constexpr double kCategoryIouThresholds[3] = {0.7, 0.5, 0.5};

struct SceneObject {
  geom::Box3D box;
  int category = 0;  // index into kCategoryNames
};

struct SceneSample {
  PointCloud cloud;                       // camera-frame points
  std::vector<int> point_source;          // per point: object index, -1 for clutter
  std::vector<DiffArray> image_features;  // four levels, strides {1,2,4,8}
  std::vector<double> level_strides;
  geom::CalibMatrix calib;
  std::vector<SceneObject> objects;
  std::uint64_t rng_seed = 0;

  std::vector<geom::Box3D> gt_boxes() const {
    std::vector<geom::Box3D> out;
    out.reserve(objects.size());
    for (const SceneObject& o : objects) out.push_back(o.box);
    return out;
  }
};

namespace detail {

inline constexpr double kGroundY = 1.6;  // camera height above ground, y down

struct SizeRange {
  double h_lo, h_hi, w_lo, w_hi, l_lo, l_hi;
};

inline SizeRange category_sizes(int category) {
  switch (category) {
    case 0: return {1.4, 1.7, 1.5, 1.8, 3.4, 4.4};   // car
    case 1: return {1.6, 1.9, 0.4, 0.7, 0.4, 0.7};   // pedestrian
    default: return {1.6, 1.8, 0.5, 0.7, 1.6, 1.9};  // cyclist
  }
}

inline std::array<geom::Vec3, 8> box_corners(const geom::Box3D& b) {
  const auto fp = geom::footprint_corners(b);
  std::array<geom::Vec3, 8> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {fp[i].x, b.y - 0.5 * b.h, fp[i].y};
    out[i + 4] = {fp[i].x, b.y + 0.5 * b.h, fp[i].y};
  }
  return out;
}

// Andrew monotone chain; returns a counter-clockwise hull.
inline std::vector<geom::Vec2> convex_hull(std::vector<geom::Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const geom::Vec2& a, const geom::Vec2& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const geom::Vec2& a, const geom::Vec2& b) {
                          return a.x == b.x && a.y == b.y;
                        }),
            pts.end());
  if (pts.size() < 3) return pts;
  std::vector<geom::Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && geom::cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = pts.size() - 1; i-- > 0;) {
    while (k >= lower && geom::cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

inline bool in_convex(const std::vector<geom::Vec2>& hull, double x, double y) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const geom::Vec2& a = hull[i];
    const geom::Vec2& b = hull[(i + 1) % hull.size()];
    if (geom::cross2(a, b, {x, y}) < 0) return false;
  }
  return true;
}

// Whether the open segment t * p, t in (0, t_max), passes through the box:
// the sensor at the origin cannot see p if so. Slab test in the box frame.
inline bool segment_occluded(const geom::Box3D& box, const geom::Vec3& p, double t_max) {
  const double c = std::cos(box.theta), s = std::sin(box.theta);
  double t0 = 0.0, t1 = t_max;
  const auto slab = [&t0, &t1](double a, double b, double half) {
    if (std::abs(a) < 1e-12) {
      if (std::abs(b) > half) t0 = 1e30;  // parallel and outside the slab
      return;
    }
    double lo = (-half - b) / a, hi = (half - b) / a;
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  };
  slab(c * p.x + s * p.z, -(c * box.x + s * box.z), 0.5 * box.l);
  slab(-s * p.x + c * p.z, -(-s * box.x + c * box.z), 0.5 * box.w);
  slab(p.y, -box.y, 0.5 * box.h);
  return t0 < t1 && t1 > 0.0 && t0 < t_max;
}

inline bool point_visible(const std::vector<SceneObject>& objects, const geom::Vec3& p) {
  for (const SceneObject& obj : objects)
    if (segment_occluded(obj.box, p, 0.999)) return false;
  return true;
}

// Uniform point on the surface of a box, face chosen by area.
inline geom::Vec3 sample_surface_point(const geom::Box3D& b, Rng& rng) {
  const double area_top = b.l * b.w, area_front = b.w * b.h, area_side = b.l * b.h;
  const double total = 2 * (area_top + area_front + area_side);
  double pick = rng.uniform(0.0, total);
  double lu = 0, lv = 0, lw = 0;  // local: along l, along h, along w
  const double u = rng.uniform(-0.5, 0.5);
  const double v = rng.uniform(-0.5, 0.5);
  if (pick < 2 * area_top) {
    lu = u * b.l;
    lw = v * b.w;
    lv = pick < area_top ? -0.5 * b.h : 0.5 * b.h;
  } else if (pick < 2 * (area_top + area_front)) {
    lw = u * b.w;
    lv = v * b.h;
    lu = pick < 2 * area_top + area_front ? -0.5 * b.l : 0.5 * b.l;
  } else {
    lu = u * b.l;
    lv = v * b.h;
    lw = pick < total - area_side ? -0.5 * b.w : 0.5 * b.w;
  }
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  return {b.x + c * lu - s * lw, b.y + lv, b.z + s * lu + c * lw};
}

}  // namespace detail

// Feature grids for a set of objects: texels whose sample point projects
// inside an object's hull carry that category's pattern plus noise. Each
// level covers the calibrated image at its own stride.
inline std::vector<DiffArray> render_feature_levels(const std::vector<SceneObject>& objects,
                                                    const geom::CalibMatrix& calib,
                                                    std::size_t channels, double noise,
                                                    const std::vector<double>& strides, Rng& rng) {
  // Nearest object paints first, so occluded objects do not bleed through.
  std::vector<std::size_t> order(objects.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&objects](std::size_t a, std::size_t b) { return objects[a].box.z < objects[b].box.z; });
  std::vector<std::vector<geom::Vec2>> hulls;
  for (std::size_t idx : order) {
    const auto corners = detail::box_corners(objects[idx].box);
    std::vector<geom::Vec3> corner_vec(corners.begin(), corners.end());
    const auto proj = geom::project_points(corner_vec, calib);
    std::vector<geom::Vec2> pts;
    for (const auto& uv : proj.uv) pts.push_back({uv[0], uv[1]});  // (u, v)
    hulls.push_back(detail::convex_hull(std::move(pts)));
  }
  std::vector<DiffArray> levels;
  for (double stride : strides) {
    const std::size_t rows = static_cast<std::size_t>(
        (calib.image_height + static_cast<int>(stride) - 1) / static_cast<int>(stride));
    const std::size_t cols = static_cast<std::size_t>(
        (calib.image_width + static_cast<int>(stride) - 1) / static_cast<int>(stride));
    DiffArray level = DiffArray::zeros({rows, cols, channels});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double u = static_cast<double>(c) * stride;  // (u, v) = (col, row)
        const double v = static_cast<double>(r) * stride;
        int hit = -1;
        for (std::size_t o = 0; o < hulls.size(); ++o)
          if (detail::in_convex(hulls[o], u, v)) {
            hit = objects[order[o]].category;
            break;
          }
        for (std::size_t k = 0; k < channels; ++k) {
          double value = noise * rng.normal() * 0.3;
          if (hit >= 0) {
            if (k == static_cast<std::size_t>(hit)) value += 1.0;
            else if (k + 1 == channels) value += 1.0;  // shared foreground channel
            else value += 0.1;
          }
          level.data[(r * cols + c) * channels + k] = value;
        }
      }
    levels.push_back(std::move(level));
  }
  return levels;
}

// Deterministic synthetic frame: non-overlapping boxes in the crop volume,
// surface points plus ground clutter, and four feature levels whose texels
// inside each object's projected footprint carry a category-coded pattern.
inline SceneSample generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  const CropRanges crop;
  SceneSample sample;
  sample.rng_seed = seed;
  const double focal = 0.75 * config.image_width;
  const double cx = 0.5 * config.image_width;
  const double cy = 0.5 * config.image_height;
  sample.calib =
      geom::CalibMatrix::pinhole(focal, cx, cy, config.image_width, config.image_height);

  Rng master(seed);
  Rng place_rng = master.split(1);
  Rng point_rng = master.split(2);
  Rng feature_rng = master.split(3);

  // Place objects with bounded rejection sampling: inside the crop, fully
  // projected into the image, and with disjoint footprints.
  const int max_attempts = 300 * std::max(config.objects, 1);
  int attempts = 0;
  while (static_cast<int>(sample.objects.size()) < config.objects) {
    if (++attempts > max_attempts)
      throw GenerationError("generate_scene: could not place " + std::to_string(config.objects) +
                            " non-overlapping boxes after " + std::to_string(max_attempts) +
                            " attempts");
    const int category = static_cast<int>(place_rng.below(3));
    const auto sz = detail::category_sizes(category);
    const double h = place_rng.uniform(sz.h_lo, sz.h_hi);
    const double w = place_rng.uniform(sz.w_lo, sz.w_hi);
    const double l = place_rng.uniform(sz.l_lo, sz.l_hi);
    const double z = place_rng.uniform(12.0, 48.0);
    const double half_fov_x = (cx / focal) * z;
    const double x = place_rng.uniform(-0.55, 0.55) * (half_fov_x - l);
    const double y = detail::kGroundY - 0.5 * h;
    const geom::Box3D box(x, y, z, h, w, l, place_rng.uniform(-geom::kPi, geom::kPi));

    if (!crop.contains(box.center())) continue;
    bool ok = true;
    const auto corners = detail::box_corners(box);
    std::vector<geom::Vec3> corner_vec(corners.begin(), corners.end());
    const auto proj = geom::project_points(corner_vec, sample.calib);
    for (std::size_t i = 0; i < 8 && ok; ++i) {
      const double margin = 2.0;
      if (!proj.in_frustum[i] || proj.uv[i][0] < margin ||
          proj.uv[i][0] > config.image_width - margin || proj.uv[i][1] < margin ||
          proj.uv[i][1] > config.image_height - margin)
        ok = false;
    }
    for (const SceneObject& other : sample.objects)
      if (geom::iou_bev(box, other.box) > 0.0) ok = false;
    if (ok) sample.objects.push_back({box, category});
  }

  // Points: sixty percent on object surfaces, the rest ground clutter. The
  // sensor sits at the origin, so occluded samples (rays passing through a
  // box) are redrawn; LiDAR leaves shadows behind objects.
  const std::size_t total = static_cast<std::size_t>(config.points);
  const std::size_t on_objects =
      sample.objects.empty() ? 0 : (total * 3) / 5;
  sample.cloud.points.reserve(total);
  sample.cloud.intensity.reserve(total);
  for (std::size_t i = 0; i < on_objects; ++i) {
    const SceneObject& obj = sample.objects[i % sample.objects.size()];
    geom::Vec3 p{};
    for (int attempt = 0; attempt < 64; ++attempt) {
      p = detail::sample_surface_point(obj.box, point_rng);
      if (detail::point_visible(sample.objects, p)) break;
    }
    p.x += config.noise * point_rng.normal() * 0.05;
    p.y += config.noise * point_rng.normal() * 0.05;
    p.z += config.noise * point_rng.normal() * 0.05;
    if (!crop.contains(p)) {
      p.x = std::clamp(p.x, crop.x[0], crop.x[1]);
      p.y = std::clamp(p.y, crop.y[0], crop.y[1]);
      p.z = std::clamp(p.z, crop.z[0], crop.z[1]);
    }
    sample.cloud.points.push_back(p);
    sample.cloud.intensity.push_back(0.5 + 0.5 * point_rng.uniform());
    sample.point_source.push_back(static_cast<int>(i % sample.objects.size()));
  }
  while (sample.cloud.points.size() < total) {
    geom::Vec3 p{};
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double z = point_rng.uniform(4.0, 60.0);
      const double reach = (cx / focal) * z;
      p = {point_rng.uniform(-0.6, 0.6) * reach,
           detail::kGroundY + config.noise * point_rng.normal() * 0.05, z};
      p.x = std::clamp(p.x, crop.x[0], crop.x[1]);
      p.y = std::clamp(p.y, crop.y[0], crop.y[1]);
      if (detail::point_visible(sample.objects, p)) break;
    }
    sample.cloud.points.push_back(p);
    sample.cloud.intensity.push_back(0.2 + 0.3 * point_rng.uniform());
    sample.point_source.push_back(-1);
  }

  sample.level_strides = {1, 2, 4, 8};
  sample.image_features = render_feature_levels(
      sample.objects, sample.calib, static_cast<std::size_t>(config.image_channels), config.noise,
      sample.level_strides, feature_rng);
  return sample;
}

}  // namespace fusedet::scene
