// geometry.hpp - calibration projection, differentiable bilinear sampling,
// oriented 3D boxes with rotated-rectangle IoU, and bin-based box encoding.
//
// Conventions:
//   * Boxes live in a camera-style frame: x right, y down (vertical axis),
//     z forward. The ground-plane footprint is the x-z rectangle of size
//     l (along heading) by w (lateral), rotated by theta about the vertical
//     axis; theta is normalized to [-pi, pi).
//   * Projected image coordinates are (u, v) = (column, row).
//   * bilinear_sample coordinates index the map axes directly: column 0 of
//     the coordinate array addresses axis 0 (rows) of the map, column 1
//     addresses axis 1 (columns). Out-of-bounds neighbors read as zero.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "fusedet/errors.hpp"
#include "fusedet/numerics.hpp"

namespace fusedet::geom {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

// Wraps an angle to [-pi, pi).
inline double wrap_angle(double theta) {
  double t = std::fmod(theta + kPi, 2.0 * kPi);
  if (t < 0.0) t += 2.0 * kPi;
  return t - kPi;
}

// Oriented 3D bounding box (x, y, z, h, w, l, theta); (x, y, z) is the
// volumetric center.
struct Box3D {
  double x = 0.0, y = 0.0, z = 0.0;
  double h = 1.0, w = 1.0, l = 1.0;
  double theta = 0.0;

  Box3D() = default;
  Box3D(double cx, double cy, double cz, double bh, double bw, double bl, double th)
      : x(cx), y(cy), z(cz), h(bh), w(bw), l(bl), theta(wrap_angle(th)) {
    if (!(h > 0.0) || !(w > 0.0) || !(l > 0.0))
      throw ContractError("Box3D: non-positive size h=" + std::to_string(h) +
                          " w=" + std::to_string(w) + " l=" + std::to_string(l));
  }

  Vec3 center() const { return {x, y, z}; }
};

// ---- polygon machinery -------------------------------------------------------

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Footprint corners in the (x, z) plane, counter-clockwise.
inline std::array<Vec2, 4> footprint_corners(const Box3D& b) {
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double lx = 0.5 * b.l * c, ly = 0.5 * b.l * s;
  const double wx = -0.5 * b.w * s, wy = 0.5 * b.w * c;
  return {Vec2{b.x + lx + wx, b.z + ly + wy}, Vec2{b.x - lx + wx, b.z - ly + wy},
          Vec2{b.x - lx - wx, b.z - ly - wy}, Vec2{b.x + lx - wx, b.z + ly - wy}};
}

// Shoelace area; degenerate inputs (< 3 vertices) have area 0.
inline double polygon_area(const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::abs(acc);
}

// Sutherland-Hodgman clip of `subject` against a counter-clockwise convex
// quad. Points on a clip edge are kept.
inline std::vector<Vec2> clip_polygon(std::vector<Vec2> subject, const std::array<Vec2, 4>& clip) {
  for (std::size_t e = 0; e < 4 && !subject.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % 4];
    std::vector<Vec2> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2& cur = subject[i];
      const Vec2& nxt = subject[(i + 1) % subject.size()];
      const double dc = cross2(a, b, cur);
      const double dn = cross2(a, b, nxt);
      if (dc >= 0.0) out.push_back(cur);
      if ((dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0)) {
        const double s = dc / (dc - dn);
        out.push_back(Vec2{cur.x + s * (nxt.x - cur.x), cur.y + s * (nxt.y - cur.y)});
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline double footprint_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = footprint_corners(a);
  const auto cb = footprint_corners(b);
  std::vector<Vec2> subject(ca.begin(), ca.end());
  return polygon_area(clip_polygon(std::move(subject), cb));
}

// ---- IoU kernels ---------------------------------------------------------------

// Intersection over union of the rotated ground-plane footprints.
inline double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = footprint_intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double area_a = a.l * a.w;
  const double area_b = b.l * b.w;
  return inter / (area_a + area_b - inter);
}

// Footprint intersection times vertical overlap over union volume.
inline double iou_3d(const Box3D& a, const Box3D& b) {
  const double top = std::min(a.y + 0.5 * a.h, b.y + 0.5 * b.h);
  const double bottom = std::max(a.y - 0.5 * a.h, b.y - 0.5 * b.h);
  const double dy = top - bottom;
  if (dy <= 0.0) return 0.0;
  const double inter = footprint_intersection_area(a, b) * dy;
  if (inter <= 0.0) return 0.0;
  const double vol_a = a.l * a.w * a.h;
  const double vol_b = b.l * b.w * b.h;
  return inter / (vol_a + vol_b - inter);
}

enum class IouKind { bev, iou3d };

inline double iou(const Box3D& a, const Box3D& b, IouKind kind) {
  return kind == IouKind::bev ? iou_bev(a, b) : iou_3d(a, b);
}

// Inclusive point-in-box test (boundary counts as inside).
inline bool point_in_box(const Box3D& b, const Vec3& p, double eps = 1e-9) {
  if (std::abs(p.y - b.y) > 0.5 * b.h + eps) return false;
  const double c = std::cos(b.theta), s = std::sin(b.theta);
  const double dx = p.x - b.x, dz = p.z - b.z;
  const double local_l = c * dx + s * dz;
  const double local_w = -s * dx + c * dz;
  return std::abs(local_l) <= 0.5 * b.l + eps && std::abs(local_w) <= 0.5 * b.w + eps;
}

// ---- calibration projection -----------------------------------------------------

// Composed rectification + projection matrix mapping homogeneous camera/LiDAR
// frame points to image-plane homogeneous coordinates.
struct CalibMatrix {
  std::array<double, 12> p{};  // 3x4 row-major
  int image_width = 0;
  int image_height = 0;

  CalibMatrix() = default;
  CalibMatrix(const std::array<double, 12>& matrix, int width, int height)
      : p(matrix), image_width(width), image_height(height) {
    if (p[8] == 0.0 && p[9] == 0.0 && p[10] == 0.0 && p[11] == 0.0)
      throw ContractError("CalibMatrix: third row is all zero");
    if (width <= 0 || height <= 0)
      throw ContractError("CalibMatrix: non-positive image size " + std::to_string(width) + "x" +
                          std::to_string(height));
  }

  // Simple pinhole with focal length f and principal point (cx, cy).
  static CalibMatrix pinhole(double f, double cx, double cy, int width, int height) {
    return CalibMatrix({f, 0, cx, 0, 0, f, cy, 0, 0, 0, 1, 0}, width, height);
  }
};

struct Projection {
  std::vector<std::array<double, 2>> uv;  // (u, v) = (column, row)
  std::vector<std::uint8_t> in_frustum;   // depth > 0 and inside image bounds
};

inline Projection project_points(const std::vector<Vec3>& points, const CalibMatrix& calib) {
  Projection out;
  out.uv.resize(points.size());
  out.in_frustum.resize(points.size());
  const auto& p = calib.p;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& q = points[i];
    const double hu = p[0] * q.x + p[1] * q.y + p[2] * q.z + p[3];
    const double hv = p[4] * q.x + p[5] * q.y + p[6] * q.z + p[7];
    const double hw = p[8] * q.x + p[9] * q.y + p[10] * q.z + p[11];
    double u = 0.0, v = 0.0;
    if (hw != 0.0) {
      u = hu / hw;
      v = hv / hw;
    }
    out.uv[i] = {u, v};
    out.in_frustum[i] = hw > 0.0 && u >= 0.0 && u < calib.image_width && v >= 0.0 &&
                        v < calib.image_height;
  }
  return out;
}

// ---- differentiable bilinear sampling ---------------------------------------------

// Samples an HxWxC map at N continuous coordinates (axis-0 index, axis-1
// index). Out-of-bounds neighbors contribute zero, so the sampler stays
// linear across the border. Gradients flow to both the map and the
// coordinates.
inline DiffArray bilinear_sample(Tape& tape, const DiffArray& feature_map, const DiffArray& coords) {
  if (feature_map.rank() != 3)
    throw DimensionError("bilinear_sample: feature map must be HxWxC, got " +
                         shape_str(feature_map.shape));
  if (coords.rank() != 2 || coords.shape[1] != 2)
    throw DimensionError("bilinear_sample: coords must be Nx2, got " + shape_str(coords.shape));
  for (double v : coords.data)
    if (!std::isfinite(v)) throw DomainError("bilinear_sample: non-finite coordinate");

  const std::size_t rows = feature_map.shape[0];
  const std::size_t cols = feature_map.shape[1];
  const std::size_t ch = feature_map.shape[2];
  const std::size_t n = coords.shape[0];

  const auto texel = [rows, cols, ch](const std::vector<double>& map, long r, long c,
                                      std::size_t k) -> double {
    if (r < 0 || c < 0 || r >= static_cast<long>(rows) || c >= static_cast<long>(cols)) return 0.0;
    return map[(static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)) * ch + k];
  };

  DiffArray out = DiffArray::zeros({n, ch});
  for (std::size_t i = 0; i < n; ++i) {
    const double r = coords.data[2 * i];
    const double c = coords.data[2 * i + 1];
    const long r0 = static_cast<long>(std::floor(r));
    const long c0 = static_cast<long>(std::floor(c));
    const double dr = r - static_cast<double>(r0);
    const double dc = c - static_cast<double>(c0);
    const double w00 = (1.0 - dr) * (1.0 - dc);
    const double w01 = (1.0 - dr) * dc;
    const double w10 = dr * (1.0 - dc);
    const double w11 = dr * dc;
    for (std::size_t k = 0; k < ch; ++k) {
      out.data[i * ch + k] = w00 * texel(feature_map.data, r0, c0, k) +
                             w01 * texel(feature_map.data, r0, c0 + 1, k) +
                             w10 * texel(feature_map.data, r0 + 1, c0, k) +
                             w11 * texel(feature_map.data, r0 + 1, c0 + 1, k);
    }
  }

  const int imap = tape.id_of(feature_map);
  const int icoord = tape.id_of(coords);
  return tape.record(
      std::move(out), {imap, icoord},
      [imap, icoord, rows, cols, ch, n, texel](Tape& t, int self) {
        const auto& g = t.grad_buffer(self);
        const auto& map = t.node_array(imap).data;
        const auto& cv = t.node_array(icoord).data;
        auto& gmap = t.grad_buffer(imap);
        auto& gcoord = t.grad_buffer(icoord);
        const auto scatter = [&gmap, rows, cols, ch](long r, long c, std::size_t k, double v) {
          if (r < 0 || c < 0 || r >= static_cast<long>(rows) || c >= static_cast<long>(cols)) return;
          gmap[(static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)) * ch + k] += v;
        };
        for (std::size_t i = 0; i < n; ++i) {
          const double r = cv[2 * i];
          const double c = cv[2 * i + 1];
          const long r0 = static_cast<long>(std::floor(r));
          const long c0 = static_cast<long>(std::floor(c));
          const double dr = r - static_cast<double>(r0);
          const double dc = c - static_cast<double>(c0);
          double dout_dr = 0.0, dout_dc = 0.0;
          for (std::size_t k = 0; k < ch; ++k) {
            const double gk = g[i * ch + k];
            const double f00 = texel(map, r0, c0, k);
            const double f01 = texel(map, r0, c0 + 1, k);
            const double f10 = texel(map, r0 + 1, c0, k);
            const double f11 = texel(map, r0 + 1, c0 + 1, k);
            scatter(r0, c0, k, (1.0 - dr) * (1.0 - dc) * gk);
            scatter(r0, c0 + 1, k, (1.0 - dr) * dc * gk);
            scatter(r0 + 1, c0, k, dr * (1.0 - dc) * gk);
            scatter(r0 + 1, c0 + 1, k, dr * dc * gk);
            dout_dr += gk * ((1.0 - dc) * (f10 - f00) + dc * (f11 - f01));
            dout_dc += gk * ((1.0 - dr) * (f01 - f00) + dr * (f11 - f10));
          }
          gcoord[2 * i] += dout_dr;
          gcoord[2 * i + 1] += dout_dc;
        }
      });
}

// ---- bin-based box encoding --------------------------------------------------------

struct BinConfig {
  double xz_extent = 3.0;        // half-size of the binned neighborhood, meters
  double xz_bin_width = 0.5;     // meters
  std::size_t theta_bins = 12;   // over the full [-pi, pi) range
  Vec3 size_reference{0, 0, 0};  // (h, w, l) subtracted before storing residuals

  std::size_t xz_bins() const {
    return static_cast<std::size_t>(std::llround(2.0 * xz_extent / xz_bin_width));
  }
  double theta_bin_width() const { return 2.0 * kPi / static_cast<double>(theta_bins); }
};

// Discrete bin plus continuous residual for each encoded dimension. Binned
// dimensions are x, z, theta; y, h, w, l carry residuals only.
struct BinEncoding {
  int bin_x = 0;
  int bin_z = 0;
  int bin_theta = 0;
  // Residuals in fixed order: x, y, z, h, w, l, theta.
  std::array<double, 7> residuals{};
  BinConfig config;
};

namespace detail {

inline std::pair<int, double> quantize(double offset, double lo, double width, std::size_t count) {
  int idx = static_cast<int>(std::floor((offset - lo) / width));
  if (idx < 0) idx = 0;
  if (idx >= static_cast<int>(count)) idx = static_cast<int>(count) - 1;
  const double center = lo + (static_cast<double>(idx) + 0.5) * width;
  return {idx, offset - center};
}

}  // namespace detail

inline BinEncoding encode_bins(const Box3D& target, const Vec3& anchor, const BinConfig& config) {
  const double dx = target.x - anchor.x;
  const double dz = target.z - anchor.z;
  if (std::abs(dx) > config.xz_extent || std::abs(dz) > config.xz_extent)
    throw DomainError("encode_bins: target offset (" + std::to_string(dx) + ", " +
                      std::to_string(dz) + ") outside +/-" + std::to_string(config.xz_extent) +
                      " neighborhood");
  BinEncoding enc;
  enc.config = config;
  const auto [ix, rx] = detail::quantize(dx, -config.xz_extent, config.xz_bin_width, config.xz_bins());
  const auto [iz, rz] = detail::quantize(dz, -config.xz_extent, config.xz_bin_width, config.xz_bins());
  const auto [it, rt] =
      detail::quantize(wrap_angle(target.theta), -kPi, config.theta_bin_width(), config.theta_bins);
  enc.bin_x = ix;
  enc.bin_z = iz;
  enc.bin_theta = it;
  enc.residuals = {rx,
                   target.y - anchor.y,
                   rz,
                   target.h - config.size_reference.x,
                   target.w - config.size_reference.y,
                   target.l - config.size_reference.z,
                   rt};
  return enc;
}

inline Box3D decode_bins(const BinEncoding& enc, const Vec3& anchor) {
  const BinConfig& cfg = enc.config;
  const auto center = [](double lo, double width, int idx) {
    return lo + (static_cast<double>(idx) + 0.5) * width;
  };
  const double x = anchor.x + center(-cfg.xz_extent, cfg.xz_bin_width, enc.bin_x) + enc.residuals[0];
  const double y = anchor.y + enc.residuals[1];
  const double z = anchor.z + center(-cfg.xz_extent, cfg.xz_bin_width, enc.bin_z) + enc.residuals[2];
  const double h = cfg.size_reference.x + enc.residuals[3];
  const double w = cfg.size_reference.y + enc.residuals[4];
  const double l = cfg.size_reference.z + enc.residuals[5];
  const double theta = center(-kPi, cfg.theta_bin_width(), enc.bin_theta) + enc.residuals[6];
  return Box3D(x, y, z, h, w, l, theta);
}

}  // namespace fusedet::geom
