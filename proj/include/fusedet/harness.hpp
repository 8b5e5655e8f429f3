// harness.hpp - synthetic stand-ins for the trained networks: detector
// emulators with controlled confidence calibration, point-feature providers,
// and a linear probe for feature separability. Everything is seeded and
// deterministic.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fusedet/cdmp.hpp"
#include "fusedet/errors.hpp"
#include "fusedet/geometry.hpp"
#include "fusedet/rng.hpp"
#include "fusedet/scene.hpp"
#include "fusedet/setdet.hpp"

namespace fusedet::harness {

// Confidence calibration of the emulated detector:
//   set_based   - classification confidence tracks localization quality, and
//                 each ground-truth box gets exactly one top-tier match score
//   cls_trained - confidence independent of localization quality
//   iou_trained - partially calibrated confidence
enum class DetectorModel { set_based, cls_trained, iou_trained };

inline const char* model_name(DetectorModel m) {
  switch (m) {
    case DetectorModel::set_based: return "set-based";
    case DetectorModel::cls_trained: return "nms-cls";
    default: return "nms-iou";
  }
}

struct EmulatedScene {
  std::vector<setdet::PredictedBox> boxes;
  std::vector<double> quality;  // max IoU against any ground-truth box
};

namespace detail {

inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

inline geom::Box3D jitter_box(const geom::Box3D& b, Rng& rng, double pos, double ang,
                              double size) {
  const auto u = [&rng] { return rng.uniform(-1.0, 1.0); };
  return geom::Box3D(b.x + pos * b.l * u(), b.y + 0.5 * pos * b.h * u(), b.z + pos * b.w * u(),
                     std::max(0.2, b.h * (1.0 + size * u())), std::max(0.2, b.w * (1.0 + size * u())),
                     std::max(0.2, b.l * (1.0 + size * u())), b.theta + ang * u());
}

}  // namespace detail

// Generates `count` candidate boxes for a scene: one tight candidate per
// ground-truth box, a pool of looser jitters, and background boxes, then
// assigns confidences according to the detector model.
inline EmulatedScene emulate_predictions(const std::vector<geom::Box3D>& ground_truth,
                                         DetectorModel model, std::size_t count,
                                         geom::IouKind kind, Rng& rng) {
  if (count < ground_truth.size())
    throw ContractError("emulate_predictions: " + std::to_string(count) + " candidates for " +
                        std::to_string(ground_truth.size()) + " ground-truth boxes");
  EmulatedScene out;
  out.boxes.reserve(count);
  out.quality.reserve(count);

  std::vector<geom::Box3D> raw;
  std::vector<std::uint8_t> winner;
  for (std::size_t i = 0; i < count; ++i) {
    if (!ground_truth.empty() && i < ground_truth.size()) {
      raw.push_back(detail::jitter_box(ground_truth[i], rng, 0.02, 0.015, 0.015));
      winner.push_back(1);
    } else if (!ground_truth.empty() && rng.uniform() < 0.6) {
      const geom::Box3D& base = ground_truth[rng.below(ground_truth.size())];
      raw.push_back(detail::jitter_box(base, rng, 0.18, 0.2, 0.12));
      winner.push_back(0);
    } else {
      raw.push_back(geom::Box3D(rng.uniform(-20, 20), 0.8, rng.uniform(10, 50),
                                rng.uniform(1.3, 1.8), rng.uniform(1.4, 1.8),
                                rng.uniform(3.2, 4.4), rng.uniform(-geom::kPi, geom::kPi)));
      winner.push_back(0);
    }
  }

  for (std::size_t i = 0; i < count; ++i) {
    double q = 0.0;
    for (const geom::Box3D& gt : ground_truth) q = std::max(q, geom::iou(raw[i], gt, kind));
    const double u = rng.uniform(-1.0, 1.0);
    double cls = 0.0;
    switch (model) {
      case DetectorModel::set_based: cls = detail::clamp01(q + 0.04 * u); break;
      case DetectorModel::cls_trained: cls = detail::clamp01(0.55 + 0.35 * u); break;
      case DetectorModel::iou_trained: cls = detail::clamp01(0.25 + 0.55 * q + 0.12 * u); break;
    }
    double cm;
    if (model == DetectorModel::set_based)
      cm = winner[i] ? detail::clamp01(0.86 + 0.1 * rng.uniform())
                     : detail::clamp01(std::min(0.75, 0.6 * q + 0.08 * rng.uniform()));
    else
      cm = cls;
    out.boxes.emplace_back(raw[i], cls, cm);
    out.quality.push_back(q);
  }
  return out;
}

// Exhaustive assignment search used as the match-demo oracle; independent of
// the production solver (plain recursion over injections, maximizing finite
// matches then minimizing cost).
inline double exhaustive_min_cost(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return 0.0;
  const std::size_t m = cost.front().size();
  double best_total = std::numeric_limits<double>::max();
  std::size_t best_matched = 0;
  std::vector<char> used(m, 0);
  const auto recurse = [&](auto&& self, std::size_t row, double running,
                           std::size_t matched) -> void {
    if (row == n) {
      if (matched > best_matched || (matched == best_matched && running < best_total)) {
        best_matched = matched;
        best_total = running;
      }
      return;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      const bool finite = std::isfinite(cost[row][j]);
      self(self, row + 1, finite ? running + cost[row][j] : running, matched + (finite ? 1 : 0));
      used[j] = 0;
    }
  };
  recurse(recurse, 0, 0.0, 0);
  return best_total;
}

// ---- feature providers and the linear probe ----------------------------------------

// Weakly informative per-point features: a noisy height cue, range, and
// intensity plus noise channels. Nonnegative so relu-style updates leave
// them intact.
inline DiffArray make_point_latents(const scene::SceneSample& sample, std::size_t channels,
                                    Rng& rng) {
  const std::size_t n = sample.cloud.size();
  DiffArray latents = DiffArray::zeros({n, channels});
  for (std::size_t i = 0; i < n; ++i) {
    const geom::Vec3& p = sample.cloud.points[i];
    const double height = std::max(0.0, 1.6 - p.y);
    latents(i, 0) = 0.3 * height + 0.7 * rng.uniform();
    if (channels > 1) latents(i, 1) = p.z / 70.4;
    if (channels > 2)
      latents(i, 2) = sample.cloud.intensity.empty() ? 0.5 : sample.cloud.intensity[i];
    for (std::size_t c = 3; c < channels; ++c) latents(i, c) = rng.uniform();
  }
  return latents;
}

// Projected (row, col) image positions for every point.
inline std::vector<cdmp::Position> project_positions(const scene::SceneSample& sample) {
  const auto proj = geom::project_points(sample.cloud.points, sample.calib);
  std::vector<cdmp::Position> out(proj.uv.size());
  for (std::size_t i = 0; i < proj.uv.size(); ++i)
    out[i] = {proj.uv[i][1], proj.uv[i][0]};  // (v, u) -> (row, col)
  return out;
}

// Generator provenance when available (synthetic scenes), geometric
// containment with a small slack otherwise (loaded data).
inline std::vector<std::uint8_t> foreground_labels(const scene::SceneSample& sample) {
  std::vector<std::uint8_t> labels(sample.cloud.size(), 0);
  if (sample.point_source.size() == sample.cloud.size()) {
    for (std::size_t i = 0; i < sample.cloud.size(); ++i)
      labels[i] = sample.point_source[i] >= 0;
    return labels;
  }
  for (std::size_t i = 0; i < sample.cloud.size(); ++i)
    for (const scene::SceneObject& obj : sample.objects)
      if (geom::point_in_box(obj.box, sample.cloud.points[i], 0.05)) {
        labels[i] = 1;
        break;
      }
  return labels;
}

namespace detail {

// Gaussian elimination with partial pivoting; a is dense symmetric here.
inline std::vector<double> solve_linear(std::vector<std::vector<double>> a,
                                        std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    const double d = a[col][col];
    if (std::abs(d) < 1e-12) continue;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / d;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = std::abs(a[i][i]) < 1e-12 ? 0.0 : b[i] / a[i][i];
  return x;
}

}  // namespace detail

// In-sample accuracy of a ridge-regularized least-squares probe predicting
// the labels from the rows of `features` (bias folded in).
inline double linear_probe_accuracy(const DiffArray& features,
                                    const std::vector<std::uint8_t>& labels, double ridge = 1e-3) {
  const std::size_t n = features.shape[0];
  const std::size_t d = features.shape[1] + 1;
  if (labels.size() != n)
    throw DimensionError("linear_probe_accuracy: " + std::to_string(n) + " rows vs " +
                         std::to_string(labels.size()) + " labels");
  std::vector<std::vector<double>> xtx(d, std::vector<double>(d, 0.0));
  std::vector<double> xty(d, 0.0);
  std::vector<double> xi(d, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c + 1 < d; ++c) xi[c] = features.data[i * (d - 1) + c];
    xi[d - 1] = 1.0;
    const double y = labels[i] ? 1.0 : 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = r; c < d; ++c) xtx[r][c] += xi[r] * xi[c];
      xty[r] += xi[r] * y;
    }
  }
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < r; ++c) xtx[r][c] = xtx[c][r];
    xtx[r][r] += ridge;
  }
  const std::vector<double> w = detail::solve_linear(std::move(xtx), std::move(xty));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double score = w[d - 1];
    for (std::size_t c = 0; c + 1 < d; ++c) score += w[c] * features.data[i * (d - 1) + c];
    correct += (score > 0.5) == (labels[i] != 0);
  }
  return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace fusedet::harness
