// gradcheck.hpp - the finite-difference verification suites behind the
// gradcheck command: every differentiable operation exported by the library,
// including the full propagation composite, checked at seeded random points.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fusedet/cdmp.hpp"
#include "fusedet/geometry.hpp"
#include "fusedet/losses.hpp"
#include "fusedet/numerics.hpp"
#include "fusedet/rng.hpp"
#include "fusedet/setdet.hpp"

namespace fusedet::gradcheck {

struct Suite {
  std::string name;
  // Max relative error across 10 seeded points.
  std::function<double(std::uint64_t seed)> max_rel_error;
};

namespace detail {

inline DiffArray random_array(Rng& rng, Shape shape, double lo, double hi) {
  DiffArray a = DiffArray::zeros(std::move(shape));
  for (double& v : a.data) v = rng.uniform(lo, hi);
  return a;
}

inline DiffArray away_from_zero(Rng& rng, Shape shape, double margin = 0.05) {
  DiffArray a = random_array(rng, std::move(shape), -1.5, 1.5);
  for (double& v : a.data)
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  return a;
}

struct CdmpFixture {
  DiffArray latents;
  std::vector<cdmp::Position> positions;
  std::vector<DiffArray> maps;
  std::vector<double> strides;
  cdmp::PropagationParams params;
};

inline CdmpFixture cdmp_fixture(Rng& rng, std::size_t levels) {
  CdmpFixture f;
  const std::size_t n = 5, c_pt = 2, c_img = 2, k = 4;
  f.latents = random_array(rng, {n, c_pt}, -1, 1);
  f.positions.resize(n);
  for (auto& p : f.positions) {
    p[0] = rng.below(5) + rng.uniform(0.2, 0.8);
    p[1] = rng.below(5) + rng.uniform(0.2, 0.8);
  }
  std::vector<std::size_t> channels;
  double stride = 1.0;
  std::size_t extent = 8;
  for (std::size_t l = 0; l < levels; ++l) {
    f.maps.push_back(random_array(rng, {extent, extent, c_img}, -1, 1));
    f.strides.push_back(stride);
    channels.push_back(c_img);
    stride *= 2;
    extent = extent > 1 ? extent / 2 : 1;
  }
  f.params = cdmp::random_params(rng, c_pt, channels, k, n);
  return f;
}

// Scalar loss through a full propagation run, with one chosen array treated
// as the differentiated input.
enum class CdmpTarget { latents, level_map, walk_weight, affinity_weight, image_walk_weight };

inline double check_propagate(std::uint64_t seed, cdmp::Variant variant, CdmpTarget target) {
  double worst = 0.0;
  Rng master(seed);
  for (int point = 0; point < 10; ++point) {
    Rng rng = master.split(static_cast<std::uint64_t>(point));
    CdmpFixture f = cdmp_fixture(rng, variant == cdmp::Variant::cdmp_1x1 ? 1 : 4);

    const auto loss = [&f, variant](Tape& t, const DiffArray& v, CdmpTarget tgt) {
      cdmp::PropagationParams q = cdmp::attach(t, f.params);
      std::vector<DiffArray> maps;
      for (std::size_t l = 0; l < f.maps.size(); ++l)
        maps.push_back(tgt == CdmpTarget::level_map && l == 0 ? v : t.leaf(f.maps[l]));
      cdmp::FeatureGraph img;
      img.level_maps = maps;
      img.level_strides = f.strides;
      cdmp::FeatureGraph pts;
      pts.latents = tgt == CdmpTarget::latents ? v : t.leaf(f.latents);
      pts.positions = f.positions;
      if (tgt == CdmpTarget::walk_weight) q.point_walk.weight = v;
      if (tgt == CdmpTarget::image_walk_weight) q.image_walk.weight = v;
      if (tgt == CdmpTarget::affinity_weight) q.affinity[0].weight = v;
      DiffArray out = cdmp::propagate(t, pts, img, q, variant);
      return t.sum(t.mul(out, out));
    };

    const DiffArray* at = nullptr;
    switch (target) {
      case CdmpTarget::latents: at = &f.latents; break;
      case CdmpTarget::level_map: at = &f.maps[0]; break;
      case CdmpTarget::walk_weight: at = &f.params.point_walk.weight; break;
      case CdmpTarget::image_walk_weight: at = &f.params.image_walk.weight; break;
      case CdmpTarget::affinity_weight: at = &f.params.affinity[0].weight; break;
    }
    const double err = finite_diff_check(
        [&loss, target](Tape& t, const DiffArray& v) { return loss(t, v, target); }, *at, 1e-6);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace detail

inline std::vector<Suite> suites() {
  std::vector<Suite> out;

  out.push_back({"numerics.matmul", [](std::uint64_t seed) {
    double worst = 0.0;
    Rng master(seed);
    for (int point = 0; point < 10; ++point) {
      Rng rng = master.split(point);
      const DiffArray a = detail::random_array(rng, {3, 4}, -2, 2);
      const DiffArray b = detail::random_array(rng, {4, 2}, -2, 2);
      worst = std::max(worst, finite_diff_check(
                                  [&b](Tape& t, const DiffArray& v) {
                                    DiffArray y = t.matmul(v, t.leaf(b));
                                    return t.sum(t.mul(y, y));
                                  },
                                  a, 1e-6));
      worst = std::max(worst, finite_diff_check(
                                  [&a](Tape& t, const DiffArray& v) {
                                    DiffArray y = t.matmul(t.leaf(a), v);
                                    return t.sum(t.mul(y, y));
                                  },
                                  b, 1e-6));
    }
    return worst;
  }});

  out.push_back({"numerics.elementwise", [](std::uint64_t seed) {
    double worst = 0.0;
    Rng master(seed);
    for (int point = 0; point < 10; ++point) {
      Rng rng = master.split(point);
      const DiffArray x = detail::away_from_zero(rng, {3, 3});
      const DiffArray y = detail::away_from_zero(rng, {3, 3});
      worst = std::max(worst, finite_diff_check(
                                  [&y](Tape& t, const DiffArray& v) {
                                    DiffArray r = t.relu(t.scale(t.add(v, t.leaf(y)), 1.3));
                                    DiffArray safe = t.add_const(t.mul(v, v), 0.5);
                                    return t.sum(t.add(r, t.log(safe)));
                                  },
                                  x, 1e-6));
    }
    return worst;
  }});

  out.push_back({"numerics.concat", [](std::uint64_t seed) {
    double worst = 0.0;
    Rng master(seed);
    for (int point = 0; point < 10; ++point) {
      Rng rng = master.split(point);
      const DiffArray x = detail::random_array(rng, {2, 3}, -1, 1);
      const DiffArray y = detail::random_array(rng, {2, 4}, -1, 1);
      worst = std::max(worst, finite_diff_check(
                                  [&y](Tape& t, const DiffArray& v) {
                                    DiffArray cat = t.concat_channels({v, t.leaf(y)});
                                    DiffArray part = t.slice_channels(cat, 1, 6);
                                    return t.sum(t.mul(part, part));
                                  },
                                  x, 1e-6));
    }
    return worst;
  }});

  out.push_back({"geometry.bilinear_map", [](std::uint64_t seed) {
    double worst = 0.0;
    Rng master(seed);
    for (int point = 0; point < 10; ++point) {
      Rng rng = master.split(point);
      const DiffArray map = detail::random_array(rng, {4, 5, 3}, -1, 1);
      DiffArray coords = DiffArray::zeros({5, 2});
      for (std::size_t i = 0; i < 5; ++i) {
        coords.data[2 * i] = rng.below(3) + rng.uniform(0.1, 0.9);
        coords.data[2 * i + 1] = rng.below(4) + rng.uniform(0.1, 0.9);
      }
      worst = std::max(worst, finite_diff_check(
                                  [&coords](Tape& t, const DiffArray& m) {
                                    DiffArray s = geom::bilinear_sample(t, m, t.leaf(coords));
                                    return t.sum(t.mul(s, s));
                                  },
                                  map, 1e-6));
    }
    return worst;
  }});

  out.push_back({"geometry.bilinear_coords", [](std::uint64_t seed) {
    double worst = 0.0;
    Rng master(seed);
    for (int point = 0; point < 10; ++point) {
      Rng rng = master.split(point);
      const DiffArray map = detail::random_array(rng, {4, 5, 3}, -1, 1);
      DiffArray coords = DiffArray::zeros({5, 2});
      for (std::size_t i = 0; i < 5; ++i) {
        coords.data[2 * i] = rng.below(3) + rng.uniform(0.1, 0.9);
        coords.data[2 * i + 1] = rng.below(4) + rng.uniform(0.1, 0.9);
      }
      worst = std::max(worst, finite_diff_check(
                                  [&map](Tape& t, const DiffArray& c) {
                                    DiffArray s = geom::bilinear_sample(t, t.leaf(map), c);
                                    return t.sum(t.mul(s, s));
                                  },
                                  coords, 1e-6));
    }
    return worst;
  }});

  using detail::CdmpTarget;
  out.push_back({"cdmp.propagate_latents", [](std::uint64_t seed) {
    return detail::check_propagate(seed, cdmp::Variant::cdmp_1x1, CdmpTarget::latents);
  }});
  out.push_back({"cdmp.propagate_level_maps", [](std::uint64_t seed) {
    return detail::check_propagate(seed, cdmp::Variant::cdmp_1x1, CdmpTarget::level_map);
  }});
  out.push_back({"cdmp.propagate_walk_params", [](std::uint64_t seed) {
    return detail::check_propagate(seed, cdmp::Variant::cdmp_1x1, CdmpTarget::walk_weight);
  }});
  out.push_back({"cdmp.propagate_image_walk_params", [](std::uint64_t seed) {
    return detail::check_propagate(seed, cdmp::Variant::cdmp_1x1, CdmpTarget::image_walk_weight);
  }});
  out.push_back({"cdmp.propagate_affinity_params", [](std::uint64_t seed) {
    return detail::check_propagate(seed, cdmp::Variant::cdmp_1x1, CdmpTarget::affinity_weight);
  }});
  out.push_back({"cdmp.propagate_1x4_latents", [](std::uint64_t seed) {
    return detail::check_propagate(seed, cdmp::Variant::cdmp_1x4, CdmpTarget::latents);
  }});

  out.push_back({"setdet.match_head_loss", [](std::uint64_t seed) {
    double worst = 0.0;
    Rng master(seed);
    for (int point = 0; point < 10; ++point) {
      Rng rng = master.split(point);
      DiffArray scores = DiffArray::zeros({8});
      std::vector<std::uint8_t> labels(8);
      for (std::size_t i = 0; i < 8; ++i) {
        scores.data[i] = rng.uniform(0.05, 0.95);
        labels[i] = static_cast<std::uint8_t>(rng.below(2));
      }
      worst = std::max(worst, finite_diff_check(
                                  [&labels](Tape& t, const DiffArray& s) {
                                    return setdet::match_head_loss(t, s, labels);
                                  },
                                  scores, 1e-6));
    }
    return worst;
  }});

  out.push_back({"losses.focal_cls", [](std::uint64_t seed) {
    double worst = 0.0;
    Rng master(seed);
    for (int point = 0; point < 10; ++point) {
      Rng rng = master.split(point);
      DiffArray probs = DiffArray::zeros({6});
      std::vector<std::uint8_t> labels(6);
      for (std::size_t i = 0; i < 6; ++i) {
        probs.data[i] = rng.uniform(0.05, 0.95);
        labels[i] = static_cast<std::uint8_t>(rng.below(2));
      }
      worst = std::max(worst, finite_diff_check(
                                  [&labels](Tape& t, const DiffArray& p) {
                                    return losses::focal_cls_loss(t, p, labels,
                                                                  losses::LossConfig{});
                                  },
                                  probs, 1e-6));
    }
    return worst;
  }});

  out.push_back({"losses.bin_reg", [](std::uint64_t seed) {
    double worst = 0.0;
    Rng master(seed);
    for (int point = 0; point < 10; ++point) {
      Rng rng = master.split(point);
      geom::BinConfig bins;
      const geom::BinEncoding enc = geom::encode_bins(
          geom::Box3D(rng.uniform(-2.5, 2.5), rng.uniform(-0.5, 0.5), rng.uniform(-2.5, 2.5), 1.4,
                      1.5, 3.5, rng.uniform(-3.0, 3.0)),
          {0, 0, 0}, bins);
      DiffArray lx = detail::random_array(rng, {bins.xz_bins()}, -1.5, 1.5);
      DiffArray lz = detail::random_array(rng, {bins.xz_bins()}, -1.5, 1.5);
      DiffArray lt = detail::random_array(rng, {bins.theta_bins}, -1.5, 1.5);
      DiffArray res = DiffArray::zeros({7});
      for (std::size_t i = 0; i < 7; ++i) {
        double delta = rng.uniform(-1.7, 1.7);
        if (std::abs(std::abs(delta) - 1.0) < 2e-3) delta += delta > 0 ? 5e-3 : -5e-3;
        res.data[i] = enc.residuals[i] + delta;
      }
      worst = std::max(worst, finite_diff_check(
                                  [&](Tape& t, const DiffArray& r) {
                                    losses::BinPrediction pred{t.leaf(lx), t.leaf(lz), t.leaf(lt),
                                                               r};
                                    return losses::bin_reg_loss(t, pred, enc);
                                  },
                                  res, 1e-6));
      worst = std::max(worst, finite_diff_check(
                                  [&](Tape& t, const DiffArray& l) {
                                    losses::BinPrediction pred{l, t.leaf(lz), t.leaf(lt),
                                                               t.leaf(res)};
                                    return losses::bin_reg_loss(t, pred, enc);
                                  },
                                  lx, 1e-6));
    }
    return worst;
  }});

  out.push_back({"losses.total", [](std::uint64_t seed) {
    double worst = 0.0;
    Rng master(seed);
    for (int point = 0; point < 10; ++point) {
      Rng rng = master.split(point);
      const DiffArray parts = detail::random_array(rng, {5}, 0.0, 2.0);
      worst = std::max(worst, finite_diff_check(
                                  [](Tape& t, const DiffArray& p) {
                                    losses::LossConfig cfg;
                                    const auto at = [&](std::size_t i) {
                                      return t.reshape(t.slice_channels(p, i, i + 1), {1});
                                    };
                                    return losses::total_loss(t, {at(0), at(1)}, {at(2), at(3)},
                                                              at(4), cfg);
                                  },
                                  parts, 1e-6));
    }
    return worst;
  }});

  return out;
}

}  // namespace fusedet::gradcheck
