// cdmp.hpp - cross-sensor dynamic message propagation.
//
// Point features and image features are treated as two graphs addressed on
// the image plane: point nodes sit at their projected positions, image
// nodes at pixel centers. Each step predicts per-node 2D walks from the
// latents, gathers dynamic neighbor samples from both graphs with the
// bilinear sampler, predicts a per-edge affinity scalar and filter from the
// sampled image nodes, sums the filtered point messages over neighbors and
// levels, and folds the message back into the latents by residual addition
// or channel concatenation.
//
// Conventions:
//   * positions are (row, col) in full-resolution pixels; level l addresses
//     its map at position / stride_l, and walks / base offsets are expressed
//     in that level's own pixel units.
//   * point latents are scattered into a level-resolution grid by
//     nearest-pixel binning with mean pooling, then sampled bilinearly;
//     per-cell sums are accumulated in value order so the result is
//     independent of node ordering.
//   * with concat updates the latent width grows every step, so multi-step
//     propagation (T > 1) requires residual updates with a single parameter
//     set.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fusedet/errors.hpp"
#include "fusedet/geometry.hpp"
#include "fusedet/numerics.hpp"
#include "fusedet/rng.hpp"

namespace fusedet::cdmp {

using Position = std::array<double, 2>;  // (row, col)

// Node set with latent vectors plus the per-level feature grids. Point
// graphs carry latents and positions; image graphs carry the level maps.
struct FeatureGraph {
  DiffArray latents;                  // N x C
  std::vector<Position> positions;    // N, full-resolution pixels
  std::vector<DiffArray> level_maps;  // per level, H_l x W_l x C_l
  std::vector<double> level_strides;  // per level

  static FeatureGraph points(DiffArray latents, std::vector<Position> positions) {
    if (latents.rank() != 2 || latents.shape[0] != positions.size())
      throw DimensionError("FeatureGraph: latents " + shape_str(latents.shape) + " vs " +
                           std::to_string(positions.size()) + " positions");
    FeatureGraph g;
    g.latents = std::move(latents);
    g.positions = std::move(positions);
    return g;
  }

  static FeatureGraph image(std::vector<DiffArray> maps, std::vector<double> strides) {
    if (maps.size() != strides.size() || maps.empty())
      throw DimensionError("FeatureGraph: " + std::to_string(maps.size()) + " maps vs " +
                           std::to_string(strides.size()) + " strides");
    for (const DiffArray& m : maps)
      if (m.rank() != 3 || m.shape[0] == 0 || m.shape[1] == 0)
        throw DimensionError("FeatureGraph: level map must be HxWxC with positive spatial dims, got " +
                             shape_str(m.shape));
    for (double s : strides)
      if (!(s > 0.0)) throw ContractError("FeatureGraph: non-positive stride");
    FeatureGraph g;
    g.level_maps = std::move(maps);
    g.level_strides = std::move(strides);
    return g;
  }

  std::size_t node_count() const { return positions.size(); }
  std::size_t level_count() const { return level_maps.size(); }
};

// K nearest lattice offsets around the origin, ordered by (radius, row,
// col). K = 9 is the 3x3 grid at 1 px pitch.
inline std::vector<Position> regular_offsets(std::size_t k) {
  if (k == 0) throw ContractError("regular_offsets: k must be positive");
  long radius = 1;
  while (static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)) < k) ++radius;
  struct Entry {
    long r2;
    long dr, dc;
  };
  std::vector<Entry> lattice;
  for (long dr = -radius; dr <= radius; ++dr)
    for (long dc = -radius; dc <= radius; ++dc) lattice.push_back({dr * dr + dc * dc, dr, dc});
  std::sort(lattice.begin(), lattice.end(), [](const Entry& a, const Entry& b) {
    if (a.r2 != b.r2) return a.r2 < b.r2;
    if (a.dr != b.dr) return a.dr < b.dr;
    return a.dc < b.dc;
  });
  std::vector<Position> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    out.push_back({static_cast<double>(lattice[i].dr), static_cast<double>(lattice[i].dc)});
  return out;
}

// Dynamic walks for the point and image branches plus the regular base
// pattern they perturb.
struct NeighborSampling {
  std::size_t k = 0;
  DiffArray point_walks;  // N x K x 2
  DiffArray image_walks;  // N x K x 2
  std::vector<Position> base_offsets;
};

struct AffineParams {
  DiffArray weight;  // in x out
  DiffArray bias;    // out
};

enum class FilterMode { diagonal, dense };
enum class UpdateMode { residual, concat };
enum class Variant { cdmp_1x1, cdmp_1x4 };

struct PropagationParams {
  AffineParams point_walk;             // C_pt -> K*2
  AffineParams image_walk;             // C_img(level 0) -> K*2
  std::vector<AffineParams> affinity;  // per level: C_img_l -> 1 + filter width
  DiffArray alpha;                     // per-node message scale, shape [N]
  std::vector<double> beta;            // per-level weights
  AffineParams mix;                    // 1x4 only: (L*C_msg) -> C_mix
  std::size_t neighbor_count = 9;      // K
  int iterations = 1;                  // T
  FilterMode filter_mode = FilterMode::diagonal;
  UpdateMode update_mode = UpdateMode::concat;
  std::size_t message_channels = 0;    // dense filter output width; 0 = point width
};

// ---- primitives ---------------------------------------------------------------

// Affine map of each latent row to K 2-vectors (the dynamic walks).
inline DiffArray predict_walks(Tape& tape, const DiffArray& latents, const AffineParams& params,
                               std::size_t k) {
  const std::size_t n = latents.shape.front();
  DiffArray flat = tape.add_bias(tape.matmul(latents, params.weight), params.bias);
  if (flat.shape[1] != 2 * k)
    throw DimensionError("predict_walks: parameters produce " + std::to_string(flat.shape[1]) +
                         " outputs, want " + std::to_string(2 * k));
  return tape.reshape(flat, {n, k, 2});
}

// Scatters point latents into a level-resolution grid: nearest-pixel
// binning, mean pooling on collisions, out-of-grid points dropped. Linear
// in the latents, so gradients pass straight back.
inline DiffArray scatter_to_grid(Tape& tape, const DiffArray& latents,
                                 const std::vector<Position>& positions, std::size_t rows,
                                 std::size_t cols, double stride) {
  const int ilat = tape.id_of(latents);
  const std::size_t n = latents.shape[0], ch = latents.shape[1];
  if (positions.size() != n)
    throw DimensionError("scatter_to_grid: " + std::to_string(n) + " latents vs " +
                         std::to_string(positions.size()) + " positions");

  std::vector<int> cell_of(n, -1);
  std::vector<std::vector<std::size_t>> members(rows * cols);
  for (std::size_t i = 0; i < n; ++i) {
    const long r = std::lround(positions[i][0] / stride);
    const long c = std::lround(positions[i][1] / stride);
    if (r < 0 || c < 0 || r >= static_cast<long>(rows) || c >= static_cast<long>(cols)) continue;
    const std::size_t cell = static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c);
    cell_of[i] = static_cast<int>(cell);
    members[cell].push_back(i);
  }

  DiffArray grid = DiffArray::zeros({rows, cols, ch});
  std::vector<double> bucket;
  for (std::size_t cell = 0; cell < members.size(); ++cell) {
    const auto& pts = members[cell];
    if (pts.empty()) continue;
    for (std::size_t c = 0; c < ch; ++c) {
      bucket.clear();
      for (std::size_t i : pts) bucket.push_back(latents.data[i * ch + c]);
      std::sort(bucket.begin(), bucket.end());
      double acc = 0.0;
      for (double v : bucket) acc += v;
      grid.data[cell * ch + c] = acc / static_cast<double>(pts.size());
    }
  }

  std::vector<double> inv_count(rows * cols, 0.0);
  for (std::size_t cell = 0; cell < members.size(); ++cell)
    if (!members[cell].empty()) inv_count[cell] = 1.0 / static_cast<double>(members[cell].size());

  return tape.record(std::move(grid), {ilat},
                     [ilat, cell_of, inv_count, ch](Tape& t, int self) {
                       const auto& g = t.grad_buffer(self);
                       auto& gl = t.grad_buffer(ilat);
                       for (std::size_t i = 0; i < cell_of.size(); ++i) {
                         const int cell = cell_of[i];
                         if (cell < 0) continue;
                         const double scale = inv_count[static_cast<std::size_t>(cell)];
                         for (std::size_t c = 0; c < ch; ++c)
                           gl[i * ch + c] += scale * g[static_cast<std::size_t>(cell) * ch + c];
                       }
                     });
}

// Bilinear gather at anchors[i] + base_offsets[j] + walks[i,j]; anchors are
// already in the map's own pixel units.
inline DiffArray sample_at_walks(Tape& tape, const DiffArray& level_map,
                                 const std::vector<Position>& anchors,
                                 const std::vector<Position>& base_offsets,
                                 const DiffArray& walks) {
  const std::size_t n = anchors.size();
  const std::size_t k = base_offsets.size();
  if (walks.rank() != 3 || walks.shape[0] != n || walks.shape[1] != k || walks.shape[2] != 2)
    throw DimensionError("sample_at_walks: walks " + shape_str(walks.shape) + " want [" +
                         std::to_string(n) + "x" + std::to_string(k) + "x2]");
  DiffArray fixed = DiffArray::zeros({n * k, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      fixed.data[(i * k + j) * 2] = anchors[i][0] + base_offsets[j][0];
      fixed.data[(i * k + j) * 2 + 1] = anchors[i][1] + base_offsets[j][1];
    }
  DiffArray coords = tape.add(tape.reshape(walks, {n * k, 2}), tape.leaf(std::move(fixed)));
  DiffArray sampled = geom::bilinear_sample(tape, level_map, coords);
  return tape.reshape(sampled, {n, k, sampled.shape[1]});
}

// Spec-facing overload: dynamic sample nodes from one level of a graph,
// with anchors given in full-resolution pixels.
inline DiffArray sample_nodes(Tape& tape, const FeatureGraph& graph, std::size_t level,
                              const std::vector<Position>& anchors,
                              const std::vector<Position>& base_offsets, const DiffArray& walks) {
  if (level >= graph.level_count())
    throw ContractError("sample_nodes: level " + std::to_string(level) + " of " +
                        std::to_string(graph.level_count()));
  const double stride = graph.level_strides[level];
  std::vector<Position> scaled(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i)
    scaled[i] = {anchors[i][0] / stride, anchors[i][1] / stride};
  return sample_at_walks(tape, graph.level_maps[level], scaled, base_offsets, walks);
}

struct AffinityFilters {
  DiffArray affinity;  // N x K
  DiffArray filters;   // N x K x F
};

// {A; w} as one affine map of the sampled image nodes.
inline AffinityFilters predict_affinity_filters(Tape& tape, const DiffArray& sampled_image,
                                                const AffineParams& params, FilterMode mode,
                                                std::size_t point_channels,
                                                std::size_t message_channels) {
  if (sampled_image.rank() != 3)
    throw DimensionError("predict_affinity_filters: sampled image nodes must be NxKxC, got " +
                         shape_str(sampled_image.shape));
  const std::size_t n = sampled_image.shape[0];
  const std::size_t k = sampled_image.shape[1];
  const std::size_t c = sampled_image.shape[2];
  const std::size_t filter_width =
      mode == FilterMode::diagonal ? point_channels : point_channels * message_channels;
  DiffArray flat = tape.reshape(sampled_image, {n * k, c});
  DiffArray out = tape.add_bias(tape.matmul(flat, params.weight), params.bias);
  if (out.shape[1] != 1 + filter_width)
    throw DimensionError("predict_affinity_filters: parameters produce " +
                         std::to_string(out.shape[1]) + " channels, want " +
                         std::to_string(1 + filter_width));
  AffinityFilters result;
  result.affinity = tape.reshape(tape.slice_channels(out, 0, 1), {n, k});
  result.filters = tape.reshape(tape.slice_channels(out, 1, 1 + filter_width), {n, k, filter_width});
  return result;
}

// Per-edge matrix filter: out[e, :] = features[e, :] * W_e with W_e stored
// row-major as filters[e, c_in * c_out].
inline DiffArray edgewise_matmul(Tape& tape, const DiffArray& features, const DiffArray& filters,
                                 std::size_t c_out) {
  const int ifeat = tape.id_of(features), ifil = tape.id_of(filters);
  const std::size_t e = features.shape[0], c_in = features.shape[1];
  if (filters.shape[0] != e || filters.shape[1] != c_in * c_out)
    throw DimensionError("edgewise_matmul: filters " + shape_str(filters.shape) + " want [" +
                         std::to_string(e) + "x" + std::to_string(c_in * c_out) + "]");
  DiffArray out = DiffArray::zeros({e, c_out});
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const double f = features.data[i * c_in + ci];
      for (std::size_t co = 0; co < c_out; ++co)
        out.data[i * c_out + co] += f * filters.data[i * c_in * c_out + ci * c_out + co];
    }
  return tape.record(std::move(out), {ifeat, ifil},
                     [ifeat, ifil, e, c_in, c_out](Tape& t, int self) {
                       const auto& g = t.grad_buffer(self);
                       const auto& fv = t.node_array(ifeat).data;
                       const auto& wv = t.node_array(ifil).data;
                       auto& gf = t.grad_buffer(ifeat);
                       auto& gw = t.grad_buffer(ifil);
                       for (std::size_t i = 0; i < e; ++i)
                         for (std::size_t ci = 0; ci < c_in; ++ci) {
                           double acc = 0.0;
                           for (std::size_t co = 0; co < c_out; ++co) {
                             const double gk = g[i * c_out + co];
                             acc += gk * wv[i * c_in * c_out + ci * c_out + co];
                             gw[i * c_in * c_out + ci * c_out + co] += gk * fv[i * c_in + ci];
                           }
                           gf[i * c_in + ci] += acc;
                         }
                     });
}

namespace detail {

inline std::size_t message_width(const PropagationParams& params, std::size_t point_channels) {
  if (params.filter_mode == FilterMode::diagonal) return point_channels;
  return params.message_channels == 0 ? point_channels : params.message_channels;
}

// One level's message: filtered, affinity-weighted point samples summed
// over the neighborhood.
inline DiffArray level_message(Tape& tape, const DiffArray& latents,
                               const std::vector<Position>& positions,
                               const FeatureGraph& image_graph, const NeighborSampling& sampling,
                               const PropagationParams& params, std::size_t level) {
  const std::size_t n = positions.size();
  const std::size_t k = sampling.k;
  const std::size_t c_pt = latents.shape[1];
  const std::size_t c_msg = message_width(params, c_pt);
  const DiffArray& map = image_graph.level_maps[level];
  const double stride = image_graph.level_strides[level];

  std::vector<Position> anchors(n);
  for (std::size_t i = 0; i < n; ++i)
    anchors[i] = {positions[i][0] / stride, positions[i][1] / stride};

  DiffArray point_grid =
      scatter_to_grid(tape, latents, positions, map.shape[0], map.shape[1], stride);
  DiffArray point_samples =
      sample_at_walks(tape, point_grid, anchors, sampling.base_offsets, sampling.point_walks);
  DiffArray image_samples =
      sample_at_walks(tape, map, anchors, sampling.base_offsets, sampling.image_walks);

  const AffinityFilters af = predict_affinity_filters(tape, image_samples, params.affinity[level],
                                                      params.filter_mode, c_pt, c_msg);

  DiffArray flat_points = tape.reshape(point_samples, {n * k, c_pt});
  DiffArray filtered;
  if (params.filter_mode == FilterMode::diagonal) {
    filtered = tape.mul(flat_points, tape.reshape(af.filters, {n * k, c_pt}));
  } else {
    filtered = edgewise_matmul(tape, flat_points, tape.reshape(af.filters, {n * k, c_pt * c_msg}),
                               c_msg);
  }
  DiffArray weighted = tape.scale_rows(filtered, tape.reshape(af.affinity, {n * k}));
  return tape.sum_axis(tape.reshape(weighted, {n, k, c_msg}), 1);
}

inline void validate_common(const std::vector<Position>& positions,
                            const FeatureGraph& image_graph, const PropagationParams& params) {
  if (image_graph.level_count() == 0)
    throw ContractError("cdmp: empty level set");
  if (params.beta.size() != image_graph.level_count())
    throw ContractError("cdmp: " + std::to_string(params.beta.size()) + " beta weights for " +
                        std::to_string(image_graph.level_count()) + " levels");
  for (double b : params.beta)
    if (!std::isfinite(b)) throw ContractError("cdmp: non-finite beta weight");
  if (params.neighbor_count > positions.size())
    throw ContractError("cdmp: K=" + std::to_string(params.neighbor_count) + " exceeds N=" +
                        std::to_string(positions.size()));
  if (params.iterations < 1) throw ContractError("cdmp: iteration count must be >= 1");
}

}  // namespace detail

// Walks for both branches predicted from the current latents and from the
// point-wise image features at the finest level.
inline NeighborSampling make_sampling(Tape& tape, const DiffArray& latents,
                                      const std::vector<Position>& positions,
                                      const FeatureGraph& image_graph,
                                      const PropagationParams& params) {
  detail::validate_common(positions, image_graph, params);
  const std::size_t n = positions.size();
  const std::size_t k = params.neighbor_count;

  NeighborSampling sampling;
  sampling.k = k;
  sampling.base_offsets = regular_offsets(k);
  sampling.point_walks = predict_walks(tape, latents, params.point_walk, k);

  const double stride0 = image_graph.level_strides[0];
  DiffArray coords0 = DiffArray::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    coords0.data[2 * i] = positions[i][0] / stride0;
    coords0.data[2 * i + 1] = positions[i][1] / stride0;
  }
  DiffArray pointwise_image =
      geom::bilinear_sample(tape, image_graph.level_maps[0], tape.leaf(std::move(coords0)));
  sampling.image_walks = predict_walks(tape, pointwise_image, params.image_walk, k);
  return sampling;
}

// Level-weighted sum of per-level messages (one term per level and sampled
// neighbor).
inline DiffArray calculate_message(Tape& tape, const FeatureGraph& point_graph,
                                   const FeatureGraph& image_graph,
                                   const NeighborSampling& sampling,
                                   const PropagationParams& params) {
  detail::validate_common(point_graph.positions, image_graph, params);
  DiffArray total;
  for (std::size_t level = 0; level < image_graph.level_count(); ++level) {
    DiffArray m = tape.scale(detail::level_message(tape, point_graph.latents, point_graph.positions,
                                                   image_graph, sampling, params, level),
                             params.beta[level]);
    total = level == 0 ? m : tape.add(total, m);
  }
  return total;
}

// sigma(h + alpha * m) or sigma(h || alpha * m).
inline DiffArray update_latents(Tape& tape, const DiffArray& latents, const DiffArray& message,
                                const DiffArray& alpha, UpdateMode mode) {
  DiffArray scaled = tape.scale_rows(message, alpha);
  if (mode == UpdateMode::residual) {
    if (latents.shape != scaled.shape)
      throw DimensionError("update_latents: residual update needs matching widths, got " +
                           shape_str(latents.shape) + " vs " + shape_str(message.shape));
    return tape.relu(tape.add(latents, scaled));
  }
  return tape.relu(tape.concat_channels({latents, scaled}));
}

// T propagation steps. The single-level variant applies the configured
// update; the four-level variant computes per-level message groups,
// concatenates them through the mixing map, and concatenates the result
// with the point features.
inline DiffArray propagate(Tape& tape, const FeatureGraph& point_graph,
                           const FeatureGraph& image_graph, const PropagationParams& params,
                           Variant variant) {
  const std::size_t want_levels = variant == Variant::cdmp_1x1 ? 1 : 4;
  if (image_graph.level_count() != want_levels)
    throw ContractError("propagate: variant wants " + std::to_string(want_levels) +
                        " level maps, graph has " + std::to_string(image_graph.level_count()));
  detail::validate_common(point_graph.positions, image_graph, params);

  DiffArray h = point_graph.latents;
  for (int step = 0; step < params.iterations; ++step) {
    const NeighborSampling sampling =
        make_sampling(tape, h, point_graph.positions, image_graph, params);
    DiffArray message;
    if (variant == Variant::cdmp_1x1) {
      message = tape.scale(detail::level_message(tape, h, point_graph.positions, image_graph,
                                                 sampling, params, 0),
                           params.beta[0]);
    } else {
      std::vector<DiffArray> groups;
      groups.reserve(image_graph.level_count());
      for (std::size_t level = 0; level < image_graph.level_count(); ++level)
        groups.push_back(tape.scale(detail::level_message(tape, h, point_graph.positions,
                                                          image_graph, sampling, params, level),
                                    params.beta[level]));
      DiffArray mixed = tape.add_bias(tape.matmul(tape.concat_channels(groups), params.mix.weight),
                                      params.mix.bias);
      message = mixed;
    }
    const UpdateMode mode =
        variant == Variant::cdmp_1x4 ? UpdateMode::concat : params.update_mode;
    h = update_latents(tape, h, message, params.alpha, mode);
  }
  return h;
}

// ---- parameter builders --------------------------------------------------------

// Identity configuration: zero walks, affinity 1, identity diagonal filter,
// unit beta split across levels. With alpha = 0 and residual updates this
// fixes any nonnegative latent.
inline PropagationParams identity_params(std::size_t point_channels,
                                         const std::vector<std::size_t>& image_channels,
                                         std::size_t k, std::size_t node_count,
                                         double alpha_value = 1.0,
                                         UpdateMode mode = UpdateMode::concat) {
  PropagationParams p;
  p.neighbor_count = k;
  p.update_mode = mode;
  p.point_walk = {DiffArray::zeros({point_channels, 2 * k}), DiffArray::zeros({2 * k})};
  p.image_walk = {DiffArray::zeros({image_channels.front(), 2 * k}), DiffArray::zeros({2 * k})};
  for (std::size_t c : image_channels) {
    DiffArray bias = DiffArray::zeros({1 + point_channels});
    for (double& v : bias.data) v = 1.0;  // affinity 1, all-ones diagonal filter
    p.affinity.push_back({DiffArray::zeros({c, 1 + point_channels}), std::move(bias)});
  }
  p.alpha = DiffArray::full({node_count}, alpha_value);
  p.beta.assign(image_channels.size(), 1.0 / static_cast<double>(image_channels.size()));
  // Mixing map sums the per-level groups.
  const std::size_t levels = image_channels.size();
  DiffArray mix_w = DiffArray::zeros({levels * point_channels, point_channels});
  for (std::size_t l = 0; l < levels; ++l)
    for (std::size_t c = 0; c < point_channels; ++c)
      mix_w.data[(l * point_channels + c) * point_channels + c] = 1.0;
  p.mix = {std::move(mix_w), DiffArray::zeros({point_channels})};
  return p;
}

// Small random parameters for gradient checks and harness runs.
inline PropagationParams random_params(Rng& rng, std::size_t point_channels,
                                       const std::vector<std::size_t>& image_channels,
                                       std::size_t k, std::size_t node_count,
                                       FilterMode filter_mode = FilterMode::diagonal,
                                       UpdateMode update_mode = UpdateMode::concat,
                                       std::size_t message_channels = 0, double spread = 0.3) {
  const auto fill = [&rng, spread](DiffArray a) {
    for (double& v : a.data) v = rng.uniform(-spread, spread);
    return a;
  };
  PropagationParams p;
  p.neighbor_count = k;
  p.filter_mode = filter_mode;
  p.update_mode = update_mode;
  p.message_channels = message_channels;
  const std::size_t c_msg =
      filter_mode == FilterMode::diagonal || message_channels == 0 ? point_channels
                                                                   : message_channels;
  const std::size_t filter_width =
      filter_mode == FilterMode::diagonal ? point_channels : point_channels * c_msg;
  p.point_walk = {fill(DiffArray::zeros({point_channels, 2 * k})), fill(DiffArray::zeros({2 * k}))};
  p.image_walk = {fill(DiffArray::zeros({image_channels.front(), 2 * k})),
                  fill(DiffArray::zeros({2 * k}))};
  for (std::size_t c : image_channels)
    p.affinity.push_back(
        {fill(DiffArray::zeros({c, 1 + filter_width})), fill(DiffArray::zeros({1 + filter_width}))});
  // Message scales start positive, as a trained model would keep them.
  p.alpha = DiffArray::zeros({node_count});
  for (double& v : p.alpha.data) v = rng.uniform(0.5, 1.5);
  p.beta.assign(image_channels.size(), 1.0 / static_cast<double>(image_channels.size()));
  p.mix = {fill(DiffArray::zeros({image_channels.size() * c_msg, c_msg})),
           fill(DiffArray::zeros({c_msg}))};
  return p;
}

// Leafs every parameter array onto the tape.
inline PropagationParams attach(Tape& tape, const PropagationParams& params) {
  PropagationParams p = params;
  p.point_walk = {tape.leaf(params.point_walk.weight), tape.leaf(params.point_walk.bias)};
  p.image_walk = {tape.leaf(params.image_walk.weight), tape.leaf(params.image_walk.bias)};
  p.affinity.clear();
  for (const AffineParams& a : params.affinity)
    p.affinity.push_back({tape.leaf(a.weight), tape.leaf(a.bias)});
  p.alpha = tape.leaf(params.alpha);
  if (params.mix.weight.size() > 0)
    p.mix = {tape.leaf(params.mix.weight), tape.leaf(params.mix.bias)};
  return p;
}

// Leafs the graph's arrays onto the tape.
inline FeatureGraph attach(Tape& tape, const FeatureGraph& graph) {
  FeatureGraph g = graph;
  if (g.latents.size() > 0) g.latents = tape.leaf(graph.latents);
  g.level_maps.clear();
  for (const DiffArray& m : graph.level_maps) g.level_maps.push_back(tape.leaf(m));
  return g;
}

}  // namespace fusedet::cdmp
