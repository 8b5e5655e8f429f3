// setdet.hpp - NMS-free set-based detection: match costs, optimal bipartite
// matching, match labels, the match-head loss, test-time selection, plus a
// classical greedy-NMS baseline and the consistency-ratio metric used to
// compare the two selectors.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "fusedet/errors.hpp"
#include "fusedet/geometry.hpp"
#include "fusedet/losses.hpp"
#include "fusedet/numerics.hpp"

namespace fusedet::setdet {

struct PredictedBox {
  geom::Box3D box;
  double cls_confidence = 0.0;  // classification confidence c
  double match_score = 0.0;     // match-head output c_m

  PredictedBox() = default;
  PredictedBox(const geom::Box3D& b, double c, double cm)
      : box(b), cls_confidence(c), match_score(cm) {
    if (!(c >= 0.0 && c <= 1.0) || !(cm >= 0.0 && cm <= 1.0))
      throw ContractError("PredictedBox: confidences must be in [0,1], got c=" +
                          std::to_string(c) + " c_m=" + std::to_string(cm));
  }
};

// Bipartite assignment between ground truth (rows) and predictions
// (columns). match_labels has one entry per prediction; 1 iff matched.
struct MatchResult {
  std::vector<std::pair<int, int>> assignment;  // (gt_index, pred_index)
  std::vector<std::uint8_t> match_labels;
  double total_cost = 0.0;
};

// C_match = -log(c * IoU); +infinity when the product vanishes.
inline double match_cost(const PredictedBox& pred, const geom::Box3D& gt, geom::IouKind kind) {
  const double q = pred.cls_confidence * geom::iou(pred.box, gt, kind);
  if (q <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(q);
}

namespace detail {

// Stand-in for infinite cost inside the numeric solver. Kept small enough
// that unit-scale differences between finite entries survive double
// rounding even when a sentinel term joins the sum; finite inputs are
// assumed to stay far below it.
inline constexpr double kInfSentinel = 1e9;

// Shortest-augmenting-path assignment over an n x m (n <= m) matrix of
// finite costs. Returns the column chosen for each row.
inline std::vector<int> jv_solve(const std::vector<double>& a, std::size_t n, std::size_t m) {
  const double huge = std::numeric_limits<double>::max();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, huge);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      std::size_t j1 = 0;
      double delta = huge;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  return row_to_col;
}

inline double canonical_total(const std::vector<double>& a, std::size_t m,
                              const std::vector<int>& row_to_col) {
  double acc = 0.0;
  for (std::size_t i = 0; i < row_to_col.size(); ++i)
    if (row_to_col[i] >= 0) acc += a[i * m + static_cast<std::size_t>(row_to_col[i])];
  return acc;
}

// Re-solves with a row forced to a column; returns the full assignment.
inline std::vector<int> solve_with_prefix(const std::vector<double>& a, std::size_t n,
                                          std::size_t m, const std::vector<int>& fixed,
                                          std::size_t next_row, int forced_col) {
  std::vector<int> result(fixed);
  result.resize(n, -1);
  result[next_row] = forced_col;
  std::vector<char> col_taken(m, 0);
  for (std::size_t i = 0; i <= next_row; ++i)
    if (result[i] >= 0) col_taken[static_cast<std::size_t>(result[i])] = 1;

  const std::size_t rows_left = n - next_row - 1;
  if (rows_left == 0) return result;
  std::vector<std::size_t> col_map;
  for (std::size_t j = 0; j < m; ++j)
    if (!col_taken[j]) col_map.push_back(j);
  std::vector<double> sub(rows_left * col_map.size());
  for (std::size_t i = 0; i < rows_left; ++i)
    for (std::size_t j = 0; j < col_map.size(); ++j)
      sub[i * col_map.size() + j] = a[(next_row + 1 + i) * m + col_map[j]];
  const std::vector<int> sub_solution = jv_solve(sub, rows_left, col_map.size());
  for (std::size_t i = 0; i < rows_left; ++i)
    if (sub_solution[i] >= 0)
      result[next_row + 1 + i] = static_cast<int>(col_map[static_cast<std::size_t>(sub_solution[i])]);
  return result;
}

}  // namespace detail

// Minimum-cost bipartite assignment of N ground-truth rows to M >= N
// prediction columns. Infinite entries are realized as a finite sentinel
// inside the solver and pruned from the result, so the assignment maximizes
// the number of finite edges and minimizes total cost among those. Ties are
// broken toward the lowest prediction index, row by row.
inline MatchResult hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  std::size_t m = 0;
  for (const auto& row : cost) m = std::max(m, row.size());
  for (const auto& row : cost)
    if (row.size() != m)
      throw DimensionError("hungarian: ragged cost matrix (row of " + std::to_string(row.size()) +
                           " vs " + std::to_string(m) + " columns)");
  if (n > m)
    throw ContractError("hungarian: " + std::to_string(n) + " ground-truth rows exceed " +
                        std::to_string(m) + " prediction columns");

  MatchResult result;
  result.match_labels.assign(m, 0);
  if (n == 0) return result;

  std::vector<double> a(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double c = cost[i][j];
      if (std::isnan(c)) throw DomainError("hungarian: NaN cost entry");
      a[i * m + j] = std::isinf(c) ? detail::kInfSentinel : c;
    }

  std::vector<int> best = detail::jv_solve(a, n, m);
  const double best_total = detail::canonical_total(a, m, best);

  // Lexicographic cleanup: for each row in order, commit the lowest column
  // that still completes to an optimal assignment.
  std::vector<int> fixed(n, -1);
  std::vector<char> col_taken(m, 0);
  bool canonical = true;
  for (std::size_t i = 0; i < n && canonical; ++i) {
    canonical = false;
    for (std::size_t j = 0; j < m; ++j) {
      if (col_taken[j]) continue;
      const std::vector<int> candidate =
          detail::solve_with_prefix(a, n, m, fixed, i, static_cast<int>(j));
      if (detail::canonical_total(a, m, candidate) == best_total) {
        fixed[i] = static_cast<int>(j);
        col_taken[j] = 1;
        canonical = true;
        break;
      }
    }
    if (!canonical) {
      // Rounding kept every forced completion off the optimum; fall back to
      // the solver's own assignment for the remaining rows.
      for (std::size_t r = i; r < n; ++r) fixed[r] = best[r];
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const int j = fixed[i];
    if (j < 0 || std::isinf(cost[i][static_cast<std::size_t>(j)])) continue;  // pruned
    result.assignment.emplace_back(static_cast<int>(i), j);
    result.match_labels[static_cast<std::size_t>(j)] = 1;
    result.total_cost += cost[i][static_cast<std::size_t>(j)];
  }
  return result;
}

// Builds the match-cost matrix and runs the assignment; matched predictions
// are the positive samples.
inline MatchResult match_sets(const std::vector<PredictedBox>& predictions,
                              const std::vector<geom::Box3D>& ground_truth, geom::IouKind kind) {
  if (predictions.size() < ground_truth.size())
    throw ContractError("match_sets: " + std::to_string(predictions.size()) +
                        " predictions for " + std::to_string(ground_truth.size()) +
                        " ground-truth boxes (need M >= N)");
  std::vector<std::vector<double>> cost(ground_truth.size(),
                                        std::vector<double>(predictions.size()));
  for (std::size_t i = 0; i < ground_truth.size(); ++i)
    for (std::size_t j = 0; j < predictions.size(); ++j)
      cost[i][j] = match_cost(predictions[j], ground_truth[i], kind);
  MatchResult result = hungarian(cost);
  result.match_labels.resize(predictions.size(), 0);
  return result;
}

// Focal loss between match labels and match scores, mean-reduced over all
// predictions.
inline DiffArray match_head_loss(Tape& tape, const DiffArray& match_scores,
                                 const std::vector<std::uint8_t>& labels, double alpha = 0.25,
                                 double gamma = 2.0) {
  return losses::focal_loss(tape, match_scores, labels, alpha, gamma);
}

// Top-N boxes by match score; ties go to the lower index. No NMS involved.
inline std::vector<PredictedBox> select_test_time(const std::vector<PredictedBox>& predictions,
                                                  std::size_t n) {
  if (n > predictions.size())
    throw ContractError("select_test_time: requested " + std::to_string(n) + " of " +
                        std::to_string(predictions.size()) + " boxes");
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&predictions](std::size_t a, std::size_t b) {
    if (predictions[a].match_score != predictions[b].match_score)
      return predictions[a].match_score > predictions[b].match_score;
    return a < b;
  });
  std::vector<PredictedBox> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(predictions[order[i]]);
  return out;
}

enum class SelectionScore { cls, match };

inline double selection_score(const PredictedBox& b, SelectionScore kind) {
  return kind == SelectionScore::cls ? b.cls_confidence : b.match_score;
}

// Classical greedy NMS: rank by the chosen score, keep the best, suppress
// anything overlapping a kept box above the threshold.
inline std::vector<PredictedBox> nms_baseline(const std::vector<PredictedBox>& predictions,
                                              double iou_threshold, SelectionScore score,
                                              geom::IouKind kind = geom::IouKind::iou3d) {
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = selection_score(predictions[a], score);
    const double sb = selection_score(predictions[b], score);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  std::vector<PredictedBox> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (const PredictedBox& k : kept) {
      if (geom::iou(predictions[idx].box, k.box, kind) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(predictions[idx]);
  }
  return kept;
}

// The three box sets of the detection pipeline: M predictions against N
// ground truths with M >= N. Training output is the matched positives;
// test output is the top match scores. Both have one slot per ground truth.
struct BoxSets {
  std::vector<PredictedBox> predictions;  // B_pre, size M
  std::vector<geom::Box3D> ground_truth;  // B_gt, size N

  BoxSets(std::vector<PredictedBox> pre, std::vector<geom::Box3D> gt)
      : predictions(std::move(pre)), ground_truth(std::move(gt)) {
    if (predictions.size() < ground_truth.size())
      throw ContractError("BoxSets: " + std::to_string(predictions.size()) +
                          " predictions cannot cover " + std::to_string(ground_truth.size()) +
                          " ground-truth boxes");
  }

  // Matched positives, one per assigned ground-truth box.
  std::vector<PredictedBox> training_output(geom::IouKind kind) const {
    const MatchResult match = match_sets(predictions, ground_truth, kind);
    std::vector<PredictedBox> out;
    out.reserve(match.assignment.size());
    for (const auto& [gt, pred] : match.assignment)
      out.push_back(predictions[static_cast<std::size_t>(pred)]);
    return out;
  }

  // Top boxes by match score, one slot per ground-truth box.
  std::vector<PredictedBox> test_output() const {
    return select_test_time(predictions, ground_truth.size());
  }
};

// Fraction of positive candidates (max IoU against any ground truth above
// tau) whose classification confidence exceeds v. Vacuously 1 when no
// candidate clears tau.
inline double consistency_ratio(const std::vector<PredictedBox>& predictions,
                                const std::vector<geom::Box3D>& ground_truth, double tau, double v,
                                geom::IouKind kind = geom::IouKind::iou3d) {
  std::size_t positives = 0, confident = 0;
  for (const PredictedBox& p : predictions) {
    double best = 0.0;
    for (const geom::Box3D& gt : ground_truth) best = std::max(best, geom::iou(p.box, gt, kind));
    if (best > tau) {
      ++positives;
      if (p.cls_confidence > v) ++confident;
    }
  }
  if (positives == 0) return 1.0;
  return static_cast<double>(confident) / static_cast<double>(positives);
}

}  // namespace fusedet::setdet
