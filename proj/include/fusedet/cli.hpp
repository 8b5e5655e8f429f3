// cli.hpp - command-line front end: gradcheck, match-demo, compare-nms,
// propagate, gen-scenes. Every command runs from a single seed through the
// splittable generator, processes scenes on a bounded worker pool, and
// merges results in scene order, so artifacts are byte-identical across
// reruns.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "fusedet/cdmp.hpp"
#include "fusedet/csv.hpp"
#include "fusedet/errors.hpp"
#include "fusedet/geometry.hpp"
#include "fusedet/gradcheck.hpp"
#include "fusedet/harness.hpp"
#include "fusedet/losses.hpp"
#include "fusedet/numerics.hpp"
#include "fusedet/rng.hpp"
#include "fusedet/scene.hpp"
#include "fusedet/setdet.hpp"
#include "fusedet/svg.hpp"

namespace fusedet::cli {

namespace detail {

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Runs fn(0..n-1) on a bounded pool; results land at their own index so the
// merge order never depends on scheduling.
template <typename R>
std::vector<R> parallel_map(std::size_t n, std::size_t workers,
                            const std::function<R(std::size_t)>& fn) {
  std::vector<R> results(n);
  if (n == 0) return results;
  workers = std::clamp<std::size_t>(workers, 1, n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          results[i] = fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return results;
}

inline std::vector<double> parse_v_grid(const std::string& text) {
  std::vector<double> grid;
  std::string token;
  std::istringstream is(text);
  while (std::getline(is, token, ',')) {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0' || v < 0.0 || v > 1.0)
      throw ParseError("v-grid entry '" + token + "' is not a number in [0,1]");
    grid.push_back(v);
  }
  if (grid.empty()) throw ParseError("v-grid is empty");
  return grid;
}

inline geom::IouKind parse_iou(const std::string& name) {
  return name == "bev" ? geom::IouKind::bev : geom::IouKind::iou3d;
}

inline int category_index(const std::string& name) {
  if (name == "Pedestrian" || name == "Person_sitting") return 1;
  if (name == "Cyclist") return 2;
  return 0;
}

// ---- optional KITTI-directory mode -----------------------------------------------

struct KittiFrame {
  std::string stem;
  scene::KittiCalib calib;
  std::vector<scene::SceneObject> objects;
};

inline std::vector<std::string> list_kitti_stems(const std::string& dir, std::size_t limit) {
  namespace fs = std::filesystem;
  const fs::path labels = fs::path(dir) / "label_2";
  if (!fs::is_directory(labels)) throw IoError("not a KITTI layout (missing label_2/): " + dir);
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(labels))
    if (entry.path().extension() == ".txt") stems.push_back(entry.path().stem().string());
  std::sort(stems.begin(), stems.end());
  if (stems.size() > limit) stems.resize(limit);
  return stems;
}

inline KittiFrame load_kitti_frame(const std::string& dir, const std::string& stem) {
  namespace fs = std::filesystem;
  KittiFrame frame;
  frame.stem = stem;
  frame.calib = scene::parse_calib(read_file((fs::path(dir) / "calib" / (stem + ".txt")).string()));
  const auto labels =
      scene::parse_labels(read_file((fs::path(dir) / "label_2" / (stem + ".txt")).string()));
  for (const auto& label : labels)
    frame.objects.push_back({scene::to_box3d(label), category_index(label.category)});
  return frame;
}

// Builds a full scene from a KITTI frame: camera-frame cropped points and
// synthetic feature levels rendered from the annotated boxes (the real image
// stream is out of scope here).
inline scene::SceneSample kitti_scene(const std::string& dir, const KittiFrame& frame,
                                      std::size_t target_points, std::uint64_t seed) {
  namespace fs = std::filesystem;
  scene::PointCloud velo;
  const fs::path bin = fs::path(dir) / "velodyne" / (frame.stem + ".bin");
  const fs::path csv = fs::path(dir) / "velodyne" / (frame.stem + ".csv");
  if (fs::exists(bin)) velo = scene::load_point_cloud_bin(bin.string());
  else if (fs::exists(csv)) velo = scene::parse_point_cloud_csv(read_file(csv.string()));
  else throw IoError("no point cloud for frame " + frame.stem + " under " + bin.parent_path().string());

  scene::PointCloud cam;
  cam.points.reserve(velo.size());
  cam.intensity.reserve(velo.size());
  for (std::size_t i = 0; i < velo.size(); ++i) {
    cam.points.push_back(scene::velo_to_cam(frame.calib, velo.points[i]));
    if (!velo.intensity.empty()) cam.intensity.push_back(velo.intensity[i]);
  }

  scene::SceneSample sample;
  sample.rng_seed = seed;
  sample.cloud = scene::crop_and_subsample(cam, scene::CropRanges{}, target_points, seed);
  sample.objects = frame.objects;
  // Points are already in the rectified camera frame, so P2 alone projects.
  sample.calib = geom::CalibMatrix(frame.calib.p2, 1280, 384);
  sample.level_strides = {4, 8, 16, 32};
  Rng feature_rng = Rng(seed).split(3);
  sample.image_features = scene::render_feature_levels(sample.objects, sample.calib, 6, 0.05,
                                                       sample.level_strides, feature_rng);
  return sample;
}

}  // namespace detail

// ---- gradcheck -----------------------------------------------------------------------

struct GradcheckOptions {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  std::string only;
  std::string out;
  std::size_t workers = 2;
};

inline int run_gradcheck(const GradcheckOptions& opt) {
  std::vector<gradcheck::Suite> selected;
  for (auto& suite : gradcheck::suites())
    if (opt.only.empty() || suite.name.find(opt.only) != std::string::npos)
      selected.push_back(std::move(suite));
  if (selected.empty()) {
    std::fprintf(stderr, "gradcheck: no suite matches --only '%s'\n", opt.only.c_str());
    return 2;
  }

  const std::vector<double> errors = detail::parallel_map<double>(
      selected.size(), opt.workers,
      [&selected, &opt](std::size_t i) { return selected[i].max_rel_error(opt.seed); });

  std::string csv = csvio::row({"op", "max_rel_err", "tolerance", "pass"});
  bool all_pass = true;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const bool pass = errors[i] < opt.tolerance;
    all_pass = all_pass && pass;
    std::printf("%-36s %.3e  %s\n", selected[i].name.c_str(), errors[i], pass ? "pass" : "FAIL");
    csv += csvio::row({selected[i].name, csvio::num(errors[i]), csvio::num(opt.tolerance),
                       pass ? "true" : "false"});
  }
  if (!opt.out.empty()) detail::write_file(opt.out, csv);
  std::printf("gradcheck: %zu/%zu suites under %.1e\n",
              static_cast<std::size_t>(std::count_if(errors.begin(), errors.end(),
                                                     [&](double e) { return e < opt.tolerance; })),
              selected.size(), opt.tolerance);
  return all_pass ? 0 : 1;
}

// ---- match-demo ------------------------------------------------------------------------

struct MatchDemoOptions {
  std::uint64_t seed = 0;
  std::size_t scenes = 50;
  std::string out;
  geom::IouKind iou_kind = geom::IouKind::iou3d;
  std::size_t box_cap = 10;
  std::string kitti_dir;
  std::size_t workers = 2;
};

inline int run_match_demo(const MatchDemoOptions& opt) {
  struct Row {
    std::size_t gt_count = 0, pred_count = 0;
    double optimal = 0.0, oracle = 0.0;
    bool has_oracle = false;
    bool equal = true;
  };

  std::vector<detail::KittiFrame> frames;
  if (!opt.kitti_dir.empty())
    for (const std::string& stem : detail::list_kitti_stems(opt.kitti_dir, opt.scenes))
      frames.push_back(detail::load_kitti_frame(opt.kitti_dir, stem));
  const std::size_t scene_count = opt.kitti_dir.empty() ? opt.scenes : frames.size();

  const std::vector<Row> rows = detail::parallel_map<Row>(
      scene_count, opt.workers, [&](std::size_t i) {
        Rng rng = Rng(opt.seed).split(i);
        std::vector<geom::Box3D> gt;
        if (opt.kitti_dir.empty()) {
          scene::SceneConfig cfg;
          cfg.objects = rng.range_int(0, 8);
          cfg.points = 64;
          gt = scene::generate_scene(cfg, rng.next_u64()).gt_boxes();
        } else {
          for (const auto& obj : frames[i].objects) gt.push_back(obj.box);
        }
        const std::size_t cap = std::max(opt.box_cap, gt.size());
        const auto emul =
            harness::emulate_predictions(gt, harness::DetectorModel::set_based, cap, opt.iou_kind,
                                         rng);
        const setdet::MatchResult solved = setdet::match_sets(emul.boxes, gt, opt.iou_kind);

        Row row;
        row.gt_count = gt.size();
        row.pred_count = cap;
        row.optimal = solved.total_cost;
        if (gt.size() <= 8 && cap <= 10) {
          std::vector<std::vector<double>> cost(gt.size(), std::vector<double>(cap));
          for (std::size_t g = 0; g < gt.size(); ++g)
            for (std::size_t p = 0; p < cap; ++p)
              cost[g][p] = setdet::match_cost(emul.boxes[p], gt[g], opt.iou_kind);
          row.oracle = harness::exhaustive_min_cost(cost);
          row.has_oracle = true;
          row.equal = row.optimal == row.oracle;
        }
        return row;
      });

  std::string csv =
      csvio::row({"scene", "gt_count", "pred_count", "optimal_cost", "oracle_cost", "equal"});
  std::size_t failures = 0, checked = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    checked += r.has_oracle;
    failures += r.has_oracle && !r.equal;
    csv += csvio::row({csvio::num(i), csvio::num(r.gt_count), csvio::num(r.pred_count),
                       csvio::num(r.optimal, 17), r.has_oracle ? csvio::num(r.oracle, 17) : "",
                       r.has_oracle ? (r.equal ? "true" : "false") : "skipped"});
  }
  if (!opt.out.empty()) detail::write_file(opt.out, csv);
  std::printf("match-demo: %zu scenes, %zu oracle comparisons, %zu mismatches\n", rows.size(),
              checked, failures);
  return failures == 0 ? 0 : 1;
}

// ---- compare-nms ------------------------------------------------------------------------

struct CompareNmsOptions {
  std::uint64_t seed = 0;
  std::size_t scenes = 100;
  std::string out;
  std::string svg_out;
  double tau = 0.7;
  std::string v_grid = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  std::size_t box_cap = 64;
  geom::IouKind iou_kind = geom::IouKind::iou3d;
  std::size_t workers = 2;
};

inline int run_compare_nms(const CompareNmsOptions& opt) {
  const std::vector<double> grid = detail::parse_v_grid(opt.v_grid);
  constexpr harness::DetectorModel kModels[3] = {harness::DetectorModel::set_based,
                                                 harness::DetectorModel::cls_trained,
                                                 harness::DetectorModel::iou_trained};

  struct SceneCounts {
    // positives and confident counts per model per grid index
    std::array<std::vector<std::size_t>, 3> positives;
    std::array<std::vector<std::size_t>, 3> confident;
  };

  const std::vector<SceneCounts> counts = detail::parallel_map<SceneCounts>(
      opt.scenes, opt.workers, [&](std::size_t i) {
        Rng rng = Rng(opt.seed).split(i);
        scene::SceneConfig cfg;
        cfg.objects = rng.range_int(2, 7);
        cfg.points = 64;
        const auto gt = scene::generate_scene(cfg, rng.next_u64()).gt_boxes();
        SceneCounts sc;
        for (std::size_t m = 0; m < 3; ++m) {
          sc.positives[m].assign(grid.size(), 0);
          sc.confident[m].assign(grid.size(), 0);
          Rng model_rng = rng.split(100 + m);
          const auto emul = harness::emulate_predictions(
              gt, kModels[m], std::max(opt.box_cap, gt.size()), opt.iou_kind, model_rng);
          for (std::size_t b = 0; b < emul.boxes.size(); ++b) {
            if (emul.quality[b] <= opt.tau) continue;
            for (std::size_t v = 0; v < grid.size(); ++v) {
              ++sc.positives[m][v];
              if (emul.boxes[b].cls_confidence > grid[v]) ++sc.confident[m][v];
            }
          }
        }
        return sc;
      });

  std::string csv = csvio::row({"selector", "v", "positives", "confident", "ratio", "vacuous"});
  std::array<std::vector<double>, 3> ratio;
  for (std::size_t m = 0; m < 3; ++m) {
    ratio[m].assign(grid.size(), 1.0);
    for (std::size_t v = 0; v < grid.size(); ++v) {
      std::size_t pos = 0, conf = 0;
      for (const SceneCounts& sc : counts) {
        pos += sc.positives[m][v];
        conf += sc.confident[m][v];
      }
      const bool vacuous = pos == 0;
      if (!vacuous) ratio[m][v] = static_cast<double>(conf) / static_cast<double>(pos);
      csv += csvio::row({harness::model_name(kModels[m]), csvio::num(grid[v]), csvio::num(pos),
                         csvio::num(conf), csvio::num(ratio[m][v]), vacuous ? "true" : "false"});
    }
  }
  if (!opt.out.empty()) detail::write_file(opt.out, csv);

  if (!opt.svg_out.empty()) {
    std::vector<svg::Series> series(3);
    for (std::size_t m = 0; m < 3; ++m) {
      series[m].label = harness::model_name(kModels[m]);
      for (std::size_t v = 0; v < grid.size(); ++v)
        series[m].points.emplace_back(grid[v], ratio[m][v]);
    }
    detail::write_file(opt.svg_out,
                       svg::line_chart("consistency ratio vs confidence threshold",
                                       "confidence threshold v", "ratio of kept positives",
                                       series));
  }

  bool dominance = true;
  for (std::size_t v = 0; v < grid.size(); ++v) dominance = dominance && ratio[0][v] >= ratio[1][v];
  std::printf("compare-nms: %zu scenes, tau=%.2f; set-based dominates cls at every v: %s\n",
              opt.scenes, opt.tau, dominance ? "yes" : "no");
  return 0;
}

// ---- propagate --------------------------------------------------------------------------

struct PropagateOptions {
  std::uint64_t seed = 0;
  std::size_t scenes = 8;
  std::string out;
  std::size_t k = 9;
  int t_steps = 1;
  std::string variant = "1x4";
  std::string config_path;
  std::string dump_prefix;
  std::string kitti_dir;
  std::size_t kitti_points = 16384;
  std::size_t workers = 2;
};

inline int run_propagate(const PropagateOptions& opt) {
  if (opt.variant != "1x1" && opt.variant != "1x4")
    throw ContractError("propagate: --variant must be 1x1 or 1x4");
  if (opt.t_steps > 1 && opt.variant != "1x1")
    throw ContractError("propagate: --t-steps > 1 needs --variant 1x1 (residual updates)");

  scene::SceneConfig cfg;
  if (!opt.config_path.empty())
    cfg = scene::parse_scene_config(detail::read_file(opt.config_path));

  std::vector<detail::KittiFrame> frames;
  if (!opt.kitti_dir.empty())
    for (const std::string& stem : detail::list_kitti_stems(opt.kitti_dir, opt.scenes))
      frames.push_back(detail::load_kitti_frame(opt.kitti_dir, stem));
  const std::size_t scene_count = opt.kitti_dir.empty() ? opt.scenes : frames.size();

  struct Row {
    std::size_t points = 0, gt = 0;
    double probe_raw = 0.0, probe_fused = 0.0;
    std::string dump;  // latents CSV when dumping is on
  };

  const std::vector<Row> rows = detail::parallel_map<Row>(
      scene_count, opt.workers, [&](std::size_t i) {
        Rng rng = Rng(opt.seed).split(i);
        const scene::SceneSample sample =
            opt.kitti_dir.empty()
                ? scene::generate_scene(cfg, rng.next_u64())
                : detail::kitti_scene(opt.kitti_dir, frames[i], opt.kitti_points, rng.next_u64());

        const std::size_t point_channels = 6;
        Rng latent_rng = rng.split(7);
        const DiffArray latents =
            harness::make_point_latents(sample, point_channels, latent_rng);
        const auto positions = harness::project_positions(sample);
        const auto labels = harness::foreground_labels(sample);

        const bool four_level = opt.variant == "1x4";
        std::vector<DiffArray> maps = sample.image_features;
        std::vector<double> strides = sample.level_strides;
        if (!four_level) {
          maps.resize(1);
          strides.resize(1);
        }
        const std::size_t img_channels = maps[0].shape[2];
        Rng param_rng = rng.split(8);
        cdmp::PropagationParams params = cdmp::random_params(
            param_rng, point_channels,
            std::vector<std::size_t>(maps.size(), img_channels), opt.k, sample.cloud.size(),
            cdmp::FilterMode::diagonal,
            opt.t_steps > 1 ? cdmp::UpdateMode::residual : cdmp::UpdateMode::concat);
        params.iterations = opt.t_steps;

        Tape tape;
        cdmp::FeatureGraph points = cdmp::attach(
            tape, cdmp::FeatureGraph::points(latents, positions));
        cdmp::FeatureGraph image =
            cdmp::attach(tape, cdmp::FeatureGraph::image(maps, strides));
        const DiffArray refined =
            cdmp::propagate(tape, points, image, cdmp::attach(tape, params),
                            four_level ? cdmp::Variant::cdmp_1x4 : cdmp::Variant::cdmp_1x1);

        Row row;
        row.points = sample.cloud.size();
        row.gt = sample.objects.size();
        row.probe_raw = harness::linear_probe_accuracy(latents, labels);
        row.probe_fused = harness::linear_probe_accuracy(refined, labels);
        if (!opt.dump_prefix.empty()) {
          std::string dump;
          std::vector<std::string> header;
          for (std::size_t c = 0; c < refined.shape[1]; ++c)
            header.push_back("c" + std::to_string(c));
          dump += csvio::row(header);
          for (std::size_t r = 0; r < refined.shape[0]; ++r) {
            std::vector<std::string> fields;
            for (std::size_t c = 0; c < refined.shape[1]; ++c)
              fields.push_back(csvio::num(refined(r, c)));
            dump += csvio::row(fields);
          }
          row.dump = std::move(dump);
        }
        return row;
      });

  std::string csv =
      csvio::row({"scene", "points", "gt_count", "probe_raw", "probe_fused", "improved"});
  double mean_raw = 0.0, mean_fused = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    mean_raw += r.probe_raw;
    mean_fused += r.probe_fused;
    csv += csvio::row({csvio::num(i), csvio::num(r.points), csvio::num(r.gt),
                       csvio::num(r.probe_raw), csvio::num(r.probe_fused),
                       r.probe_fused >= r.probe_raw ? "true" : "false"});
    if (!opt.dump_prefix.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "_scene%04zu.csv", i);
      detail::write_file(opt.dump_prefix + name, r.dump);
    }
  }
  if (!opt.out.empty()) detail::write_file(opt.out, csv);
  if (!rows.empty()) {
    mean_raw /= static_cast<double>(rows.size());
    mean_fused /= static_cast<double>(rows.size());
  }
  std::printf("propagate: %zu scenes; probe accuracy raw %.4f -> fused %.4f\n", rows.size(),
              mean_raw, mean_fused);
  return 0;
}

// ---- gen-scenes -------------------------------------------------------------------------

struct GenScenesOptions {
  std::uint64_t seed = 0;
  std::size_t scenes = 4;
  std::string out_dir;
  std::string config_path;
  bool features = false;
};

inline int run_gen_scenes(const GenScenesOptions& opt) {
  namespace fs = std::filesystem;
  scene::SceneConfig cfg;
  if (!opt.config_path.empty())
    cfg = scene::parse_scene_config(detail::read_file(opt.config_path));
  std::error_code ec;
  fs::create_directories(opt.out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + opt.out_dir);

  for (std::size_t i = 0; i < opt.scenes; ++i) {
    Rng rng = Rng(opt.seed).split(i);
    const scene::SceneSample sample = scene::generate_scene(cfg, rng.next_u64());
    char stem[32];
    std::snprintf(stem, sizeof stem, "scene_%04zu", i);
    const fs::path base = fs::path(opt.out_dir) / stem;

    scene::KittiCalib calib;
    calib.p2 = sample.calib.p;
    calib.r0_rect = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    calib.tr_velo = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
    detail::write_file(base.string() + ".calib.txt", scene::serialize_calib(calib));

    std::vector<scene::KittiLabel> labels;
    for (const scene::SceneObject& obj : sample.objects) {
      scene::KittiLabel label =
          scene::from_box3d(obj.box, scene::kCategoryNames[obj.category]);
      const auto corners = scene::detail::box_corners(obj.box);
      const auto proj = geom::project_points({corners.begin(), corners.end()}, sample.calib);
      double u0 = 1e9, v0 = 1e9, u1 = -1e9, v1 = -1e9;
      for (const auto& uv : proj.uv) {
        u0 = std::min(u0, uv[0]);
        u1 = std::max(u1, uv[0]);
        v0 = std::min(v0, uv[1]);
        v1 = std::max(v1, uv[1]);
      }
      label.bbox2d = {u0, v0, u1, v1};
      labels.push_back(std::move(label));
    }
    detail::write_file(base.string() + ".label.txt", scene::serialize_labels(labels));
    detail::write_file(base.string() + ".points.csv",
                       scene::serialize_point_cloud_csv(sample.cloud));

    if (opt.features) {
      for (std::size_t l = 0; l < sample.image_features.size(); ++l) {
        const DiffArray& map = sample.image_features[l];
        std::string out;
        std::vector<std::string> header{"row", "col"};
        for (std::size_t c = 0; c < map.shape[2]; ++c) header.push_back("c" + std::to_string(c));
        out += csvio::row(header);
        for (std::size_t r = 0; r < map.shape[0]; ++r)
          for (std::size_t c = 0; c < map.shape[1]; ++c) {
            std::vector<std::string> fields{csvio::num(r), csvio::num(c)};
            for (std::size_t k = 0; k < map.shape[2]; ++k)
              fields.push_back(csvio::num(map(r, c, k)));
            out += csvio::row(fields);
          }
        detail::write_file(base.string() + ".features_l" + std::to_string(l) + ".csv", out);
      }
    }
  }
  std::printf("gen-scenes: wrote %zu scenes to %s\n", opt.scenes, opt.out_dir.c_str());
  return 0;
}

// ---- entry point ------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  CLI::App app{"cross-sensor fusion and set-based detection workbench"};
  app.require_subcommand(1);

  GradcheckOptions grad;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  grad_cmd->add_option("--seed", grad.seed, "master seed");
  grad_cmd->add_option("--tolerance", grad.tolerance, "max relative error to pass");
  grad_cmd->add_option("--only", grad.only, "run only suites whose name contains this");
  grad_cmd->add_option("--out", grad.out, "CSV report path");
  grad_cmd->add_option("--workers", grad.workers, "worker threads");

  MatchDemoOptions match;
  std::string match_iou = "3d";
  CLI::App* match_cmd =
      app.add_subcommand("match-demo", "assignment solver vs exhaustive oracle");
  match_cmd->add_option("--seed", match.seed, "master seed");
  match_cmd->add_option("--scenes", match.scenes, "scene count");
  match_cmd->add_option("--out", match.out, "CSV output path");
  match_cmd->add_option("--iou", match_iou, "overlap kind")->check(CLI::IsMember({"bev", "3d"}));
  match_cmd->add_option("--box-cap", match.box_cap, "candidate boxes per scene");
  match_cmd->add_option("--kitti-dir", match.kitti_dir, "KITTI directory (real-data mode)");
  match_cmd->add_option("--workers", match.workers, "worker threads");

  CompareNmsOptions nms;
  std::string nms_iou = "3d";
  CLI::App* nms_cmd =
      app.add_subcommand("compare-nms", "consistency ratio across selector models");
  nms_cmd->add_option("--seed", nms.seed, "master seed");
  nms_cmd->add_option("--scenes", nms.scenes, "scene count");
  nms_cmd->add_option("--out", nms.out, "CSV output path");
  nms_cmd->add_option("--svg", nms.svg_out, "optional SVG plot path");
  nms_cmd->add_option("--tau", nms.tau, "positive-candidate IoU threshold");
  nms_cmd->add_option("--v-grid", nms.v_grid, "comma-separated confidence thresholds");
  nms_cmd->add_option("--box-cap", nms.box_cap, "candidates per scene");
  nms_cmd->add_option("--iou", nms_iou, "overlap kind")->check(CLI::IsMember({"bev", "3d"}));
  nms_cmd->add_option("--workers", nms.workers, "worker threads");

  PropagateOptions prop;
  CLI::App* prop_cmd = app.add_subcommand("propagate", "run fusion and probe separability");
  prop_cmd->add_option("--seed", prop.seed, "master seed");
  prop_cmd->add_option("--scenes", prop.scenes, "scene count");
  prop_cmd->add_option("--out", prop.out, "CSV output path");
  prop_cmd->add_option("--k", prop.k, "sampled neighbors per node");
  prop_cmd->add_option("--t-steps", prop.t_steps, "propagation iterations");
  prop_cmd->add_option("--variant", prop.variant, "1x1 or 1x4");
  prop_cmd->add_option("--config", prop.config_path, "scene config file");
  prop_cmd->add_option("--dump-latents", prop.dump_prefix, "write per-scene latents CSVs");
  prop_cmd->add_option("--kitti-dir", prop.kitti_dir, "KITTI directory (real-data mode)");
  prop_cmd->add_option("--kitti-points", prop.kitti_points, "points per KITTI frame");
  prop_cmd->add_option("--workers", prop.workers, "worker threads");

  GenScenesOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-scenes", "write synthetic scenes to disk");
  gen_cmd->add_option("--seed", gen.seed, "master seed");
  gen_cmd->add_option("--scenes", gen.scenes, "scene count");
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
  gen_cmd->add_option("--config", gen.config_path, "scene config file");
  gen_cmd->add_flag("--features", gen.features, "also write feature-level CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (grad_cmd->parsed()) return run_gradcheck(grad);
    if (match_cmd->parsed()) {
      match.iou_kind = detail::parse_iou(match_iou);
      return run_match_demo(match);
    }
    if (nms_cmd->parsed()) {
      nms.iou_kind = detail::parse_iou(nms_iou);
      return run_compare_nms(nms);
    }
    if (prop_cmd->parsed()) return run_propagate(prop);
    if (gen_cmd->parsed()) return run_gen_scenes(gen);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

inline int run(int argc, char** argv) { return run(argc, const_cast<const char* const*>(argv)); }

}  // namespace fusedet::cli
