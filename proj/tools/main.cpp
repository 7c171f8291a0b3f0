// occfield command line: synthetic scene generation, occupancy-field fitting,
// depth/semantic rendering, evaluation and label fusion.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "occfield/dataset.hpp"
#include "occfield/fit.hpp"
#include "occfield/gradcheck.hpp"
#include "occfield/grid.hpp"
#include "occfield/image_io.hpp"
#include "occfield/label_fusion.hpp"
#include "occfield/metrics.hpp"
#include "occfield/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace occfield;

namespace {

// Guards an output directory against concurrent runs. flock releases on
// process exit, so stale locks cannot wedge the directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    fs::create_directories(dir);
    path_ = dir / ".occfield.lock";
    fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot create lockfile " + path_.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0)
      throw std::runtime_error("output directory " + dir.string() +
                               " is locked by another occfield run");
  }
  ~DirLock() {
    if (fd_ >= 0) ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

void write_run_manifest(const fs::path& out_dir, const std::string& command, uint64_t seed,
                        const json& inputs, const std::vector<std::string>& artifact_rel_paths) {
  json m;
  m["command"] = command;
  m["seed"] = seed;
  m["inputs"] = inputs;
  m["versions"] = {{"occfield", "1.0"}, {"occf_format", 1}};
  json artifacts = json::object();
  for (const auto& rel : artifact_rel_paths)
    artifacts[rel] = {{"hash_fnv1a64", hash_file_hex((out_dir / rel).string())}};
  m["artifacts"] = artifacts;
  write_text_file((out_dir / "run_manifest.json").string(), m.dump(2) + "\n");
}

int window_center(size_t n_frames, int window) {
  const int start = (static_cast<int>(n_frames) - window) / 2;
  return start + window / 2;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  const SceneSpec scene = scene_from_json(json::parse(read_text_file(spec_path)));
  DirLock lock(out_dir);
  write_dataset(out_dir, scene);
  std::vector<std::string> artifacts = {"manifest.json"};
  write_run_manifest(out_dir, "synth", 0, {{"spec", spec_path}}, artifacts);
  std::cout << "wrote " << scene.trajectory.size() << " frames x " << scene.rig.size()
            << " cameras to " << out_dir << "\n";
  return 0;
}

int cmd_fit(const std::string& data_dir, const std::string& config_path,
            const std::string& out_dir, std::optional<uint64_t> seed_override) {
  FitConfig cfg = fit_config_from_json(json::parse(read_text_file(config_path)));
  if (seed_override) cfg.seed = *seed_override;
  const FrameSet frames = load_dataset(data_dir, /*load_depth=*/false,
                                       /*load_labels=*/cfg.loss.lambda > 0);
  DirLock lock(out_dir);
  OccupancyGrid grid = make_grid(cfg.grid);

  std::ofstream csv(fs::path(out_dir) / "loss.csv");
  const FitResult result = fit(grid, frames, cfg, &csv);
  csv.close();

  save_grid(grid, (fs::path(out_dir) / "checkpoint.occf").string());
  write_text_file((fs::path(out_dir) / "fit_config.json").string(), to_json(cfg).dump(2) + "\n");
  write_run_manifest(out_dir, "fit", cfg.seed,
                     {{"data", data_dir}, {"config", config_path}},
                     {"checkpoint.occf", "loss.csv", "fit_config.json"});
  if (!result.log.empty())
    std::cout << "fit: " << cfg.steps << " steps, loss " << result.log.front().total << " -> "
              << result.log.back().total << "\n";
  return 0;
}

int cmd_render(const std::string& run_dir, const std::string& data_dir, int frame,
               const std::string& camera, const std::string& out_dir) {
  const OccupancyGrid grid = load_grid((fs::path(run_dir) / "checkpoint.occf").string());
  const FitConfig cfg =
      fit_config_from_json(json::parse(read_text_file((fs::path(run_dir) / "fit_config.json").string())));
  const FrameSet frames = load_dataset(data_dir, false, false);
  const CameraModel& cam = frames.camera(camera);
  if (frame < 0 || frame >= static_cast<int>(frames.frames.size()))
    throw std::invalid_argument("frame index out of range");
  const int center = window_center(frames.frames.size(), cfg.supervision_window);
  const Pose field_from_cam = frames.frames[center].world_from_ego.inverse() *
                              frames.frames[frame].world_from_ego * cam.ego_from_camera;

  DirLock lock(out_dir);
  const auto [depth, acc] = render_depth_map(grid, cam, field_from_cam, cfg.render_mode);
  char stem[64];
  std::snprintf(stem, sizeof(stem), "f%03d_%s", frame, camera.c_str());
  write_pfm((fs::path(out_dir) / (std::string(stem) + "_depth.pfm")).string(), depth);
  write_png_depth16((fs::path(out_dir) / (std::string(stem) + "_depth.png")).string(), depth);
  std::vector<std::string> artifacts = {std::string(stem) + "_depth.pfm",
                                        std::string(stem) + "_depth.png"};

  if (grid.num_classes > 0) {
    const auto labels = render_semantic_map(grid, cam, field_from_cam, cfg.render_mode,
                                            cfg.semantic_stride, cfg.grid.class_ids);
    write_png_labels((fs::path(out_dir) / (std::string(stem) + "_semantics.png")).string(), labels,
                     cam.width, cam.height, label_palette());
    json palette = json::array();
    for (int id : cfg.grid.class_ids) {
      const auto& rgb = label_palette()[id];
      palette.push_back({{"id", id}, {"rgb", {rgb[0], rgb[1], rgb[2]}}});
    }
    palette.push_back({{"id", 255}, {"rgb", {128, 128, 128}}, {"name", "uncertain"}});
    write_text_file((fs::path(out_dir) / "palette.json").string(), palette.dump(2) + "\n");
    artifacts.push_back(std::string(stem) + "_semantics.png");
  }
  write_run_manifest(out_dir, "render", cfg.seed,
                     {{"run", run_dir}, {"data", data_dir}, {"frame", frame}, {"camera", camera}},
                     artifacts);
  std::cout << "rendered " << stem << " to " << out_dir << "\n";
  return 0;
}

std::vector<std::pair<std::string, std::string>> match_pfm_pairs(const std::string& pred,
                                                                 const std::string& gt) {
  std::vector<std::pair<std::string, std::string>> pairs;
  if (fs::is_directory(pred) != fs::is_directory(gt))
    throw std::invalid_argument("--pred and --gt must both be files or both directories");
  if (!fs::is_directory(pred)) {
    pairs.emplace_back(pred, gt);
    return pairs;
  }
  for (const auto& entry : fs::directory_iterator(pred)) {
    if (entry.path().extension() != ".pfm") continue;
    const fs::path other = fs::path(gt) / entry.path().filename();
    if (fs::exists(other)) pairs.emplace_back(entry.path().string(), other.string());
  }
  std::sort(pairs.begin(), pairs.end());
  if (pairs.empty()) throw std::invalid_argument("no matching .pfm pairs between pred and gt");
  return pairs;
}

int cmd_eval_depth(const std::string& pred, const std::string& gt, const std::string& out_dir,
                   double clip_min, double clip_max) {
  const auto pairs = match_pfm_pairs(pred, gt);
  // pool all pixels into one aggregate map pair
  Image all_pred, all_gt;
  json per_file = json::array();
  std::vector<double> pred_px, gt_px;
  for (const auto& [p, g] : pairs) {
    const Image ip = read_pfm(p), ig = read_pfm(g);
    if (!ip.same_shape(ig)) throw std::invalid_argument("shape mismatch: " + p + " vs " + g);
    const DepthMetrics m = depth_metrics(ip, ig, clip_min, clip_max);
    per_file.push_back({{"pred", p}, {"gt", g}, {"metrics", to_json(m)}});
    pred_px.insert(pred_px.end(), ip.data.begin(), ip.data.end());
    gt_px.insert(gt_px.end(), ig.data.begin(), ig.data.end());
  }
  Image pooled_pred(static_cast<int>(pred_px.size()), 1, 1);
  pooled_pred.data = pred_px;
  Image pooled_gt(static_cast<int>(gt_px.size()), 1, 1);
  pooled_gt.data = gt_px;
  const DepthMetrics m = depth_metrics(pooled_pred, pooled_gt, clip_min, clip_max);

  DirLock lock(out_dir);
  json report = {{"aggregate", to_json(m)}, {"per_file", per_file},
                 {"clip", {clip_min, clip_max}}};
  write_text_file((fs::path(out_dir) / "depth_report.json").string(), report.dump(2) + "\n");
  write_run_manifest(out_dir, "eval-depth", 0, {{"pred", pred}, {"gt", gt}},
                     {"depth_report.json"});
  std::cout << format_depth_report(m) << "\n";
  return 0;
}

int cmd_eval_occ(const std::string& run_dir, const std::string& data_dir, double threshold,
                 const std::string& vox_mode, double shell_width, bool sweep,
                 const std::string& out_dir) {
  const OccupancyGrid grid = load_grid((fs::path(run_dir) / "checkpoint.occf").string());
  const FitConfig cfg =
      fit_config_from_json(json::parse(read_text_file((fs::path(run_dir) / "fit_config.json").string())));
  const FrameSet frames = load_dataset(data_dir, false, false);
  if (frames.scene.is_null())
    throw std::invalid_argument("dataset manifest carries no scene spec; cannot voxelize oracle");
  const SceneSpec scene = scene_from_json(frames.scene);

  const VoxelizeMode mode = vox_mode == "solid" ? VoxelizeMode::Solid : VoxelizeMode::Shell;
  if (vox_mode != "solid" && vox_mode != "shell")
    throw std::invalid_argument("--voxelize must be 'solid' or 'shell'");
  const auto gt = voxelize_occupancy(scene, grid, mode, shell_width);

  std::vector<int> class_ids = cfg.grid.class_ids;
  if (class_ids.empty()) class_ids = {0};

  DirLock lock(out_dir);
  json report;
  report["voxelize"] = {{"mode", vox_mode}, {"shell_width", shell_width}};
  auto evaluate = [&](double thr) {
    const auto pred = extract_occupancy(grid, thr, cfg.render_mode, cfg.grid.class_ids);
    return occupancy_metrics(pred, gt, class_ids);
  };
  const OccMetrics m = evaluate(threshold);
  report["threshold"] = threshold;
  report["metrics"] = to_json(m);
  if (sweep) {
    json sweep_rows = json::array();
    for (double thr : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
      sweep_rows.push_back({{"threshold", thr}, {"metrics", to_json(evaluate(thr))}});
    }
    report["sweep"] = sweep_rows;
  }
  write_text_file((fs::path(out_dir) / "occ_report.json").string(), report.dump(2) + "\n");
  write_run_manifest(out_dir, "eval-occ", cfg.seed, {{"run", run_dir}, {"data", data_dir}},
                     {"occ_report.json"});
  std::cout << format_occ_report(m);
  return 0;
}

int cmd_fuse_labels(const std::vector<std::string>& mask_manifests, const std::string& table_path,
                    const std::string& out_dir) {
  const PromptTable table = load_prompt_table(table_path);
  DirLock lock(out_dir);
  const auto palette = label_palette();
  std::vector<std::string> artifacts;
  for (const auto& manifest : mask_manifests) {
    const DetectionMaskSet set = load_mask_set(manifest);
    const auto labels = fuse_labels(set, table);
    const std::string rel = set.image_id + "_labels.png";
    write_png_labels((fs::path(out_dir) / rel).string(), labels, set.width, set.height, palette);
    artifacts.push_back(rel);
    std::cout << set.image_id << ": " << set.entries.size() << " masks fused\n";
  }
  json palette_json = json::array();
  for (const auto& cat : table.categories) {
    const auto& rgb = palette[cat.id];
    palette_json.push_back({{"id", cat.id}, {"name", cat.name}, {"rgb", {rgb[0], rgb[1], rgb[2]}}});
  }
  palette_json.push_back({{"id", 255}, {"name", "uncertain"}, {"rgb", {128, 128, 128}}});
  write_text_file((fs::path(out_dir) / "palette.json").string(), palette_json.dump(2) + "\n");
  artifacts.push_back("palette.json");
  write_run_manifest(out_dir, "fuse-labels", 0, {{"table", table_path}}, artifacts);
  return 0;
}

int cmd_gradcheck(bool semantics, int n_params, double tol_renderer, double tol_full,
                  const std::string& out_dir) {
  const GradCheckReport report = gradient_check(semantics, n_params);
  json j = {{"renderer_tested", report.renderer_tested},
            {"renderer_max_rel_err", report.renderer_max_rel_err},
            {"full_tested", report.full_tested},
            {"full_max_rel_err", report.full_max_rel_err},
            {"skipped_branch_changes", report.skipped_branch_changes},
            {"fixture_params", report.fixture_params},
            {"tolerances", {tol_renderer, tol_full}},
            {"pass", report.pass(tol_renderer, tol_full)}};
  if (!out_dir.empty()) {
    DirLock lock(out_dir);
    write_text_file((fs::path(out_dir) / "gradcheck_report.json").string(), j.dump(2) + "\n");
    write_run_manifest(out_dir, "gradcheck", 0, {{"semantics", semantics}},
                       {"gradcheck_report.json"});
  }
  std::cout << "renderer: " << report.renderer_tested << " checks, max rel err "
            << report.renderer_max_rel_err << "\n"
            << "full loss: " << report.full_tested << " params, max rel err "
            << report.full_max_rel_err << " (" << report.skipped_branch_changes
            << " branch flips re-drawn)\n";
  if (!report.pass(tol_renderer, tol_full)) {
    std::cerr << "gradcheck FAILED\n";
    return 2;
  }
  std::cout << "gradcheck passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occupancy-field fitting from posed multi-camera images"};
  app.require_subcommand(1);

  std::string spec_path, data_dir, config_path, out_dir, run_dir, camera, pred, gt, table_path;
  std::string vox_mode = "solid";
  std::vector<std::string> mask_manifests;
  int frame = 0, n_params = 200;
  double threshold = 0.5, shell_width = 0.0, clip_min = 0.1, clip_max = 80.0;
  double tol_renderer = 1e-3, tol_full = 5e-3;
  bool sweep = false, semantics = false;
  std::optional<uint64_t> seed;

  auto* synth_cmd = app.add_subcommand("synth", "render a synthetic scene to a dataset directory");
  synth_cmd->add_option("--spec", spec_path, "scene spec JSON")->required();
  synth_cmd->add_option("--out", out_dir, "output dataset directory")->required();

  auto* fit_cmd = app.add_subcommand("fit", "fit an occupancy grid to a dataset");
  fit_cmd->add_option("--data", data_dir, "dataset directory (from synth)")->required();
  fit_cmd->add_option("--config", config_path, "fit config JSON")->required();
  fit_cmd->add_option("--out", out_dir, "run output directory")->required();
  fit_cmd->add_option("--seed", seed, "override the config seed");

  auto* render_cmd = app.add_subcommand("render", "render depth/semantics from a checkpoint");
  render_cmd->add_option("--run", run_dir, "fit output directory")->required();
  render_cmd->add_option("--data", data_dir, "dataset directory")->required();
  render_cmd->add_option("--frame", frame, "frame index")->required();
  render_cmd->add_option("--camera", camera, "camera name")->required();
  render_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* evald_cmd = app.add_subcommand("eval-depth", "depth metrics between PFM maps");
  evald_cmd->add_option("--pred", pred, "predicted .pfm file or directory")->required();
  evald_cmd->add_option("--gt", gt, "ground-truth .pfm file or directory")->required();
  evald_cmd->add_option("--out", out_dir, "report output directory")->required();
  evald_cmd->add_option("--clip-min", clip_min, "lower depth clip, meters");
  evald_cmd->add_option("--clip-max", clip_max, "upper depth clip, meters");

  auto* evalo_cmd = app.add_subcommand("eval-occ", "occupancy metrics vs the scene oracle");
  evalo_cmd->add_option("--run", run_dir, "fit output directory")->required();
  evalo_cmd->add_option("--data", data_dir, "dataset directory (with scene spec)")->required();
  evalo_cmd->add_option("--threshold", threshold, "opacity threshold");
  evalo_cmd->add_option("--voxelize", vox_mode, "oracle voxelization: solid|shell");
  evalo_cmd->add_option("--shell-width", shell_width, "shell half-width, meters");
  evalo_cmd->add_flag("--sweep", sweep, "also report a threshold sweep");
  evalo_cmd->add_option("--out", out_dir, "report output directory")->required();

  auto* fuse_cmd = app.add_subcommand("fuse-labels", "fuse detection masks into label maps");
  fuse_cmd->add_option("--masks", mask_manifests, "mask-set manifest JSON(s)")->required();
  fuse_cmd->add_option("--table", table_path, "prompt table JSON")->required();
  fuse_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  grad_cmd->add_flag("--semantics", semantics, "include the semantic loss path");
  grad_cmd->add_option("--params", n_params, "number of parameters to test");
  grad_cmd->add_option("--tol-renderer", tol_renderer, "renderer-path tolerance");
  grad_cmd->add_option("--tol-full", tol_full, "full-loss tolerance");
  grad_cmd->add_option("--out", out_dir, "report output directory (optional)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // bad flags/usage -> 1, --help -> 0
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(spec_path, out_dir);
    if (fit_cmd->parsed()) return cmd_fit(data_dir, config_path, out_dir, seed);
    if (render_cmd->parsed()) return cmd_render(run_dir, data_dir, frame, camera, out_dir);
    if (evald_cmd->parsed()) return cmd_eval_depth(pred, gt, out_dir, clip_min, clip_max);
    if (evalo_cmd->parsed())
      return cmd_eval_occ(run_dir, data_dir, threshold, vox_mode, shell_width, sweep, out_dir);
    if (fuse_cmd->parsed()) return cmd_fuse_labels(mask_manifests, table_path, out_dir);
    if (grad_cmd->parsed())
      return cmd_gradcheck(semantics, n_params, tol_renderer, tol_full, out_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: invalid JSON input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
