// objloc: object-map building, submap matching and evaluation from the
// command line. Exit codes: 0 success, 1 bad input, 2 no hypothesis survived.

#include "objloc/objloc.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace objloc;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool log_json = false;
};

int default_threads() {
  if (const char* env = std::getenv("VISTA_ALIGN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
    std::cerr << "warning: ignoring VISTA_ALIGN_THREADS=" << env << "\n";
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

class StageLog {
 public:
  StageLog(const Globals& g, std::string stage) : enabled_(g.log_json), stage_(std::move(stage)) {}

  void emit(io::OrderedJson fields) const {
    if (!enabled_) return;
    io::OrderedJson j;
    j["stage"] = stage_;
    for (auto& [k, v] : fields.items()) j[k] = v;
    j["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::cerr << j.dump() << "\n";
  }

 private:
  bool enabled_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Hyperparameters config_or_default(const std::string& path) {
  return path.empty() ? Hyperparameters{} : io::load_config(path);
}

std::pair<int, int> parse_sweep(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) {
      const int v = std::stoi(s);
      return {v, v};
    }
    const int lo = std::stoi(s.substr(0, colon));
    const int hi = std::stoi(s.substr(colon + 1));
    if (lo <= hi && lo >= 0) return {lo, hi};
  } catch (const std::exception&) {
  }
  throw InputError("--sweep: expected <lo>:<hi> with 0 <= lo <= hi");
}

io::OrderedJson hypothesis_json(const AlignmentHypothesis& h) {
  io::OrderedJson j = io::transform_json(h.transform);
  j["cardinality"] = h.cardinality;
  j["source_submap"] = h.source_submap;
  j["target_submap"] = h.target_submap;
  j["roll"] = h.angles.roll;
  j["pitch"] = h.angles.pitch;
  j["yaw"] = h.angles.yaw;
  return j;
}

io::OrderedJson submap_json(const Submap& s) {
  io::OrderedJson j;
  j["id"] = s.id;
  j["center"] = {s.center.x(), s.center.y()};
  j["landmarks"] = io::OrderedJson::array();
  for (std::size_t k = 0; k < s.size(); ++k)
    j["landmarks"].push_back({{"id", s.landmark_ids[k]}, {"position", {s.points[k].x(), s.points[k].y(), s.points[k].z()}}});
  return j;
}

io::OrderedJson poses_json(const PoseLookup& poses) {
  io::TrackFile only;
  only.poses = poses;
  const io::OrderedJson full = io::OrderedJson::parse(io::serialize_tracks(only));
  io::OrderedJson j;
  j["poses"] = full["poses"];
  return j;
}

// ---------------------------------------------------------------- commands

int run_simulate(const Globals& g, const std::string& scene_path, const std::string& trajectory_path,
                 const std::string& out_dir) {
  StageLog log(g, "simulate");
  sim::SceneSpec scene_spec = sim::parse_scene_spec(io::read_file(scene_path));
  sim::TrajectoryFile traj = sim::parse_trajectory_spec(io::read_file(trajectory_path));
  if (g.seed_set) {
    scene_spec.seed = g.seed;
    traj.render.seed = g.seed + 1;
  }
  const auto scene = sim::generate_scene(scene_spec);
  const auto rendering = sim::render_tracks(scene, traj.trajectory, traj.intrinsics, traj.render);
  const fs::path dir(out_dir);
  io::write_file_atomic(dir / "tracks.json", io::serialize_tracks(rendering.tracks));
  io::write_file_atomic(dir / "poses.json", poses_json(rendering.tracks.poses).dump(1) + "\n");
  io::write_file_atomic(dir / "ground_truth.json", sim::serialize_ground_truth(scene, rendering.track_to_object));
  std::size_t detections = 0;
  for (const Track& t : rendering.tracks.tracks) detections += t.detections.size();
  log.emit({{"objects", scene.size()}, {"frames", rendering.tracks.poses.size()},
            {"tracks", rendering.tracks.tracks.size()}, {"detections", detections}});
  return 0;
}

int run_build_map(const Globals& g, const std::string& tracks_path, const std::string& config_path,
                  const std::string& out_path, const std::string& agent) {
  const Hyperparameters params = config_or_default(config_path);
  StageLog load_log(g, "load_tracks");
  const io::TrackFile tf = io::load_tracks(tracks_path);
  load_log.emit({{"tracks", tf.tracks.size()}, {"poses", tf.poses.size()}});

  StageLog log(g, "build_map");
  const BuildMapResult r = build_map(tf.tracks, tf.poses, tf.intrinsics, params, agent);
  io::write_file_atomic(out_path, io::serialize_map(r.map));
  log.emit({{"landmarks", r.map.landmarks.size()}, {"discarded_short", r.discarded_short},
            {"discarded_degenerate", r.discarded_degenerate}, {"discarded_diverged", r.discarded_diverged}});
  std::cout << r.summary() << "\n";
  if (r.empty_warning()) std::cerr << "warning: map is empty\n";
  return 0;
}

int run_submaps(const Globals& g, const std::string& map_path, const std::string& config_path,
                const std::string& out_dir) {
  const Hyperparameters params = config_or_default(config_path);
  const ObjectMap map = io::load_map(map_path);
  StageLog log(g, "submaps");
  const ObjectMap filtered = filter_for_submaps(map, params);
  const auto subs = generate_submaps(filtered, params);
  const fs::path dir(out_dir);
  io::OrderedJson index;
  index["agent_id"] = map.agent_id;
  index["landmarks_in"] = map.landmarks.size();
  index["landmarks_after_filter"] = filtered.landmarks.size();
  index["submaps"] = io::OrderedJson::array();
  for (const Submap& s : subs) {
    const std::string name = "submap_" + std::to_string(s.id) + ".json";
    io::write_file_atomic(dir / name, submap_json(s).dump(1) + "\n");
    index["submaps"].push_back({{"id", s.id}, {"center", {s.center.x(), s.center.y()}}, {"size", s.size()}, {"file", name}});
  }
  io::write_file_atomic(dir / "index.json", index.dump(1) + "\n");
  log.emit({{"landmarks", filtered.landmarks.size()}, {"submaps", subs.size()}});
  return 0;
}

int run_match(const Globals& g, const std::string& a_path, const std::string& b_path, const std::string& config_path,
              const std::string& out_path, int top_k) {
  const Hyperparameters params = config_or_default(config_path);
  const ObjectMap a = io::load_map(a_path);
  const ObjectMap b = io::load_map(b_path);
  if (a.landmarks.empty() || b.landmarks.empty()) throw InputError("match: both maps need at least one landmark");
  StageLog log(g, "match");
  auto hyps = align_maps(a, b, params, g.threads);
  const std::size_t total = hyps.size();
  if (top_k > 0 && hyps.size() > static_cast<std::size_t>(top_k)) hyps.resize(static_cast<std::size_t>(top_k));
  io::OrderedJson out = io::OrderedJson::array();
  for (const auto& h : hyps) out.push_back(hypothesis_json(h));
  io::write_file_atomic(out_path, out.dump(1) + "\n");
  log.emit({{"hypotheses", total}, {"written", hyps.size()}, {"threads", g.threads}});
  if (hyps.empty()) {
    std::cerr << "no hypothesis survived pruning\n";
    return 2;
  }
  const auto& top = hyps.front();
  std::cout << "hypotheses=" << total << " top_cardinality=" << top.cardinality << " yaw=" << top.angles.yaw
            << " translation=[" << top.transform.translation.transpose() << "]\n";
  return 0;
}

int run_evaluate(const Globals& g, const std::string& a_path, const std::string& b_path, const std::string& truth_path,
                 const std::string& config_path, const std::string& sweep, const std::string& out_path) {
  const Hyperparameters params = config_or_default(config_path);
  const auto [lo, hi] = parse_sweep(sweep);
  const ObjectMap a = io::load_map(a_path);
  const ObjectMap b = io::load_map(b_path);
  const RigidTransform truth = io::load_transform(truth_path);
  StageLog log(g, "evaluate");
  const EvaluationRun run = evaluate_pairs(a, b, truth, params, g.threads);
  std::vector<int> values;
  for (int s = lo; s <= hi; ++s) values.push_back(s);
  const auto rows = precision_recall(run.outcomes, params, values);
  const TimingStats t = timing_stats(run.runtimes);
  std::ostringstream csv;
  csv.precision(10);
  csv << "s_max,precision,recall,hypothesized,overlapping_pairs,mean_runtime_s,std_runtime_s\n";
  for (const auto& r : rows)
    csv << r.s_max << ',' << r.precision << ',' << r.recall << ',' << r.hypothesized << ',' << r.overlapping_pairs
        << ',' << t.mean << ',' << t.stddev << '\n';
  io::write_file_atomic(out_path, csv.str());
  log.emit({{"pairs", run.outcomes.size()}, {"searches", run.runtimes.size()}, {"rows", rows.size()}});
  for (const auto& r : rows)
    if (r.precision_undefined) std::cerr << "note: s_max=" << r.s_max << " has no hypotheses; precision reported as 1\n";
  return 0;
}

int run_perturb(const Globals& g, const std::string& map_path, double yaw, const std::vector<double>& t,
                const std::string& out_path, const std::string& truth_path) {
  StageLog log(g, "perturb");
  const ObjectMap map = io::load_map(map_path);
  const auto [moved, truth] = sim::perturb_frame(map, yaw, Vec3(t[0], t[1], t[2]));
  io::write_file_atomic(out_path, io::serialize_map(moved));
  io::write_file_atomic(truth_path, io::serialize_transform(truth));
  log.emit({{"landmarks", moved.landmarks.size()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-level map building and cross-view map alignment."};
  app.require_subcommand(1);
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Seed for all randomness (simulate overrides spec seeds)");
  g.threads = default_threads();
  app.add_option("--threads", g.threads, "Worker threads for submap comparisons (default: $VISTA_ALIGN_THREADS or cores)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--log-json", g.log_json, "Write one JSON object per pipeline stage to stderr (counts, seconds)");

  std::string scene, trajectory, out_dir;
  auto* simulate = app.add_subcommand("simulate", "Render a synthetic scene into track, pose and ground-truth files");
  simulate->add_option("--scene", scene, "Scene spec JSON (n_objects, extent [m], n_dynamic, dynamic_velocity [m/frame], seed)")
      ->required();
  simulate->add_option("--trajectory", trajectory,
                       "Trajectory spec JSON (waypoints [m], frames, camera_pitch [deg], altitude [m], intrinsics [px], "
                       "noise_px [px], dropout, duplicate_rate, seed)")
      ->required();
  simulate->add_option("--out", out_dir, "Output directory for tracks.json, poses.json, ground_truth.json")->required();

  std::string tracks, config, out, agent = "agent";
  auto* build = app.add_subcommand("build-map", "Triangulate detection tracks into an object map");
  build->add_option("--tracks", tracks, "Track file JSON (intrinsics [px], poses [m], detections [px])")->required();
  build->add_option("--config", config, "Hyperparameter file (key = value; lengths in m, angles in deg)");
  build->add_option("--out", out, "Output map JSON (positions [m], covariances [m^2])")->required();
  build->add_option("--agent", agent, "Agent id stored in the map")->capture_default_str();

  std::string map_path;
  auto* submaps = app.add_subcommand("submaps", "Filter a map and cut it into grid submaps");
  submaps->add_option("--map", map_path, "Map JSON")->required();
  submaps->add_option("--config", config, "Hyperparameter file (window, overlap [m]; n_max; omega_percentile [%])");
  submaps->add_option("--out", out_dir, "Output directory for submap_<id>.json and index.json")->required();

  std::string map_a, map_b;
  int top_k = 0;
  auto* match = app.add_subcommand("match", "Find frame-alignment hypotheses between two maps (exit 2 if none)");
  match->add_option("--map-a", map_a, "Source map JSON")->required();
  match->add_option("--map-b", map_b, "Target map JSON")->required();
  match->add_option("--config", config, "Hyperparameter file (sigma, epsilon, gamma [m]; theta_rp, theta_yaw [deg]; s_max)");
  match->add_option("--out", out, "Output JSON list of hypotheses (rotation, translation [m], roll/pitch/yaw [deg])")
      ->required();
  match->add_option("--top-k", top_k, "Keep only the k largest hypotheses (0 = all)")->check(CLI::NonNegativeNumber);

  std::string truth, sweep = "3:15";
  auto* evaluate = app.add_subcommand("evaluate", "Precision/recall over an s_max sweep against a known alignment");
  evaluate->add_option("--map-a", map_a, "Source map JSON")->required();
  evaluate->add_option("--map-b", map_b, "Target map JSON")->required();
  evaluate->add_option("--truth", truth, "Ground-truth transform JSON mapping map-a into map-b (translation [m])")
      ->required();
  evaluate->add_option("--config", config, "Hyperparameter file (theta_overlap; t_max [m]; iou_voxel [m])");
  evaluate->add_option("--sweep", sweep, "Inclusive s_max range lo:hi")->capture_default_str();
  evaluate->add_option("--out", out, "Output CSV")->required();

  double yaw = 0;
  std::vector<double> translation{0, 0, 0};
  std::string truth_out;
  auto* perturb = app.add_subcommand("perturb", "Move a map into a new frame by a yaw and translation");
  perturb->add_option("--map", map_path, "Map JSON")->required();
  perturb->add_option("--yaw", yaw, "Yaw about +z [deg]")->capture_default_str();
  perturb->add_option("--translation", translation, "Translation x y z [m]")->expected(3);
  perturb->add_option("--out", out, "Output map JSON")->required();
  perturb->add_option("--truth-out", truth_out, "Output transform JSON (old frame -> new frame)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    if (*simulate) return run_simulate(g, scene, trajectory, out_dir);
    if (*build) return run_build_map(g, tracks, config, out, agent);
    if (*submaps) return run_submaps(g, map_path, config, out_dir);
    if (*match) return run_match(g, map_a, map_b, config, out, top_k);
    if (*evaluate) return run_evaluate(g, map_a, map_b, truth, config, sweep, out);
    if (*perturb) return run_perturb(g, map_path, yaw, translation, out, truth_out);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
