#pragma once

// Synthetic scenes, camera trajectories and 2D detection tracks with known
// ground truth. Stands in for a segmentation/tracking front-end.
//
// Occlusion is modelled only as random detection dropout. All randomness
// comes from the seed passed in, so identical inputs give identical output.

#include "objloc/core.hpp"
#include "objloc/io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <vector>

namespace objloc::sim {

struct SceneSpec {
  int n_objects = 36;
  Vec3 extent = Vec3(10, 10, 1);  // m; objects are placed in [0, extent]
  int n_dynamic = 0;
  double dynamic_velocity = 1.0;  // m per frame
  std::uint64_t seed = 0;

  void validate() const {
    if (n_objects < 0) throw InputError("scene.n_objects: must be >= 0");
    if (n_dynamic < 0 || n_dynamic > n_objects) throw InputError("scene.n_dynamic: must be in [0, n_objects]");
    if (!(extent.array() > 0).all()) throw InputError("scene.extent: components must be > 0");
    if (dynamic_velocity < 0) throw InputError("scene.dynamic_velocity: must be >= 0");
  }
};

struct SceneObject {
  int id = 0;
  Vec3 position = Vec3::Zero();  // at frame 0
  bool dynamic = false;
  Vec3 velocity = Vec3::Zero();  // m per frame, horizontal

  Vec3 position_at(int frame) const { return position + velocity * frame; }
};

/// Uniform placement in the extent box. Exactly n_dynamic objects move with
/// constant horizontal velocity of magnitude dynamic_velocity.
inline std::vector<SceneObject> generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<SceneObject> objects(static_cast<std::size_t>(spec.n_objects));
  for (int i = 0; i < spec.n_objects; ++i) {
    auto& o = objects[static_cast<std::size_t>(i)];
    o.id = i;
    o.position = Vec3(unit(rng) * spec.extent.x(), unit(rng) * spec.extent.y(), unit(rng) * spec.extent.z());
  }
  std::vector<int> order(static_cast<std::size_t>(spec.n_objects));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int k = 0; k < spec.n_dynamic; ++k) {
    auto& o = objects[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
    const double heading = unit(rng) * 2.0 * std::numbers::pi;
    o.dynamic = true;
    o.velocity = spec.dynamic_velocity * Vec3(std::cos(heading), std::sin(heading), 0.0);
  }
  return objects;
}

struct TrajectorySpec {
  std::vector<Vec3> waypoints;  // x-y path; z is replaced by altitude
  int frames = 2;
  double camera_pitch = 0.0;  // deg from nadir, tilted towards the direction of travel
  double altitude = 10.0;     // m

  void validate() const {
    if (waypoints.size() < 2) throw InputError("trajectory.waypoints: need at least 2 waypoints");
    if (frames < 2) throw InputError("trajectory.frames: must be >= 2");
    if (camera_pitch < 0 || camera_pitch > 89) throw InputError("trajectory.camera_pitch: must be in [0, 89]");
  }
};

/// Camera orientation for a heading (rad, about +z) and a tilt away from
/// nadir (deg). The optical axis leans towards the direction of travel and
/// the image x axis points to the right of it.
inline Mat3 camera_rotation(double heading, double pitch_deg) {
  const double th = deg2rad(pitch_deg);
  const Vec3 x(std::sin(heading), -std::cos(heading), 0.0);
  const Vec3 z(std::cos(heading) * std::sin(th), std::sin(heading) * std::sin(th), -std::cos(th));
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

/// Poses at evenly spaced arc length along the waypoint polyline.
inline PoseLookup trajectory_poses(const TrajectorySpec& spec) {
  spec.validate();
  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < spec.waypoints.size(); ++i)
    cum.push_back(cum.back() + (spec.waypoints[i] - spec.waypoints[i - 1]).head<2>().norm());
  const double total = cum.back();
  if (!(total > 0)) throw InputError("trajectory.waypoints: path has zero length");

  PoseLookup poses;
  for (int f = 0; f < spec.frames; ++f) {
    const double s = total * f / (spec.frames - 1);
    std::size_t seg = 1;
    while (seg + 1 < cum.size() && (cum[seg] < s || cum[seg] - cum[seg - 1] <= 0)) ++seg;
    const Vec2 p0 = spec.waypoints[seg - 1].head<2>();
    const Vec2 p1 = spec.waypoints[seg].head<2>();
    const double len = cum[seg] - cum[seg - 1];
    const double alpha = len > 0 ? std::clamp((s - cum[seg - 1]) / len, 0.0, 1.0) : 0.0;
    const Vec2 xy = p0 + alpha * (p1 - p0);
    const Vec2 dir = p1 - p0;
    Pose pose;
    pose.frame_index = f;
    pose.translation = Vec3(xy.x(), xy.y(), spec.altitude);
    pose.rotation = camera_rotation(std::atan2(dir.y(), dir.x()), spec.camera_pitch);
    poses[f] = pose;
  }
  return poses;
}

/// Back-and-forth sweep covering [x0, x1] x [y0, y1] with `passes` legs
/// along x.
inline std::vector<Vec3> lawnmower(double x0, double x1, double y0, double y1, int passes) {
  std::vector<Vec3> w;
  for (int i = 0; i < passes; ++i) {
    const double y = passes > 1 ? y0 + (y1 - y0) * i / (passes - 1) : 0.5 * (y0 + y1);
    if (i % 2 == 0) {
      w.emplace_back(x0, y, 0);
      w.emplace_back(x1, y, 0);
    } else {
      w.emplace_back(x1, y, 0);
      w.emplace_back(x0, y, 0);
    }
  }
  return w;
}

struct RenderOptions {
  double noise_px = 0.0;
  double dropout = 0.0;
  double duplicate_rate = 0.0;
  std::uint64_t seed = 0;
};

struct Rendering {
  io::TrackFile tracks;
  std::map<int, int> track_to_object;  // track id -> scene object id
};

/// Projects every object into every frame where it is in front of the camera
/// and inside the image, adds Gaussian pixel noise, drops detections with
/// probability `dropout` (or when noise pushes them off-image), and with
/// probability `duplicate_rate` splits a track into two disjoint tracks with
/// different ids.
inline Rendering render_tracks(const std::vector<SceneObject>& scene, const TrajectorySpec& trajectory,
                               const CameraIntrinsics& intrinsics, const RenderOptions& opt) {
  if (!intrinsics.valid()) throw InputError("intrinsics: invalid camera calibration");
  if (opt.noise_px < 0) throw InputError("render.noise_px: must be >= 0");
  if (opt.dropout < 0 || opt.dropout > 1) throw InputError("render.dropout: must be in [0, 1]");
  if (opt.duplicate_rate < 0 || opt.duplicate_rate > 1) throw InputError("render.duplicate_rate: must be in [0, 1]");

  Rendering out;
  out.tracks.intrinsics = intrinsics;
  out.tracks.poses = trajectory_poses(trajectory);

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::map<int, Track> by_object;
  for (const auto& [frame, pose] : out.tracks.poses) {
    for (const SceneObject& o : scene) {
      const auto px = project(pose, intrinsics, o.position_at(frame));
      if (!px || !intrinsics.contains(*px)) continue;
      const double nu = noise(rng);
      const double nv = noise(rng);
      const Vec2 noisy = *px + opt.noise_px * Vec2(nu, nv);
      const bool dropped = unit(rng) < opt.dropout;
      if (dropped || !intrinsics.contains(noisy)) continue;
      Track& t = by_object[o.id];
      t.track_id = o.id;
      t.detections.push_back({frame, noisy});
    }
  }

  int next_id = 0;
  for (const SceneObject& o : scene) next_id = std::max(next_id, o.id + 1);
  for (auto& [object_id, track] : by_object) {
    const auto n = track.detections.size();
    if (n >= 2 && unit(rng) < opt.duplicate_rate) {
      std::uniform_int_distribution<std::size_t> cut(1, n - 1);
      const std::size_t k = cut(rng);
      Track second;
      second.track_id = next_id++;
      second.detections.assign(track.detections.begin() + static_cast<std::ptrdiff_t>(k), track.detections.end());
      track.detections.resize(k);
      out.track_to_object[second.track_id] = object_id;
      out.tracks.tracks.push_back(std::move(second));
    }
    out.track_to_object[track.track_id] = object_id;
    out.tracks.tracks.push_back(track);
  }
  std::sort(out.tracks.tracks.begin(), out.tracks.tracks.end(),
            [](const Track& a, const Track& b) { return a.track_id < b.track_id; });
  return out;
}

/// Re-expresses a map in a new frame: positions p -> R p + t with R a pure
/// yaw, covariances C -> R C R^T. Returns the map and the exact transform.
inline std::pair<ObjectMap, RigidTransform> perturb_frame(const ObjectMap& map, double yaw_deg, const Vec3& translation) {
  RigidTransform truth;
  truth.rotation = rot_z(deg2rad(yaw_deg));
  truth.translation = translation;
  ObjectMap out = map;
  for (Landmark& lm : out.landmarks) {
    lm.position = truth.apply(lm.position);
    lm.covariance = truth.rotation * lm.covariance * truth.rotation.transpose();
  }
  return {out, truth};
}

// ---------------------------------------------------------------- spec files

inline SceneSpec parse_scene_spec(const std::string& text) {
  using namespace io::detail;
  const io::Json j = parse(text, "scene");
  SceneSpec s;
  s.n_objects = integer(field(j, "n_objects", "scene"), "scene.n_objects");
  s.extent = numbers<3>(field(j, "extent", "scene"), "scene.extent");
  if (j.contains("n_dynamic")) s.n_dynamic = integer(j["n_dynamic"], "scene.n_dynamic");
  if (j.contains("dynamic_velocity")) s.dynamic_velocity = number(j["dynamic_velocity"], "scene.dynamic_velocity");
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw InputError("scene.seed: expected a non-negative integer");
    s.seed = j["seed"].get<std::uint64_t>();
  }
  s.validate();
  return s;
}

/// Trajectory file: the trajectory itself plus the camera and detection
/// model used to render it.
struct TrajectoryFile {
  TrajectorySpec trajectory;
  CameraIntrinsics intrinsics{400, 400, 320, 240, 640, 480};
  RenderOptions render;
};

inline TrajectoryFile parse_trajectory_spec(const std::string& text) {
  using namespace io::detail;
  const io::Json j = parse(text, "trajectory");
  TrajectoryFile t;
  const io::Json& wps = array(field(j, "waypoints", "trajectory"), "trajectory.waypoints");
  for (std::size_t i = 0; i < wps.size(); ++i)
    t.trajectory.waypoints.push_back(numbers<3>(wps[i], "trajectory.waypoints[" + std::to_string(i) + "]"));
  t.trajectory.frames = integer(field(j, "frames", "trajectory"), "trajectory.frames");
  if (j.contains("camera_pitch")) t.trajectory.camera_pitch = number(j["camera_pitch"], "trajectory.camera_pitch");
  if (j.contains("altitude")) t.trajectory.altitude = number(j["altitude"], "trajectory.altitude");
  if (j.contains("intrinsics")) {
    const io::Json& k = j["intrinsics"];
    t.intrinsics.fx = number(field(k, "fx", "trajectory.intrinsics"), "trajectory.intrinsics.fx");
    t.intrinsics.fy = number(field(k, "fy", "trajectory.intrinsics"), "trajectory.intrinsics.fy");
    t.intrinsics.cx = number(field(k, "cx", "trajectory.intrinsics"), "trajectory.intrinsics.cx");
    t.intrinsics.cy = number(field(k, "cy", "trajectory.intrinsics"), "trajectory.intrinsics.cy");
    t.intrinsics.width = integer(field(k, "width", "trajectory.intrinsics"), "trajectory.intrinsics.width");
    t.intrinsics.height = integer(field(k, "height", "trajectory.intrinsics"), "trajectory.intrinsics.height");
    if (!t.intrinsics.valid()) throw InputError("trajectory.intrinsics: invalid camera calibration");
  }
  if (j.contains("noise_px")) t.render.noise_px = number(j["noise_px"], "trajectory.noise_px");
  if (j.contains("dropout")) t.render.dropout = number(j["dropout"], "trajectory.dropout");
  if (j.contains("duplicate_rate")) t.render.duplicate_rate = number(j["duplicate_rate"], "trajectory.duplicate_rate");
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw InputError("trajectory.seed: expected a non-negative integer");
    t.render.seed = j["seed"].get<std::uint64_t>();
  }
  t.trajectory.validate();
  return t;
}

inline std::string serialize_ground_truth(const std::vector<SceneObject>& scene, const std::map<int, int>& track_to_object) {
  io::OrderedJson j;
  j["objects"] = io::OrderedJson::array();
  for (const SceneObject& o : scene) {
    io::OrderedJson oj;
    oj["id"] = o.id;
    oj["position"] = {o.position.x(), o.position.y(), o.position.z()};
    oj["dynamic"] = o.dynamic;
    oj["velocity"] = {o.velocity.x(), o.velocity.y(), o.velocity.z()};
    j["objects"].push_back(oj);
  }
  j["tracks"] = io::OrderedJson::array();
  for (const auto& [track, object] : track_to_object) j["tracks"].push_back({{"track", track}, {"object", object}});
  return j.dump(1) + "\n";
}

}  // namespace objloc::sim
