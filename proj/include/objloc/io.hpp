#pragma once

// File formats: map, track, transform and config files.
//
// Map files are written in a canonical form (fixed key order, positions with
// six decimals, covariance entries with six significant digits), so that
// parse -> serialize is byte-stable after one round trip.

#include "objloc/core.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unistd.h>

namespace objloc::io {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

inline std::string quote(const std::string& s) { return Json(s).dump(); }

inline const Json& field(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw InputError(where + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw InputError(where + "." + key + ": missing");
  return *it;
}

inline double number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw InputError(where + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw InputError(where + ": not finite");
  return v;
}

inline int integer(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) throw InputError(where + ": expected an integer");
  return j.get<int>();
}

inline std::string string(const Json& j, const std::string& where) {
  if (!j.is_string()) throw InputError(where + ": expected a string");
  return j.get<std::string>();
}

template <int N>
Eigen::Matrix<double, N, 1> numbers(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N))
    throw InputError(where + ": expected " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) out(i) = number(j[i], where + "[" + std::to_string(i) + "]");
  return out;
}

inline Mat3 matrix3(const Json& j, const std::string& where) {
  const auto v = numbers<9>(j, where);
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = v(3 * r + c);
  return m;
}

inline Mat3 rotation(const Json& j, const std::string& where) {
  Mat3 r = matrix3(j, where);
  if (!is_rotation(r)) throw InputError(where + ": not a proper rotation matrix");
  return r;
}

inline const Json& array(const Json& j, const std::string& where) {
  if (!j.is_array()) throw InputError(where + ": expected an array");
  return j;
}

inline Json parse(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InputError(what + ": invalid JSON (" + e.what() + ")");
  }
}

inline std::string join_numbers(const double* v, int n, const char* spec) {
  std::string out = "[";
  for (int i = 0; i < n; ++i) {
    if (i) out += ", ";
    out += fmt(spec, v[i]);
  }
  return out + "]";
}

inline std::string matrix_row_major(const Mat3& m, const char* spec) {
  double v[9];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v[3 * r + c] = m(r, c);
  return join_numbers(v, 9, spec);
}

}  // namespace detail

// ---------------------------------------------------------------- files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path.string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary sibling and rename, so readers never observe a
/// partially written file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(tmp.string() + ": cannot open for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------- maps

inline std::string serialize_map(const ObjectMap& map) {
  std::string out = "{\n";
  out += "  \"agent_id\": " + detail::quote(map.agent_id) + ",\n";
  out += "  \"frame_label\": " + detail::quote(map.frame_label) + ",\n";
  out += "  \"landmarks\": [";
  for (std::size_t i = 0; i < map.landmarks.size(); ++i) {
    const Landmark& lm = map.landmarks[i];
    out += i ? ",\n    " : "\n    ";
    out += "{\"id\": " + std::to_string(lm.landmark_id) + ", \"position\": " +
           detail::join_numbers(lm.position.data(), 3, "%.6f") +
           ", \"covariance\": " + detail::matrix_row_major(lm.covariance, "%.6g") + "}";
  }
  out += map.landmarks.empty() ? "]\n}\n" : "\n  ]\n}\n";
  return out;
}

inline ObjectMap parse_map(const std::string& text) {
  const Json j = detail::parse(text, "map");
  ObjectMap map;
  map.agent_id = detail::string(detail::field(j, "agent_id", "map"), "map.agent_id");
  map.frame_label = detail::string(detail::field(j, "frame_label", "map"), "map.frame_label");
  const Json& lms = detail::array(detail::field(j, "landmarks", "map"), "map.landmarks");
  std::set<int> seen;
  for (std::size_t i = 0; i < lms.size(); ++i) {
    const std::string where = "map.landmarks[" + std::to_string(i) + "]";
    Landmark lm;
    lm.landmark_id = detail::integer(detail::field(lms[i], "id", where), where + ".id");
    if (!seen.insert(lm.landmark_id).second) throw InputError(where + ".id: duplicate landmark id");
    lm.position = detail::numbers<3>(detail::field(lms[i], "position", where), where + ".position");
    lm.covariance = detail::matrix3(detail::field(lms[i], "covariance", where), where + ".covariance");
    map.landmarks.push_back(lm);
  }
  return map;
}

inline ObjectMap load_map(const std::filesystem::path& path) {
  try {
    return parse_map(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- tracks

struct TrackFile {
  CameraIntrinsics intrinsics;
  PoseLookup poses;
  std::vector<Track> tracks;
};

inline std::string serialize_tracks(const TrackFile& tf) {
  OrderedJson j;
  const auto& k = tf.intrinsics;
  j["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
                     {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  j["poses"] = OrderedJson::array();
  for (const auto& [frame, pose] : tf.poses) {
    OrderedJson p;
    p["frame"] = frame;
    std::vector<double> r;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) r.push_back(pose.rotation(a, b));
    p["rotation"] = r;
    p["translation"] = {pose.translation.x(), pose.translation.y(), pose.translation.z()};
    j["poses"].push_back(p);
  }
  j["tracks"] = OrderedJson::array();
  for (const Track& t : tf.tracks) {
    OrderedJson tj;
    tj["id"] = t.track_id;
    tj["detections"] = OrderedJson::array();
    for (const Detection& d : t.detections)
      tj["detections"].push_back({{"frame", d.frame_index}, {"u", d.centroid.x()}, {"v", d.centroid.y()}});
    j["tracks"].push_back(tj);
  }
  return j.dump(1) + "\n";
}

inline TrackFile parse_tracks(const std::string& text) {
  using namespace detail;
  const Json j = parse(text, "tracks");
  TrackFile tf;
  const Json& k = field(j, "intrinsics", "tracks");
  tf.intrinsics.fx = number(field(k, "fx", "intrinsics"), "intrinsics.fx");
  tf.intrinsics.fy = number(field(k, "fy", "intrinsics"), "intrinsics.fy");
  tf.intrinsics.cx = number(field(k, "cx", "intrinsics"), "intrinsics.cx");
  tf.intrinsics.cy = number(field(k, "cy", "intrinsics"), "intrinsics.cy");
  tf.intrinsics.width = integer(field(k, "width", "intrinsics"), "intrinsics.width");
  tf.intrinsics.height = integer(field(k, "height", "intrinsics"), "intrinsics.height");
  if (!tf.intrinsics.valid()) throw InputError("intrinsics: invalid camera calibration");

  const Json& poses = array(field(j, "poses", "tracks"), "poses");
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const std::string where = "poses[" + std::to_string(i) + "]";
    Pose p;
    p.frame_index = integer(field(poses[i], "frame", where), where + ".frame");
    if (p.frame_index < 0) throw InputError(where + ".frame: must be >= 0");
    p.rotation = rotation(field(poses[i], "rotation", where), where + ".rotation");
    p.translation = numbers<3>(field(poses[i], "translation", where), where + ".translation");
    if (!tf.poses.emplace(p.frame_index, p).second) throw InputError(where + ".frame: duplicate frame");
  }

  const Json& tracks = array(field(j, "tracks", "tracks"), "tracks");
  std::set<int> ids;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const std::string where = "tracks[" + std::to_string(i) + "]";
    Track t;
    t.track_id = integer(field(tracks[i], "id", where), where + ".id");
    if (!ids.insert(t.track_id).second) throw InputError(where + ".id: duplicate track id");
    const Json& dets = array(field(tracks[i], "detections", where), where + ".detections");
    for (std::size_t d = 0; d < dets.size(); ++d) {
      const std::string dw = where + ".detections[" + std::to_string(d) + "]";
      Detection det;
      det.frame_index = integer(field(dets[d], "frame", dw), dw + ".frame");
      det.centroid = {number(field(dets[d], "u", dw), dw + ".u"), number(field(dets[d], "v", dw), dw + ".v")};
      if (!tf.intrinsics.contains(det.centroid)) throw InputError(dw + ": centroid outside the image");
      if (!t.detections.empty() && det.frame_index <= t.detections.back().frame_index)
        throw InputError(dw + ".frame: frames must be strictly increasing");
      if (!tf.poses.contains(det.frame_index)) throw InputError(dw + ".frame: no pose for frame");
      t.detections.push_back(det);
    }
    tf.tracks.push_back(std::move(t));
  }
  return tf;
}

inline TrackFile load_tracks(const std::filesystem::path& path) {
  try {
    return parse_tracks(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- transforms

inline OrderedJson transform_json(const RigidTransform& t) {
  OrderedJson j;
  std::vector<double> r;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) r.push_back(t.rotation(a, b));
  j["rotation"] = r;
  j["translation"] = {t.translation.x(), t.translation.y(), t.translation.z()};
  return j;
}

inline std::string serialize_transform(const RigidTransform& t) { return transform_json(t).dump(1) + "\n"; }

inline RigidTransform parse_transform(const std::string& text) {
  const Json j = detail::parse(text, "transform");
  RigidTransform t;
  t.rotation = detail::rotation(detail::field(j, "rotation", "transform"), "transform.rotation");
  t.translation = detail::numbers<3>(detail::field(j, "translation", "transform"), "transform.translation");
  return t;
}

inline RigidTransform load_transform(const std::filesystem::path& path) {
  try {
    return parse_transform(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- config

/// Flat `key = value` text. Blank lines and `#` comments are ignored; keys
/// must be Hyperparameters field names. Values override `base`.
inline Hyperparameters parse_config(const std::string& text, Hyperparameters base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(lineno);
    if (eq == std::string::npos) throw InputError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw InputError(where + ": duplicate key '" + key + "'");

    auto as_double = [&] {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != value.size() || value.empty() || !std::isfinite(v))
        throw InputError(where + ": key '" + key + "' expects a number, got '" + value + "'");
      return v;
    };
    auto as_int = [&] {
      const double v = as_double();
      if (v != std::floor(v)) throw InputError(where + ": key '" + key + "' expects an integer");
      return static_cast<int>(v);
    };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw InputError(where + ": key '" + key + "' expects true/false");
    };

    if (key == "n_min") base.n_min = as_int();
    else if (key == "omega_percentile") base.omega_percentile = as_double();
    else if (key == "window") base.window = as_double();
    else if (key == "overlap") base.overlap = as_double();
    else if (key == "n_max") base.n_max = as_int();
    else if (key == "sigma") base.sigma = as_double();
    else if (key == "epsilon") base.epsilon = as_double();
    else if (key == "gamma") base.gamma = as_double();
    else if (key == "s_max") base.s_max = as_int();
    else if (key == "theta_overlap") base.theta_overlap = as_double();
    else if (key == "theta_rp") base.theta_rp = as_double();
    else if (key == "theta_yaw") base.theta_yaw = as_double();
    else if (key == "t_max") base.t_max = as_double();
    else if (key == "iou_voxel") base.iou_voxel = as_double();
    else if (key == "prune_yaw") base.prune_yaw = as_bool();
    else if (key == "max_reprojection_rms") base.max_reprojection_rms = as_double();
    else if (key == "candidate_cap") base.candidate_cap = as_int();
    else throw InputError(where + ": unknown config key '" + key + "'");
  }
  base.validate();
  return base;
}

inline Hyperparameters load_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline std::string serialize_config(const Hyperparameters& p) {
  std::ostringstream out;
  out.precision(17);
  out << "n_min = " << p.n_min << "\n"
      << "omega_percentile = " << p.omega_percentile << "\n"
      << "window = " << p.window << "\n"
      << "overlap = " << p.overlap << "\n"
      << "n_max = " << p.n_max << "\n"
      << "sigma = " << p.sigma << "\n"
      << "epsilon = " << p.epsilon << "\n"
      << "gamma = " << p.gamma << "\n"
      << "s_max = " << p.s_max << "\n"
      << "theta_overlap = " << p.theta_overlap << "\n"
      << "theta_rp = " << p.theta_rp << "\n"
      << "theta_yaw = " << p.theta_yaw << "\n"
      << "t_max = " << p.t_max << "\n"
      << "iou_voxel = " << p.iou_voxel << "\n"
      << "prune_yaw = " << (p.prune_yaw ? "true" : "false") << "\n"
      << "max_reprojection_rms = " << p.max_reprojection_rms << "\n"
      << "candidate_cap = " << p.candidate_cap << "\n";
  return out.str();
}

}  // namespace objloc::io
