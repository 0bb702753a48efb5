#include "propnp/synth.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "propnp/errors.hpp"

namespace propnp {

using nlohmann::json;

namespace {

constexpr uint64_t kObjectStream = 1;
constexpr uint64_t kPoseStream = 2;
constexpr uint64_t kNoiseStream = 3;
constexpr uint64_t kViewStride = 64;

MatX3 sample_object_points(const SceneParams& params, Rng& rng) {
  const int s = params.symmetry_order;
  if (s < 1) throw InvalidProblem("symmetry_order must be >= 1");
  if (params.n_points % s != 0) {
    throw InvalidProblem("n_points must be divisible by symmetry_order");
  }
  const int n_base = params.n_points / s;
  const double half_xz =
      params.box_half_xz > 0.0 ? params.box_half_xz : params.box_half;
  MatX3 pts(params.n_points, 3);
  for (int j = 0; j < n_base; ++j) {
    const Vec3 base(rng.uniform(-half_xz, half_xz),
                    rng.uniform(-params.box_half, params.box_half),
                    rng.uniform(-half_xz, half_xz));
    for (int k = 0; k < s; ++k) {
      pts.row(j * s + k) = (rot_y(2.0 * M_PI * k / s) * base).transpose();
    }
  }
  return pts;
}

std::variant<Pose4, Pose6> sample_pose(const SceneParams& params, Rng& rng) {
  const Vec3 t(rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3),
               rng.uniform(params.depth_min, params.depth_max));
  if (params.pose_type == PoseType::dof4) {
    return Pose4::make(t, rng.uniform(-M_PI, M_PI));
  }
  const Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return Pose6::make(t, q);
}

Scene build_scene(const SceneParams& params, uint64_t seed, const MatX3& pts,
                  const std::variant<Pose4, Pose6>& pose, Rng& noise_rng) {
  Scene scene;
  scene.camera = params.camera;
  scene.pose_type = params.pose_type;
  scene.y_gt = pose;
  scene.noise_sigma = params.noise_sigma;
  scene.symmetry_order = params.symmetry_order;
  scene.seed = seed;

  const int n = params.n_points;
  const int s = params.symmetry_order;
  scene.corr.x3d = pts;
  scene.corr.x2d.resize(n, 2);
  scene.corr.w2d = MatX2::Constant(n, 2, params.weight);

  const Mat3 rot = std::visit([](const auto& p) { return p.rotation(); }, pose);
  const Vec3 t = std::visit([](const auto& p) { return p.t; }, pose);
  for (int j = 0; j < n / s; ++j) {
    // observation of the orbit's base point, shared across the orbit
    const Vec3 p_cam = rot * pts.row(j * s).transpose() + t;
    Vec2 obs = project(params.camera, p_cam);
    if (params.noise_sigma > 0.0) {
      obs.x() += params.noise_sigma * noise_rng.normal();
      obs.y() += params.noise_sigma * noise_rng.normal();
    }
    for (int k = 0; k < s; ++k) {
      scene.corr.x2d.row(j * s + k) = obs.transpose();
    }
  }
  return scene;
}

}  // namespace

Scene gen_scene(const SceneParams& params, uint64_t seed) {
  Rng obj_rng = Rng::derive(seed, kObjectStream);
  Rng pose_rng = Rng::derive(seed, kPoseStream);
  Rng noise_rng = Rng::derive(seed, kNoiseStream);
  const MatX3 pts = sample_object_points(params, obj_rng);
  const auto pose = sample_pose(params, pose_rng);
  return build_scene(params, seed, pts, pose, noise_rng);
}

std::vector<Scene> gen_views(const SceneParams& params, int n_views,
                             uint64_t seed) {
  Rng obj_rng = Rng::derive(seed, kObjectStream);
  const MatX3 pts = sample_object_points(params, obj_rng);
  std::vector<Scene> scenes;
  scenes.reserve(n_views);
  for (int v = 0; v < n_views; ++v) {
    Rng pose_rng = Rng::derive(seed, kViewStride * (v + 1) + kPoseStream);
    Rng noise_rng = Rng::derive(seed, kViewStride * (v + 1) + kNoiseStream);
    const auto pose = sample_pose(params, pose_rng);
    scenes.push_back(build_scene(params, seed, pts, pose, noise_rng));
  }
  return scenes;
}

std::string pose_type_name(PoseType t) {
  return t == PoseType::dof4 ? "4dof" : "6dof";
}

PoseType pose_type_from_name(const std::string& name) {
  if (name == "4dof") return PoseType::dof4;
  if (name == "6dof") return PoseType::dof6;
  throw SchemaError("pose_type must be \"4dof\" or \"6dof\", got \"" + name +
                    "\"");
}

namespace {

const json& require_key(const json& doc, const char* key,
                        const char* where) {
  auto it = doc.find(key);
  if (it == doc.end()) {
    throw SchemaError(std::string("missing key \"") + key + "\" in " + where);
  }
  return *it;
}

double require_number(const json& doc, const char* key, const char* where) {
  const json& v = require_key(doc, key, where);
  if (!v.is_number()) {
    throw SchemaError(std::string("key \"") + key + "\" in " + where +
                      " must be a number");
  }
  return v.get<double>();
}

void reject_unknown(const json& doc, std::initializer_list<const char*> keys,
                    const char* where) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    bool known = false;
    for (const char* k : keys) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw SchemaError("unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

std::vector<double> require_array(const json& doc, const char* key,
                                  size_t len, const char* where) {
  const json& v = require_key(doc, key, where);
  if (!v.is_array() || v.size() != len) {
    throw SchemaError(std::string("key \"") + key + "\" in " + where +
                      " must be an array of length " + std::to_string(len));
  }
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) {
      throw SchemaError(std::string("key \"") + key + "\" in " + where +
                        " must contain only numbers");
    }
    out.push_back(e.get<double>());
  }
  return out;
}

}  // namespace

json scene_to_json(const Scene& scene) {
  json doc;
  doc["camera"] = {{"fx", scene.camera.fx},
                   {"fy", scene.camera.fy},
                   {"cx", scene.camera.cx},
                   {"cy", scene.camera.cy}};
  doc["pose_type"] = pose_type_name(scene.pose_type);
  if (scene.pose_type == PoseType::dof4) {
    const Pose4& p = scene.gt4();
    doc["y_gt"] = {{"t", {p.t.x(), p.t.y(), p.t.z()}}, {"theta", p.theta}};
  } else {
    const Pose6& p = scene.gt6();
    doc["y_gt"] = {{"t", {p.t.x(), p.t.y(), p.t.z()}},
                   {"q", {p.q[0], p.q[1], p.q[2], p.q[3]}}};
  }
  json points = json::array();
  for (int i = 0; i < scene.corr.size(); ++i) {
    points.push_back(
        {{"x3d",
          {scene.corr.x3d(i, 0), scene.corr.x3d(i, 1), scene.corr.x3d(i, 2)}},
         {"x2d", {scene.corr.x2d(i, 0), scene.corr.x2d(i, 1)}},
         {"w2d", {scene.corr.w2d(i, 0), scene.corr.w2d(i, 1)}}});
  }
  doc["points"] = std::move(points);
  doc["noise_sigma"] = scene.noise_sigma;
  doc["symmetry_order"] = scene.symmetry_order;
  doc["seed"] = scene.seed;
  return doc;
}

Scene scene_from_json(const json& doc) {
  if (!doc.is_object()) throw SchemaError("scene document must be an object");
  reject_unknown(doc,
                 {"camera", "pose_type", "y_gt", "points", "noise_sigma",
                  "symmetry_order", "seed"},
                 "scene");

  Scene scene;
  const json& cam = require_key(doc, "camera", "scene");
  reject_unknown(cam, {"fx", "fy", "cx", "cy"}, "camera");
  scene.camera.fx = require_number(cam, "fx", "camera");
  scene.camera.fy = require_number(cam, "fy", "camera");
  scene.camera.cx = require_number(cam, "cx", "camera");
  scene.camera.cy = require_number(cam, "cy", "camera");
  if (!(scene.camera.fx > 0.0) || !(scene.camera.fy > 0.0)) {
    throw SchemaError("camera focal lengths must be positive");
  }

  const json& pt = require_key(doc, "pose_type", "scene");
  if (!pt.is_string()) throw SchemaError("pose_type must be a string");
  scene.pose_type = pose_type_from_name(pt.get<std::string>());

  const json& gt = require_key(doc, "y_gt", "scene");
  const auto tv = require_array(gt, "t", 3, "y_gt");
  const Vec3 t(tv[0], tv[1], tv[2]);
  if (scene.pose_type == PoseType::dof4) {
    reject_unknown(gt, {"t", "theta"}, "y_gt");
    scene.y_gt = Pose4{t, require_number(gt, "theta", "y_gt")};
  } else {
    reject_unknown(gt, {"t", "q"}, "y_gt");
    const auto qv = require_array(gt, "q", 4, "y_gt");
    const Vec4 q(qv[0], qv[1], qv[2], qv[3]);
    if (std::abs(q.norm() - 1.0) > 1e-6) {
      throw SchemaError("y_gt.q must be a unit quaternion");
    }
    // stored verbatim so write-then-read is bit-identical
    scene.y_gt = Pose6{t, q};
  }

  const json& points = require_key(doc, "points", "scene");
  if (!points.is_array() || points.empty()) {
    throw SchemaError("points must be a nonempty array");
  }
  const int n = static_cast<int>(points.size());
  scene.corr.x3d.resize(n, 3);
  scene.corr.x2d.resize(n, 2);
  scene.corr.w2d.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const json& p = points[i];
    reject_unknown(p, {"x3d", "x2d", "w2d"}, "points[]");
    const auto x3 = require_array(p, "x3d", 3, "points[]");
    const auto x2 = require_array(p, "x2d", 2, "points[]");
    const auto w2 = require_array(p, "w2d", 2, "points[]");
    scene.corr.x3d.row(i) << x3[0], x3[1], x3[2];
    scene.corr.x2d.row(i) << x2[0], x2[1];
    scene.corr.w2d.row(i) << w2[0], w2[1];
  }

  scene.noise_sigma = require_number(doc, "noise_sigma", "scene");
  scene.symmetry_order =
      static_cast<int>(require_number(doc, "symmetry_order", "scene"));
  const json& seed = require_key(doc, "seed", "scene");
  if (!seed.is_number_unsigned() && !seed.is_number_integer()) {
    throw SchemaError("seed must be an integer");
  }
  scene.seed = seed.get<uint64_t>();
  return scene;
}

void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot open \"" + path + "\" for writing");
  out << scene_to_json(scene).dump(2) << "\n";
}

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open \"" + path + "\"");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("invalid JSON in \"") + path +
                      "\": " + e.what());
  }
  return scene_from_json(doc);
}

}  // namespace propnp
