#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "propnp/geometry.hpp"
#include "propnp/rng.hpp"

namespace propnp {

enum class PoseType { dof4, dof6 };

struct SceneParams {
  PoseType pose_type = PoseType::dof4;
  int n_points = 16;
  double noise_sigma = 0.0;  // pixels
  int symmetry_order = 1;    // 1 = none
  double box_half = 0.5;     // object extent, meters
  double box_half_xz = -1;   // radial extent override (< 0: use box_half)
  double depth_min = 2.0;
  double depth_max = 6.0;
  double weight = 1.0;       // uniform default weights
  CameraIntrinsics camera{500.0, 500.0, 320.0, 240.0};
};

struct Scene {
  CameraIntrinsics camera;
  PoseType pose_type = PoseType::dof4;
  std::variant<Pose4, Pose6> y_gt;
  CorrespondenceSet corr;
  double noise_sigma = 0.0;
  int symmetry_order = 1;
  uint64_t seed = 0;

  const Pose4& gt4() const { return std::get<Pose4>(y_gt); }
  const Pose6& gt6() const { return std::get<Pose6>(y_gt); }
};

// Seeded scene generator. Object points are drawn in a centered box; for
// symmetry_order s > 1, N/s base points are replicated under yaw rotations
// of 2 pi / s and every orbit member shares the base point's observation,
// so the correspondence set is exactly invariant under the rotation group
// (the ambiguity modes have equal mass by construction).
Scene gen_scene(const SceneParams& params, uint64_t seed);

// Scenes of one object (shared 3D points and weights) under independent
// view poses. Scene v reuses `seed` for the object and derives per-view
// pose/noise streams.
std::vector<Scene> gen_views(const SceneParams& params, int n_views,
                             uint64_t seed);

nlohmann::json scene_to_json(const Scene& scene);
// Strict: missing or unknown keys raise SchemaError naming the field.
Scene scene_from_json(const nlohmann::json& doc);

void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

std::string pose_type_name(PoseType t);
PoseType pose_type_from_name(const std::string& name);

}  // namespace propnp
