#include <doctest.h>

#include "oracles.hpp"
#include "propnp/geometry.hpp"
#include "propnp/synth.hpp"

using namespace propnp;

TEST_CASE("project: on-axis point lands on the principal point") {
  CameraIntrinsics cam{1, 1, 0, 0};
  const Vec2 uv = project(cam, Vec3(0, 0, 2));
  CHECK(uv.x() == doctest::Approx(0.0));
  CHECK(uv.y() == doctest::Approx(0.0));
}

TEST_CASE("project: hand-evaluated pinhole formula") {
  CameraIntrinsics cam{100, 100, 50, 50};
  const Vec2 uv = project(cam, Vec3(1, -1, 2));
  CHECK(uv.x() == doctest::Approx(100.0));
  CHECK(uv.y() == doctest::Approx(0.0));
}

TEST_CASE("project: behind-camera point raises NonPositiveDepth") {
  CameraIntrinsics cam{1, 1, 0, 0};
  CHECK_THROWS_AS(project(cam, Vec3(0, 0, -1)), NonPositiveDepth);
  CHECK_THROWS_AS(project(cam, Vec3(0, 0, 0)), NonPositiveDepth);
}

TEST_CASE("residual: zero at ground truth of a noise-free scene") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    SceneParams params;
    params.pose_type = PoseType::dof6;
    Scene scene = gen_scene(params, seed);
    for (int i = 0; i < scene.corr.size(); ++i) {
      const auto rp = residual(scene.gt6(), scene.camera, scene.corr, i);
      CHECK(rp.r.norm() < 1e-10);
    }
  }
}

TEST_CASE("residual: weighted product and identity-pose case") {
  CameraIntrinsics cam{1, 1, 0, 0};
  CorrespondenceSet corr;
  corr.x3d.resize(2, 3);
  corr.x2d.resize(2, 2);
  corr.w2d.resize(2, 2);
  corr.x3d.row(0) << 1, -1, 1;  // projects to (1, -1)
  corr.x2d.row(0) << 0, 0;
  corr.w2d.row(0) << 2, 3;
  corr.x3d.row(1) << 0, 0, 2;
  corr.x2d.row(1) << 0, 0;
  corr.w2d.row(1) << 1, 1;
  const Pose4 identity = Pose4::make(Vec3::Zero(), 0.0);

  const auto rp0 = residual(identity, cam, corr, 0);
  CHECK(rp0.r.x() == doctest::Approx(1.0));
  CHECK(rp0.r.y() == doctest::Approx(-1.0));
  CHECK(rp0.f.x() == doctest::Approx(2.0));
  CHECK(rp0.f.y() == doctest::Approx(-3.0));

  const auto rp1 = residual(identity, cam, corr, 1);
  CHECK(rp1.r.norm() == doctest::Approx(0.0));
}

namespace {

// FD check of the pose Jacobian in the raw parameter embedding.
template <class PoseT>
double jacobian_fd_error(const PoseT& pose, const CameraIntrinsics& cam,
                         const CorrespondenceSet& corr, int i) {
  const auto jac = pose_jacobian(pose, cam, corr, i);
  const double h = 1e-6;
  Eigen::Matrix<double, 2, PoseT::kDof> fd;
  for (int k = 0; k < PoseT::kDof; ++k) {
    PoseT up = pose, dn = pose;
    if (k < 3) {
      up.t[k] += h;
      dn.t[k] -= h;
    } else if constexpr (PoseT::kDof == 4) {
      up.theta += h;
      dn.theta -= h;
    } else {
      up.q[k - 3] += h;
      dn.q[k - 3] -= h;
    }
    fd.col(k) =
        (residual(up, cam, corr, i).f - residual(dn, cam, corr, i).f) /
        (2.0 * h);
  }
  const double scale = std::max(1.0, jac.cwiseAbs().maxCoeff());
  return (fd - jac).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

TEST_CASE("pose_jacobian matches central differences on random scenes") {
  int checked = 0;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    SceneParams p4;
    p4.n_points = 8;
    Scene s4 = gen_scene(p4, seed);
    SceneParams p6;
    p6.n_points = 8;
    p6.pose_type = PoseType::dof6;
    Scene s6 = gen_scene(p6, seed + 1000);
    Rng rng(seed);
    // perturbed evaluation poses, not just the optimum
    Pose4 y4 = s4.gt4();
    y4.t += Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                 rng.uniform(-0.1, 0.1));
    y4.theta += rng.uniform(-0.2, 0.2);
    Pose6 y6 = s6.gt6();
    y6.t += Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                 rng.uniform(-0.1, 0.1));
    for (int i = 0; i < 8; ++i) {
      CHECK(jacobian_fd_error(y4, s4.camera, s4.corr, i) < 1e-5);
      CHECK(jacobian_fd_error(y6, s6.camera, s6.corr, i) < 1e-5);
      checked += 2;
    }
  }
  CHECK(checked == 100 * 8);
}

TEST_CASE("pose_jacobian: hand-derived translation block") {
  CameraIntrinsics cam{1, 1, 0, 0};
  CorrespondenceSet corr;
  corr.x3d.resize(1, 3);
  corr.x2d.resize(1, 2);
  corr.w2d.resize(1, 2);
  corr.x3d.row(0) << 0, 0, 1;
  corr.x2d.row(0) << 0, 0;
  corr.w2d.row(0) << 1, 1;
  const auto jac =
      pose_jacobian(Pose4::make(Vec3::Zero(), 0.0), cam, corr, 0);
  Eigen::Matrix<double, 2, 3> expected;
  expected << 1, 0, 0, 0, 1, 0;
  CHECK((jac.leftCols<3>() - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("pose_jacobian: quaternion block is tangent (J_l q = 0)") {
  SceneParams params;
  params.pose_type = PoseType::dof6;
  for (uint64_t seed : {5u, 6u, 7u}) {
    Scene scene = gen_scene(params, seed);
    for (int i = 0; i < scene.corr.size(); ++i) {
      const auto jac = pose_jacobian(scene.gt6(), scene.camera, scene.corr, i);
      const Vec2 radial = jac.rightCols<4>() * scene.gt6().q;
      CHECK(radial.norm() <
            1e-12 * std::max(1.0, jac.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("geodesic_distance basics") {
  const Pose4 a = Pose4::make(Vec3(0.2, -0.1, 3.0), 1.2);
  CHECK(geodesic_distance(a, a).pos_err == 0.0);
  CHECK(geodesic_distance(a, a).angle_err == 0.0);

  // quaternion double cover
  const Pose6 q1 = Pose6::make(Vec3::Zero(), Vec4(0.3, 0.5, -0.2, 0.7));
  Pose6 q2 = q1;
  q2.q = -q2.q;
  CHECK(geodesic_distance(q1, q2).angle_err == doctest::Approx(0.0));

  // wrap-around: yaw 3.0 vs -3.0
  const Pose4 y1 = Pose4::make(Vec3::Zero(), 3.0);
  const Pose4 y2 = Pose4::make(Vec3::Zero(), -3.0);
  CHECK(geodesic_distance(y1, y2).angle_err ==
        doctest::Approx(2.0 * M_PI - 6.0).epsilon(1e-12));
  // symmetry
  CHECK(geodesic_distance(y1, y2).angle_err ==
        geodesic_distance(y2, y1).angle_err);
}

TEST_CASE("Pose6 outputs stay normalized and sign-canonical") {
  Rng rng(99);
  Pose6 pose = Pose6::make(Vec3(0, 0, 3), Vec4(1, 2, 3, 4));
  CHECK(std::abs(pose.q.norm() - 1.0) < 1e-9);
  for (int k = 0; k < 200; ++k) {
    Eigen::Matrix<double, 7, 1> delta;
    for (int j = 0; j < 7; ++j) delta[j] = rng.uniform(-0.3, 0.3);
    pose = apply_increment(pose, delta);
    CHECK(std::abs(pose.q.norm() - 1.0) < 1e-9);
    int first_nonzero = 0;
    while (first_nonzero < 4 && pose.q[first_nonzero] == 0.0) ++first_nonzero;
    REQUIRE(first_nonzero < 4);
    CHECK(pose.q[first_nonzero] > 0.0);
  }
}

TEST_CASE("wrap_angle lands in (-pi, pi]") {
  CHECK(wrap_angle(M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(-M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(3.0 * M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(0.5) == doctest::Approx(0.5));
  CHECK(wrap_angle(7.0) == doctest::Approx(7.0 - 2.0 * M_PI));
}

TEST_CASE("CorrespondenceSet::validate rejects bad inputs") {
  CorrespondenceSet corr;
  corr.x3d = MatX3::Zero(3, 3);
  corr.x2d = MatX2::Zero(3, 2);
  corr.w2d = MatX2::Constant(3, 2, 1.0);
  CHECK_THROWS_AS(corr.validate(4), InvalidProblem);
  CHECK_NOTHROW(corr.validate(3));
  corr.w2d(1, 0) = 0.0;
  CHECK_THROWS_AS(corr.validate(3), InvalidProblem);
  corr.w2d(1, 0) = 1.0;
  corr.x3d(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(corr.validate(3), InvalidProblem);
}
