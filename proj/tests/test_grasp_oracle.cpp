#include <doctest.h>

#include <cmath>

#include "pixgrasp/grasp_oracle.hpp"

using namespace pixgrasp;

namespace {

Scene lone_sphere(double radius) {
  Scene scene;
  Primitive p;
  p.shape = Shape::kSphere;
  p.dims = Vec3(radius, 0, 0);
  p.position = Vec3(0, 0, radius);
  p.id = 0;
  scene.primitives.push_back(p);
  return scene;
}

GraspPose centered_top_down(const Scene& scene, double pregrasp = 0.05) {
  GraspPose g;
  g.position = Vec3(scene.primitives[0].position.x(),
                    scene.primitives[0].position.y(),
                    scene.primitives[0].top_height());
  g.pitch = M_PI / 2.0;
  g.spread = 0.0;
  g.fingers = {pregrasp, pregrasp, pregrasp};
  return g;
}

// Independent planar model of the closing sweep for a vertical, centered
// pinch: scalar trigonometry instead of the oracle's 3D vector chains.
struct PlanarSweep {
  double palm_z, palm_r, l1, l2, coupling;

  double tip_y(double theta) const {
    return palm_r - l1 * std::sin(theta) -
           l2 * std::sin((1.0 + coupling) * theta);
  }
  double tip_z(double theta) const {
    return palm_z - l1 * std::cos(theta) -
           l2 * std::cos((1.0 + coupling) * theta);
  }
  // First angle at which the tip crosses into a sphere at (0, zc) radius r.
  double first_contact(double start, double zc, double r) const {
    for (double theta = start; theta <= 2.44; theta += 1e-4) {
      const double dy = tip_y(theta);
      const double dz = tip_z(theta) - zc;
      if (std::sqrt(dy * dy + dz * dz) <= r) return theta;
    }
    return -1.0;
  }
};

}  // namespace

TEST_CASE("grasp far above everything reports no-contact") {
  const Scene scene = lone_sphere(0.03);
  const HandModel hand;
  GraspPose g = centered_top_down(scene);
  g.position.z() = 0.5;
  const GraspResult res = evaluate_grasp(scene, hand, g);
  CHECK_FALSE(res.success);
  CHECK(res.diagnostics.outcome == GraspOutcome::kNoContact);
  for (const FingerResult& fr : res.diagnostics.fingers) {
    CHECK(fr.final_angle == doctest::Approx(hand.finger_joint_limit_closing));
    CHECK_FALSE(fr.contact.has_value());
  }
}

TEST_CASE("centered pinch on a lone sphere succeeds, matching the planar model") {
  const Scene scene = lone_sphere(0.03);
  const HandModel hand;
  const GraspPose g = centered_top_down(scene, 0.05);

  // Independent prediction of the contact angle and geometry.
  PlanarSweep sweep{g.position.z() + hand.approach_offset, hand.palm_radius,
                    hand.proximal_length, hand.distal_length,
                    hand.distal_coupling};
  const double theta_c = sweep.first_contact(0.05, 0.03, 0.03);
  REQUIRE(theta_c > 0.0);
  const double cy = sweep.tip_y(theta_c);
  const double cz = sweep.tip_z(theta_c);
  // Contact normals mirror across the palm axis; their dot must be inside
  // the friction cone for the pinch to hold.
  const double ny = cy / 0.03, nz = (cz - 0.03) / 0.03;
  const double dot = -ny * ny + nz * nz;
  const double cone = -std::cos(2.0 * std::atan(hand.friction_mu));
  REQUIRE(dot <= cone);
  REQUIRE(2.0 * std::abs(cy) <= hand.max_aperture());

  const GraspResult res = evaluate_grasp(scene, hand, g);
  CHECK(res.success);
  CHECK(res.diagnostics.outcome == GraspOutcome::kSuccess);
  for (const FingerResult& fr : res.diagnostics.fingers) {
    REQUIRE(fr.contact.has_value());
    CHECK(fr.contact->primitive_id == 0);
    CHECK(fr.final_angle == doctest::Approx(theta_c).epsilon(0.05));
  }
}

TEST_CASE("palm at table height collides") {
  const Scene scene = lone_sphere(0.03);
  const HandModel hand;
  GraspPose g;
  g.pitch = M_PI / 2.0;
  // With a top-down approach the palm sits approach_offset above the target,
  // so a target at z = -offset puts the palm center exactly at table height.
  g.position = Vec3(0.15, 0.15, -hand.approach_offset);
  const GraspResult res = evaluate_grasp(scene, hand, g);
  CHECK_FALSE(res.success);
  CHECK(res.diagnostics.outcome == GraspOutcome::kCollision);
}

TEST_CASE("closing in an empty scene reaches the joint limit") {
  Scene scene;
  scene.table_extent = 0.25;
  const HandModel hand;
  GraspPose g;
  g.position = Vec3(0, 0, 0.3);
  g.pitch = M_PI / 2.0;
  const auto fingers = close_fingers(hand, g, scene);
  for (const FingerResult& fr : fingers) {
    CHECK(fr.final_angle == doctest::Approx(2.44));
    CHECK_FALSE(fr.contact.has_value());
  }
}

TEST_CASE("symmetric spread closes symmetrically on a centered sphere") {
  const Scene scene = lone_sphere(0.03);
  const HandModel hand;
  GraspPose g = centered_top_down(scene, 0.1);
  g.spread = 0.4;
  const auto fingers = close_fingers(hand, g, scene);
  CHECK(std::abs(fingers[0].final_angle - fingers[1].final_angle) < 0.02);
}

TEST_CASE("contact points lie on the primitive surface") {
  const Scene scene = lone_sphere(0.03);
  const HandModel hand;
  const auto fingers = close_fingers(hand, centered_top_down(scene), scene);
  for (const FingerResult& fr : fingers) {
    if (!fr.contact || fr.contact->primitive_id < 0) continue;
    CHECK(std::abs(signed_distance(scene.primitives[0], fr.contact->point)) <=
          1e-4);
    CHECK(fr.contact->normal.norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("fingers crossing an object at pre-grasp reject as collision") {
  Scene scene;
  Primitive p;
  p.shape = Shape::kBox;
  p.dims = Vec3(0.05, 0.05, 0.05);
  p.position = Vec3(0, 0, 0.05);
  scene.primitives.push_back(p);
  const HandModel hand;
  GraspPose g;
  g.position = Vec3(0, 0, 0.10);  // box top; open fingers plunge into it
  g.pitch = M_PI / 2.0;
  g.fingers = {0.0, 0.0, 0.0};
  const GraspResult res = evaluate_grasp(scene, hand, g);
  CHECK_FALSE(res.success);
  CHECK(res.diagnostics.outcome == GraspOutcome::kCollision);
}

TEST_CASE("success is invariant under rigid yaw rotation of scene and grasp") {
  const HandModel hand;
  Scene base = lone_sphere(0.03);
  Primitive distractor;
  distractor.shape = Shape::kBox;
  distractor.dims = Vec3(0.02, 0.03, 0.04);
  distractor.position = Vec3(0.12, -0.05, 0.04);
  distractor.yaw = 0.3;
  distractor.id = 1;
  base.primitives.push_back(distractor);

  const GraspPose g = centered_top_down(base, 0.05);
  const GraspResult ref = evaluate_grasp(base, hand, g);

  for (int k = 1; k < 8; ++k) {
    const double phi = 2.0 * M_PI * k / 8.0;
    const double c = std::cos(phi), s = std::sin(phi);
    Scene rotated = base;
    for (Primitive& p : rotated.primitives) {
      const double x = p.position.x(), y = p.position.y();
      p.position.x() = c * x - s * y;
      p.position.y() = s * x + c * y;
      p.yaw += phi;
    }
    GraspPose gr = g;
    const double x = g.position.x(), y = g.position.y();
    gr.position.x() = c * x - s * y;
    gr.position.y() = s * x + c * y;
    gr.yaw = g.yaw + phi;
    const GraspResult rot = evaluate_grasp(rotated, hand, gr);
    CHECK(rot.success == ref.success);
    CHECK(rot.diagnostics.outcome == ref.diagnostics.outcome);
  }
}

TEST_CASE("contact span grows with sphere radius; no aperture inversions") {
  const HandModel hand;
  double prev_span = 0.0;
  bool prev_success = false;
  for (double r : {0.02, 0.025, 0.03, 0.035}) {
    const Scene scene = lone_sphere(r);
    const GraspPose g = centered_top_down(scene, 0.05);
    const GraspResult res = evaluate_grasp(scene, hand, g);
    if (res.success) {
      CHECK(res.diagnostics.pair_span >= prev_span - 1e-9);
      prev_span = res.diagnostics.pair_span;
      prev_success = true;
    } else if (prev_success) {
      CHECK(res.diagnostics.outcome != GraspOutcome::kAperture);
    }
  }
}

TEST_CASE("oracle is deterministic") {
  const Scene scene = lone_sphere(0.028);
  const HandModel hand;
  GraspPose g = centered_top_down(scene, 0.2);
  g.yaw = 0.7;
  g.spread = 0.3;
  const GraspResult a = evaluate_grasp(scene, hand, g);
  const GraspResult b = evaluate_grasp(scene, hand, g);
  CHECK(a.success == b.success);
  CHECK(a.diagnostics.outcome == b.diagnostics.outcome);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.diagnostics.fingers[static_cast<std::size_t>(i)].final_angle ==
          b.diagnostics.fingers[static_cast<std::size_t>(i)].final_angle);
  }
}
