#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "pixgrasp/scene.hpp"

namespace pixgrasp {

// Three-fingered hand in the style of a Barrett BH-280: a palm disc, two
// spread fingers opposing a fixed third, each finger a proximal+distal capsule
// chain with one closing DOF and rigid distal coupling.
struct HandModel {
  double palm_radius = 0.045;
  double palm_half_thickness = 0.012;
  double proximal_length = 0.042;
  double distal_length = 0.033;
  double finger_radius = 0.008;
  double spread_limit = M_PI / 2.0;
  double finger_joint_limit_closing = 2.44;
  double pregrasp_joint_scale = 0.61;
  double approach_offset = 0.05;
  double distal_coupling = 0.33;   // distal joint = coupling * proximal
  double close_step = 0.01;        // rad per sweep increment
  double surface_tolerance = 1e-4; // bisection stop, meters
  double friction_mu = 0.5;        // antipodal cone half-width = atan(mu)

  // Widest contact pair the open hand can bracket.
  double max_aperture() const { return 2.0 * (palm_radius + finger_radius); }
};

// Full grasp specification: deprojected target point, end-effector rotation
// from the unit vector [1,0,0], and pre-grasp joint angles.
struct GraspPose {
  Vec3 position = Vec3::Zero();
  double roll = 0.0;   // [-pi, pi]
  double pitch = M_PI / 2.0;  // [0, pi]; pi/2 is top-down
  double yaw = 0.0;    // [-pi, pi]
  double spread = 0.0;       // [0, pi/2]
  std::array<double, 3> fingers = {0.0, 0.0, 0.0};  // [0, 0.61] each
};

// End-effector rotation matrix Rz(yaw) * Ry(pitch) * Rx(roll); the approach
// axis is its first column.
Eigen::Matrix3d grasp_rotation(const GraspPose& g);

struct Contact {
  int primitive_id = -1;  // -1 means the table plane
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
};

struct FingerResult {
  double final_angle = 0.0;
  std::optional<Contact> contact;
};

enum class GraspOutcome {
  kSuccess,
  kCollision,     // pre-grasp hand body intersects table or objects
  kNoContact,     // closing produced no object contact
  kSingleContact, // no primitive received two fingertip contacts
  kNonAntipodal,  // contact pairs exist but none within the friction cone
  kAperture,      // antipodal pair found but contact span exceeds aperture
};

const char* outcome_name(GraspOutcome o);

struct GraspDiagnostics {
  GraspOutcome outcome = GraspOutcome::kNoContact;
  std::array<FingerResult, 3> fingers;
  int grasped_primitive = -1;
  double pair_normal_angle = 0.0;  // radians, best same-primitive pair
  double pair_span = 0.0;          // meters, best same-primitive pair
};

struct GraspResult {
  bool success = false;
  GraspDiagnostics diagnostics;
};

// Sweeps all closing joints in equal increments from the pre-grasp angles,
// freezing each finger at first fingertip-surface contact (bisected to
// surface tolerance) or at the closing limit. Assumes a collision-free
// pre-grasp.
std::array<FingerResult, 3> close_fingers(const HandModel& hand,
                                          const GraspPose& g,
                                          const Scene& scene);

// Full pipeline: pre-grasp placement (palm pushed back along the approach
// axis), collision rejection, finger closing, antipodal + aperture test.
GraspResult evaluate_grasp(const Scene& scene, const HandModel& hand,
                           const GraspPose& g);

}  // namespace pixgrasp
