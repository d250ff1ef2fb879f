#include "pixgrasp/grasp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pixgrasp {

const char* outcome_name(GraspOutcome o) {
  switch (o) {
    case GraspOutcome::kSuccess: return "success";
    case GraspOutcome::kCollision: return "collision";
    case GraspOutcome::kNoContact: return "no-contact";
    case GraspOutcome::kSingleContact: return "single-contact";
    case GraspOutcome::kNonAntipodal: return "non-antipodal";
    case GraspOutcome::kAperture: return "aperture";
  }
  return "?";
}

Eigen::Matrix3d grasp_rotation(const GraspPose& g) {
  const double cr = std::cos(g.roll), sr = std::sin(g.roll);
  const double cp = std::cos(g.pitch), sp = std::sin(g.pitch);
  const double cy = std::cos(g.yaw), sy = std::sin(g.yaw);
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, cr, -sr, 0, sr, cr;
  ry << cp, 0, sp, 0, 1, 0, -sp, 0, cp;
  rz << cy, -sy, 0, sy, cy, 0, 0, 0, 1;
  return rz * ry * rx;
}

namespace {

// Geometry of the hand at a given pose: approach axis and palm-plane basis.
struct HandFrame {
  Vec3 palm_center;
  Vec3 approach;  // unit, points from palm toward the grasp target
  Vec3 e1, e2;    // palm plane basis
};

HandFrame hand_frame(const HandModel& hand, const GraspPose& g) {
  const Eigen::Matrix3d rot = grasp_rotation(g);
  HandFrame f;
  f.approach = rot.col(0);
  f.e1 = rot.col(1);
  f.e2 = rot.col(2);
  f.palm_center = g.position - hand.approach_offset * f.approach;
  return f;
}

// Base azimuths in the palm plane: finger 3 opposes fingers 1-2; spread
// rotates 1 and 2 symmetrically toward the sides.
std::array<double, 3> finger_azimuths(double spread) {
  return {M_PI - spread, -(M_PI - spread), 0.0};
}

struct FingerChain {
  Vec3 base;
  Vec3 knuckle;
  Vec3 tip;
};

FingerChain finger_chain(const HandModel& hand, const HandFrame& f,
                         double azimuth, double closing_angle) {
  const Vec3 u = std::cos(azimuth) * f.e1 + std::sin(azimuth) * f.e2;
  const double t1 = closing_angle;
  const double t2 = (1.0 + hand.distal_coupling) * closing_angle;
  FingerChain c;
  c.base = f.palm_center + hand.palm_radius * u;
  const Vec3 d1 = std::cos(t1) * f.approach - std::sin(t1) * u;
  const Vec3 d2 = std::cos(t2) * f.approach - std::sin(t2) * u;
  c.knuckle = c.base + hand.proximal_length * d1;
  c.tip = c.knuckle + hand.distal_length * d2;
  return c;
}

// Minimum signed distance from a world point to the scene surfaces (table
// excluded); also reports which primitive realizes it.
double min_scene_sdf(const Scene& scene, const Vec3& p, int& nearest_id) {
  double best = std::numeric_limits<double>::infinity();
  nearest_id = -1;
  for (const Primitive& prim : scene.primitives) {
    const double d = signed_distance(prim, p);
    if (d < best) {
      best = d;
      nearest_id = prim.id;
    }
  }
  return best;
}

// Distance from a segment to a convex primitive via ternary search on the
// segment parameter (point-to-convex-set distance is convex along a line).
double segment_primitive_distance(const Vec3& a, const Vec3& b,
                                  const Primitive& prim) {
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 48; ++i) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    const double d1 = signed_distance(prim, a + m1 * (b - a));
    const double d2 = signed_distance(prim, a + m2 * (b - a));
    if (d1 < d2) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  return signed_distance(prim, a + 0.5 * (lo + hi) * (b - a));
}

bool capsule_collides(const Vec3& a, const Vec3& b, double radius,
                      const Scene& scene) {
  // Table plane z = 0.
  if (std::min(a.z(), b.z()) < radius) return true;
  for (const Primitive& prim : scene.primitives) {
    if (segment_primitive_distance(a, b, prim) < radius) return true;
  }
  return false;
}

bool palm_collides(const HandModel& hand, const HandFrame& f,
                   const Scene& scene) {
  // Exact test against the table: lowest point of the palm puck.
  const double az = f.approach.z();
  const double planar = std::sqrt(std::max(0.0, 1.0 - az * az));
  const double min_z = f.palm_center.z() - hand.palm_radius * planar -
                       hand.palm_half_thickness * std::abs(az);
  if (min_z < 0.0) return true;

  // Against primitives: the puck is covered by sample spheres on two rings
  // plus the center. Slightly optimistic between samples; adequate for the
  // object sizes in play.
  for (const Primitive& prim : scene.primitives) {
    if (signed_distance(prim, f.palm_center) < hand.palm_half_thickness) {
      return true;
    }
    for (int ring = 1; ring <= 2; ++ring) {
      const double r = hand.palm_radius * ring / 2.0;
      for (int k = 0; k < 8; ++k) {
        const double phi = 2.0 * M_PI * k / 8.0;
        const Vec3 p =
            f.palm_center + r * (std::cos(phi) * f.e1 + std::sin(phi) * f.e2);
        if (signed_distance(prim, p) < hand.palm_half_thickness) return true;
      }
    }
  }
  return false;
}

}  // namespace

std::array<FingerResult, 3> close_fingers(const HandModel& hand,
                                          const GraspPose& g,
                                          const Scene& scene) {
  const HandFrame frame = hand_frame(hand, g);
  const std::array<double, 3> azimuths = finger_azimuths(g.spread);
  const std::array<double, 3> start = {g.fingers[0], g.fingers[1], g.fingers[2]};

  std::array<FingerResult, 3> results;
  for (int k = 0; k < 3; ++k) {
    double theta = start[static_cast<std::size_t>(k)];
    auto tip_sdf = [&](double angle, int& id) {
      const FingerChain c = finger_chain(hand, frame, azimuths[static_cast<std::size_t>(k)], angle);
      int nearest;
      double d = min_scene_sdf(scene, c.tip, nearest);
      // The table freezes a finger too; it just never counts as a grasp
      // contact.
      if (c.tip.z() < d) {
        d = c.tip.z();
        nearest = -1;
      }
      id = nearest;
      return d;
    };

    int hit_id = -1;
    double prev = theta;
    double prev_sdf = tip_sdf(theta, hit_id);
    bool contact = prev_sdf <= 0.0;
    double contact_angle = theta;
    while (!contact && theta < hand.finger_joint_limit_closing) {
      const double next = std::min(theta + hand.close_step,
                                   hand.finger_joint_limit_closing);
      const double d = tip_sdf(next, hit_id);
      if (d <= 0.0) {
        // Bisect the crossing step down to surface tolerance.
        double lo = prev, hi = next;
        double lo_sdf = prev_sdf;
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          int id_mid;
          const double dm = tip_sdf(mid, id_mid);
          if (std::abs(dm) <= hand.surface_tolerance) {
            lo = hi = mid;
            hit_id = id_mid;
            break;
          }
          if (dm > 0.0) {
            lo = mid;
            lo_sdf = dm;
          } else {
            hi = mid;
            hit_id = id_mid;
          }
        }
        (void)lo_sdf;
        contact = true;
        contact_angle = 0.5 * (lo + hi);
      } else {
        prev = next;
        prev_sdf = d;
        theta = next;
      }
      if (next >= hand.finger_joint_limit_closing && !contact) break;
    }

    FingerResult& res = results[static_cast<std::size_t>(k)];
    if (contact) {
      res.final_angle = contact_angle;
      const FingerChain c =
          finger_chain(hand, frame, azimuths[static_cast<std::size_t>(k)], contact_angle);
      Contact ct;
      ct.primitive_id = hit_id;
      if (hit_id >= 0) {
        const Primitive* prim = nullptr;
        for (const Primitive& p : scene.primitives) {
          if (p.id == hit_id) prim = &p;
        }
        const double sd = signed_distance(*prim, c.tip);
        ct.normal = surface_normal(*prim, c.tip);
        ct.point = c.tip - sd * ct.normal;  // project onto the surface
      } else {
        ct.normal = Vec3(0, 0, 1);
        ct.point = Vec3(c.tip.x(), c.tip.y(), 0.0);
      }
      res.contact = ct;
    } else {
      res.final_angle = hand.finger_joint_limit_closing;
    }
  }
  return results;
}

GraspResult evaluate_grasp(const Scene& scene, const HandModel& hand,
                           const GraspPose& g) {
  GraspResult result;
  const HandFrame frame = hand_frame(hand, g);

  // Pre-grasp collision: palm puck plus both capsule links of each finger.
  bool collides = palm_collides(hand, frame, scene);
  if (!collides) {
    const std::array<double, 3> azimuths = finger_azimuths(g.spread);
    for (int k = 0; k < 3 && !collides; ++k) {
      const FingerChain c = finger_chain(hand, frame, azimuths[static_cast<std::size_t>(k)],
                                         g.fingers[static_cast<std::size_t>(k)]);
      collides = capsule_collides(c.base, c.knuckle, hand.finger_radius, scene) ||
                 capsule_collides(c.knuckle, c.tip, hand.finger_radius, scene);
    }
  }
  if (collides) {
    result.diagnostics.outcome = GraspOutcome::kCollision;
    return result;
  }

  result.diagnostics.fingers = close_fingers(hand, g, scene);

  // Group fingertip contacts by primitive.
  std::vector<const Contact*> object_contacts;
  for (const FingerResult& fr : result.diagnostics.fingers) {
    if (fr.contact && fr.contact->primitive_id >= 0) {
      object_contacts.push_back(&*fr.contact);
    }
  }
  if (object_contacts.empty()) {
    result.diagnostics.outcome = GraspOutcome::kNoContact;
    return result;
  }

  const double cone_dot = -std::cos(2.0 * std::atan(hand.friction_mu));
  bool any_pair = false;
  bool any_antipodal = false;
  double best_angle = 0.0, best_span = 0.0;
  int best_prim = -1;
  for (std::size_t i = 0; i < object_contacts.size(); ++i) {
    for (std::size_t j = i + 1; j < object_contacts.size(); ++j) {
      const Contact& a = *object_contacts[i];
      const Contact& b = *object_contacts[j];
      if (a.primitive_id != b.primitive_id) continue;
      any_pair = true;
      const double dot =
          std::clamp(a.normal.dot(b.normal), -1.0, 1.0);
      const double span = (a.point - b.point).norm();
      const bool antipodal = dot <= cone_dot;
      if (antipodal) any_antipodal = true;
      const bool ok = antipodal && span <= hand.max_aperture();
      // Track the most antipodal same-primitive pair for diagnostics.
      const double angle = std::acos(dot);
      if (angle > best_angle) {
        best_angle = angle;
        best_span = span;
        best_prim = a.primitive_id;
      }
      if (ok) {
        result.success = true;
        result.diagnostics.outcome = GraspOutcome::kSuccess;
        result.diagnostics.grasped_primitive = a.primitive_id;
        result.diagnostics.pair_normal_angle = angle;
        result.diagnostics.pair_span = span;
        return result;
      }
    }
  }

  result.diagnostics.pair_normal_angle = best_angle;
  result.diagnostics.pair_span = best_span;
  result.diagnostics.grasped_primitive = best_prim;
  result.diagnostics.outcome = !any_pair       ? GraspOutcome::kSingleContact
                               : !any_antipodal ? GraspOutcome::kNonAntipodal
                                                : GraspOutcome::kAperture;
  return result;
}

}  // namespace pixgrasp
