#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pixgrasp/rng.hpp"

namespace pixgrasp {

using Vec3 = Eigen::Vector3d;

enum class Shape { kBox, kSphere, kCylinder };

const char* shape_name(Shape s);
Shape shape_from_name(const std::string& name);

// One rigid convex solid resting on the table plane z = 0. Rotation is
// yaw-only, so boxes stay axis-aligned up to a rotation about +z.
struct Primitive {
  Shape shape = Shape::kBox;
  // box: half extents (x, y, z). sphere: (radius, 0, 0).
  // cylinder: (radius, half_height, 0).
  Vec3 dims = Vec3::Zero();
  Vec3 position = Vec3::Zero();  // center of the solid, meters
  double yaw = 0.0;              // radians about +z
  int id = 0;

  // Radius of the bounding circle of the footprint in the table plane.
  double footprint_radius() const;
  // Height of the top surface above the table when resting.
  double top_height() const;
};

struct Scene {
  std::vector<Primitive> primitives;
  double table_extent = 0.25;  // half-width of the square table, meters
  std::uint64_t rng_seed = 0;
  bool placement_incomplete = false;  // retry budget ran out
};

enum class SceneMode { kSingle, kCluttered };

struct SceneConfig {
  double table_extent = 0.25;
  double min_dim = 0.015;  // radii / half extents, meters
  double max_dim = 0.05;
  double min_height = 0.03;  // full object heights, meters
  double max_height = 0.12;
  int min_objects = 2;   // cluttered count range, inclusive
  int max_objects = 30;
  double overlap_tolerance = 0.001;  // allowed interpenetration, meters
  int placement_retries = 1000;
  bool allow_box = true;
  bool allow_sphere = true;
  bool allow_cylinder = true;
};

// Draws the per-episode scene kind with equal probability.
SceneMode sample_mode(std::uint64_t seed);

// Deterministic procedural scene: same (seed, mode, cfg) gives a bit-identical
// scene. Placement is rejection-sampled against the pairwise separation rule;
// if the retry budget runs out the scene is returned short, flagged.
Scene generate_scene(std::uint64_t seed, SceneMode mode, const SceneConfig& cfg);

// The module's inter-primitive distance: distance between footprint bounding
// circles in the table plane (conservative, never reports separation larger
// than the true one for these upright solids).
double primitive_separation(const Primitive& a, const Primitive& b);

// Signed distance from a world point to the primitive surface (< 0 inside).
double signed_distance(const Primitive& prim, const Vec3& point);
// Outward unit surface normal for a point on or near the surface.
Vec3 surface_normal(const Primitive& prim, const Vec3& point);

// First intersection of the ray origin + t * dir with the primitive.
// Returns false if the ray misses; t_hit is the smallest t > 0.
bool ray_intersect(const Primitive& prim, const Vec3& origin, const Vec3& dir,
                   double& t_hit);

// Line-oriented text format: header line with the table extent, then one
// primitive per line (shape, dims, pose). Round-trips exactly.
void write_scene(std::ostream& os, const Scene& scene);
Scene read_scene(std::istream& is);
void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);

}  // namespace pixgrasp
