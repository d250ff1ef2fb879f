#include "pixgrasp/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pixgrasp {

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::kBox: return "box";
    case Shape::kSphere: return "sphere";
    case Shape::kCylinder: return "cylinder";
  }
  return "?";
}

Shape shape_from_name(const std::string& name) {
  if (name == "box") return Shape::kBox;
  if (name == "sphere") return Shape::kSphere;
  if (name == "cylinder") return Shape::kCylinder;
  throw std::runtime_error("unknown shape name: " + name);
}

double Primitive::footprint_radius() const {
  switch (shape) {
    case Shape::kBox: return std::hypot(dims.x(), dims.y());
    case Shape::kSphere: return dims.x();
    case Shape::kCylinder: return dims.x();
  }
  return 0.0;
}

double Primitive::top_height() const {
  switch (shape) {
    case Shape::kBox: return position.z() + dims.z();
    case Shape::kSphere: return position.z() + dims.x();
    case Shape::kCylinder: return position.z() + dims.y();
  }
  return 0.0;
}

SceneMode sample_mode(std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 0, /*stream_tag=*/0x52));
  return rng.bernoulli(0.5) ? SceneMode::kSingle : SceneMode::kCluttered;
}

double primitive_separation(const Primitive& a, const Primitive& b) {
  const double dx = a.position.x() - b.position.x();
  const double dy = a.position.y() - b.position.y();
  return std::hypot(dx, dy) - a.footprint_radius() - b.footprint_radius();
}

namespace {

Primitive sample_primitive(Rng& rng, const SceneConfig& cfg, int id) {
  std::vector<Shape> allowed;
  if (cfg.allow_box) allowed.push_back(Shape::kBox);
  if (cfg.allow_sphere) allowed.push_back(Shape::kSphere);
  if (cfg.allow_cylinder) allowed.push_back(Shape::kCylinder);
  if (allowed.empty()) throw std::runtime_error("scene config allows no shapes");

  Primitive p;
  p.shape = allowed[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(allowed.size()) - 1))];
  p.id = id;
  switch (p.shape) {
    case Shape::kBox: {
      const double hx = rng.uniform(cfg.min_dim, cfg.max_dim);
      const double hy = rng.uniform(cfg.min_dim, cfg.max_dim);
      const double hz = 0.5 * rng.uniform(cfg.min_height, cfg.max_height);
      p.dims = Vec3(hx, hy, hz);
      p.position.z() = hz;
      break;
    }
    case Shape::kSphere: {
      const double r = rng.uniform(cfg.min_dim, cfg.max_dim);
      p.dims = Vec3(r, 0.0, 0.0);
      p.position.z() = r;
      break;
    }
    case Shape::kCylinder: {
      const double r = rng.uniform(cfg.min_dim, cfg.max_dim);
      const double hh = 0.5 * rng.uniform(cfg.min_height, cfg.max_height);
      p.dims = Vec3(r, hh, 0.0);
      p.position.z() = hh;
      break;
    }
  }
  p.yaw = rng.uniform(-M_PI, M_PI);
  return p;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, SceneMode mode, const SceneConfig& cfg) {
  Rng rng(Rng::derive(seed, 0, /*stream_tag=*/0x5e));
  Scene scene;
  scene.table_extent = cfg.table_extent;
  scene.rng_seed = seed;

  const int target =
      mode == SceneMode::kSingle
          ? 1
          : static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));

  int retries_left = cfg.placement_retries;
  int next_id = 0;
  while (static_cast<int>(scene.primitives.size()) < target) {
    Primitive cand = sample_primitive(rng, cfg, next_id);
    const double margin = cand.footprint_radius();
    const double span = cfg.table_extent - margin;
    if (span <= 0.0) {
      scene.placement_incomplete = true;
      break;
    }
    cand.position.x() = rng.uniform(-span, span);
    cand.position.y() = rng.uniform(-span, span);

    bool ok = true;
    for (const Primitive& placed : scene.primitives) {
      if (primitive_separation(cand, placed) < -cfg.overlap_tolerance) {
        ok = false;
        break;
      }
    }
    if (ok) {
      scene.primitives.push_back(cand);
      ++next_id;
    } else if (--retries_left <= 0) {
      scene.placement_incomplete = true;
      break;
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Geometry queries. All shapes are evaluated in their local frame: translate
// by -position, rotate by -yaw.

namespace {

inline Vec3 to_local(const Primitive& p, const Vec3& world) {
  const Vec3 d = world - p.position;
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return Vec3(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
}

inline Vec3 dir_to_local(const Primitive& p, const Vec3& dir) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return Vec3(c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z());
}

inline Vec3 dir_to_world(const Primitive& p, const Vec3& dir) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return Vec3(c * dir.x() - s * dir.y(), s * dir.x() + c * dir.y(), dir.z());
}

double sdf_local(const Primitive& p, const Vec3& q) {
  switch (p.shape) {
    case Shape::kSphere:
      return q.norm() - p.dims.x();
    case Shape::kBox: {
      const Vec3 d = q.cwiseAbs() - p.dims;
      const Vec3 outside = d.cwiseMax(0.0);
      const double inside = std::min(d.maxCoeff(), 0.0);
      return outside.norm() + inside;
    }
    case Shape::kCylinder: {
      const double dr = std::hypot(q.x(), q.y()) - p.dims.x();
      const double dz = std::abs(q.z()) - p.dims.y();
      const double outside =
          std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
      const double inside = std::min(std::max(dr, dz), 0.0);
      return outside + inside;
    }
  }
  return 0.0;
}

Vec3 normal_local(const Primitive& p, const Vec3& q) {
  switch (p.shape) {
    case Shape::kSphere: {
      const double n = q.norm();
      return n > 1e-12 ? Vec3(q / n) : Vec3(0, 0, 1);
    }
    case Shape::kBox: {
      const Vec3 d = q.cwiseAbs() - p.dims;
      if ((d.array() > 0.0).any()) {
        // Outside: normal points from the closest box point to q.
        Vec3 clamped = q.cwiseMax(-p.dims).cwiseMin(p.dims);
        Vec3 n = q - clamped;
        const double len = n.norm();
        if (len > 1e-12) return n / len;
      }
      // Inside or on a face: pick the face with the least penetration.
      int axis = 0;
      d.maxCoeff(&axis);
      Vec3 n = Vec3::Zero();
      n[axis] = q[axis] >= 0.0 ? 1.0 : -1.0;
      return n;
    }
    case Shape::kCylinder: {
      const double r = std::hypot(q.x(), q.y());
      const double dr = r - p.dims.x();
      const double dz = std::abs(q.z()) - p.dims.y();
      if (dr > 0.0 && dz > 0.0) {
        // Rim region: blend of radial and axial offsets.
        Vec3 radial = r > 1e-12 ? Vec3(q.x() / r, q.y() / r, 0.0) : Vec3(1, 0, 0);
        Vec3 n = dr * radial + Vec3(0, 0, dz * (q.z() >= 0.0 ? 1.0 : -1.0));
        return n.normalized();
      }
      if (dr > dz) {
        return r > 1e-12 ? Vec3(q.x() / r, q.y() / r, 0.0) : Vec3(1, 0, 0);
      }
      return Vec3(0, 0, q.z() >= 0.0 ? 1.0 : -1.0);
    }
  }
  return Vec3(0, 0, 1);
}

// Smallest positive root of the quadratic a t^2 + b t + c = 0, if any.
bool smallest_positive_root(double a, double b, double c, double& t) {
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  // Numerically stable pair of roots.
  const double q = b >= 0.0 ? -0.5 * (b + sq) : -0.5 * (b - sq);
  double t0 = q / a;
  double t1 = c / q;
  if (t0 > t1) std::swap(t0, t1);
  if (t0 > 1e-12) { t = t0; return true; }
  if (t1 > 1e-12) { t = t1; return true; }
  return false;
}

bool ray_box_local(const Vec3& o, const Vec3& d, const Vec3& half, double& t_hit) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (std::abs(o[i]) > half[i]) return false;
      continue;
    }
    double t0 = (-half[i] - o[i]) / d[i];
    double t1 = (half[i] - o[i]) / d[i];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return false;
  }
  if (t_far < 1e-12) return false;
  t_hit = t_near > 1e-12 ? t_near : t_far;
  return true;
}

bool ray_cylinder_local(const Vec3& o, const Vec3& d, double radius,
                        double half_h, double& t_hit) {
  double best = std::numeric_limits<double>::infinity();
  // Lateral surface.
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-15) {
    const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
    const double c = o.x() * o.x() + o.y() * o.y() - radius * radius;
    double t;
    if (smallest_positive_root(a, b, c, t)) {
      const double z = o.z() + t * d.z();
      if (std::abs(z) <= half_h) best = std::min(best, t);
      // The other root may still be valid when the near one exits the caps.
      const double disc = b * b - 4.0 * a * c;
      const double sq = std::sqrt(std::max(disc, 0.0));
      const double t_other = (-b + sq) / (2.0 * a);
      if (t_other > 1e-12) {
        const double z2 = o.z() + t_other * d.z();
        if (std::abs(z2) <= half_h) best = std::min(best, t_other);
      }
    }
  }
  // Caps.
  if (std::abs(d.z()) > 1e-15) {
    for (const double zc : {half_h, -half_h}) {
      const double t = (zc - o.z()) / d.z();
      if (t > 1e-12) {
        const double x = o.x() + t * d.x();
        const double y = o.y() + t * d.y();
        if (x * x + y * y <= radius * radius) best = std::min(best, t);
      }
    }
  }
  if (!std::isfinite(best)) return false;
  t_hit = best;
  return true;
}

}  // namespace

double signed_distance(const Primitive& prim, const Vec3& point) {
  return sdf_local(prim, to_local(prim, point));
}

Vec3 surface_normal(const Primitive& prim, const Vec3& point) {
  return dir_to_world(prim, normal_local(prim, to_local(prim, point)));
}

bool ray_intersect(const Primitive& prim, const Vec3& origin, const Vec3& dir,
                   double& t_hit) {
  const Vec3 o = to_local(prim, origin);
  const Vec3 d = dir_to_local(prim, dir);
  switch (prim.shape) {
    case Shape::kSphere: {
      const double a = d.squaredNorm();
      const double b = 2.0 * o.dot(d);
      const double c = o.squaredNorm() - prim.dims.x() * prim.dims.x();
      return smallest_positive_root(a, b, c, t_hit);
    }
    case Shape::kBox:
      return ray_box_local(o, d, prim.dims, t_hit);
    case Shape::kCylinder:
      return ray_cylinder_local(o, d, prim.dims.x(), prim.dims.y(), t_hit);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Serialization

void write_scene(std::ostream& os, const Scene& scene) {
  os.precision(17);
  os << "table_extent " << scene.table_extent << " seed " << scene.rng_seed
     << " incomplete " << (scene.placement_incomplete ? 1 : 0) << "\n";
  for (const Primitive& p : scene.primitives) {
    os << shape_name(p.shape) << " " << p.dims.x() << " " << p.dims.y() << " "
       << p.dims.z() << " " << p.position.x() << " " << p.position.y() << " "
       << p.position.z() << " " << p.yaw << " " << p.id << "\n";
  }
}

Scene read_scene(std::istream& is) {
  Scene scene;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty scene file");
  {
    std::istringstream ls(line);
    std::string kw1, kw2, kw3;
    int incomplete = 0;
    if (!(ls >> kw1 >> scene.table_extent >> kw2 >> scene.rng_seed >> kw3 >>
          incomplete) ||
        kw1 != "table_extent") {
      throw std::runtime_error("bad scene header: " + line);
    }
    scene.placement_incomplete = incomplete != 0;
  }
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string shape;
    Primitive p;
    if (!(ls >> shape >> p.dims.x() >> p.dims.y() >> p.dims.z() >>
          p.position.x() >> p.position.y() >> p.position.z() >> p.yaw >> p.id)) {
      throw std::runtime_error("bad primitive line: " + line);
    }
    p.shape = shape_from_name(shape);
    scene.primitives.push_back(p);
  }
  return scene;
}

void save_scene(const std::string& path, const Scene& scene) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_scene(os, scene);
}

Scene load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_scene(is);
}

}  // namespace pixgrasp
