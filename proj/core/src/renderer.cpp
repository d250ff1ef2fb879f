#include "pixgrasp/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace pixgrasp {

namespace {

struct BoundingSphere {
  Eigen::Vector3d center;
  double radius;
};

BoundingSphere bounding_sphere(const Primitive& p) {
  switch (p.shape) {
    case Shape::kBox: return {p.position, p.dims.norm()};
    case Shape::kSphere: return {p.position, p.dims.x()};
    case Shape::kCylinder:
      return {p.position, std::hypot(p.dims.x(), p.dims.y())};
  }
  return {p.position, 0.0};
}

// Conservative pixel-space rectangle covering the projected bounding sphere.
struct PixelRect {
  double r0, r1, c0, c1;
  bool always;  // sphere too close to the image plane, skip culling
};

PixelRect project_bounds(const BoundingSphere& s, const CameraModel& cam) {
  const Eigen::Vector3d p = cam.to_camera(s.center);
  if (p.z() - s.radius < 1e-3) return {0, 0, 0, 0, true};
  const double z_near = p.z() - s.radius;
  // Radius in pixels at the nearest depth, padded one pixel.
  const double pr = s.radius / z_near * std::max(cam.fx, cam.fy) + 1.0;
  const double row = cam.cy + p.y() / p.z() * cam.fy;
  const double col = cam.cx + p.x() / p.z() * cam.fx;
  return {row - pr, row + pr, col - pr, col + pr, false};
}

}  // namespace

DepthImage render_depth(const Scene& scene, const CameraModel& cam) {
  DepthImage img;
  img.rows = cam.native_rows;
  img.cols = cam.native_cols;
  img.window = CropWindow::full(cam.native_rows, cam.native_cols);
  img.data.resize(static_cast<std::size_t>(img.rows) * img.cols);

  std::vector<PixelRect> rects;
  rects.reserve(scene.primitives.size());
  for (const Primitive& p : scene.primitives) {
    rects.push_back(project_bounds(bounding_sphere(p), cam));
  }

  const Eigen::Vector3d origin = cam.translation;
  constexpr int kTile = 16;
  std::vector<int> candidates;

  for (int tr = 0; tr < img.rows; tr += kTile) {
    for (int tc = 0; tc < img.cols; tc += kTile) {
      const int r1 = std::min(tr + kTile, img.rows);
      const int c1 = std::min(tc + kTile, img.cols);
      candidates.clear();
      for (std::size_t i = 0; i < rects.size(); ++i) {
        const PixelRect& rect = rects[i];
        if (rect.always || (rect.r1 >= tr && rect.r0 <= r1 - 1 &&
                            rect.c1 >= tc && rect.c0 <= c1 - 1)) {
          candidates.push_back(static_cast<int>(i));
        }
      }

      for (int r = tr; r < r1; ++r) {
        for (int c = tc; c < c1; ++c) {
          // With dir_cam.z == 1, the ray parameter equals the optical-axis
          // depth of the hit point.
          const Eigen::Vector3d dir_cam((c - cam.cx) / cam.fx,
                                        (r - cam.cy) / cam.fy, 1.0);
          const Eigen::Vector3d dir = cam.rotation * dir_cam;
          double best = std::numeric_limits<double>::infinity();
          for (int idx : candidates) {
            double t;
            if (ray_intersect(scene.primitives[static_cast<std::size_t>(idx)],
                              origin, dir, t) &&
                t < best) {
              best = t;
            }
          }
          // Table plane z = 0.
          if (std::abs(dir.z()) > 1e-15) {
            const double t_table = -origin.z() / dir.z();
            if (t_table > 1e-12 && t_table < best) best = t_table;
          }
          img.at(r, c) = std::min(best, cam.far_clip);
        }
      }
    }
  }
  return img;
}

}  // namespace pixgrasp
