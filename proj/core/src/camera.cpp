#include "pixgrasp/camera.hpp"

#include <cmath>

namespace pixgrasp {

CameraModel make_table_camera(double height, double tilt_deg, int resolution,
                              double table_extent) {
  CameraModel cam;
  cam.native_rows = resolution;
  cam.native_cols = resolution;
  cam.cx = 0.5 * (resolution - 1);
  cam.cy = 0.5 * (resolution - 1);
  // Half the frame spans the table extent plus ~12% margin at the nominal
  // working distance.
  const double half_view = table_extent * 1.12;
  cam.fx = 0.5 * resolution * height / half_view;
  cam.fy = cam.fx;

  const double tilt = tilt_deg * M_PI / 180.0;
  // Orbit about the world x-axis, keeping the table center on the axis.
  cam.translation =
      Eigen::Vector3d(0.0, -height * std::sin(tilt), height * std::cos(tilt));
  const Eigen::Vector3d look =
      (Eigen::Vector3d::Zero() - cam.translation).normalized();
  // Camera x stays aligned with world x; y follows from right-handedness.
  const Eigen::Vector3d cam_x(1.0, 0.0, 0.0);
  const Eigen::Vector3d cam_y = look.cross(cam_x).normalized();
  cam.rotation.col(0) = cam_x;
  cam.rotation.col(1) = cam_y;
  cam.rotation.col(2) = look;
  return cam;
}

}  // namespace pixgrasp
