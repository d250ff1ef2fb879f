#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace pixgrasp {

// Pinhole camera. pose maps camera coordinates to world coordinates; the
// optical axis is +z in camera frame, pixel (row, col) rays go through
// ((col - cx) / fx, (row - cy) / fy, 1).
struct CameraModel {
  double fx = 274.0;
  double fy = 274.0;
  double cx = 127.5;
  double cy = 127.5;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // camera -> world
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();   // camera origin
  int native_rows = 256;
  int native_cols = 256;
  double far_clip = 2.0;  // meters, depth for rays that miss everything

  Eigen::Vector3d to_world(const Eigen::Vector3d& cam_point) const {
    return rotation * cam_point + translation;
  }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world_point) const {
    return rotation.transpose() * (world_point - translation);
  }
};

// Camera looking at the table center from `height` meters away, tilted
// `tilt_deg` degrees off vertical (0 = straight top-down). Intrinsics are
// sized so a table of the given extent fills the frame with a small margin.
CameraModel make_table_camera(double height = 0.6, double tilt_deg = 0.0,
                              int resolution = 256, double table_extent = 0.25);

}  // namespace pixgrasp
