#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "pixgrasp/camera.hpp"

namespace pixgrasp {

// Axis-aligned sub-rectangle of the native camera frame. composed_scale is
// always size_rows / native_rows; windows produced by crop_resize keep the
// native aspect ratio.
struct CropWindow {
  int origin_row = 0;
  int origin_col = 0;
  int size_rows = 0;
  int size_cols = 0;
  double composed_scale = 1.0;

  static CropWindow full(int native_rows, int native_cols) {
    return CropWindow{0, 0, native_rows, native_cols, 1.0};
  }
  bool contains(const CropWindow& inner) const {
    return inner.origin_row >= origin_row && inner.origin_col >= origin_col &&
           inner.origin_row + inner.size_rows <= origin_row + size_rows &&
           inner.origin_col + inner.size_cols <= origin_col + size_cols;
  }
};

// Metric depth grid (meters, row-major). Background pixels carry the true ray
// depth to the table plane (or far clip), never a sentinel, so every pixel
// deprojects to a real 3D point. `window` locates this image in the native
// frame; for a native render it is the full frame.
struct DepthImage {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  CropWindow window;

  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
};

// Nearest-neighbor source index used by both resampling and deprojection, so
// a resampled pixel and its native preimage are the same pixel by
// construction.
inline int nn_source_index(int out_index, int out_size, int in_size) {
  int idx = static_cast<int>((out_index + 0.5) * in_size / out_size);
  return idx < in_size ? idx : in_size - 1;
}

// Maps a pixel of an image with window `w`, resampled at (out_rows, out_cols),
// to its native-frame pixel.
inline void window_pixel_to_native(const CropWindow& w, int row, int col,
                                   int out_rows, int out_cols, int& native_row,
                                   int& native_col) {
  native_row = w.origin_row + nn_source_index(row, out_rows, w.size_rows);
  native_col = w.origin_col + nn_source_index(col, out_cols, w.size_cols);
}

// Pixel of a (possibly resampled) windowed image -> 3D world point.
// The pixel is first mapped to its native-frame preimage, then deprojected
// through the pinhole model at the given depth.
Eigen::Vector3d deproject(int row, int col, double depth, const CameraModel& cam,
                          const CropWindow& window, int image_rows,
                          int image_cols);

// World point -> continuous native pixel coordinates (row, col). Round-trip
// companion of deproject, used by tests and the grasp-point checks.
Eigen::Vector2d project_native(const Eigen::Vector3d& world,
                               const CameraModel& cam);

// Crop the native image around `center` (given in the coordinates of the
// current `out_res`-sized view of `current`) at `new_scale` of the current
// window, clamp the window inside the current one, and resample to out_res
// by nearest neighbor. composed_scale multiplies exactly by the executed
// (integer-quantized) per-step scale.
DepthImage crop_resize(const DepthImage& native, const CropWindow& current,
                       int center_row, int center_col, int view_rows,
                       int view_cols, double new_scale, int out_rows,
                       int out_cols);

// Resample a window of the native image to (out_rows, out_cols).
DepthImage resample(const DepthImage& native, const CropWindow& window,
                    int out_rows, int out_cols);

// 16-bit binary portable graymap, millimeter quantization, plus a sidecar
// text file with the window metadata.
void write_pgm16(const std::string& path, const DepthImage& img);
DepthImage read_pgm16(const std::string& path);
void write_window_sidecar(const std::string& path, const CropWindow& w);

}  // namespace pixgrasp
