#include "pixgrasp/depth_image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pixgrasp {

Eigen::Vector3d deproject(int row, int col, double depth, const CameraModel& cam,
                          const CropWindow& window, int image_rows,
                          int image_cols) {
  if (row < 0 || row >= image_rows || col < 0 || col >= image_cols) {
    throw std::out_of_range("deproject: pixel outside window image");
  }
  if (depth <= 0.0) throw std::invalid_argument("deproject: depth must be > 0");
  int nr, nc;
  window_pixel_to_native(window, row, col, image_rows, image_cols, nr, nc);
  const Eigen::Vector3d cam_point((nc - cam.cx) * depth / cam.fx,
                                  (nr - cam.cy) * depth / cam.fy, depth);
  return cam.to_world(cam_point);
}

Eigen::Vector2d project_native(const Eigen::Vector3d& world,
                               const CameraModel& cam) {
  const Eigen::Vector3d p = cam.to_camera(world);
  return Eigen::Vector2d(cam.cy + p.y() / p.z() * cam.fy,
                         cam.cx + p.x() / p.z() * cam.fx);
}

DepthImage resample(const DepthImage& native, const CropWindow& window,
                    int out_rows, int out_cols) {
  DepthImage out;
  out.rows = out_rows;
  out.cols = out_cols;
  out.window = window;
  out.data.resize(static_cast<std::size_t>(out_rows) * out_cols);
  for (int r = 0; r < out_rows; ++r) {
    const int sr = window.origin_row + nn_source_index(r, out_rows, window.size_rows);
    for (int c = 0; c < out_cols; ++c) {
      const int sc =
          window.origin_col + nn_source_index(c, out_cols, window.size_cols);
      out.at(r, c) = native.at(sr, sc);
    }
  }
  return out;
}

DepthImage crop_resize(const DepthImage& native, const CropWindow& current,
                       int center_row, int center_col, int view_rows,
                       int view_cols, double new_scale, int out_rows,
                       int out_cols) {
  if (new_scale <= 0.0 || new_scale > 1.0) {
    throw std::invalid_argument("crop_resize: scale must be in (0, 1]");
  }
  // Native-frame image of the requested center.
  int center_nr, center_nc;
  window_pixel_to_native(current, center_row, center_col, view_rows, view_cols,
                         center_nr, center_nc);

  CropWindow next;
  next.size_rows = std::max(
      1, static_cast<int>(std::lround(current.size_rows * new_scale)));
  next.size_cols = std::max(
      1, static_cast<int>(std::lround(current.size_cols * new_scale)));
  next.size_rows = std::min(next.size_rows, current.size_rows);
  next.size_cols = std::min(next.size_cols, current.size_cols);

  // Center, then clamp inside the current window so successive windows nest.
  auto clamp_origin = [](int center, int size, int lo, int hi_size) {
    int origin = center - size / 2;
    origin = std::max(origin, lo);
    origin = std::min(origin, lo + hi_size - size);
    return origin;
  };
  next.origin_row = clamp_origin(center_nr, next.size_rows, current.origin_row,
                                 current.size_rows);
  next.origin_col = clamp_origin(center_nc, next.size_cols, current.origin_col,
                                 current.size_cols);
  // Exact by construction: size_new/native = (size_new/size_cur)*(size_cur/native).
  next.composed_scale =
      static_cast<double>(next.size_rows) / native.window.size_rows *
      native.window.composed_scale;

  return resample(native, next, out_rows, out_cols);
}

void write_pgm16(const std::string& path, const DepthImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "P5\n" << img.cols << " " << img.rows << "\n65535\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(img.rows) * img.cols * 2);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    double mm = std::round(img.data[i] * 1000.0);
    mm = std::clamp(mm, 0.0, 65535.0);
    const auto v = static_cast<std::uint16_t>(mm);
    buf[2 * i] = static_cast<unsigned char>(v >> 8);  // PGM is big-endian
    buf[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
}

DepthImage read_pgm16(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string magic;
  int cols = 0, rows = 0, maxval = 0;
  is >> magic >> cols >> rows >> maxval;
  if (magic != "P5" || maxval != 65535) {
    throw std::runtime_error("not a 16-bit PGM: " + path);
  }
  is.get();  // single whitespace after maxval
  DepthImage img;
  img.rows = rows;
  img.cols = cols;
  img.window = CropWindow::full(rows, cols);
  img.data.resize(static_cast<std::size_t>(rows) * cols);
  std::vector<unsigned char> buf(img.data.size() * 2);
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!is) throw std::runtime_error("truncated PGM: " + path);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const std::uint16_t v =
        static_cast<std::uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    img.data[i] = v / 1000.0;
  }
  return img;
}

void write_window_sidecar(const std::string& path, const CropWindow& w) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(17);
  os << "origin_row " << w.origin_row << "\norigin_col " << w.origin_col
     << "\nsize_rows " << w.size_rows << "\nsize_cols " << w.size_cols
     << "\ncomposed_scale " << w.composed_scale << "\n";
}

}  // namespace pixgrasp
