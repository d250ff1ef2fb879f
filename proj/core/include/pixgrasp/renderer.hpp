#pragma once

#include "pixgrasp/camera.hpp"
#include "pixgrasp/depth_image.hpp"
#include "pixgrasp/scene.hpp"

namespace pixgrasp {

// Analytic ray-cast render of the scene at native resolution. Every pixel is
// the distance along the optical axis to the nearest primitive, the table
// plane z=0, or the far clip when the ray escapes.
DepthImage render_depth(const Scene& scene, const CameraModel& cam);

}  // namespace pixgrasp
