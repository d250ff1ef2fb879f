#include "pixgrasp/episode.hpp"

#include <algorithm>
#include <cmath>

namespace pixgrasp {

namespace {

std::vector<float> to_float_grid(const DepthImage& img) {
  std::vector<float> out(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    out[i] = static_cast<float>(img.data[i]);
  }
  return out;
}

}  // namespace

EpisodeResult run_episode(const Scene& scene, const CameraModel& cam,
                          const HandModel& hand,
                          const NetworkParams<float>& params,
                          const EpisodeConfig& cfg, const SampleLimits& limits,
                          const AblationConfig& ablation, Rng& rng, bool greedy,
                          ForwardCache<float>* cache,
                          const DepthImage* prerendered) {
  const int r = params.descriptor.resolution;
  DepthImage native_storage;
  const DepthImage* native = prerendered;
  if (!native) {
    native_storage = render_depth(scene, cam);
    native = &native_storage;
  }

  EpisodeResult result;
  DepthImage obs = resample(*native, CropWindow::full(native->rows, native->cols),
                            r, r);
  const Tensor<float>& log_std = params.at("log_std");

  for (int t = 0;; ++t) {
    Transition tr;
    tr.obs_depth = to_float_grid(obs);
    tr.obs_resolution = r;
    tr.s_scale = obs.window.composed_scale;
    tr.window = obs.window;

    const ActionMaps<float> maps =
        forward(params, tr.obs_depth.data(), tr.s_scale, cache);
    const bool force_zoom_off = t >= cfg.max_zoom_steps;
    tr.action = greedy ? greedy_action(maps, log_std, limits, ablation,
                                       force_zoom_off)
                       : sample_action(maps, log_std, limits, ablation,
                                       force_zoom_off, rng);

    if (tr.action.zoom == 1) {
      // Zoom: clamp the requested scale so the composed window side never
      // drops below the floor, then crop from the original render.
      double eff_scale = tr.action.scale;
      const double floor_scale =
          static_cast<double>(cfg.scale_floor_px) / obs.window.size_rows;
      eff_scale = std::min(1.0, std::max(eff_scale, floor_scale));
      tr.reward = 0.0;
      tr.done = false;
      result.transitions.push_back(std::move(tr));
      obs = crop_resize(*native, obs.window, result.transitions.back().action.row,
                        result.transitions.back().action.col, r, r, eff_scale, r,
                        r);
      ++result.zoom_steps;
      continue;
    }

    // Terminal grasp: deproject the point of attention and query the oracle.
    const double depth = obs.at(tr.action.row, tr.action.col);
    GraspPose pose;
    pose.position = deproject(tr.action.row, tr.action.col, depth, cam,
                              obs.window, r, r);
    pose.roll = tr.action.roll;
    pose.pitch = tr.action.pitch;
    pose.yaw = tr.action.yaw;
    pose.spread = tr.action.spread;
    pose.fingers = {tr.action.fingers[0], tr.action.fingers[1],
                    tr.action.fingers[2]};
    const GraspResult grasp = evaluate_grasp(scene, hand, pose);

    tr.reward = grasp.success ? 1.0 : 0.0;
    tr.done = true;
    tr.forced_stop = tr.action.zoom_forced;
    tr.pose = pose;
    tr.oracle = grasp.diagnostics;
    result.success = grasp.success;
    result.forced_stop = tr.forced_stop;
    result.transitions.push_back(std::move(tr));
    break;
  }
  return result;
}

}  // namespace pixgrasp
