#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pixgrasp/camera.hpp"
#include "pixgrasp/depth_image.hpp"
#include "pixgrasp/grasp_oracle.hpp"
#include "pixgrasp/network.hpp"
#include "pixgrasp/policy_heads.hpp"
#include "pixgrasp/renderer.hpp"
#include "pixgrasp/scene.hpp"

namespace pixgrasp {

struct EpisodeConfig {
  int max_zoom_steps = 5;   // forced grasp after this many zooms
  int scale_floor_px = 24;  // minimum composed window side, native pixels
  double gamma = 0.99;
};

// One MDP step: the observation the policy saw, what it did, what happened.
struct Transition {
  std::vector<float> obs_depth;  // policy-resolution grid, meters
  int obs_resolution = 0;
  double s_scale = 1.0;
  CropWindow window;  // window of the observation in the native frame
  GraspAction action;
  double reward = 0.0;
  bool done = false;
  bool forced_stop = false;
  std::optional<GraspPose> pose;          // terminal step only
  std::optional<GraspDiagnostics> oracle; // terminal step only
};

struct EpisodeResult {
  std::vector<Transition> transitions;
  bool success = false;
  int zoom_steps = 0;
  bool forced_stop = false;
};

// Runs one grasp episode: render once, then repeated zooming on the original
// depth image until the policy (or the cap) terminates, then the oracle call.
// `greedy` switches action selection from sampling to distribution modes.
EpisodeResult run_episode(const Scene& scene, const CameraModel& cam,
                          const HandModel& hand,
                          const NetworkParams<float>& params,
                          const EpisodeConfig& cfg, const SampleLimits& limits,
                          const AblationConfig& ablation, Rng& rng,
                          bool greedy = false,
                          ForwardCache<float>* cache = nullptr,
                          const DepthImage* prerendered = nullptr);

}  // namespace pixgrasp
