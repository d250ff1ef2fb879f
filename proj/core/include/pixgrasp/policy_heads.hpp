#pragma once

#include <array>
#include <cstdint>

#include "pixgrasp/network.hpp"
#include "pixgrasp/rng.hpp"

namespace pixgrasp {

// Ablation switches (paper Table I rows). Pinned components are not sampled;
// their log-prob terms drop out of the composition and the gradient.
struct AblationConfig {
  bool no_attention = false;  // horizon 1: zoom forced off, never sampled
  bool top_down = false;      // pitch pinned to pi/2
  bool parallel = false;      // lateral spread pinned to 0
};

struct SampleLimits {
  double scale_min = 0.3;
  double scale_max = 0.95;
  double sigma_min = 0.01;
  double sigma_max = 1.0;
};

// Index order of the 8 Gaussian components in log_std and raw draws.
enum GaussComp : int {
  kScale = 0,
  kRoll = 1,
  kPitch = 2,
  kYaw = 3,
  kSpread = 4,
  kFinger1 = 5,
  kFinger2 = 6,
  kFinger3 = 7,
};

inline constexpr double kFingerScale = 0.61;

// One sampled 10-scalar action with its per-component log-probabilities and
// the raw (pre-clamp) Gaussian draws needed to re-evaluate likelihoods.
struct GraspAction {
  int row = 0, col = 0;  // a_position
  int zoom = 0;
  bool zoom_forced = false;  // executed zoom overridden to 0 by the episode cap
  double scale = 0.0;        // executed fraction, clamped
  double roll = 0.0, pitch = 0.0, yaw = 0.0;
  double spread = 0.0;
  std::array<double, 3> fingers = {0.0, 0.0, 0.0};
  std::array<double, 8> raw = {};  // normalized-unit Gaussian draws

  double logp_position = 0.0;
  double logp_zoom = 0.0;
  double logp_scale = 0.0;
  std::array<double, 3> logp_rpy = {};
  std::array<double, 4> logp_fingers = {};
  double logp_total = 0.0;
};

// sigma_i = clamp(exp(log_std_i), sigma_min, sigma_max).
double sigma_from_log_std(double log_std, const SampleLimits& limits);

// Spatial softmax over the position logits; logp uses max-subtracted
// log-sum-exp.
template <typename T>
void sample_position(const ActionMaps<T>& maps, Rng& rng, int& row, int& col,
                     double& logp);

template <typename T>
void sample_zoom(const ActionMaps<T>& maps, int row, int col, Rng& rng,
                 int& bit, double& logp);

// Log-prob of a given zoom bit under the current logit (both branches sum to
// one in probability).
template <typename T>
double zoom_logp_of_bit(const ActionMaps<T>& maps, int row, int col, int bit);

template <typename T>
void sample_scale(const ActionMaps<T>& maps, int row, int col, double sigma,
                  const SampleLimits& limits, Rng& rng, double& raw,
                  double& fraction, double& logp);

template <typename T>
void sample_rpy(const ActionMaps<T>& maps, int row, int col,
                const std::array<double, 3>& sigmas, Rng& rng,
                std::array<double, 3>& raw, std::array<double, 3>& angles,
                std::array<double, 3>& logps);

template <typename T>
void sample_fingers(const ActionMaps<T>& maps, int row, int col,
                    const std::array<double, 4>& sigmas, Rng& rng,
                    std::array<double, 4>& raw, std::array<double, 4>& angles,
                    std::array<double, 4>& logps);

// The masked composition: position + zoom + zoom*scale + (1-zoom)*sum(dofs),
// with ablation-pinned components excluded.
double compose_logp(const GraspAction& action, const AblationConfig& ablation);

// Samples the full 10-scalar action. force_zoom_off implements the episode
// cap / horizon-1 override.
template <typename T>
GraspAction sample_action(const ActionMaps<T>& maps, const Tensor<T>& log_std,
                          const SampleLimits& limits,
                          const AblationConfig& ablation, bool force_zoom_off,
                          Rng& rng);

// Deterministic action from the distribution modes (argmax pixel, Bernoulli
// threshold, Gaussian means).
template <typename T>
GraspAction greedy_action(const ActionMaps<T>& maps, const Tensor<T>& log_std,
                          const SampleLimits& limits,
                          const AblationConfig& ablation, bool force_zoom_off);

// Re-evaluates the total log-prob of a stored action (raw draws) under the
// current maps/log_std.
template <typename T>
double logp_of(const ActionMaps<T>& maps, const Tensor<T>& log_std,
               const GraspAction& action, const SampleLimits& limits,
               const AblationConfig& ablation);

// Accumulates upstream * d logp_total / d maps into maps_grad (ActionMaps
// layout) and upstream * d logp_total / d log_std into log_std_grad.
template <typename T>
void logp_grad(const ActionMaps<T>& maps, const Tensor<T>& log_std,
               const GraspAction& action, const SampleLimits& limits,
               const AblationConfig& ablation, double upstream,
               Tensor<T>& maps_grad, std::array<double, 8>& log_std_grad);

// Policy entropy at the action's pixel (position map entropy + zoom entropy +
// masked Gaussian entropies), for logging.
template <typename T>
double entropy_estimate(const ActionMaps<T>& maps, const Tensor<T>& log_std,
                        const GraspAction& action, const SampleLimits& limits,
                        const AblationConfig& ablation);

}  // namespace pixgrasp
