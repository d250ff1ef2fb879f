#include "pixgrasp/policy_heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pixgrasp {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)

double softplus(double x) {
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double gaussian_logp(double x, double mean, double sigma) {
  const double z = (x - mean) / sigma;
  return -0.5 * z * z - std::log(sigma) - kHalfLog2Pi;
}

double wrap_pi(double angle) { return std::remainder(angle, 2.0 * M_PI); }

// Position-map log-sum-exp with max subtraction.
template <typename T>
double position_logz(const ActionMaps<T>& maps, double& max_logit) {
  const int n = maps.resolution * maps.resolution;
  const T* logits = maps.channel(0);
  double mx = static_cast<double>(logits[0]);
  for (int i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    sum += std::exp(static_cast<double>(logits[i]) - mx);
  }
  max_logit = mx;
  return mx + std::log(sum);
}

struct GaussSpec {
  int channel;       // map channel carrying the mean
  int activation;    // 0 = sigmoid, 1 = tanh
  double out_scale;  // emitted angle = out_scale * raw (rpy: pi; joints: limit)
};

// Specs indexed by GaussComp.
const GaussSpec kGauss[8] = {
    {2, 0, 1.0},            // scale (fraction; no angle scaling)
    {3, 1, M_PI},           // roll
    {4, 0, M_PI},           // pitch
    {5, 1, M_PI},           // yaw
    {6, 0, M_PI / 2.0},     // spread
    {7, 0, kFingerScale},   // finger 1
    {8, 0, kFingerScale},   // finger 2
    {9, 0, kFingerScale},   // finger 3
};

double activation_value(int kind, double x) {
  return kind == 0 ? sigmoid(x) : std::tanh(x);
}

double activation_derivative(int kind, double x) {
  if (kind == 0) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
  }
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

template <typename T>
double mean_at(const ActionMaps<T>& maps, int comp, int row, int col) {
  const GaussSpec& gs = kGauss[comp];
  const double raw = static_cast<double>(
      maps.channel(gs.channel)[row * maps.resolution + col]);
  return activation_value(gs.activation, raw);
}

bool component_pinned(int comp, const AblationConfig& ab) {
  if (ab.top_down && comp == kPitch) return true;
  if (ab.parallel && comp == kSpread) return true;
  return false;
}

}  // namespace

double sigma_from_log_std(double log_std, const SampleLimits& limits) {
  return std::clamp(std::exp(log_std), limits.sigma_min, limits.sigma_max);
}

template <typename T>
void sample_position(const ActionMaps<T>& maps, Rng& rng, int& row, int& col,
                     double& logp) {
  const int r = maps.resolution;
  const int n = r * r;
  const T* logits = maps.channel(0);
  double mx;
  const double logz = position_logz(maps, mx);
  // Inverse-CDF walk over the stabilized weights.
  const double total = std::exp(logz - mx);
  const double target = rng.uniform() * total;
  double acc = 0.0;
  int pick = n - 1;
  for (int i = 0; i < n; ++i) {
    acc += std::exp(static_cast<double>(logits[i]) - mx);
    if (acc >= target) {
      pick = i;
      break;
    }
  }
  row = pick / r;
  col = pick % r;
  logp = static_cast<double>(logits[pick]) - logz;
}

template <typename T>
double zoom_logp_of_bit(const ActionMaps<T>& maps, int row, int col, int bit) {
  const double logit =
      static_cast<double>(maps.channel(1)[row * maps.resolution + col]);
  return bit ? -softplus(-logit) : -softplus(logit);
}

template <typename T>
void sample_zoom(const ActionMaps<T>& maps, int row, int col, Rng& rng,
                 int& bit, double& logp) {
  const double logit =
      static_cast<double>(maps.channel(1)[row * maps.resolution + col]);
  bit = rng.bernoulli(sigmoid(logit)) ? 1 : 0;
  logp = zoom_logp_of_bit(maps, row, col, bit);
}

template <typename T>
void sample_scale(const ActionMaps<T>& maps, int row, int col, double sigma,
                  const SampleLimits& limits, Rng& rng, double& raw,
                  double& fraction, double& logp) {
  const double mean = mean_at(maps, kScale, row, col);
  raw = rng.normal(mean, sigma);
  fraction = std::clamp(raw, limits.scale_min, limits.scale_max);
  logp = gaussian_logp(raw, mean, sigma);
}

template <typename T>
void sample_rpy(const ActionMaps<T>& maps, int row, int col,
                const std::array<double, 3>& sigmas, Rng& rng,
                std::array<double, 3>& raw, std::array<double, 3>& angles,
                std::array<double, 3>& logps) {
  for (int i = 0; i < 3; ++i) {
    const int comp = kRoll + i;
    const double mean = mean_at(maps, comp, row, col);
    raw[static_cast<std::size_t>(i)] = rng.normal(mean, sigmas[static_cast<std::size_t>(i)]);
    logps[static_cast<std::size_t>(i)] =
        gaussian_logp(raw[static_cast<std::size_t>(i)], mean, sigmas[static_cast<std::size_t>(i)]);
  }
  // roll and yaw wrap; pitch clamps to its half-range.
  angles[0] = wrap_pi(raw[0] * M_PI);
  angles[1] = std::clamp(raw[1], 0.0, 1.0) * M_PI;
  angles[2] = wrap_pi(raw[2] * M_PI);
}

template <typename T>
void sample_fingers(const ActionMaps<T>& maps, int row, int col,
                    const std::array<double, 4>& sigmas, Rng& rng,
                    std::array<double, 4>& raw, std::array<double, 4>& angles,
                    std::array<double, 4>& logps) {
  for (int i = 0; i < 4; ++i) {
    const int comp = kSpread + i;
    const GaussSpec& gs = kGauss[comp];
    const double mean = mean_at(maps, comp, row, col);
    raw[static_cast<std::size_t>(i)] = rng.normal(mean, sigmas[static_cast<std::size_t>(i)]);
    logps[static_cast<std::size_t>(i)] =
        gaussian_logp(raw[static_cast<std::size_t>(i)], mean, sigmas[static_cast<std::size_t>(i)]);
    angles[static_cast<std::size_t>(i)] =
        std::clamp(gs.out_scale * raw[static_cast<std::size_t>(i)], 0.0, gs.out_scale);
  }
}

double compose_logp(const GraspAction& a, const AblationConfig& ab) {
  double total = a.logp_position;
  if (!ab.no_attention) total += a.logp_zoom;
  if (a.zoom) {
    total += a.logp_scale;
  } else {
    for (int i = 0; i < 3; ++i) {
      if (component_pinned(kRoll + i, ab)) continue;
      total += a.logp_rpy[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 4; ++i) {
      if (component_pinned(kSpread + i, ab)) continue;
      total += a.logp_fingers[static_cast<std::size_t>(i)];
    }
  }
  return total;
}

template <typename T>
GraspAction sample_action(const ActionMaps<T>& maps, const Tensor<T>& log_std,
                          const SampleLimits& limits,
                          const AblationConfig& ablation, bool force_zoom_off,
                          Rng& rng) {
  GraspAction a;
  sample_position(maps, rng, a.row, a.col, a.logp_position);

  if (ablation.no_attention) {
    a.zoom = 0;
    a.logp_zoom = 0.0;
  } else if (force_zoom_off) {
    a.zoom = 0;
    a.zoom_forced = true;
    a.logp_zoom = zoom_logp_of_bit(maps, a.row, a.col, 0);
  } else {
    sample_zoom(maps, a.row, a.col, rng, a.zoom, a.logp_zoom);
  }

  auto sigma_of = [&](int comp) {
    return sigma_from_log_std(static_cast<double>(log_std.data[static_cast<std::size_t>(comp)]),
                              limits);
  };

  if (a.zoom) {
    sample_scale(maps, a.row, a.col, sigma_of(kScale), limits, rng, a.raw[kScale],
                 a.scale, a.logp_scale);
  } else {
    std::array<double, 3> rpy_sig = {sigma_of(kRoll), sigma_of(kPitch),
                                     sigma_of(kYaw)};
    std::array<double, 3> rpy_raw, rpy_ang, rpy_lp;
    sample_rpy(maps, a.row, a.col, rpy_sig, rng, rpy_raw, rpy_ang, rpy_lp);
    std::array<double, 4> fin_sig = {sigma_of(kSpread), sigma_of(kFinger1),
                                     sigma_of(kFinger2), sigma_of(kFinger3)};
    std::array<double, 4> fin_raw, fin_ang, fin_lp;
    sample_fingers(maps, a.row, a.col, fin_sig, rng, fin_raw, fin_ang, fin_lp);

    a.roll = rpy_ang[0];
    a.pitch = rpy_ang[1];
    a.yaw = rpy_ang[2];
    a.spread = fin_ang[0];
    a.fingers = {fin_ang[1], fin_ang[2], fin_ang[3]};
    for (int i = 0; i < 3; ++i) {
      a.raw[static_cast<std::size_t>(kRoll + i)] = rpy_raw[static_cast<std::size_t>(i)];
      a.logp_rpy[static_cast<std::size_t>(i)] = rpy_lp[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 4; ++i) {
      a.raw[static_cast<std::size_t>(kSpread + i)] = fin_raw[static_cast<std::size_t>(i)];
      a.logp_fingers[static_cast<std::size_t>(i)] = fin_lp[static_cast<std::size_t>(i)];
    }
    if (ablation.top_down) {
      a.pitch = M_PI / 2.0;
      a.raw[kPitch] = 0.5;
      a.logp_rpy[1] = 0.0;
    }
    if (ablation.parallel) {
      a.spread = 0.0;
      a.raw[kSpread] = 0.0;
      a.logp_fingers[0] = 0.0;
    }
  }
  a.logp_total = compose_logp(a, ablation);
  return a;
}

template <typename T>
GraspAction greedy_action(const ActionMaps<T>& maps, const Tensor<T>& log_std,
                          const SampleLimits& limits,
                          const AblationConfig& ablation, bool force_zoom_off) {
  GraspAction a;
  const int r = maps.resolution;
  const int n = r * r;
  const T* logits = maps.channel(0);
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  a.row = best / r;
  a.col = best % r;
  double mx;
  a.logp_position = static_cast<double>(logits[best]) - position_logz(maps, mx);

  const double zoom_logit =
      static_cast<double>(maps.channel(1)[a.row * r + a.col]);
  if (ablation.no_attention || force_zoom_off) {
    a.zoom = 0;
    a.zoom_forced = force_zoom_off && !ablation.no_attention;
    a.logp_zoom = ablation.no_attention
                      ? 0.0
                      : zoom_logp_of_bit(maps, a.row, a.col, 0);
  } else {
    a.zoom = zoom_logit > 0.0 ? 1 : 0;
    a.logp_zoom = zoom_logp_of_bit(maps, a.row, a.col, a.zoom);
  }

  auto sigma_of = [&](int comp) {
    return sigma_from_log_std(static_cast<double>(log_std.data[static_cast<std::size_t>(comp)]),
                              limits);
  };

  if (a.zoom) {
    const double mean = mean_at(maps, kScale, a.row, a.col);
    a.raw[kScale] = mean;
    a.scale = std::clamp(mean, limits.scale_min, limits.scale_max);
    a.logp_scale = gaussian_logp(mean, mean, sigma_of(kScale));
  } else {
    for (int comp = kRoll; comp <= kFinger3; ++comp) {
      const double mean = mean_at(maps, comp, a.row, a.col);
      a.raw[static_cast<std::size_t>(comp)] = mean;
      const double lp = gaussian_logp(mean, mean, sigma_of(comp));
      if (comp <= kYaw) {
        a.logp_rpy[static_cast<std::size_t>(comp - kRoll)] = lp;
      } else {
        a.logp_fingers[static_cast<std::size_t>(comp - kSpread)] = lp;
      }
    }
    a.roll = wrap_pi(a.raw[kRoll] * M_PI);
    a.pitch = std::clamp(a.raw[kPitch], 0.0, 1.0) * M_PI;
    a.yaw = wrap_pi(a.raw[kYaw] * M_PI);
    a.spread = std::clamp(a.raw[kSpread] * M_PI / 2.0, 0.0, M_PI / 2.0);
    for (int i = 0; i < 3; ++i) {
      a.fingers[static_cast<std::size_t>(i)] = std::clamp(
          a.raw[static_cast<std::size_t>(kFinger1 + i)] * kFingerScale, 0.0, kFingerScale);
    }
    if (ablation.top_down) {
      a.pitch = M_PI / 2.0;
      a.raw[kPitch] = 0.5;
      a.logp_rpy[1] = 0.0;
    }
    if (ablation.parallel) {
      a.spread = 0.0;
      a.raw[kSpread] = 0.0;
      a.logp_fingers[0] = 0.0;
    }
  }
  a.logp_total = compose_logp(a, ablation);
  return a;
}

template <typename T>
double logp_of(const ActionMaps<T>& maps, const Tensor<T>& log_std,
               const GraspAction& action, const SampleLimits& limits,
               const AblationConfig& ablation) {
  GraspAction re = action;
  double mx;
  const double logz = position_logz(maps, mx);
  re.logp_position =
      static_cast<double>(maps.channel(0)[action.row * maps.resolution + action.col]) -
      logz;
  re.logp_zoom = ablation.no_attention
                     ? 0.0
                     : zoom_logp_of_bit(maps, action.row, action.col, action.zoom);

  auto sigma_of = [&](int comp) {
    return sigma_from_log_std(static_cast<double>(log_std.data[static_cast<std::size_t>(comp)]),
                              limits);
  };
  if (action.zoom) {
    re.logp_scale = gaussian_logp(action.raw[kScale],
                                  mean_at(maps, kScale, action.row, action.col),
                                  sigma_of(kScale));
  } else {
    for (int comp = kRoll; comp <= kFinger3; ++comp) {
      if (component_pinned(comp, ablation)) continue;
      const double lp =
          gaussian_logp(action.raw[static_cast<std::size_t>(comp)],
                        mean_at(maps, comp, action.row, action.col), sigma_of(comp));
      if (comp <= kYaw) {
        re.logp_rpy[static_cast<std::size_t>(comp - kRoll)] = lp;
      } else {
        re.logp_fingers[static_cast<std::size_t>(comp - kSpread)] = lp;
      }
    }
  }
  return compose_logp(re, ablation);
}

template <typename T>
void logp_grad(const ActionMaps<T>& maps, const Tensor<T>& log_std,
               const GraspAction& action, const SampleLimits& limits,
               const AblationConfig& ablation, double upstream,
               Tensor<T>& maps_grad, std::array<double, 8>& log_std_grad) {
  const int r = maps.resolution;
  const int n = r * r;
  const int pix = action.row * r + action.col;

  // Position: upstream * (onehot - softmax).
  {
    const T* logits = maps.channel(0);
    double mx;
    const double logz = position_logz(maps, mx);
    T* g = maps_grad.ptr();  // channel 0
    for (int i = 0; i < n; ++i) {
      const double p = std::exp(static_cast<double>(logits[i]) - logz);
      g[i] += static_cast<T>(-upstream * p);
    }
    g[pix] += static_cast<T>(upstream);
  }

  // Zoom Bernoulli.
  if (!ablation.no_attention) {
    const double logit = static_cast<double>(maps.channel(1)[pix]);
    const double p = sigmoid(logit);
    maps_grad.ptr()[static_cast<std::size_t>(n) + pix] +=
        static_cast<T>(upstream * (action.zoom - p));
  }

  auto gauss_grad = [&](int comp) {
    const GaussSpec& gs = kGauss[comp];
    const double ls = static_cast<double>(log_std.data[static_cast<std::size_t>(comp)]);
    const double sigma = sigma_from_log_std(ls, limits);
    const double m_raw = static_cast<double>(maps.channel(gs.channel)[pix]);
    const double mean = activation_value(gs.activation, m_raw);
    const double x = action.raw[static_cast<std::size_t>(comp)];
    const double z = (x - mean) / sigma;
    // d logp / d mean, chained through the activation.
    maps_grad.ptr()[static_cast<std::size_t>(gs.channel) * n + pix] +=
        static_cast<T>(upstream * (z / sigma) *
                       activation_derivative(gs.activation, m_raw));
    // d logp / d log_std, zero where the sigma clamp is active.
    const double sig_raw = std::exp(ls);
    if (sig_raw > limits.sigma_min && sig_raw < limits.sigma_max) {
      log_std_grad[static_cast<std::size_t>(comp)] += upstream * (z * z - 1.0);
    }
  };

  if (action.zoom) {
    gauss_grad(kScale);
  } else {
    for (int comp = kRoll; comp <= kFinger3; ++comp) {
      if (component_pinned(comp, ablation)) continue;
      gauss_grad(comp);
    }
  }
}

template <typename T>
double entropy_estimate(const ActionMaps<T>& maps, const Tensor<T>& log_std,
                        const GraspAction& action, const SampleLimits& limits,
                        const AblationConfig& ablation) {
  const int n = maps.resolution * maps.resolution;
  const T* logits = maps.channel(0);
  double mx;
  const double logz = position_logz(maps, mx);
  double h_pos = 0.0;
  for (int i = 0; i < n; ++i) {
    const double lp = static_cast<double>(logits[i]) - logz;
    h_pos -= std::exp(lp) * lp;
  }
  double h = h_pos;
  if (!ablation.no_attention) {
    const double logit = static_cast<double>(
        maps.channel(1)[action.row * maps.resolution + action.col]);
    const double p = sigmoid(logit);
    const double q = 1.0 - p;
    if (p > 0.0 && q > 0.0) h += -p * std::log(p) - q * std::log(q);
  }
  auto gauss_entropy = [&](int comp) {
    const double sigma = sigma_from_log_std(
        static_cast<double>(log_std.data[static_cast<std::size_t>(comp)]), limits);
    return 0.5 * std::log(2.0 * M_PI * M_E * sigma * sigma);
  };
  if (action.zoom) {
    h += gauss_entropy(kScale);
  } else {
    for (int comp = kRoll; comp <= kFinger3; ++comp) {
      if (component_pinned(comp, ablation)) continue;
      h += gauss_entropy(comp);
    }
  }
  return h;
}

// Explicit instantiations for both precisions.
#define PIXGRASP_INSTANTIATE_HEADS(T)                                          \
  template void sample_position<T>(const ActionMaps<T>&, Rng&, int&, int&,     \
                                   double&);                                   \
  template double zoom_logp_of_bit<T>(const ActionMaps<T>&, int, int, int);    \
  template void sample_zoom<T>(const ActionMaps<T>&, int, int, Rng&, int&,     \
                               double&);                                       \
  template void sample_scale<T>(const ActionMaps<T>&, int, int, double,        \
                                const SampleLimits&, Rng&, double&, double&,   \
                                double&);                                      \
  template void sample_rpy<T>(const ActionMaps<T>&, int, int,                  \
                              const std::array<double, 3>&, Rng&,              \
                              std::array<double, 3>&, std::array<double, 3>&,  \
                              std::array<double, 3>&);                         \
  template void sample_fingers<T>(const ActionMaps<T>&, int, int,              \
                                  const std::array<double, 4>&, Rng&,          \
                                  std::array<double, 4>&,                      \
                                  std::array<double, 4>&,                      \
                                  std::array<double, 4>&);                     \
  template GraspAction sample_action<T>(const ActionMaps<T>&, const Tensor<T>&,\
                                        const SampleLimits&,                   \
                                        const AblationConfig&, bool, Rng&);    \
  template GraspAction greedy_action<T>(const ActionMaps<T>&, const Tensor<T>&,\
                                        const SampleLimits&,                   \
                                        const AblationConfig&, bool);          \
  template double logp_of<T>(const ActionMaps<T>&, const Tensor<T>&,           \
                             const GraspAction&, const SampleLimits&,          \
                             const AblationConfig&);                           \
  template void logp_grad<T>(const ActionMaps<T>&, const Tensor<T>&,           \
                             const GraspAction&, const SampleLimits&,          \
                             const AblationConfig&, double, Tensor<T>&,        \
                             std::array<double, 8>&);                          \
  template double entropy_estimate<T>(const ActionMaps<T>&, const Tensor<T>&,  \
                                      const GraspAction&, const SampleLimits&, \
                                      const AblationConfig&);

PIXGRASP_INSTANTIATE_HEADS(float)
PIXGRASP_INSTANTIATE_HEADS(double)

#undef PIXGRASP_INSTANTIATE_HEADS

}  // namespace pixgrasp
