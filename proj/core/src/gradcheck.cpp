#include "pixgrasp/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>

#include "pixgrasp/network.hpp"
#include "pixgrasp/policy_heads.hpp"
#include "pixgrasp/rng.hpp"

namespace pixgrasp {

namespace {

std::string layer_type_of(const std::string& name) {
  if (name.rfind("enc", 0) == 0) return "conv";
  if (name.rfind("lat", 0) == 0) return "pyramid_lateral";
  if (name.find(".conv.") != std::string::npos) return "branch_conv";
  if (name.find(".up") != std::string::npos) return "transposed_conv";
  if (name.find(".out.") != std::string::npos) return "head_1x1";
  if (name.rfind("value", 0) == 0) return "value_head";
  if (name == "log_std") return "log_std";
  return "other";
}

template <typename T>
struct CheckProblem {
  NetworkParams<T> params;
  std::vector<T> obs;
  double s_scale = 0.6;
  GraspAction zoom_action;
  GraspAction grasp_action;
  SampleLimits limits;
  AblationConfig ablation;
  double w_zoom = 0.7;
  double w_grasp = 1.3;
};

template <typename T>
CheckProblem<T> make_problem(const NetworkDescriptor& desc, std::uint64_t seed) {
  CheckProblem<T> prob;
  prob.params = init_params<T>(desc, seed);
  Rng rng(Rng::derive(seed, 1, 0x6d));
  const int r = desc.resolution;
  prob.obs.resize(static_cast<std::size_t>(r) * r);
  for (T& v : prob.obs) v = static_cast<T>(rng.uniform(0.4, 0.7));

  // Fixed actions exercising both Eq.-9 mask branches.
  prob.zoom_action.row = r / 3;
  prob.zoom_action.col = r / 2;
  prob.zoom_action.zoom = 1;
  prob.zoom_action.raw[kScale] = 0.57;

  prob.grasp_action.row = (2 * r) / 3;
  prob.grasp_action.col = r / 4;
  prob.grasp_action.zoom = 0;
  for (int comp = kRoll; comp <= kFinger3; ++comp) {
    prob.grasp_action.raw[static_cast<std::size_t>(comp)] = 0.25 + 0.08 * comp;
  }
  return prob;
}

template <typename T>
double loss_of(const CheckProblem<T>& prob, const NetworkParams<T>& params) {
  const ActionMaps<T> maps =
      forward(params, prob.obs.data(), prob.s_scale);
  const Tensor<T>& log_std = params.at("log_std");
  return prob.w_zoom *
             logp_of(maps, log_std, prob.zoom_action, prob.limits, prob.ablation) +
         prob.w_grasp *
             logp_of(maps, log_std, prob.grasp_action, prob.limits, prob.ablation);
}

template <typename T>
Gradients<T> analytic_grad(const CheckProblem<T>& prob) {
  ForwardCache<T> cache;
  const ActionMaps<T> maps =
      forward(prob.params, prob.obs.data(), prob.s_scale, &cache);
  const Tensor<T>& log_std = prob.params.at("log_std");
  Tensor<T> maps_grad({10, maps.resolution, maps.resolution});
  std::array<double, 8> lsg{};
  logp_grad(maps, log_std, prob.zoom_action, prob.limits, prob.ablation,
            prob.w_zoom, maps_grad, lsg);
  logp_grad(maps, log_std, prob.grasp_action, prob.limits, prob.ablation,
            prob.w_grasp, maps_grad, lsg);
  Gradients<T> grads = zero_gradients(prob.params);
  backward(prob.params, cache, maps_grad, T(0), grads);
  T* ls = grads.tensors.at("log_std").ptr();
  for (int i = 0; i < 8; ++i) ls[i] += static_cast<T>(lsg[static_cast<std::size_t>(i)]);
  return grads;
}

template <typename T>
GradCheckReport check(const NetworkDescriptor& desc, std::uint64_t seed,
                      bool subsample) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckProblem<T> prob = make_problem<T>(desc, seed);
  const Gradients<T> grads = analytic_grad(prob);
  const double step = std::is_same_v<T, double> ? 1e-5 : 1e-2;

  std::map<std::string, GradCheckEntry> by_type;
  GradCheckReport report;
  report.subsampled = subsample;

  for (auto& [name, tensor] : prob.params.tensors) {
    const std::string type = layer_type_of(name);
    GradCheckEntry& entry = by_type[type];
    entry.layer_type = type;
    const Tensor<T>& g = grads.tensors.at(name);
    const std::size_t n = tensor.numel();
    // Deterministic stride when subsampling large tensors.
    const std::size_t max_checks = subsample ? 24 : n;
    const std::size_t stride = std::max<std::size_t>(1, n / max_checks);
    for (std::size_t i = 0; i < n; i += stride) {
      const T saved = tensor.data[i];
      tensor.data[i] = saved + static_cast<T>(step);
      const double lp = loss_of(prob, prob.params);
      tensor.data[i] = saved - static_cast<T>(step);
      const double lm = loss_of(prob, prob.params);
      tensor.data[i] = saved;
      const double fd = (lp - lm) / (2.0 * step);
      const double an = static_cast<double>(g.data[i]);
      const double rel =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.params_checked;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.params_checked;
    }
  }

  for (auto& [type, entry] : by_type) report.per_layer.push_back(entry);
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

}  // namespace

GradCheckReport run_gradcheck(const std::string& size, bool double_precision,
                              std::uint64_t seed) {
  NetworkDescriptor desc;
  bool subsample = false;
  if (size == "toy") {
    desc = NetworkDescriptor::preset("toy16");
  } else if (size == "default") {
    desc = NetworkDescriptor::preset("desk64");
    subsample = true;
  } else {
    throw std::runtime_error("gradcheck size must be toy or default");
  }
  return double_precision ? check<double>(desc, seed, subsample)
                          : check<float>(desc, seed, subsample);
}

}  // namespace pixgrasp
