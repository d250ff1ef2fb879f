#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pixgrasp/layers.hpp"
#include "pixgrasp/tensor.hpp"

namespace pixgrasp {

// Architecture description for the encoder/pyramid/four-branch network.
// Resolution must be divisible by 2^(#encoder stages), and the branch entry
// sits at resolution / 2^branch_deconvs.
struct EncoderStage {
  int out_ch = 0;
  int kernel = 3;
  int stride = 2;
};

struct NetworkDescriptor {
  std::string name = "desk64";
  int resolution = 64;
  std::vector<EncoderStage> encoder;
  int pyramid_channels = 16;
  int branch_hidden = 8;
  int branch_deconvs = 1;  // 2x upsampling stages per branch, kernel==stride==2
  bool value_head = false;
  // Input normalization applied inside forward: (depth + offset) * gain.
  double input_offset = -0.5;
  double input_gain = 4.0;

  std::string serialize() const;
  static NetworkDescriptor parse(const std::string& text);
  static NetworkDescriptor preset(const std::string& name);  // toy16|desk64|paper224
};

// Named parameter tensors. std::map keeps iteration order stable, which the
// optimizer and the gradient-norm reduction rely on.
template <typename T>
struct NetworkParams {
  NetworkDescriptor descriptor;
  std::map<std::string, Tensor<T>> tensors;

  Tensor<T>& at(const std::string& name) { return tensors.at(name); }
  const Tensor<T>& at(const std::string& name) const { return tensors.at(name); }
  std::size_t total_parameters() const;

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out;
    out.descriptor = descriptor;
    for (const auto& [k, v] : tensors) out.tensors[k] = v.template cast<U>();
    return out;
  }
};

// The 10 per-pixel activation maps, all pre-activation. Channel layout:
// 0 position logits, 1 zoom logit, 2 scale mean, 3..5 rpy means,
// 6..9 finger means.
template <typename T>
struct ActionMaps {
  int resolution = 0;
  Tensor<T> maps;  // (10, R, R)
  bool has_value = false;
  T value = T(0);

  const T* channel(int c) const {
    return maps.ptr() + static_cast<std::size_t>(c) * resolution * resolution;
  }
  T* channel(int c) {
    return maps.ptr() + static_cast<std::size_t>(c) * resolution * resolution;
  }
};

// Activation cache carried from forward to backward.
template <typename T>
struct ForwardCache {
  Tensor<T> input;                    // normalized (1, R, R)
  std::vector<Tensor<T>> enc;         // post-ReLU encoder stages
  std::vector<Tensor<T>> enc_cols;    // im2col buffers per encoder conv
  std::vector<Tensor<T>> lat;         // lateral 1x1 outputs
  std::vector<Tensor<T>> pyr;         // merged pyramid levels
  Tensor<T> entry;                    // pyramid level at branch entry + scale plane
  std::vector<Tensor<T>> branch_cols; // im2col per branch entry conv
  std::vector<Tensor<T>> branch_h;    // post-ReLU branch hidden
  std::vector<std::vector<Tensor<T>>> branch_up;  // post-ReLU deconv stages
  double s_scale = 1.0;
};

template <typename T>
struct Gradients {
  std::map<std::string, Tensor<T>> tensors;
  void zero();
  void add_scaled(const Gradients<T>& other, T factor);
  double squared_norm() const;
  void scale(T factor);
};

// Fan-in scaled uniform init for conv kernels, zero biases, log_std = -1.
template <typename T>
NetworkParams<T> init_params(const NetworkDescriptor& desc, std::uint64_t seed);

template <typename T>
Gradients<T> zero_gradients(const NetworkParams<T>& params);

// Deterministic forward pass; throws on non-finite activations.
template <typename T>
ActionMaps<T> forward(const NetworkParams<T>& params, const T* depth,
                      double s_scale, ForwardCache<T>* cache = nullptr);

// Reverse-mode gradients for every parameter and (optionally) the input.
// maps_grad has the ActionMaps layout; value_grad feeds the value head.
template <typename T>
void backward(const NetworkParams<T>& params, const ForwardCache<T>& cache,
              const Tensor<T>& maps_grad, T value_grad, Gradients<T>& grads,
              Tensor<T>* input_grad = nullptr);

// Checkpoint format: "PXGR", version u16, u32 entry count, then per entry
// (u16 name length, name bytes, u8 rank, dims as u32 LE, f32 LE data).
// The descriptor text rides along as entry "__descriptor__" with one f32
// slot per character.
void save_checkpoint(const std::string& path, const NetworkParams<float>& params,
                     const std::map<std::string, Tensor<float>>& extra = {});
NetworkParams<float> load_checkpoint(const std::string& path,
                                     std::map<std::string, Tensor<float>>* extra = nullptr);

}  // namespace pixgrasp
