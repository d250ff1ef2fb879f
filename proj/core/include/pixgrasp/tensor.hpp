#pragma once

#include <array>
#include <cassert>
#include <cstddef>
#include <numeric>
#include <vector>

namespace pixgrasp {

// Dense row-major tensor of rank <= 4. Feature maps are (channels, rows,
// cols); conv weights are stored pre-flattened as (out_ch, in_ch * k * k).
template <typename T>
struct Tensor {
  std::array<int, 4> dims = {0, 0, 0, 0};
  int rank = 0;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::initializer_list<int> shape) { resize(shape); }

  void resize(std::initializer_list<int> shape) {
    rank = static_cast<int>(shape.size());
    assert(rank >= 1 && rank <= 4);
    int i = 0;
    std::size_t n = 1;
    for (int d : shape) {
      dims[static_cast<std::size_t>(i++)] = d;
      n *= static_cast<std::size_t>(d);
    }
    for (; i < 4; ++i) dims[static_cast<std::size_t>(i)] = 1;
    data.assign(n, T(0));
  }

  std::size_t numel() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.dims = dims;
    out.rank = rank;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      out.data[i] = static_cast<U>(data[i]);
    }
    return out;
  }
};

}  // namespace pixgrasp
