#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pixgrasp {

struct GradCheckEntry {
  std::string layer_type;
  double max_rel_err = 0.0;
  std::size_t params_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_layer;
  double max_rel_err = 0.0;
  std::size_t params_checked = 0;
  double runtime_seconds = 0.0;
  bool subsampled = false;

  bool pass(double threshold = 1e-4) const { return max_rel_err < threshold; }
};

// Central finite differences of a logp-weighted loss (one zoomed action, one
// grasp action) through the full network + sampling heads, against the
// analytic gradients. size is "toy" (exhaustive over a 16x16 config) or
// "default" (deterministic subsample of the desk64 config).
GradCheckReport run_gradcheck(const std::string& size, bool double_precision,
                              std::uint64_t seed = 42);

}  // namespace pixgrasp
