#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "pixgrasp/ppo.hpp"

namespace pixgrasp {

// Flat key=value run configuration covering every module default. Unknown
// keys are rejected; the effective config echoes back byte-for-byte parseable.
struct RunConfig {
  SceneConfig scene;
  std::string scene_sampling = "mixed";  // mixed|single|cluttered
  std::string scene_shapes = "box,sphere,cylinder";
  double camera_height = 0.6;
  double camera_tilt_deg = 0.0;
  int camera_resolution = 256;
  double camera_far_clip = 2.0;
  HandModel hand;
  EpisodeConfig episode;
  SampleLimits limits;
  std::string ablation = "none";  // none|no_attention|top_down|parallel
  std::string net_preset = "desk64";
  bool net_value_head = false;
  double net_input_offset = -0.5;
  double net_input_gain = 4.0;
  PPOConfig ppo;
  std::uint64_t seed = 1;

  // Derived objects.
  EnvConfig make_env() const;
  NetworkDescriptor make_descriptor() const;

  void set(const std::string& key, const std::string& value);  // throws on unknown key
  void echo(std::ostream& os) const;
};

RunConfig parse_config_file(const std::string& path);
void parse_config_stream(std::istream& is, RunConfig& cfg);
AblationConfig ablation_from_name(const std::string& name);

}  // namespace pixgrasp
