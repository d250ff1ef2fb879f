#include "pixgrasp/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace pixgrasp {

namespace {

struct KeyBinding {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double to_double(const std::string& s) { return std::stod(s); }
int to_int(const std::string& s) { return std::stoi(s); }
bool to_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "on") return true;
  if (s == "0" || s == "false" || s == "off") return false;
  throw std::runtime_error("bad boolean value: " + s);
}

#define BIND_D(key, field)                                            \
  {key, [](RunConfig& c, const std::string& v) { c.field = to_double(v); }, \
   [](const RunConfig& c) { return fmt_double(c.field); }}
#define BIND_I(key, field)                                            \
  {key, [](RunConfig& c, const std::string& v) { c.field = to_int(v); },    \
   [](const RunConfig& c) { return std::to_string(c.field); }}
#define BIND_B(key, field)                                            \
  {key, [](RunConfig& c, const std::string& v) { c.field = to_bool(v); },   \
   [](const RunConfig& c) { return std::string(c.field ? "1" : "0"); }}
#define BIND_S(key, field)                                            \
  {key, [](RunConfig& c, const std::string& v) { c.field = v; },            \
   [](const RunConfig& c) { return c.field; }}

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> table = {
      BIND_D("scene.table_extent", scene.table_extent),
      BIND_D("scene.min_dim", scene.min_dim),
      BIND_D("scene.max_dim", scene.max_dim),
      BIND_D("scene.min_height", scene.min_height),
      BIND_D("scene.max_height", scene.max_height),
      BIND_I("scene.min_objects", scene.min_objects),
      BIND_I("scene.max_objects", scene.max_objects),
      BIND_D("scene.overlap_tolerance", scene.overlap_tolerance),
      BIND_I("scene.placement_retries", scene.placement_retries),
      BIND_S("scene.shapes", scene_shapes),
      BIND_S("scene.sampling", scene_sampling),
      BIND_D("camera.height", camera_height),
      BIND_D("camera.tilt_deg", camera_tilt_deg),
      BIND_I("camera.resolution", camera_resolution),
      BIND_D("camera.far_clip", camera_far_clip),
      BIND_D("hand.palm_radius", hand.palm_radius),
      BIND_D("hand.palm_half_thickness", hand.palm_half_thickness),
      BIND_D("hand.proximal_length", hand.proximal_length),
      BIND_D("hand.distal_length", hand.distal_length),
      BIND_D("hand.finger_radius", hand.finger_radius),
      BIND_D("hand.spread_limit", hand.spread_limit),
      BIND_D("hand.finger_joint_limit", hand.finger_joint_limit_closing),
      BIND_D("hand.pregrasp_joint_scale", hand.pregrasp_joint_scale),
      BIND_D("hand.approach_offset", hand.approach_offset),
      BIND_D("hand.distal_coupling", hand.distal_coupling),
      BIND_D("hand.close_step", hand.close_step),
      BIND_D("hand.surface_tolerance", hand.surface_tolerance),
      BIND_D("hand.friction_mu", hand.friction_mu),
      BIND_I("episode.max_zoom_steps", episode.max_zoom_steps),
      BIND_I("episode.scale_floor_px", episode.scale_floor_px),
      BIND_D("limits.scale_min", limits.scale_min),
      BIND_D("limits.scale_max", limits.scale_max),
      BIND_D("limits.sigma_min", limits.sigma_min),
      BIND_D("limits.sigma_max", limits.sigma_max),
      BIND_S("ablation.mode", ablation),
      BIND_S("net.preset", net_preset),
      BIND_B("net.value_head", net_value_head),
      BIND_D("net.input_offset", net_input_offset),
      BIND_D("net.input_gain", net_input_gain),
      BIND_D("ppo.lr", ppo.lr),
      BIND_I("ppo.epochs_per_batch", ppo.epochs_per_batch),
      BIND_I("ppo.actors", ppo.actors),
      BIND_I("ppo.batch_size", ppo.batch_size),
      BIND_I("ppo.minibatch", ppo.minibatch),
      BIND_D("ppo.gamma", ppo.gamma),
      BIND_D("ppo.gae_lambda", ppo.gae_lambda),
      BIND_D("ppo.clip_eps", ppo.clip_eps),
      BIND_D("ppo.grad_clip", ppo.grad_clip),
      BIND_D("ppo.entropy_coef", ppo.entropy_coef),
      BIND_D("ppo.adam_beta1", ppo.adam_beta1),
      BIND_D("ppo.adam_beta2", ppo.adam_beta2),
      BIND_D("ppo.adam_eps", ppo.adam_eps),
      BIND_B("ppo.use_gae", ppo.use_gae),
      BIND_D("ppo.value_coef", ppo.value_coef),
      BIND_B("ppo.normalize_advantages", ppo.normalize_advantages),
      BIND_I("ppo.grad_chunks", ppo.grad_chunks),
      BIND_I("ppo.total_batches", ppo.total_batches),
      BIND_I("ppo.checkpoint_every", ppo.checkpoint_every),
      BIND_I("ppo.baseline_episodes", ppo.baseline_episodes),
      BIND_B("ppo.log_wall_time", ppo.log_wall_time),
      {"seed",
       [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef BIND_D
#undef BIND_I
#undef BIND_B
#undef BIND_S

}  // namespace

AblationConfig ablation_from_name(const std::string& name) {
  AblationConfig ab;
  if (name == "none") return ab;
  if (name == "no_attention") {
    ab.no_attention = true;
  } else if (name == "top_down") {
    ab.top_down = true;
  } else if (name == "parallel") {
    ab.parallel = true;
  } else {
    throw std::runtime_error("unknown ablation mode: " + name);
  }
  return ab;
}

EnvConfig RunConfig::make_env() const {
  EnvConfig env;
  env.scene = scene;
  env.scene.allow_box = scene_shapes.find("box") != std::string::npos;
  env.scene.allow_sphere = scene_shapes.find("sphere") != std::string::npos;
  env.scene.allow_cylinder = scene_shapes.find("cylinder") != std::string::npos;
  if (scene_sampling == "mixed") {
    env.sampling = SceneSampling::kMixed;
  } else if (scene_sampling == "single") {
    env.sampling = SceneSampling::kSingle;
  } else if (scene_sampling == "cluttered") {
    env.sampling = SceneSampling::kCluttered;
  } else {
    throw std::runtime_error("unknown scene.sampling: " + scene_sampling);
  }
  env.camera = make_table_camera(camera_height, camera_tilt_deg,
                                 camera_resolution, scene.table_extent);
  env.camera.far_clip = camera_far_clip;
  env.hand = hand;
  env.episode = episode;
  env.episode.gamma = ppo.gamma;
  env.limits = limits;
  env.ablation = ablation_from_name(ablation);
  if (env.ablation.no_attention) env.episode.max_zoom_steps = 0;
  return env;
}

NetworkDescriptor RunConfig::make_descriptor() const {
  NetworkDescriptor d = NetworkDescriptor::preset(net_preset);
  d.value_head = net_value_head;
  d.input_offset = net_input_offset;
  d.input_gain = net_input_gain;
  return d;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const KeyBinding& b : bindings()) {
    if (b.key == key) {
      b.set(*this, value);
      return;
    }
  }
  throw std::runtime_error("unknown config key: " + key);
}

void RunConfig::echo(std::ostream& os) const {
  for (const KeyBinding& b : bindings()) {
    os << b.key << " = " << b.get(*this) << "\n";
  }
}

void parse_config_stream(std::istream& is, RunConfig& cfg) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // Trim.
    auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
    line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
    line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(),
               line.end());
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key = value");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
    value.erase(value.begin(),
                std::find_if(value.begin(), value.end(), notspace));
    cfg.set(key, value);
  }
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config " + path);
  RunConfig cfg;
  parse_config_stream(is, cfg);
  return cfg;
}

}  // namespace pixgrasp
