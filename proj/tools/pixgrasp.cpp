// Command-line front end: training, evaluation, rollout visualization,
// gradient verification and scene/render inspection.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "pixgrasp/gradcheck.hpp"
#include "pixgrasp/ppo.hpp"
#include "pixgrasp/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pixgrasp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerification = 3;

int resolve_threads(const PPOConfig& ppo) {
  if (const char* env = std::getenv("PIXGRASP_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return ppo.actors;
}

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = parse_config_file(config_path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("--set expects key=value, got: " + kv);
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

json window_json(const CropWindow& w) {
  return json{{"origin_row", w.origin_row},
              {"origin_col", w.origin_col},
              {"size_rows", w.size_rows},
              {"size_cols", w.size_cols},
              {"composed_scale", w.composed_scale}};
}

json action_json(const GraspAction& a) {
  return json{{"row", a.row},
              {"col", a.col},
              {"zoom", a.zoom},
              {"zoom_forced", a.zoom_forced},
              {"scale", a.scale},
              {"roll", a.roll},
              {"pitch", a.pitch},
              {"yaw", a.yaw},
              {"spread", a.spread},
              {"fingers", a.fingers},
              {"logp",
               {{"position", a.logp_position},
                {"zoom", a.logp_zoom},
                {"scale", a.logp_scale},
                {"rpy", a.logp_rpy},
                {"fingers", a.logp_fingers},
                {"total", a.logp_total}}}};
}

json oracle_json(const GraspDiagnostics& d) {
  json fingers = json::array();
  for (const FingerResult& fr : d.fingers) {
    json f{{"final_angle", fr.final_angle}};
    if (fr.contact) {
      f["contact"] = {
          {"primitive_id", fr.contact->primitive_id},
          {"point", {fr.contact->point.x(), fr.contact->point.y(), fr.contact->point.z()}},
          {"normal",
           {fr.contact->normal.x(), fr.contact->normal.y(), fr.contact->normal.z()}}};
    }
    fingers.push_back(f);
  }
  return json{{"outcome", outcome_name(d.outcome)},
              {"grasped_primitive", d.grasped_primitive},
              {"pair_normal_angle", d.pair_normal_angle},
              {"pair_span", d.pair_span},
              {"fingers", fingers}};
}

json transition_json(int t, const Transition& tr) {
  json rec{{"t", t},
           {"s_scale", tr.s_scale},
           {"window", window_json(tr.window)},
           {"action", action_json(tr.action)},
           {"reward", tr.reward},
           {"done", tr.done},
           {"forced_stop", tr.forced_stop}};
  if (tr.pose) {
    rec["pose"] = {{"position",
                    {tr.pose->position.x(), tr.pose->position.y(),
                     tr.pose->position.z()}},
                   {"roll", tr.pose->roll},
                   {"pitch", tr.pose->pitch},
                   {"yaw", tr.pose->yaw},
                   {"spread", tr.pose->spread},
                   {"fingers", tr.pose->fingers}};
  }
  if (tr.oracle) rec["oracle"] = oracle_json(*tr.oracle);
  return rec;
}

void draw_window_rect(DepthImage& img, const CropWindow& w, double value) {
  const int r0 = w.origin_row, r1 = w.origin_row + w.size_rows - 1;
  const int c0 = w.origin_col, c1 = w.origin_col + w.size_cols - 1;
  for (int c = c0; c <= c1; ++c) {
    img.at(r0, c) = value;
    img.at(r1, c) = value;
  }
  for (int r = r0; r <= r1; ++r) {
    img.at(r, c0) = value;
    img.at(r, c1) = value;
  }
}

int cmd_train(const std::string& config_path,
              const std::vector<std::string>& overrides, const std::string& out,
              std::int64_t seed_flag, const std::string& ablation_flag,
              bool resume) {
  RunConfig cfg = load_run_config(config_path, overrides);
  if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
  if (!ablation_flag.empty()) cfg.ablation = ablation_flag;

  const EnvConfig env = cfg.make_env();
  const NetworkDescriptor desc = cfg.make_descriptor();
  fs::create_directories(out);
  {
    std::ofstream echo(out + "/config.echo.txt");
    cfg.echo(echo);
  }
  const int threads = resolve_threads(cfg.ppo);
  const TrainResult result =
      train(env, cfg.ppo, desc, out, cfg.seed, threads, resume,
            [](int batch, const std::string& msg) {
              std::cout << "[batch " << batch << "] " << msg << std::endl;
            });
  std::cout << "trained " << result.batches_run << " batches, "
            << result.env_steps << " transitions; final batch success "
            << result.final_success_rate << "; checkpoint "
            << result.checkpoint_path << std::endl;
  if (result.halted_on_divergence) {
    std::cerr << "training halted on divergence" << std::endl;
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, int episodes, const std::string& mode,
             double camera_tilt, std::int64_t seed_flag,
             const std::string& config_path,
             const std::vector<std::string>& overrides, const std::string& out,
             bool stochastic) {
  RunConfig cfg = load_run_config(config_path, overrides);
  if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
  if (!mode.empty()) cfg.scene_sampling = mode;
  cfg.camera_tilt_deg = camera_tilt;

  const NetworkParams<float> params = load_checkpoint(checkpoint);
  EnvConfig env = cfg.make_env();
  const int threads = resolve_threads(cfg.ppo);

  std::vector<EpisodeResult> results;
  const EvalStats stats =
      evaluate_policy(params, env, env.episode, episodes, cfg.seed,
                      /*greedy=*/!stochastic, threads, &results);

  std::ostringstream report;
  report << "episodes " << stats.episodes << "\n"
         << "successes " << stats.successes << "\n"
         << "success_rate " << std::setprecision(10) << stats.success_rate
         << " +/- " << stats.ci_halfwidth << " (95% binomial)\n"
         << "mean_episode_length " << stats.mean_episode_length << "\n"
         << "mean_zoom_depth " << stats.mean_zoom_depth << "\n"
         << "forced_stop_rate " << stats.forced_stop_rate << "\n";
  std::cout << report.str();

  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream rep(out + "/eval_report.txt");
    rep << report.str();
    std::ofstream log(out + "/eval_log.jsonl");
    for (std::size_t i = 0; i < results.size(); ++i) {
      json rec{{"episode", i},
               {"success", results[i].success},
               {"length", results[i].transitions.size()},
               {"zoom_steps", results[i].zoom_steps},
               {"forced_stop", results[i].forced_stop}};
      const Transition& last = results[i].transitions.back();
      if (last.oracle) rec["outcome"] = outcome_name(last.oracle->outcome);
      if (last.pose) {
        rec["grasp_position"] = {last.pose->position.x(), last.pose->position.y(),
                                 last.pose->position.z()};
      }
      log << rec.dump() << "\n";
    }
  }
  return kExitOk;
}

int cmd_rollout(const std::string& checkpoint, std::int64_t seed_flag,
                const std::string& dump, const std::string& config_path,
                const std::vector<std::string>& overrides) {
  RunConfig cfg = load_run_config(config_path, overrides);
  const std::uint64_t seed =
      seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : cfg.seed;

  const NetworkParams<float> params = load_checkpoint(checkpoint);
  EnvConfig env = cfg.make_env();

  const std::uint64_t ep_seed = Rng::derive(seed, 0, 0x01);
  SceneMode mode = env.sampling == SceneSampling::kSingle ? SceneMode::kSingle
                   : env.sampling == SceneSampling::kCluttered
                       ? SceneMode::kCluttered
                       : sample_mode(ep_seed);
  const Scene scene = generate_scene(ep_seed, mode, env.scene);
  const DepthImage native = render_depth(scene, env.camera);

  Rng act_rng(Rng::derive(seed, 0, 0x02));
  const EpisodeResult ep =
      run_episode(scene, env.camera, env.hand, params, env.episode, env.limits,
                  env.ablation, act_rng, /*greedy=*/false, nullptr, &native);

  fs::create_directories(dump);
  save_scene(dump + "/scene.txt", scene);
  std::ofstream log(dump + "/rollout.jsonl");
  DepthImage annotated = native;
  const int r = params.descriptor.resolution;
  for (std::size_t t = 0; t < ep.transitions.size(); ++t) {
    const Transition& tr = ep.transitions[t];
    // Per-step cropped view, reconstructed from the stored float grid.
    DepthImage step;
    step.rows = r;
    step.cols = r;
    step.window = tr.window;
    step.data.assign(tr.obs_depth.begin(), tr.obs_depth.end());
    std::ostringstream name;
    name << dump << "/step_" << std::setw(3) << std::setfill('0') << t;
    write_pgm16(name.str() + ".pgm", step);
    write_window_sidecar(name.str() + ".window.txt", tr.window);
    draw_window_rect(annotated, tr.window, 65.535);
    log << transition_json(static_cast<int>(t), tr).dump() << "\n";
  }
  write_pgm16(dump + "/native_annotated.pgm", annotated);

  std::cout << "episode length " << ep.transitions.size() << ", zooms "
            << ep.zoom_steps << ", success " << (ep.success ? 1 : 0)
            << ", dump in " << dump << std::endl;
  return kExitOk;
}

int cmd_gradcheck(const std::string& size, bool single_precision) {
  const GradCheckReport report = run_gradcheck(size, !single_precision);
  std::cout << "gradcheck size=" << size
            << " precision=" << (single_precision ? "single" : "double")
            << (report.subsampled ? " (subsampled)" : "") << "\n";
  for (const GradCheckEntry& e : report.per_layer) {
    std::cout << "  " << std::left << std::setw(18) << e.layer_type
              << " max_rel_err " << std::scientific << std::setprecision(3)
              << e.max_rel_err << std::defaultfloat << "  (" << e.params_checked
              << " params)\n";
  }
  std::cout << "  overall max_rel_err " << std::scientific
            << std::setprecision(3) << report.max_rel_err << std::defaultfloat
            << " over " << report.params_checked << " params in "
            << std::setprecision(2) << report.runtime_seconds << " s\n";
  const double threshold = single_precision ? 2e-1 : 1e-4;
  if (!report.pass(threshold)) {
    std::cout << "FAIL (threshold " << threshold << ")\n";
    return kExitVerification;
  }
  std::cout << "PASS (threshold " << threshold << ")\n";
  return kExitOk;
}

int cmd_render(std::int64_t seed_flag, const std::string& mode,
               const std::string& out, const std::string& config_path,
               const std::vector<std::string>& overrides) {
  RunConfig cfg = load_run_config(config_path, overrides);
  const std::uint64_t seed =
      seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : cfg.seed;
  const SceneMode m = mode == "single" ? SceneMode::kSingle : SceneMode::kCluttered;
  EnvConfig env = cfg.make_env();
  const Scene scene = generate_scene(seed, m, env.scene);
  const DepthImage img = render_depth(scene, env.camera);

  fs::create_directories(out);
  write_pgm16(out + "/depth.pgm", img);
  write_window_sidecar(out + "/depth.window.txt", img.window);
  save_scene(out + "/scene.txt", scene);
  std::cout << "rendered " << scene.primitives.size() << " primitives to " << out
            << (scene.placement_incomplete ? " (placement incomplete)" : "")
            << std::endl;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pixel-attentive policy-gradient grasping"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, dump_dir;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  std::string ablation, mode, size = "toy";
  int episodes = 500;
  double camera_tilt = 0.0;
  bool resume = false, stochastic = false, single_precision = false;

  auto* train_cmd = app.add_subcommand("train", "run PPO training");
  train_cmd->add_option("--config", config_path, "key=value config file");
  train_cmd->add_option("--set", overrides, "override: key=value")->take_all();
  train_cmd->add_option("--out", out_dir, "run directory")->required();
  train_cmd->add_option("--seed", seed, "seed override");
  train_cmd->add_option("--ablation", ablation,
                        "none|no_attention|top_down|parallel");
  train_cmd->add_flag("--resume", resume, "resume from latest checkpoint");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--episodes", episodes);
  eval_cmd->add_option("--mode", mode, "single|cluttered|mixed");
  eval_cmd->add_option("--camera-tilt", camera_tilt, "degrees off vertical");
  eval_cmd->add_option("--seed", seed);
  eval_cmd->add_option("--config", config_path);
  eval_cmd->add_option("--set", overrides)->take_all();
  eval_cmd->add_option("--out", out_dir, "write report + per-episode log here");
  eval_cmd->add_flag("--stochastic", stochastic, "sample instead of greedy");

  auto* rollout_cmd = app.add_subcommand("rollout", "dump one episode");
  rollout_cmd->add_option("--checkpoint", checkpoint)->required();
  rollout_cmd->add_option("--seed", seed);
  rollout_cmd->add_option("--dump", dump_dir)->required();
  rollout_cmd->add_option("--config", config_path);
  rollout_cmd->add_option("--set", overrides)->take_all();

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference suite");
  gradcheck_cmd->add_option("--size", size, "toy|default");
  gradcheck_cmd->add_flag("--single-precision", single_precision);

  auto* render_cmd = app.add_subcommand("render", "render a seeded scene");
  render_cmd->add_option("--seed", seed);
  render_cmd->add_option("--mode", mode, "single|cluttered")->required();
  render_cmd->add_option("--out", out_dir)->required();
  render_cmd->add_option("--config", config_path);
  render_cmd->add_option("--set", overrides)->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      return cmd_train(config_path, overrides, out_dir, seed, ablation, resume);
    }
    if (eval_cmd->parsed()) {
      return cmd_eval(checkpoint, episodes, mode, camera_tilt, seed, config_path,
                      overrides, out_dir, stochastic);
    }
    if (rollout_cmd->parsed()) {
      return cmd_rollout(checkpoint, seed, dump_dir, config_path, overrides);
    }
    if (gradcheck_cmd->parsed()) {
      return cmd_gradcheck(size, single_precision);
    }
    if (render_cmd->parsed()) {
      return cmd_render(seed, mode, out_dir, config_path, overrides);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    const std::string what = e.what();
    if (what.find("config") != std::string::npos ||
        what.find("unknown") != std::string::npos) {
      return kExitUsage;
    }
    return kExitRuntime;
  }
  return kExitUsage;
}
