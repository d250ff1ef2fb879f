#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pixgrasp/episode.hpp"

namespace pixgrasp {

// Published hyperparameters plus the artifact's run-control knobs.
struct PPOConfig {
  double lr = 1e-4;
  int epochs_per_batch = 10;
  int actors = 14;
  int batch_size = 500;  // transitions; whole episodes are never split
  int minibatch = 96;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double grad_clip = 20.0;  // global norm
  double entropy_coef = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Default advantage estimate is the baseline-free return-to-go; GAE with a
  // learned value head is available behind this flag.
  bool use_gae = false;
  double value_coef = 0.5;
  bool normalize_advantages = false;
  // Deterministic fan-out: gradients are summed over this many fixed chunks
  // in order, so results do not depend on the worker count.
  int grad_chunks = 16;
  // Run control.
  int total_batches = 300;
  int checkpoint_every = 25;
  int baseline_episodes = 500;
  bool log_wall_time = true;
};

// How collect_batch draws scenes each episode.
enum class SceneSampling { kMixed, kSingle, kCluttered };

// Everything an actor needs to run an episode.
struct EnvConfig {
  SceneConfig scene;
  SceneSampling sampling = SceneSampling::kMixed;
  CameraModel camera;
  HandModel hand;
  EpisodeConfig episode;
  SampleLimits limits;
  AblationConfig ablation;
};

struct CollectedEpisode {
  std::uint64_t index = 0;
  std::vector<Transition> transitions;
};

struct Batch {
  std::vector<CollectedEpisode> episodes;
  // Filled by compute_returns, episode-major transition order.
  std::vector<double> returns;
  std::vector<double> advantages;
  std::size_t num_transitions() const;
};

struct BatchStats {
  double success_rate = 0.0;
  double mean_episode_length = 0.0;
  double mean_zoom_depth = 0.0;
  double forced_stop_rate = 0.0;
};

struct UpdateStats {
  double surrogate = 0.0;      // mean clipped objective over the batch
  double clip_fraction = 0.0;  // |ratio - 1| > eps
  double approx_kl = 0.0;
  double grad_norm = 0.0;      // mean pre-clip global norm across minibatches
  double entropy = 0.0;
  bool diverged = false;
};

struct EvalStats {
  int episodes = 0;
  int successes = 0;
  double success_rate = 0.0;
  double ci_halfwidth = 0.0;  // 95% normal-approximation interval
  double mean_episode_length = 0.0;
  double mean_zoom_depth = 0.0;
  double forced_stop_rate = 0.0;
};

// Episode seeds derive from (seed, episode index), so the collected data is
// identical for any actor count: episodes are claimed by index and the batch
// is cut at the first index prefix reaching batch_size transitions.
Batch collect_batch(const NetworkParams<float>& params, const EnvConfig& env,
                    const PPOConfig& cfg, std::uint64_t seed,
                    std::uint64_t first_episode_index, int threads);

BatchStats batch_stats(const Batch& batch);

// Default: discounted return-to-go as both return and advantage (the paper
// opts out of baseline subtraction). With use_gae, `values` supplies V(s) per
// transition in episode-major order.
void compute_returns(Batch& batch, const PPOConfig& cfg,
                     const std::vector<double>* values = nullptr);

// Loss/grad of the clipped-PPO surrogate over a set of transitions, used by
// ppo_update minibatches and the finite-difference checks. Returns the mean
// loss; accumulates parameter gradients.
template <typename T>
struct SurrogateStats {
  double loss = 0.0;
  double surrogate = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
};

template <typename T>
SurrogateStats<T> surrogate_loss_and_grad(
    const NetworkParams<T>& params, const Batch& batch,
    const std::vector<std::size_t>& indices, const PPOConfig& cfg,
    const EnvConfig& env, Gradients<T>& grads, int threads);

// Adam with per-tensor moments.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(const NetworkParams<T>& params, const PPOConfig& cfg);
  void step(NetworkParams<T>& params, const Gradients<T>& grads);
  int64_t iterations() const { return t_; }
  // Checkpoint support.
  std::map<std::string, Tensor<float>> state() const;
  void restore(const NetworkParams<T>& params, const PPOConfig& cfg,
               const std::map<std::string, Tensor<float>>& state, int64_t t);

 private:
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::map<std::string, Tensor<double>> m_, v_;
};

// One PPO update: epochs_per_batch passes of shuffled minibatches, global
// norm clipping at grad_clip, Adam steps. Restores the pre-update snapshot
// and reports diverged=true if anything goes non-finite.
UpdateStats ppo_update(NetworkParams<float>& params, AdamOptimizer<float>& opt,
                       const Batch& batch, const PPOConfig& cfg,
                       const EnvConfig& env, std::uint64_t shuffle_seed,
                       int threads);

// Greedy (or stochastic) policy evaluation over fresh scenes.
EvalStats evaluate_policy(const NetworkParams<float>& params,
                          const EnvConfig& env, const EpisodeConfig& episode,
                          int episodes, std::uint64_t seed, bool greedy,
                          int threads,
                          std::vector<EpisodeResult>* out_episodes = nullptr);

struct TrainResult {
  int batches_run = 0;
  std::uint64_t env_steps = 0;
  double final_success_rate = 0.0;  // last batch's stochastic rate
  double baseline_success_rate = 0.0;
  bool halted_on_divergence = false;
  std::string checkpoint_path;
};

inline const char* kMetricsHeader =
    "batch,env_steps,success_rate,mean_ep_len,mean_zoom_depth,"
    "forced_stop_rate,surrogate,clip_frac,approx_kl,grad_norm,wall_s";

// Full training loop: alternates collection and updates, writes metrics.csv
// and periodic checkpoints under run_dir, resumes from ckpt_latest if asked.
TrainResult train(const EnvConfig& env, const PPOConfig& cfg,
                  const NetworkDescriptor& descriptor, const std::string& run_dir,
                  std::uint64_t seed, int threads, bool resume,
                  const std::function<void(int, const std::string&)>& log =
                      nullptr);

}  // namespace pixgrasp
