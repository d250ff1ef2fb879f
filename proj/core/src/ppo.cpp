#include "pixgrasp/ppo.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <limits>
#include <thread>

namespace pixgrasp {

namespace {

constexpr std::uint64_t kTagScene = 0x01;
constexpr std::uint64_t kTagAction = 0x02;
constexpr std::uint64_t kTagShuffle = 0x03;
constexpr std::uint64_t kTagBaseline = 0x04;

SceneMode episode_mode(const EnvConfig& env, std::uint64_t episode_seed) {
  if (env.sampling == SceneSampling::kSingle) return SceneMode::kSingle;
  if (env.sampling == SceneSampling::kCluttered) return SceneMode::kCluttered;
  return sample_mode(episode_seed);
}

}  // namespace

std::size_t Batch::num_transitions() const {
  std::size_t n = 0;
  for (const CollectedEpisode& ep : episodes) n += ep.transitions.size();
  return n;
}

Batch collect_batch(const NetworkParams<float>& params, const EnvConfig& env,
                    const PPOConfig& cfg, std::uint64_t seed,
                    std::uint64_t first_episode_index, int threads) {
  std::mutex mu;
  std::map<std::uint64_t, CollectedEpisode> completed;
  std::uint64_t next_index = first_episode_index;
  bool stop = false;
  std::uint64_t cutoff = 0;
  bool have_cutoff = false;

  auto recompute_prefix = [&]() {
    // Find the smallest contiguous index prefix whose transition count
    // reaches the batch size; the batch is exactly that prefix.
    std::size_t total = 0;
    for (std::uint64_t idx = first_episode_index;; ++idx) {
      auto it = completed.find(idx);
      if (it == completed.end()) return;
      total += it->second.transitions.size();
      if (total >= static_cast<std::size_t>(cfg.batch_size)) {
        cutoff = idx;
        have_cutoff = true;
        stop = true;
        return;
      }
    }
  };

  std::string worker_error;
  auto worker = [&]() {
    ForwardCache<float> cache;
    try {
      while (true) {
        std::uint64_t idx;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (stop) return;
          idx = next_index++;
        }
        const std::uint64_t ep_seed = Rng::derive(seed, idx, kTagScene);
        const Scene scene =
            generate_scene(ep_seed, episode_mode(env, ep_seed), env.scene);
        Rng act_rng(Rng::derive(seed, idx, kTagAction));
        EpisodeResult ep = run_episode(scene, env.camera, env.hand, params,
                                       env.episode, env.limits, env.ablation,
                                       act_rng, /*greedy=*/false, &cache);
        {
          std::lock_guard<std::mutex> lock(mu);
          CollectedEpisode ce;
          ce.index = idx;
          ce.transitions = std::move(ep.transitions);
          completed.emplace(idx, std::move(ce));
          if (!have_cutoff) recompute_prefix();
        }
      }
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu);
      if (worker_error.empty()) worker_error = e.what();
      stop = true;
    }
  };

  const int n_threads = std::max(1, threads);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (!worker_error.empty()) {
    throw std::runtime_error("collect_batch: " + worker_error);
  }

  Batch batch;
  for (std::uint64_t idx = first_episode_index; idx <= cutoff; ++idx) {
    batch.episodes.push_back(std::move(completed.at(idx)));
  }
  return batch;
}

BatchStats batch_stats(const Batch& batch) {
  BatchStats s;
  if (batch.episodes.empty()) return s;
  double successes = 0, lengths = 0, zooms = 0, forced = 0;
  for (const CollectedEpisode& ep : batch.episodes) {
    lengths += static_cast<double>(ep.transitions.size());
    zooms += static_cast<double>(ep.transitions.size()) - 1.0;
    const Transition& last = ep.transitions.back();
    successes += last.reward;
    forced += last.forced_stop ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(batch.episodes.size());
  s.success_rate = successes / n;
  s.mean_episode_length = lengths / n;
  s.mean_zoom_depth = zooms / n;
  s.forced_stop_rate = forced / n;
  return s;
}

void compute_returns(Batch& batch, const PPOConfig& cfg,
                     const std::vector<double>* values) {
  const std::size_t n = batch.num_transitions();
  batch.returns.assign(n, 0.0);
  batch.advantages.assign(n, 0.0);
  if (values && values->size() != n) {
    throw std::runtime_error("compute_returns: values size mismatch");
  }

  std::size_t base = 0;
  for (const CollectedEpisode& ep : batch.episodes) {
    const std::size_t len = ep.transitions.size();
    if (len == 0 || !ep.transitions.back().done) {
      throw std::runtime_error("compute_returns: incomplete episode");
    }
    // Discounted return-to-go.
    double running = 0.0;
    for (std::size_t t = len; t-- > 0;) {
      running = ep.transitions[t].reward + cfg.gamma * running;
      batch.returns[base + t] = running;
    }
    if (cfg.use_gae) {
      double gae = 0.0;
      for (std::size_t t = len; t-- > 0;) {
        const double v = values ? (*values)[base + t] : 0.0;
        const double v_next =
            (t + 1 < len) ? (values ? (*values)[base + t + 1] : 0.0) : 0.0;
        const double not_done = ep.transitions[t].done ? 0.0 : 1.0;
        const double delta =
            ep.transitions[t].reward + cfg.gamma * v_next * not_done - v;
        gae = delta + cfg.gamma * cfg.gae_lambda * not_done * gae;
        batch.advantages[base + t] = gae;
      }
    } else {
      for (std::size_t t = 0; t < len; ++t) {
        batch.advantages[base + t] = batch.returns[base + t];
      }
    }
    base += len;
  }

  if (cfg.normalize_advantages && n > 1) {
    double mean = 0.0;
    for (double a : batch.advantages) mean += a;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double a : batch.advantages) var += (a - mean) * (a - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / (std::sqrt(var) + 1e-8);
    for (double& a : batch.advantages) a = (a - mean) * inv;
  }
}

namespace {

// Flattened view of the batch in episode-major order.
struct FlatBatch {
  std::vector<const Transition*> transitions;

  explicit FlatBatch(const Batch& batch) {
    transitions.reserve(batch.num_transitions());
    for (const CollectedEpisode& ep : batch.episodes) {
      for (const Transition& tr : ep.transitions) transitions.push_back(&tr);
    }
  }
};

// Entropy gradient terms (only consulted when entropy_coef != 0).
template <typename T>
void entropy_grad(const ActionMaps<T>& maps, const Tensor<T>& log_std,
                  const GraspAction& action, const SampleLimits& limits,
                  const AblationConfig& ablation, double upstream,
                  Tensor<T>& maps_grad, std::array<double, 8>& log_std_grad) {
  const int r = maps.resolution;
  const int n = r * r;
  const T* logits = maps.channel(0);
  double mx = static_cast<double>(logits[0]);
  for (int i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
  const double logz = mx + std::log(sum);
  double h = 0.0;
  for (int i = 0; i < n; ++i) {
    const double lp = static_cast<double>(logits[i]) - logz;
    h -= std::exp(lp) * lp;
  }
  T* g = maps_grad.ptr();
  for (int i = 0; i < n; ++i) {
    const double lp = static_cast<double>(logits[i]) - logz;
    const double p = std::exp(lp);
    g[i] += static_cast<T>(-upstream * p * (lp + h));
  }
  if (!ablation.no_attention) {
    const int pix = action.row * r + action.col;
    const double logit = static_cast<double>(maps.channel(1)[pix]);
    const double s = 1.0 / (1.0 + std::exp(-logit));
    maps_grad.ptr()[static_cast<std::size_t>(n) + pix] +=
        static_cast<T>(upstream * s * (1.0 - s) *
                       (std::log1p(-s) - std::log(s)));
  }
  auto sigma_grad = [&](int comp) {
    const double ls = static_cast<double>(log_std.data[static_cast<std::size_t>(comp)]);
    const double sg = std::exp(ls);
    if (sg > limits.sigma_min && sg < limits.sigma_max) {
      log_std_grad[static_cast<std::size_t>(comp)] += upstream;  // dH/dlog_std = 1
    }
  };
  if (action.zoom) {
    sigma_grad(kScale);
  } else {
    for (int comp = kRoll; comp <= kFinger3; ++comp) {
      if ((ablation.top_down && comp == kPitch) ||
          (ablation.parallel && comp == kSpread)) {
        continue;
      }
      sigma_grad(comp);
    }
  }
}

}  // namespace

template <typename T>
SurrogateStats<T> surrogate_loss_and_grad(
    const NetworkParams<T>& params, const Batch& batch,
    const std::vector<std::size_t>& indices, const PPOConfig& cfg,
    const EnvConfig& env, Gradients<T>& grads, int threads) {
  const FlatBatch flat(batch);
  const std::size_t m = indices.size();
  const int chunks = std::max(1, std::min<int>(cfg.grad_chunks,
                                               static_cast<int>(m)));
  const double inv_m = 1.0 / static_cast<double>(m);
  const Tensor<T>& log_std = params.at("log_std");
  const bool value_on = cfg.use_gae && params.descriptor.value_head;

  struct ChunkResult {
    Gradients<T> grads;
    double loss = 0.0, surrogate = 0.0, clip = 0.0, kl = 0.0, entropy = 0.0;
  };
  std::vector<ChunkResult> results(static_cast<std::size_t>(chunks));
  for (auto& rcd : results) rcd.grads = zero_gradients(params);

  std::atomic<int> next_chunk{0};
  std::atomic<bool> failed{false};
  auto worker = [&]() {
    ForwardCache<T> cache;
    Tensor<T> maps_grad;
    while (true) {
      const int c = next_chunk.fetch_add(1);
      if (c >= chunks || failed.load()) return;
      ChunkResult& rcd = results[static_cast<std::size_t>(c)];
      const std::size_t lo = m * static_cast<std::size_t>(c) / static_cast<std::size_t>(chunks);
      const std::size_t hi =
          m * (static_cast<std::size_t>(c) + 1) / static_cast<std::size_t>(chunks);
      try {
        for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t idx = indices[k];
        const Transition& tr = *flat.transitions[idx];
        const ActionMaps<T> maps = [&] {
          if constexpr (std::is_same_v<T, float>) {
            return forward(params, tr.obs_depth.data(), tr.s_scale, &cache);
          } else {
            std::vector<T> obs(tr.obs_depth.begin(), tr.obs_depth.end());
            return forward(params, obs.data(), tr.s_scale, &cache);
          }
        }();
        const double logp_new =
            logp_of(maps, log_std, tr.action, env.limits, env.ablation);
        const double logp_old = tr.action.logp_total;
        const double log_ratio = logp_new - logp_old;
        const double ratio = std::exp(log_ratio);
        const double adv = batch.advantages[idx];

        const double clipped =
            std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        const double term = std::min(ratio * adv, clipped * adv);
        rcd.surrogate += term;
        rcd.loss += -term;
        if (std::abs(ratio - 1.0) > cfg.clip_eps) rcd.clip += 1.0;
        rcd.kl += (ratio - 1.0) - log_ratio;

        const bool clip_active = (adv > 0.0 && ratio > 1.0 + cfg.clip_eps) ||
                                 (adv < 0.0 && ratio < 1.0 - cfg.clip_eps);
        const double upstream = clip_active ? 0.0 : -adv * ratio * inv_m;

        maps_grad.resize({10, maps.resolution, maps.resolution});
        maps_grad.zero();
        std::array<double, 8> lsg{};
        if (upstream != 0.0) {
          logp_grad(maps, log_std, tr.action, env.limits, env.ablation, upstream,
                    maps_grad, lsg);
        }
        const double h = entropy_estimate(maps, log_std, tr.action, env.limits,
                                          env.ablation);
        rcd.entropy += h;
        if (cfg.entropy_coef != 0.0) {
          rcd.loss += -cfg.entropy_coef * h;
          entropy_grad(maps, log_std, tr.action, env.limits, env.ablation,
                       -cfg.entropy_coef * inv_m, maps_grad, lsg);
        }

        T value_grad = T(0);
        if (value_on) {
          const double diff =
              static_cast<double>(maps.value) - batch.returns[idx];
          rcd.loss += cfg.value_coef * diff * diff;
          value_grad = static_cast<T>(2.0 * cfg.value_coef * diff * inv_m);
        }

        backward(params, cache, maps_grad, value_grad, rcd.grads);
        T* ls_grad = rcd.grads.tensors.at("log_std").ptr();
        for (int i = 0; i < 8; ++i) {
          ls_grad[i] += static_cast<T>(lsg[static_cast<std::size_t>(i)]);
        }
        }
      } catch (const std::exception&) {
        // Non-finite activations during a diverging update surface as a
        // poisoned loss; ppo_update rolls back.
        rcd.loss = std::numeric_limits<double>::quiet_NaN();
        failed.store(true);
        return;
      }
    }
  };

  const int n_threads = std::max(1, std::min(threads, chunks));
  std::vector<std::thread> pool;
  for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();

  SurrogateStats<T> stats;
  for (int c = 0; c < chunks; ++c) {
    const ChunkResult& rcd = results[static_cast<std::size_t>(c)];
    grads.add_scaled(rcd.grads, T(1));
    stats.loss += rcd.loss;
    stats.surrogate += rcd.surrogate;
    stats.clip_fraction += rcd.clip;
    stats.approx_kl += rcd.kl;
    stats.entropy += rcd.entropy;
  }
  stats.loss *= inv_m;
  stats.surrogate *= inv_m;
  stats.clip_fraction *= inv_m;
  stats.approx_kl *= inv_m;
  stats.entropy *= inv_m;
  return stats;
}

template <typename T>
AdamOptimizer<T>::AdamOptimizer(const NetworkParams<T>& params,
                                const PPOConfig& cfg)
    : lr_(cfg.lr),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_eps) {
  for (const auto& [name, t] : params.tensors) {
    Tensor<double> z;
    z.dims = t.dims;
    z.rank = t.rank;
    z.data.assign(t.data.size(), 0.0);
    m_[name] = z;
    v_[name] = std::move(z);
  }
}

template <typename T>
void AdamOptimizer<T>::step(NetworkParams<T>& params, const Gradients<T>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params.tensors) {
    const Tensor<T>& g = grads.tensors.at(name);
    Tensor<double>& m = m_.at(name);
    Tensor<double>& v = v_.at(name);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gi = static_cast<double>(g.data[i]);
      m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * gi;
      v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) -
                                 lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

template <typename T>
std::map<std::string, Tensor<float>> AdamOptimizer<T>::state() const {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, t] : m_) out["adam_m." + name] = t.template cast<float>();
  for (const auto& [name, t] : v_) out["adam_v." + name] = t.template cast<float>();
  return out;
}

template <typename T>
void AdamOptimizer<T>::restore(const NetworkParams<T>& params,
                               const PPOConfig& cfg,
                               const std::map<std::string, Tensor<float>>& state,
                               int64_t t) {
  *this = AdamOptimizer<T>(params, cfg);
  t_ = t;
  for (auto& [name, m] : m_) {
    auto it = state.find("adam_m." + name);
    if (it != state.end()) m = it->second.template cast<double>();
  }
  for (auto& [name, v] : v_) {
    auto it = state.find("adam_v." + name);
    if (it != state.end()) v = it->second.template cast<double>();
  }
}

UpdateStats ppo_update(NetworkParams<float>& params, AdamOptimizer<float>& opt,
                       const Batch& batch, const PPOConfig& cfg,
                       const EnvConfig& env, std::uint64_t shuffle_seed,
                       int threads) {
  const std::size_t n = batch.num_transitions();
  if (batch.advantages.size() != n) {
    throw std::runtime_error("ppo_update: compute_returns must run first");
  }

  // Snapshot for divergence rollback.
  const NetworkParams<float> snapshot = params;
  const AdamOptimizer<float> opt_snapshot = opt;

  Rng rng(shuffle_seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  UpdateStats stats;
  double weight_total = 0.0;
  int minibatches = 0;
  Gradients<float> grads = zero_gradients(params);

  for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
    // Fisher-Yates with the trainer stream.
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.minibatch));
      const std::vector<std::size_t> mb(order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(end));
      grads.zero();
      const SurrogateStats<float> s =
          surrogate_loss_and_grad(params, batch, mb, cfg, env, grads, threads);

      bool finite = std::isfinite(s.loss);
      if (finite) {
        for (const auto& [name, g] : grads.tensors) {
          for (const float v : g.data) {
            if (!std::isfinite(v)) {
              finite = false;
              break;
            }
          }
          if (!finite) break;
        }
      }
      if (!finite) {
        params = snapshot;
        opt = opt_snapshot;
        stats.diverged = true;
        return stats;
      }

      const double norm = std::sqrt(grads.squared_norm());
      if (norm > cfg.grad_clip) {
        grads.scale(static_cast<float>(cfg.grad_clip / norm));
      }
      opt.step(params, grads);

      const double w = static_cast<double>(mb.size());
      stats.surrogate += s.surrogate * w;
      stats.clip_fraction += s.clip_fraction * w;
      stats.approx_kl += s.approx_kl * w;
      stats.entropy += s.entropy * w;
      stats.grad_norm += norm;
      weight_total += w;
      ++minibatches;
    }
  }
  if (weight_total > 0.0) {
    stats.surrogate /= weight_total;
    stats.clip_fraction /= weight_total;
    stats.approx_kl /= weight_total;
    stats.entropy /= weight_total;
  }
  if (minibatches > 0) stats.grad_norm /= minibatches;
  return stats;
}

EvalStats evaluate_policy(const NetworkParams<float>& params,
                          const EnvConfig& env, const EpisodeConfig& episode,
                          int episodes, std::uint64_t seed, bool greedy,
                          int threads, std::vector<EpisodeResult>* out_episodes) {
  EvalStats stats;
  stats.episodes = episodes;
  if (episodes <= 0) return stats;

  std::vector<EpisodeResult> results(static_cast<std::size_t>(episodes));
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::string worker_error;
  auto worker = [&]() {
    ForwardCache<float> cache;
    try {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= episodes) return;
        const std::uint64_t ep_seed =
            Rng::derive(seed, static_cast<std::uint64_t>(i), kTagScene);
        const Scene scene =
            generate_scene(ep_seed, episode_mode(env, ep_seed), env.scene);
        Rng act_rng(Rng::derive(seed, static_cast<std::uint64_t>(i), kTagAction));
        results[static_cast<std::size_t>(i)] =
            run_episode(scene, env.camera, env.hand, params, episode, env.limits,
                        env.ablation, act_rng, greedy, &cache);
      }
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(err_mu);
      if (worker_error.empty()) worker_error = e.what();
      next.store(episodes);
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < std::max(1, threads); ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (!worker_error.empty()) {
    throw std::runtime_error("evaluate_policy: " + worker_error);
  }

  double lengths = 0, zooms = 0, forced = 0;
  for (const EpisodeResult& ep : results) {
    stats.successes += ep.success ? 1 : 0;
    lengths += static_cast<double>(ep.transitions.size());
    zooms += ep.zoom_steps;
    forced += ep.forced_stop ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(episodes);
  stats.success_rate = stats.successes / n;
  stats.ci_halfwidth =
      1.96 * std::sqrt(stats.success_rate * (1.0 - stats.success_rate) / n);
  stats.mean_episode_length = lengths / n;
  stats.mean_zoom_depth = zooms / n;
  stats.forced_stop_rate = forced / n;
  if (out_episodes) *out_episodes = std::move(results);
  return stats;
}

namespace {

std::vector<double> compute_values(const NetworkParams<float>& params,
                                   const Batch& batch, int threads) {
  const FlatBatch flat(batch);
  std::vector<double> values(flat.transitions.size(), 0.0);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    ForwardCache<float> cache;
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= flat.transitions.size()) return;
      const Transition& tr = *flat.transitions[i];
      const ActionMaps<float> maps =
          forward(params, tr.obs_depth.data(), tr.s_scale, &cache);
      values[i] = static_cast<double>(maps.value);
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < std::max(1, threads); ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  return values;
}

std::string format_metric(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

TrainResult train(const EnvConfig& env, const PPOConfig& cfg,
                  const NetworkDescriptor& descriptor, const std::string& run_dir,
                  std::uint64_t seed, int threads, bool resume,
                  const std::function<void(int, const std::string&)>& log) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  fs::create_directories(run_dir + "/checkpoints");
  const std::string metrics_path = run_dir + "/metrics.csv";
  const std::string latest_path = run_dir + "/checkpoints/ckpt_latest.pxgr";

  TrainResult result;
  NetworkParams<float> params;
  AdamOptimizer<float> opt;
  int start_batch = 0;
  std::uint64_t env_steps = 0;
  std::uint64_t episode_counter = 0;

  std::ofstream metrics;
  if (resume && fs::exists(latest_path)) {
    std::map<std::string, Tensor<float>> extra;
    params = load_checkpoint(latest_path, &extra);
    const auto meta_it = extra.find("meta");
    if (meta_it == extra.end()) {
      throw std::runtime_error("resume checkpoint missing meta entry");
    }
    start_batch = static_cast<int>(meta_it->second.data.at(0));
    env_steps = static_cast<std::uint64_t>(meta_it->second.data.at(1));
    episode_counter = static_cast<std::uint64_t>(meta_it->second.data.at(2));
    const auto adam_t = static_cast<int64_t>(meta_it->second.data.at(3));
    opt.restore(params, cfg, extra, adam_t);
    metrics.open(metrics_path, std::ios::app);
  } else {
    params = init_params<float>(descriptor, seed);
    opt = AdamOptimizer<float>(params, cfg);
    metrics.open(metrics_path);
    metrics << kMetricsHeader << "\n";
    // Batch-0 row: greedy baseline of the untrained policy.
    const EvalStats baseline = evaluate_policy(
        params, env, env.episode, cfg.baseline_episodes,
        Rng::derive(seed, 0, kTagBaseline), /*greedy=*/true, threads);
    result.baseline_success_rate = baseline.success_rate;
    metrics << 0 << ",0," << format_metric(baseline.success_rate) << ","
            << format_metric(baseline.mean_episode_length) << ","
            << format_metric(baseline.mean_zoom_depth) << ","
            << format_metric(baseline.forced_stop_rate) << ",0,0,0,0,"
            << format_metric(0.0) << "\n";
    metrics.flush();
    if (log) {
      std::ostringstream os;
      os << "baseline greedy success " << baseline.success_rate << " over "
         << cfg.baseline_episodes << " episodes";
      log(0, os.str());
    }
  }
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path);

  auto save_latest = [&](int batch) {
    std::map<std::string, Tensor<float>> extra = opt.state();
    Tensor<float> meta({4});
    meta.data[0] = static_cast<float>(batch);
    meta.data[1] = static_cast<float>(env_steps);
    meta.data[2] = static_cast<float>(episode_counter);
    meta.data[3] = static_cast<float>(opt.iterations());
    extra["meta"] = meta;
    save_checkpoint(latest_path, params, extra);
  };
  if (start_batch == 0) save_latest(0);

  for (int b = start_batch + 1; b <= cfg.total_batches; ++b) {
    const auto t0 = std::chrono::steady_clock::now();
    Batch batch = collect_batch(params, env, cfg, seed, episode_counter, threads);
    episode_counter += batch.episodes.size();
    env_steps += batch.num_transitions();

    if (cfg.use_gae && descriptor.value_head) {
      const std::vector<double> values = compute_values(params, batch, threads);
      compute_returns(batch, cfg, &values);
    } else {
      compute_returns(batch, cfg);
    }

    const UpdateStats stats =
        ppo_update(params, opt, batch, cfg, env,
                   Rng::derive(seed, static_cast<std::uint64_t>(b), kTagShuffle),
                   threads);
    result.batches_run = b;
    result.env_steps = env_steps;

    if (stats.diverged) {
      result.halted_on_divergence = true;
      if (log) log(b, "non-finite update; restored snapshot and halted");
      break;
    }

    const BatchStats bs = batch_stats(batch);
    result.final_success_rate = bs.success_rate;
    const double wall =
        cfg.log_wall_time
            ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                  .count()
            : 0.0;
    metrics << b << "," << env_steps << "," << format_metric(bs.success_rate)
            << "," << format_metric(bs.mean_episode_length) << ","
            << format_metric(bs.mean_zoom_depth) << ","
            << format_metric(bs.forced_stop_rate) << ","
            << format_metric(stats.surrogate) << ","
            << format_metric(stats.clip_fraction) << ","
            << format_metric(stats.approx_kl) << ","
            << format_metric(stats.grad_norm) << "," << format_metric(wall)
            << "\n";
    metrics.flush();
    if (log) {
      std::ostringstream os;
      os << "success " << bs.success_rate << " len " << bs.mean_episode_length
         << " surrogate " << stats.surrogate << " entropy " << stats.entropy
         << " kl " << stats.approx_kl;
      log(b, os.str());
    }

    save_latest(b);
    if (cfg.checkpoint_every > 0 && b % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << run_dir << "/checkpoints/ckpt_" << std::setw(6)
           << std::setfill('0') << b << ".pxgr";
      save_checkpoint(name.str(), params);
    }
  }

  save_latest(result.batches_run);
  result.checkpoint_path = latest_path;
  return result;
}

// Explicit instantiations.
template struct SurrogateStats<float>;
template struct SurrogateStats<double>;
template SurrogateStats<float> surrogate_loss_and_grad<float>(
    const NetworkParams<float>&, const Batch&, const std::vector<std::size_t>&,
    const PPOConfig&, const EnvConfig&, Gradients<float>&, int);
template SurrogateStats<double> surrogate_loss_and_grad<double>(
    const NetworkParams<double>&, const Batch&, const std::vector<std::size_t>&,
    const PPOConfig&, const EnvConfig&, Gradients<double>&, int);
template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

}  // namespace pixgrasp
