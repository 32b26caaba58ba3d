#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "lanekeep/action_space.hpp"
#include "lanekeep/env.hpp"
#include "lanekeep/learning_curve.hpp"
#include "lanekeep/nn.hpp"
#include "lanekeep/random.hpp"
#include "lanekeep/simworld.hpp"

namespace lanekeep::ppo {

struct TrainConfig {
    double lr0 = 3e-4;  // linearly decayed to 0
    double gamma = 0.99;
    double gae_lambda = 0.95;
    int minibatch = 256;
    int rollout_len = 8192;  // steps per environment per update
    int epochs = 15;
    double clip_eps = 0.2;
    double ent_coef = 0.01;
    double vf_coef = 0.5;
    long total_steps = 4'000'000;
    int n_envs = 4;
    std::uint64_t seed = 0;
    double max_grad_norm = 0.5;  // <= 0 disables clipping
    bool normalize_advantages = true;
    double reward_scale = 1.0;  // applied to rewards stored for learning only
    int checkpoint_every = 10;  // rollouts
    int curve_window = 10;      // rollouts

    void validate() const;
    long steps_per_iteration() const { return static_cast<long>(rollout_len) * n_envs; }
    /// Number of collect/update iterations that fit in total_steps (at least one).
    long iterations() const;
    double learning_rate(double progress) const { return lr0 * (1.0 - progress); }
};

/// Time-major storage: record (t, env) lives at row t * n_envs + env.
struct RolloutBuffer {
    int n_steps = 0;
    int n_envs = 0;
    nn::Matrix<float> features;
    std::vector<ActionMask> masks;
    std::vector<int> actions;
    Eigen::VectorXd rewards;
    std::vector<std::uint8_t> dones;
    Eigen::VectorXd values;
    Eigen::VectorXd log_probs;
    Eigen::VectorXd bootstrap;  // per env, value of the observation after the last step
    Eigen::VectorXd advantages;
    Eigen::VectorXd returns;

    void allocate(int steps, int envs);
    Eigen::Index size() const { return static_cast<Eigen::Index>(n_steps) * n_envs; }
};

struct GaeResult {
    Eigen::VectorXd advantages;
    Eigen::VectorXd returns;
};

/// Backward GAE recursion over time-major data. `bootstrap` holds one value
/// per environment for the state following the final step; it is ignored
/// where that step terminated.
GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                      const std::vector<std::uint8_t>& dones, const Eigen::VectorXd& bootstrap, int n_envs,
                      double gamma, double lambda);

struct EpisodeRecord {
    double total_reward;
    long length;
    TerminationReason reason;
};

struct RolloutStats {
    std::vector<EpisodeRecord> episodes;
};

/// Owns the training environments and steps them in lockstep.
class RolloutCollector {
public:
    RolloutCollector(std::vector<Route> training_routes, const ActionSpaceConfig& config, const WorldConfig& world,
                     int n_envs, std::uint64_t seed);

    /// Rewards are multiplied by `reward_scale` before they enter the
    /// buffer; episode statistics stay unscaled.
    RolloutStats collect(const nn::PolicyValueNet<float>& net, int n_steps, RolloutBuffer& buffer,
                         double reward_scale = 1.0);

    std::vector<LaneEnv>& envs() { return envs_; }
    Rng& policy_rng() { return policy_rng_; }

    struct Snapshot {
        std::vector<LaneEnv::Snapshot> envs;
        std::vector<double> episode_return;
        std::vector<long> episode_length;
        std::string policy_rng;
    };
    Snapshot snapshot() const;
    void restore(const Snapshot& snap);

    void set_step_log(std::ostream* out);

private:
    std::vector<LaneEnv> envs_;
    std::vector<double> episode_return_;
    std::vector<long> episode_length_;
    Rng policy_rng_;
};

struct UpdateStats {
    double policy_loss = 0;
    double value_loss = 0;
    double entropy = 0;
    double clip_fraction = 0;
    double approx_kl = 0;
    double loss = 0;
};

template <typename Scalar>
struct Minibatch {
    nn::Matrix<Scalar> features;
    std::vector<int> actions;
    std::vector<const ActionMask*> masks;
    Eigen::VectorXd old_log_probs;
    Eigen::VectorXd advantages;  // already normalized if requested
    Eigen::VectorXd returns;
};

struct LossWeights {
    double clip_eps = 0.2;
    double vf_coef = 0.5;
    double ent_coef = 0.01;
};

/// Clipped surrogate with value and entropy terms, minimized:
///   loss = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) + c1 mean((V - R)^2) - c2 mean(H)
/// Accumulates d loss / d params into `grad` when non-null.
template <typename Scalar>
UpdateStats ppo_loss(const nn::PolicyValueNet<Scalar>& net, const Minibatch<Scalar>& batch, const LossWeights& w,
                     nn::Vector<Scalar>* grad);

/// Per-sample clipped surrogate min(r A, clip(r, 1-eps, 1+eps) A).
double clipped_surrogate(double ratio, double advantage, double eps);

/// Normalizes to mean 0 and (unbiased) std 1; left unchanged below two samples.
Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& adv);

/// Epochs of shuffled minibatch updates over one buffer. `progress` in
/// [0, 1) sets the learning rate.
UpdateStats ppo_update(nn::PolicyValueNet<float>& net, nn::Adam<float>& adam, const RolloutBuffer& buffer,
                       const TrainConfig& cfg, double progress, Rng& shuffle_rng,
                       UpdateStats* first_minibatch = nullptr);

struct TrainOptions {
    std::string run_dir;  // empty: nothing is written
    bool resume = false;
    bool log_steps = false;
    long stop_after_iterations = -1;  // simulate an interrupt (tests)
    std::function<void(long iteration, const RolloutBuffer&, const RolloutStats&)> on_rollout;
    std::ostream* progress = nullptr;
};

struct TrainResult {
    LearningCurve curve;
    nn::PolicyValueNet<float> net;
    long iterations_done = 0;
    long global_step = 0;
    std::string final_checkpoint;
};

/// Collect / advantage / update loop. Training episodes draw one of the
/// given routes per reset.
TrainResult train(ActionLabel label, const std::vector<Route>& training_routes, const TrainConfig& cfg,
                  const WorldConfig& world = {}, const TrainOptions& opts = {});

}  // namespace lanekeep::ppo
