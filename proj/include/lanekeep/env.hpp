#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "lanekeep/action_space.hpp"
#include "lanekeep/random.hpp"
#include "lanekeep/simworld.hpp"

namespace lanekeep {

inline constexpr int kScalarDim = 5;
inline constexpr int kHistoryLen = 4;
inline constexpr int kPreviewPoints = 8;
inline constexpr int kPreviewDim = 2 * kPreviewPoints;
/// Flattened observation: scalars, history (oldest first), preview.
inline constexpr int kFeatureDim = kScalarDim + kHistoryLen * kScalarDim + kPreviewDim;

inline constexpr std::array<double, kPreviewPoints> kPreviewOffsets = {2, 4, 6, 8, 12, 16, 24, 32};
inline constexpr double kPreviewScale = 32.0;

using FeatureVector = Eigen::Matrix<double, kFeatureDim, 1>;

struct Observation {
    /// throttle, velocity / v_max, steer, |lane offset| / 3 m, |angle| / pi
    Eigen::Matrix<double, kScalarDim, 1> scalars = Eigen::Matrix<double, kScalarDim, 1>::Zero();
    /// Last four scalar vectors, oldest row first, current row last.
    Eigen::Matrix<double, kHistoryLen, kScalarDim> history =
        Eigen::Matrix<double, kHistoryLen, kScalarDim>::Zero();
    /// Upcoming centerline points (x0, y0, x1, y1, ...) in the ego frame / 32 m.
    Eigen::Matrix<double, kPreviewDim, 1> preview = Eigen::Matrix<double, kPreviewDim, 1>::Zero();

    FeatureVector features() const;
};

enum class Override { None, Collision, ProlongedLowSpeed };

struct RewardBreakdown {
    double r_lane = 0;
    double r_angle = 0;
    double r_speed = 0;
    double r_invasion = 0;
    double r_goal_progress = 0;
    double r_goal_bonus = 0;
    double r_collision = 0;
    double total = 0;
    Override overridden = Override::None;

    double component_sum() const {
        return r_lane + r_angle + r_speed + r_invasion + r_goal_progress + r_goal_bonus + r_collision;
    }
};

enum class TerminationReason { None, GoalReached, Collision, TimeLimit, PassedGoal, ProlongedLowSpeed };

std::string_view termination_name(TerminationReason r);
std::string_view override_name(Override o);

struct EnvOptions {
    double episode_seconds = 600.0;
    double goal_radius = 2.0;       // m
    double low_speed_kmh = 1.0;
    double low_speed_seconds = 10.0;
    int passed_goal_steps = 500;
    double v_max_kmh = 30.0;        // velocity normalizer
    double center_norm_m = 3.0;     // lane-offset normalizer

    long max_steps(double dt) const;
};

struct EpisodeState {
    VehicleState vehicle;
    const Route* route = nullptr;
    SteerCursor cursor;
    double dt = 0.1;

    double arc_s = 0;
    double lane_offset = 0;
    double angle_offset = 0;
    double goal_dist = 0;

    double init_goal_dist = 0;
    double min_goal_dist = 0;
    long steps_since_min_improved = 0;
    long low_speed_steps = 0;
    double low_speed_elapsed = 0;  // s, low_speed_steps * dt
    int lane_invasions = 0;
    bool collided = false;
    bool inside_lane = true;
    bool goal_bonus_paid = false;
};

/// Per-step reward. `pre` is the state before the step and `post` after it.
RewardBreakdown compute_reward(const EpisodeState& pre, const EpisodeState& post,
                               const EnvOptions& opts = {});

TerminationReason check_termination(const EpisodeState& state, const EnvOptions& opts = {});

struct StepResult {
    Observation obs;
    ActionMask mask;
    RewardBreakdown reward;
    TerminationReason reason = TerminationReason::None;
    bool done() const { return reason != TerminationReason::None; }
};

/// Episodic lane-following environment over a pool of routes. With more
/// than one route in the pool (training mode) each reset draws one
/// uniformly from the seeded generator.
class LaneEnv {
public:
    LaneEnv(std::vector<Route> pool, ActionSpaceConfig config, WorldConfig world = {}, EnvOptions opts = {},
            std::uint64_t seed = 0);
    // The episode state points into the route pool.
    LaneEnv(const LaneEnv&) = delete;
    LaneEnv& operator=(const LaneEnv&) = delete;
    LaneEnv(LaneEnv&&) noexcept = default;
    LaneEnv& operator=(LaneEnv&&) noexcept = default;

    /// Reseeds the generator when a seed is given.
    StepResult reset(std::optional<std::uint64_t> seed = std::nullopt);
    StepResult step(int flat_action);

    const EpisodeState& state() const { return state_; }
    const ActionSpaceConfig& config() const { return config_; }
    const WorldConfig& world() const { return world_; }
    const EnvOptions& options() const { return opts_; }
    const std::vector<Route>& pool() const { return pool_; }
    const ActionMask& mask() const { return mask_; }
    const Observation& observation() const { return obs_; }
    int route_index() const { return route_index_; }

    /// Optional JSONL step log; one object per step.
    void set_step_log(std::ostream* out) { log_ = out; }

    // Snapshot support for resumable training.
    struct Snapshot {
        std::string rng_state;
        int route_index = 0;
        EpisodeState state;
        Observation obs;
    };
    Snapshot snapshot() const;
    void restore(const Snapshot& snap);

private:
    void refresh_projection(EpisodeState& s) const;
    Observation make_observation(const EpisodeState& s, bool reset_history);
    void write_log(int action, const StepResult& r) const;

    std::vector<Route> pool_;
    ActionSpaceConfig config_;
    WorldConfig world_;
    EnvOptions opts_;
    Rng rng_;
    int route_index_ = 0;
    EpisodeState state_;
    Observation obs_;
    ActionMask mask_;
    std::ostream* log_ = nullptr;
};

}  // namespace lanekeep
