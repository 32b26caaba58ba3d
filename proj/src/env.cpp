#include "lanekeep/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "lanekeep/errors.hpp"

namespace lanekeep {

namespace {

// Reward shaping constants.
constexpr double kLaneBand = 1.5;       // m
constexpr double kLaneScale = 40.0;
constexpr double kAngleBand = 0.2;      // normalized by pi
constexpr double kAngleScale = 100.0;
constexpr double kSpeedLow = 1.0;       // km/h
constexpr double kSpeedHigh = 25.0;     // km/h
constexpr double kSpeedBonus = 10.0;
constexpr double kOverspeedSlope = 2.0;
constexpr double kLowSpeedSlope = 2.0;
constexpr double kInvasionDivisor = 4.0;
constexpr double kProgressScale = 60.0;
constexpr double kGoalBonus = 200.0;
constexpr double kOverridePenalty = -50.0;

bool finite_state(const EpisodeState& s) {
    return std::isfinite(s.lane_offset) && std::isfinite(s.angle_offset) && std::isfinite(s.goal_dist) &&
           std::isfinite(s.vehicle.speed) && std::isfinite(s.init_goal_dist) &&
           std::isfinite(s.low_speed_elapsed);
}

}  // namespace

FeatureVector Observation::features() const {
    FeatureVector f;
    f.head<kScalarDim>() = scalars;
    for (int r = 0; r < kHistoryLen; ++r)
        f.segment<kScalarDim>(kScalarDim + r * kScalarDim) = history.row(r).transpose();
    f.tail<kPreviewDim>() = preview;
    return f;
}

std::string_view termination_name(TerminationReason r) {
    switch (r) {
        case TerminationReason::None:
            return "None";
        case TerminationReason::GoalReached:
            return "GoalReached";
        case TerminationReason::Collision:
            return "Collision";
        case TerminationReason::TimeLimit:
            return "TimeLimit";
        case TerminationReason::PassedGoal:
            return "PassedGoal";
        case TerminationReason::ProlongedLowSpeed:
            return "ProlongedLowSpeed";
    }
    return "None";
}

std::string_view override_name(Override o) {
    switch (o) {
        case Override::None:
            return "None";
        case Override::Collision:
            return "Collision";
        case Override::ProlongedLowSpeed:
            return "ProlongedLowSpeed";
    }
    return "None";
}

long EnvOptions::max_steps(double dt) const { return std::lround(episode_seconds / dt); }

RewardBreakdown compute_reward(const EpisodeState& pre, const EpisodeState& post, const EnvOptions& opts) {
    if (!finite_state(post)) throw NumericError("non-finite episode state in reward");
    RewardBreakdown r;
    r.r_lane = std::max(0.0, kLaneBand - std::abs(post.lane_offset)) * kLaneScale;
    r.r_angle = std::max(0.0, kAngleBand - std::abs(post.angle_offset) / std::numbers::pi) * kAngleScale;

    const double v = post.vehicle.speed;
    bool low_speed_override = false;
    if (v >= kSpeedLow && v <= kSpeedHigh) {
        r.r_speed = kSpeedBonus;
    } else if (v > kSpeedHigh) {
        r.r_speed = -kOverspeedSlope * (v - kSpeedHigh);
    } else if (post.low_speed_elapsed < opts.low_speed_seconds) {
        r.r_speed = -kLowSpeedSlope * post.low_speed_elapsed;
    } else {
        r.r_speed = kOverridePenalty;
        low_speed_override = true;
    }

    r.r_invasion = -post.lane_invasions / kInvasionDivisor;
    if (post.init_goal_dist > 0.0)
        r.r_goal_progress =
            std::max(0.0, (post.init_goal_dist - post.goal_dist) / post.init_goal_dist) * kProgressScale;
    const bool at_goal = post.goal_dist <= opts.goal_radius;
    if (at_goal && !pre.goal_bonus_paid) r.r_goal_bonus = kGoalBonus;

    // Reaching the goal takes priority over a simultaneous collision.
    if (post.collided && !at_goal) {
        r.r_collision = kOverridePenalty;
        r.overridden = Override::Collision;
        r.total = kOverridePenalty;
    } else if (low_speed_override) {
        r.overridden = Override::ProlongedLowSpeed;
        r.total = kOverridePenalty;
    } else {
        r.total = r.component_sum();
    }
    return r;
}

TerminationReason check_termination(const EpisodeState& s, const EnvOptions& opts) {
    if (s.goal_dist <= opts.goal_radius) return TerminationReason::GoalReached;
    if (s.collided) return TerminationReason::Collision;
    if (s.vehicle.elapsed_steps >= opts.max_steps(s.dt)) return TerminationReason::TimeLimit;
    if (s.low_speed_elapsed >= opts.low_speed_seconds) return TerminationReason::ProlongedLowSpeed;
    if (s.steps_since_min_improved > opts.passed_goal_steps) return TerminationReason::PassedGoal;
    return TerminationReason::None;
}

LaneEnv::LaneEnv(std::vector<Route> pool, ActionSpaceConfig config, WorldConfig world, EnvOptions opts,
                 std::uint64_t seed)
    : pool_(std::move(pool)), config_(std::move(config)), world_(world), opts_(opts), rng_(seed) {
    if (pool_.empty()) throw ConfigError("environment needs at least one route");
    world_.validate();
    reset();
}

void LaneEnv::refresh_projection(EpisodeState& s) const {
    const Projection p = s.route->project(s.vehicle.position, s.vehicle.heading);
    s.arc_s = p.arc_s;
    s.lane_offset = p.lane_offset;
    s.angle_offset = p.angle_offset;
    s.goal_dist = p.goal_dist;
}

Observation LaneEnv::make_observation(const EpisodeState& s, bool reset_history) {
    Observation o;
    o.scalars << s.vehicle.throttle_cmd, std::min(s.vehicle.speed / opts_.v_max_kmh, 1.0), s.vehicle.steer_cmd,
        std::min(std::abs(s.lane_offset) / opts_.center_norm_m, 1.0), std::abs(s.angle_offset) / std::numbers::pi;
    if (reset_history) {
        o.history.rowwise() = o.scalars.transpose();
    } else {
        o.history.topRows<kHistoryLen - 1>() = obs_.history.bottomRows<kHistoryLen - 1>();
        o.history.row(kHistoryLen - 1) = o.scalars.transpose();
    }
    const double c = std::cos(s.vehicle.heading);
    const double sn = std::sin(s.vehicle.heading);
    for (int k = 0; k < kPreviewPoints; ++k) {
        const Vec2 rel = s.route->point_at(s.arc_s + kPreviewOffsets[static_cast<std::size_t>(k)]) -
                         s.vehicle.position;
        o.preview(2 * k) = (c * rel.x() + sn * rel.y()) / kPreviewScale;
        o.preview(2 * k + 1) = (-sn * rel.x() + c * rel.y()) / kPreviewScale;
    }
    return o;
}

StepResult LaneEnv::reset(std::optional<std::uint64_t> seed) {
    if (seed) rng_.seed(*seed);
    route_index_ = pool_.size() > 1 ? static_cast<int>(rng_.below(pool_.size())) : 0;
    const Route& route = pool_[static_cast<std::size_t>(route_index_)];

    EpisodeState s;
    s.route = &route;
    s.dt = world_.dt;
    s.cursor = config_.center_cursor();
    s.vehicle.position = route.waypoints().front();
    const Vec2 t = route.tangent_at(0.0);
    s.vehicle.heading = std::atan2(t.y(), t.x());
    s.vehicle.steer_cmd = config_.steer_grid[static_cast<std::size_t>(s.cursor.index)];
    refresh_projection(s);
    s.init_goal_dist = s.min_goal_dist = s.goal_dist;
    state_ = s;

    obs_ = make_observation(state_, true);
    mask_ = make_mask(config_, state_.cursor);
    StepResult r;
    r.obs = obs_;
    r.mask = mask_;
    return r;
}

StepResult LaneEnv::step(int flat_action) {
    if (flat_action < 0 || flat_action >= config_.action_count())
        throw IndexError("action " + std::to_string(flat_action) + " out of range");
    if (!mask_[flat_action]) throw ContractViolation("action " + std::to_string(flat_action) + " is masked");
    if (check_termination(state_, opts_) != TerminationReason::None)
        throw ContractViolation("step called on a finished episode");

    const EpisodeState pre = state_;
    const DecodedAction act = decode(config_, flat_action, state_.cursor);

    EpisodeState& s = state_;
    s.cursor = act.next_cursor;
    s.vehicle = step_vehicle(s.vehicle, act.steer_cmd, act.throttle_cmd, world_);
    refresh_projection(s);

    const bool outside = std::abs(s.lane_offset) > s.route->lane_half_width();
    if (s.inside_lane && outside) ++s.lane_invasions;
    s.inside_lane = !outside;
    if (std::abs(s.lane_offset) > s.route->road_half_width()) s.collided = true;

    if (s.vehicle.speed < opts_.low_speed_kmh) {
        ++s.low_speed_steps;
    } else {
        s.low_speed_steps = 0;
    }
    s.low_speed_elapsed = static_cast<double>(s.low_speed_steps) * s.dt;

    if (s.goal_dist < s.min_goal_dist) {
        s.min_goal_dist = s.goal_dist;
        s.steps_since_min_improved = 0;
    } else {
        ++s.steps_since_min_improved;
    }

    StepResult r;
    r.reward = compute_reward(pre, s, opts_);
    if (r.reward.r_goal_bonus > 0.0) s.goal_bonus_paid = true;
    r.reason = check_termination(s, opts_);
    obs_ = make_observation(s, false);
    mask_ = make_mask(config_, s.cursor);
    r.obs = obs_;
    r.mask = mask_;
    if (log_) write_log(flat_action, r);
    return r;
}

void LaneEnv::write_log(int action, const StepResult& r) const {
    nlohmann::ordered_json j;
    j["step"] = state_.vehicle.elapsed_steps;
    j["route"] = route_name(state_.route->id());
    j["action"] = action;
    j["steer"] = state_.vehicle.steer_cmd;
    j["throttle"] = state_.vehicle.throttle_cmd;
    j["speed"] = state_.vehicle.speed;
    j["lane_offset"] = state_.lane_offset;
    j["angle_offset"] = state_.angle_offset;
    j["r_lane"] = r.reward.r_lane;
    j["r_angle"] = r.reward.r_angle;
    j["r_speed"] = r.reward.r_speed;
    j["r_invasion"] = r.reward.r_invasion;
    j["r_goal_progress"] = r.reward.r_goal_progress;
    j["r_goal_bonus"] = r.reward.r_goal_bonus;
    j["r_collision"] = r.reward.r_collision;
    j["total"] = r.reward.total;
    j["done"] = r.done();
    j["reason"] = termination_name(r.reason);
    *log_ << j.dump() << '\n';
}

LaneEnv::Snapshot LaneEnv::snapshot() const { return {rng_.state(), route_index_, state_, obs_}; }

void LaneEnv::restore(const Snapshot& snap) {
    if (snap.route_index < 0 || snap.route_index >= static_cast<int>(pool_.size()))
        throw FormatError("snapshot route index out of range");
    rng_.set_state(snap.rng_state);
    route_index_ = snap.route_index;
    state_ = snap.state;
    state_.route = &pool_[static_cast<std::size_t>(route_index_)];
    obs_ = snap.obs;
    mask_ = make_mask(config_, state_.cursor);
}

}  // namespace lanekeep
