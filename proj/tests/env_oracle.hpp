#pragma once
// Reward reference written out directly from the component definitions,
// plus a neutral mid-lane state to perturb.

#include <algorithm>
#include <cmath>

#include "lanekeep/env.hpp"

namespace oracle {

inline lanekeep::EpisodeState base_state() {
    lanekeep::EpisodeState s;
    s.vehicle.speed = 10.0;
    s.init_goal_dist = 100.0;
    s.min_goal_dist = 100.0;
    s.goal_dist = 100.0;
    return s;
}

inline double reward_oracle(const lanekeep::EpisodeState& pre, const lanekeep::EpisodeState& post) {
    const double lane = std::max(0.0, 1.5 - std::abs(post.lane_offset)) * 40.0;
    const double angle = std::max(0.0, 0.2 - std::abs(post.angle_offset) / M_PI) * 100.0;
    const double v = post.vehicle.speed;
    double speed;
    bool slow_override = false;
    if (v < 1.0) {
        if (post.low_speed_elapsed >= 10.0) slow_override = true;
        speed = -2.0 * post.low_speed_elapsed;
    } else if (v <= 25.0) {
        speed = 10.0;
    } else {
        speed = -2.0 * (v - 25.0);
    }
    const double invasion = -post.lane_invasions / 4.0;
    const double progress = std::max(0.0, (post.init_goal_dist - post.goal_dist) / post.init_goal_dist) * 60.0;
    const bool at_goal = post.goal_dist <= 2.0;
    const double bonus = at_goal && !pre.goal_bonus_paid ? 200.0 : 0.0;
    if (post.collided && !at_goal) return -50.0;
    if (slow_override) return -50.0;
    return lane + angle + speed + invasion + progress + bonus;
}

}  // namespace oracle
