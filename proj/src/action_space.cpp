#include "lanekeep/action_space.hpp"

#include <algorithm>
#include <cstdlib>

#include "lanekeep/errors.hpp"

namespace lanekeep {

namespace {

struct LabelEntry {
    ActionLabel label;
    std::string_view name;
};

constexpr std::array<LabelEntry, 9> kLabelNames = {{
    {ActionLabel::Full05, "F-0.5"},
    {ActionLabel::Full10, "F-1.0"},
    {ActionLabel::Fix101, "Fix-101"},
    {ActionLabel::Fix202, "Fix-202"},
    {ActionLabel::Fix21012, "Fix-21012"},
    {ActionLabel::Dyn05, "Dyn-0.5"},
    {ActionLabel::Dyn10, "Dyn-1.0"},
    {ActionLabel::Rel05, "Rel-0.5"},
    {ActionLabel::Rel10, "Rel-1.0"},
}};

// Symmetric grid -half_steps..half_steps scaled by 0.1. Dividing by ten
// yields the nearest double to each decimal value.
std::vector<double> tenth_grid(int half_steps) {
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(2 * half_steps + 1));
    for (int i = -half_steps; i <= half_steps; ++i) grid.push_back(i / 10.0);
    return grid;
}

bool slot_is_valid(const ActionSpaceConfig& config, SteerCursor cursor, int slot) {
    switch (config.mode) {
        case ActionMode::Absolute:
            return true;
        case ActionMode::Dynamic:
            return std::abs(slot - cursor.index) <= config.window_radius;
        case ActionMode::Relative: {
            const int half = static_cast<int>(config.delta_grid.size()) / 2;
            const int target = cursor.index + (slot - half);
            return target >= 0 && target < config.steer_count();
        }
    }
    return false;
}

void check_cursor(const ActionSpaceConfig& config, SteerCursor cursor) {
    if (cursor.index < 0 || cursor.index >= config.steer_count()) {
        throw IndexError("steer cursor " + std::to_string(cursor.index) + " outside [0, " +
                         std::to_string(config.steer_count() - 1) + "]");
    }
}

}  // namespace

std::string_view label_name(ActionLabel label) {
    for (const auto& e : kLabelNames)
        if (e.label == label) return e.name;
    throw ConfigError("unknown action label enum value");
}

ActionLabel parse_label(std::string_view name) {
    for (const auto& e : kLabelNames)
        if (e.name == name) return e.label;
    throw ConfigError("unknown action-space label '" + std::string(name) + "'");
}

ActionSpaceConfig build_config(ActionLabel label) {
    ActionSpaceConfig c{label, ActionMode::Absolute, {}, {}, {0.0, 0.2}, 2};
    switch (label) {
        case ActionLabel::Full05:
            c.steer_grid = tenth_grid(5);
            break;
        case ActionLabel::Full10:
            c.steer_grid = tenth_grid(10);
            break;
        case ActionLabel::Fix101:
            c.steer_grid = {-0.1, 0.0, 0.1};
            break;
        case ActionLabel::Fix202:
            c.steer_grid = {-0.2, 0.0, 0.2};
            break;
        case ActionLabel::Fix21012:
            c.steer_grid = tenth_grid(2);
            break;
        case ActionLabel::Dyn05:
            c.mode = ActionMode::Dynamic;
            c.steer_grid = tenth_grid(5);
            break;
        case ActionLabel::Dyn10:
            c.mode = ActionMode::Dynamic;
            c.steer_grid = tenth_grid(10);
            break;
        case ActionLabel::Rel05:
            c.mode = ActionMode::Relative;
            c.steer_grid = tenth_grid(5);
            c.delta_grid = tenth_grid(2);
            break;
        case ActionLabel::Rel10:
            c.mode = ActionMode::Relative;
            c.steer_grid = tenth_grid(10);
            c.delta_grid = tenth_grid(2);
            break;
    }
    return c;
}

ActionSpaceConfig build_config(std::string_view label) { return build_config(parse_label(label)); }

int ActionMask::popcount() const {
    return static_cast<int>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

int flat_index(const ActionSpaceConfig& config, int steer_slot, int throttle_slot) {
    if (steer_slot < 0 || steer_slot >= config.steer_slots())
        throw IndexError("steer slot " + std::to_string(steer_slot) + " out of range");
    if (throttle_slot < 0 || throttle_slot >= ActionSpaceConfig::throttle_count())
        throw IndexError("throttle slot " + std::to_string(throttle_slot) + " out of range");
    return steer_slot * ActionSpaceConfig::throttle_count() + throttle_slot;
}

SlotPair unflatten(const ActionSpaceConfig& config, int flat) {
    if (flat < 0 || flat >= config.action_count())
        throw IndexError("flat action " + std::to_string(flat) + " out of range");
    constexpr int t = ActionSpaceConfig::throttle_count();
    return {flat / t, flat % t};
}

std::vector<int> valid_steering_indices(const ActionSpaceConfig& config, SteerCursor cursor) {
    check_cursor(config, cursor);
    std::vector<int> out;
    for (int slot = 0; slot < config.steer_slots(); ++slot)
        if (slot_is_valid(config, cursor, slot)) out.push_back(slot);
    return out;
}

ActionMask make_mask(const ActionSpaceConfig& config, SteerCursor cursor) {
    ActionMask mask(config.action_count());
    for (int s : valid_steering_indices(config, cursor))
        for (int t = 0; t < ActionSpaceConfig::throttle_count(); ++t) mask.set(flat_index(config, s, t));
    return mask;
}

DecodedAction decode(const ActionSpaceConfig& config, int flat, SteerCursor cursor) {
    const SlotPair slots = unflatten(config, flat);
    check_cursor(config, cursor);
    if (!slot_is_valid(config, cursor, slots.steer_slot)) {
        throw ContractViolation("action " + std::to_string(flat) + " is masked for " +
                                std::string(label_name(config.label)) + " at steer index " +
                                std::to_string(cursor.index));
    }
    int next = slots.steer_slot;
    if (config.mode == ActionMode::Relative) {
        const int half = static_cast<int>(config.delta_grid.size()) / 2;
        next = std::clamp(cursor.index + slots.steer_slot - half, 0, config.steer_count() - 1);
    }
    return {config.steer_grid[static_cast<std::size_t>(next)],
            config.throttle_grid[static_cast<std::size_t>(slots.throttle_slot)], SteerCursor{next}};
}

}  // namespace lanekeep
