#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace lanekeep {

enum class ActionLabel {
    Full05,
    Full10,
    Fix101,
    Fix202,
    Fix21012,
    Dyn05,
    Dyn10,
    Rel05,
    Rel10,
};

enum class ActionMode { Absolute, Dynamic, Relative };

inline constexpr std::array<ActionLabel, 9> kAllLabels = {
    ActionLabel::Full05, ActionLabel::Full10,  ActionLabel::Fix101,
    ActionLabel::Fix202, ActionLabel::Fix21012, ActionLabel::Dyn05,
    ActionLabel::Dyn10,  ActionLabel::Rel05,   ActionLabel::Rel10,
};

/// Label strings as they appear in configs, CLI flags and reports
/// ("F-0.5", "Rel-1.0", ...).
std::string_view label_name(ActionLabel label);
ActionLabel parse_label(std::string_view name);

/// Index of a steering command on a configuration's steer grid.
struct SteerCursor {
    int index = 0;
    friend bool operator==(const SteerCursor&, const SteerCursor&) = default;
};

struct ActionSpaceConfig {
    ActionLabel label;
    ActionMode mode;
    std::vector<double> steer_grid;
    std::vector<double> delta_grid;  // Relative only
    std::array<double, 2> throttle_grid{0.0, 0.2};
    int window_radius = 2;  // Dynamic only

    int steer_count() const { return static_cast<int>(steer_grid.size()); }
    static constexpr int throttle_count() { return 2; }
    /// Number of steering slots in the policy output: the delta grid for
    /// Relative mode, the steer grid otherwise.
    int steer_slots() const {
        return mode == ActionMode::Relative ? static_cast<int>(delta_grid.size()) : steer_count();
    }
    int action_count() const { return steer_slots() * throttle_count(); }
    /// Grid index of the zero steering command; used as the reset cursor.
    SteerCursor center_cursor() const { return SteerCursor{steer_count() / 2}; }
};

ActionSpaceConfig build_config(ActionLabel label);
ActionSpaceConfig build_config(std::string_view label);

/// Binary validity vector over the flattened action space.
class ActionMask {
public:
    ActionMask() = default;
    explicit ActionMask(int size, bool value = false)
        : bits_(static_cast<std::size_t>(size), value ? 1 : 0) {}

    int size() const { return static_cast<int>(bits_.size()); }
    bool operator[](int i) const { return bits_[static_cast<std::size_t>(i)] != 0; }
    void set(int i, bool value = true) { bits_[static_cast<std::size_t>(i)] = value ? 1 : 0; }
    int popcount() const;
    bool any() const { return popcount() > 0; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    friend bool operator==(const ActionMask&, const ActionMask&) = default;

private:
    std::vector<std::uint8_t> bits_;
};

struct SlotPair {
    int steer_slot;
    int throttle_slot;
    friend bool operator==(const SlotPair&, const SlotPair&) = default;
};

int flat_index(const ActionSpaceConfig& config, int steer_slot, int throttle_slot);
SlotPair unflatten(const ActionSpaceConfig& config, int flat);

/// Valid steering slots for the next step: grid indices for Absolute and
/// Dynamic modes, delta indices for Relative mode. Ascending order.
std::vector<int> valid_steering_indices(const ActionSpaceConfig& config, SteerCursor cursor);

ActionMask make_mask(const ActionSpaceConfig& config, SteerCursor cursor);

struct DecodedAction {
    double steer_cmd;
    double throttle_cmd;
    SteerCursor next_cursor;
};

/// Maps a flat action to vehicle commands. Throws IndexError for an
/// out-of-range index and ContractViolation for an action the current mask
/// forbids.
DecodedAction decode(const ActionSpaceConfig& config, int flat, SteerCursor cursor);

}  // namespace lanekeep
