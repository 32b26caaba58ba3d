#pragma once

#include <cstdint>
#include <string>

#include "lanekeep/action_space.hpp"
#include "lanekeep/nn.hpp"

namespace lanekeep {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Network weights plus the action-space label they were trained for.
///
/// Byte layout (all integers little-endian, strings length-prefixed by u32):
///   magic "LKCKPT\0\0" | u32 format_version | str label | u32 n_actions |
///   u32 n_tensors | n_tensors x (str name, u32 ndim, u32 dims[ndim]) |
///   u64 total_floats | float32 blocks, row-major, in table order
struct Checkpoint {
    ActionLabel label;
    nn::PolicyValueNet<float> net;
};

void save_checkpoint(const std::string& path, ActionLabel label, const nn::PolicyValueNet<float>& net);
/// Throws FormatError on a bad magic, unsupported version, inconsistent
/// header or truncated payload.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lanekeep
