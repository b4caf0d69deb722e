#pragma once

#include <string>

#include "mvar/model.hpp"

namespace mvar::model {

/// Binary checkpoint: magic "MVCK", one version byte, a u32-length-prefixed
/// structured-text header (hyperparameters, coordinate frame, city list,
/// meteorology statistics, tensor manifest with shapes and byte offsets),
/// then each tensor as 32-bit little-endian floats at its stated offset.
void write_checkpoint(const std::string& path, const MvarModel& model);
MvarModel read_checkpoint(const std::string& path);

}  // namespace mvar::model
