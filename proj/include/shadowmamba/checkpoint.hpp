#pragma once

// Versioned binary checkpoints: the model config as embedded JSON plus every
// named parameter tensor in float64. Written and read on little-endian hosts.

#include <string>

#include "shadowmamba/model.hpp"

namespace sm {

void save_checkpoint(const std::string& path, Model<double>& model);

// Rebuilds the model from the embedded config, then overwrites every
// parameter. Missing/extra/mis-shaped tensors raise DataError.
Model<double> load_checkpoint(const std::string& path);

}  // namespace sm
