#pragma once

#include <string>

#include "json.hpp"

#include "adasim/trainer.hpp"

namespace adasim {

/// Full resolved config, stable key order.
nlohmann::ordered_json to_json(const TrainConfig& cfg);

/// Overlays the fields present in j onto base. Unknown keys are rejected with
/// kConfig naming the key.
TrainConfig apply_json(const TrainConfig& base, const nlohmann::json& j);

}  // namespace adasim
