#pragma once

#include "eqtime/model.hpp"
#include "json.hpp"

namespace eqtime {

nlohmann::json model_spec_to_json(const ModelSpec& spec);
/// Overlays the keys present in `obj` onto `base`; unknown keys raise ConfigError.
ModelSpec model_spec_from_json(const nlohmann::json& obj, ModelSpec base = {});

}  // namespace eqtime
