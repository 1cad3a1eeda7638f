#include "json_io.hpp"

#include "eqtime/error.hpp"

namespace eqtime {

using nlohmann::json;

json model_spec_to_json(const ModelSpec& s) {
  return json{{"model", s.name()},
              {"task", std::string(to_string(s.task))},
              {"features", s.features},
              {"outputs", s.outputs},
              {"type_embedding", s.type_embedding},
              {"set_hidden", s.set_hidden},
              {"set_attention", s.set_attention},
              {"set_iterations", s.set_iterations},
              {"set_init", s.set_init},
              {"set_heads", s.set_heads},
              {"set_blocks", s.set_blocks},
              {"set_ff", s.set_ff},
              {"set_pooling", s.set_pooling == SetPooling::kMean ? "mean" : "query"},
              {"hidden", s.hidden},
              {"layers", s.layers},
              {"heads", s.heads},
              {"ff", s.ff},
              {"dropout", s.dropout}};
}

namespace {

template <typename T>
void read(const json& obj, const std::string& key, T& out) {
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("model field '" + key + "': " + e.what());
  }
}

void read_field(const json& obj, const std::string& key, ModelSpec& s) {
  if (key == "features") read(obj, key, s.features);
  else if (key == "outputs") read(obj, key, s.outputs);
  else if (key == "type_embedding") read(obj, key, s.type_embedding);
  else if (key == "set_hidden") read(obj, key, s.set_hidden);
  else if (key == "set_attention") read(obj, key, s.set_attention);
  else if (key == "set_iterations") read(obj, key, s.set_iterations);
  else if (key == "set_init") read(obj, key, s.set_init);
  else if (key == "set_heads") read(obj, key, s.set_heads);
  else if (key == "set_blocks") read(obj, key, s.set_blocks);
  else if (key == "set_ff") read(obj, key, s.set_ff);
  else if (key == "hidden") read(obj, key, s.hidden);
  else if (key == "layers") read(obj, key, s.layers);
  else if (key == "heads") read(obj, key, s.heads);
  else if (key == "ff") read(obj, key, s.ff);
  else if (key == "dropout") read(obj, key, s.dropout);
  else throw ConfigError("unknown model field '" + key + "'");
}

}  // namespace

ModelSpec model_spec_from_json(const json& obj, ModelSpec s) {
  if (!obj.is_object()) throw ConfigError("model spec must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (key != "model" && key != "task" && key != "set_pooling") {
      read_field(obj, key, s);
      continue;
    }
    if (!value.is_string()) throw ConfigError("model field '" + key + "' must be a string");
    if (key == "model") {
      s.with_name(value.get<std::string>());
    } else if (key == "task") {
      s.task = parse_task_kind(value.get<std::string>());
    } else if (key == "set_pooling") {
      const auto p = value.get<std::string>();
      if (p == "mean") s.set_pooling = SetPooling::kMean;
      else if (p == "query") s.set_pooling = SetPooling::kLearnedQuery;
      else throw ConfigError("set_pooling must be 'mean' or 'query', got '" + p + "'");
    }
  }
  return s;
}

}  // namespace eqtime
