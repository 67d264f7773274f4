#pragma once

// JSON helpers shared by the trainer config and checkpoint serializers.

#include <initializer_list>
#include <string>

#include "ffm/trainer.hpp"
#include "json.hpp"

namespace ffm::detail {

using nlohmann::json;

inline const char* model_name(ModelKind k) {
  switch (k) {
    case ModelKind::Ffm: return "ffm";
    case ModelKind::Gru: return "gru";
    case ModelKind::Mlp: return "mlp";
  }
  return "?";
}

inline ModelKind model_from(const std::string& s, const char* where) {
  if (s == "ffm") return ModelKind::Ffm;
  if (s == "gru") return ModelKind::Gru;
  if (s == "mlp") return ModelKind::Mlp;
  throw ConfigError(std::string(where) + ": unknown model '" + s + "'");
}

inline const char* mode_name(ParamMode m) {
  switch (m) {
    case ParamMode::Learned: return "learned";
    case ParamMode::Fixed: return "fixed";
    case ParamMode::Off: return "off";
  }
  return "?";
}

inline ParamMode mode_from(const std::string& s, const char* where) {
  if (s == "learned") return ParamMode::Learned;
  if (s == "fixed") return ParamMode::Fixed;
  if (s == "off") return ParamMode::Off;
  throw ConfigError(std::string(where) + ": unknown mode '" + s + "'");
}

inline void check_keys(const json& j,
                       std::initializer_list<const char*> allowed,
                       const char* where) {
  if (!j.is_object()) {
    throw ConfigError(std::string(where) + ": expected a JSON object");
  }
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) {
      throw ConfigError(std::string(where) + ": unknown key '" + item.key() +
                        "'");
    }
  }
}

inline json variant_json(const VariantFlags& v) {
  return json{{"input_gate", v.input_gate},
              {"output_gate", v.output_gate},
              {"context", mode_name(v.context)},
              {"decay", mode_name(v.decay)},
              {"gamma_product", v.hadamard_gamma ? "hadamard" : "outer"},
              {"layer_norm", v.layer_norm}};
}

inline VariantFlags variant_from_json(const json& j) {
  check_keys(j,
             {"input_gate", "output_gate", "context", "decay", "gamma_product",
              "layer_norm"},
             "variant");
  VariantFlags v;
  v.input_gate = j.value("input_gate", true);
  v.output_gate = j.value("output_gate", true);
  if (j.contains("context")) {
    v.context = mode_from(j["context"].get<std::string>(), "variant.context");
  }
  if (j.contains("decay")) {
    v.decay = mode_from(j["decay"].get<std::string>(), "variant.decay");
  }
  if (j.contains("gamma_product")) {
    const std::string g = j["gamma_product"].get<std::string>();
    if (g != "outer" && g != "hadamard") {
      throw ConfigError("variant.gamma_product: unknown value '" + g + "'");
    }
    v.hadamard_gamma = g == "hadamard";
  }
  v.layer_norm = j.value("layer_norm", true);
  return v;
}

}  // namespace ffm::detail
