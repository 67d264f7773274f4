#pragma once

#include <string>

#include "ffm/trainer.hpp"

namespace ffm {

// Serializes a trained model to a single JSON document: model kind, the
// dimensions and flags needed to rebuild it, and every array base64-encoded
// as little-endian float64 in the documented order. Round trips bit-exactly.
std::string save_model(const Model& model);

// Strict inverse of save_model: unknown keys, missing or extra arrays, and
// shape mismatches are all ConfigErrors.
Model load_model(const std::string& text);

}  // namespace ffm
