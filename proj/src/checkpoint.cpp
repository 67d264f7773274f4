#include "ffm/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "ffm/rng.hpp"
#include "serialize_common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

namespace ffm {

namespace {

using nlohmann::json;

constexpr char kFormat[] = "ffm-checkpoint-v1";
constexpr char kB64[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string encode_doubles(const std::vector<double>& vals) {
  const unsigned char* p = reinterpret_cast<const unsigned char*>(vals.data());
  const std::size_t n = vals.size() * sizeof(double);
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    unsigned v = p[i] << 16;
    if (i + 1 < n) v |= p[i + 1] << 8;
    if (i + 2 < n) v |= p[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < n ? kB64[(v >> 6) & 63] : '=';
    out += i + 2 < n ? kB64[v & 63] : '=';
  }
  return out;
}

std::vector<double> decode_doubles(const std::string& s, const char* name) {
  auto bad = [&](const char* why) {
    throw ConfigError(std::string("checkpoint array '") + name + "': " + why);
  };
  if (s.size() % 4 != 0) bad("base64 length is not a multiple of 4");
  int lut[256];
  std::fill(std::begin(lut), std::end(lut), -1);
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kB64[i])] = i;
  std::vector<unsigned char> bytes;
  bytes.reserve(s.size() / 4 * 3);
  for (std::size_t i = 0; i < s.size(); i += 4) {
    int pad = 0;
    unsigned v = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      const char ch = s[i + j];
      if (ch == '=') {
        if (i + 4 != s.size() || j < 2) bad("misplaced padding");
        ++pad;
        v <<= 6;
        continue;
      }
      if (pad > 0) bad("data after padding");
      const int code = lut[static_cast<unsigned char>(ch)];
      if (code < 0) bad("invalid base64 character");
      v = v << 6 | static_cast<unsigned>(code);
    }
    bytes.push_back((v >> 16) & 0xff);
    if (pad < 2) bytes.push_back((v >> 8) & 0xff);
    if (pad < 1) bytes.push_back(v & 0xff);
  }
  if (bytes.size() % sizeof(double) != 0) {
    bad("byte count is not a multiple of eight");
  }
  std::vector<double> vals(bytes.size() / sizeof(double));
  std::memcpy(vals.data(), bytes.data(), bytes.size());
  return vals;
}

json arrays_json(const Model& model) {
  json arrays = json::object();
  for (const NamedTensor& nt : named_arrays(model)) {
    arrays[nt.name] = json{{"shape", nt.t.shape()},
                           {"data", encode_doubles(nt.t.rdata())}};
  }
  return arrays;
}

void fill_arrays(Model& model, const json& arrays) {
  if (!arrays.is_object()) {
    throw ConfigError("checkpoint: 'arrays' must be an object");
  }
  std::vector<NamedTensor> named = named_arrays(model);
  if (arrays.size() != named.size()) {
    throw ConfigError("checkpoint: expected " + std::to_string(named.size()) +
                      " arrays, found " + std::to_string(arrays.size()));
  }
  for (NamedTensor& nt : named) {
    if (!arrays.contains(nt.name)) {
      throw ConfigError("checkpoint: missing array '" + nt.name + "'");
    }
    const json& a = arrays[nt.name];
    detail::check_keys(a, {"shape", "data"},
                       ("arrays." + nt.name).c_str());
    const Shape shape = a.at("shape").get<Shape>();
    if (shape != nt.t.shape()) {
      throw ConfigError("checkpoint array '" + nt.name +
                        "': shape does not match the declared dimensions");
    }
    std::vector<double> vals =
        decode_doubles(a.at("data").get<std::string>(), nt.name.c_str());
    auto& dst = nt.t.rdata();
    if (vals.size() != dst.size()) {
      throw ConfigError("checkpoint array '" + nt.name +
                        "': element count does not match its shape");
    }
    dst = std::move(vals);
  }
}

}  // namespace

std::string save_model(const Model& model) {
  json j;
  j["format"] = kFormat;
  j["model"] = detail::model_name(model.kind);
  switch (model.kind) {
    case ModelKind::Ffm: {
      const CellParams& p = model.ffm;
      j["dims"] = json{{"d", p.dims.d}, {"m", p.dims.m}, {"c", p.dims.c}};
      j["variant"] = detail::variant_json(p.variant);
      j["t_e"] = p.t_e;
      j["beta"] = p.beta;
      j["max_chunk_len"] = p.decay.max_chunk_len;
      break;
    }
    case ModelKind::Gru:
      j["dims"] = json{{"d", model.gru.d},
                       {"h", model.gru.h},
                       {"vocab", model.gru_head.b.size()}};
      break;
    case ModelKind::Mlp:
      j["dims"] = json{
          {"d", model.mlp.d}, {"h", model.mlp.h}, {"out", model.mlp.out}};
      break;
  }
  j["arrays"] = arrays_json(model);
  return j.dump(2);
}

Model load_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kFormat) {
    throw ConfigError("checkpoint: missing or unsupported format tag");
  }
  if (!j.contains("model") || !j.contains("dims") || !j.contains("arrays")) {
    throw ConfigError("checkpoint: needs 'model', 'dims', and 'arrays'");
  }
  const ModelKind kind =
      detail::model_from(j["model"].get<std::string>(), "checkpoint.model");
  const json& dims = j["dims"];

  Model model;
  model.kind = kind;
  switch (kind) {
    case ModelKind::Ffm: {
      detail::check_keys(j,
                         {"format", "model", "dims", "variant", "t_e", "beta",
                          "max_chunk_len", "arrays"},
                         "checkpoint");
      detail::check_keys(dims, {"d", "m", "c"}, "checkpoint.dims");
      VariantFlags variant;
      if (j.contains("variant")) {
        variant = detail::variant_from_json(j["variant"]);
      }
      model.ffm = init(dims.at("d").get<std::size_t>(),
                       dims.at("m").get<std::size_t>(),
                       dims.at("c").get<std::size_t>(),
                       j.value("t_e", std::size_t{1024}),
                       j.value("beta", 0.01), 0, variant,
                       j.value("max_chunk_len", std::size_t{1024}));
      break;
    }
    case ModelKind::Gru: {
      detail::check_keys(j, {"format", "model", "dims", "arrays"},
                         "checkpoint");
      detail::check_keys(dims, {"d", "h", "vocab"}, "checkpoint.dims");
      const auto h = dims.at("h").get<std::size_t>();
      const auto vocab = dims.at("vocab").get<std::size_t>();
      model.gru = gru_init(dims.at("d").get<std::size_t>(), h, 0);
      Rng rng(0);
      model.gru_head = uniform_affine(h, vocab, rng);
      break;
    }
    case ModelKind::Mlp: {
      detail::check_keys(j, {"format", "model", "dims", "arrays"},
                         "checkpoint");
      detail::check_keys(dims, {"d", "h", "out"}, "checkpoint.dims");
      model.mlp = mlp_init(dims.at("d").get<std::size_t>(),
                           dims.at("h").get<std::size_t>(),
                           dims.at("out").get<std::size_t>(), 0);
      break;
    }
  }
  fill_arrays(model, j["arrays"]);
  return model;
}

}  // namespace ffm
