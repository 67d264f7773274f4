#include "ffm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "ffm/ops.hpp"
#include "ffm/rng.hpp"
#include "serialize_common.hpp"

namespace ffm {

namespace {

using nlohmann::json;

Tensor padded_inputs(const TaskBatch& batch, std::size_t width) {
  const std::size_t B = batch.B, T = batch.T, v = batch.vocab;
  if (width < v) {
    throw ConfigError("model input width " + std::to_string(width) +
                      " is smaller than vocab " + std::to_string(v));
  }
  Tensor X = Tensor::real({T, B, width});
  const auto& o = batch.observations.rdata();
  auto& x = X.rdata();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t src = (b * T + t) * v;
      const std::size_t dst = (t * B + b) * width;
      for (std::size_t i = 0; i < v; ++i) x[dst + i] = o[src + i];
    }
  }
  return X;
}

TaskBatch make_batch(const TrainConfig& cfg, std::size_t B,
                     std::uint64_t seed) {
  switch (cfg.task) {
    case TaskKind::RepeatPrevious:
      return gen_repeat_previous(B, cfg.T, cfg.k, cfg.vocab, seed);
    case TaskKind::CopyFirst:
      return gen_copy_first(B, cfg.T, cfg.vocab, seed);
  }
  throw ConfigError("unknown task kind");
}

void validate(const TrainConfig& cfg) {
  if (cfg.vocab < 2) throw ConfigError("config: vocab must be >= 2");
  if (cfg.batch < 1 || cfg.eval_batch < 1) {
    throw ConfigError("config: batch sizes must be >= 1");
  }
  if (cfg.eval_every < 1) throw ConfigError("config: eval_every must be >= 1");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) {
    throw ConfigError("config: learning rate must be finite and >= 0");
  }
  if (cfg.task == TaskKind::RepeatPrevious && cfg.k >= cfg.T) {
    throw ConfigError("config: repeat_previous needs k < T, got k=" +
                      std::to_string(cfg.k) + " T=" + std::to_string(cfg.T));
  }
}

std::vector<double> flatten(const Tensor& t) {
  return t.rdata();
}

}  // namespace

Model build_model(const TrainConfig& cfg, std::uint64_t seed) {
  Model model;
  model.kind = cfg.model;
  const std::size_t hidden = cfg.hidden == 0 ? 2 * cfg.m * cfg.c : cfg.hidden;
  switch (cfg.model) {
    case ModelKind::Ffm:
      model.ffm =
          cfg.init == InitKind::Informed
              ? informed_init(cfg.d, cfg.m, cfg.c,
                              {cfg.t_alpha_lo, cfg.t_alpha_hi},
                              {cfg.t_omega_lo, cfg.t_omega_hi}, seed,
                              cfg.variant, cfg.max_chunk_len)
              : init(cfg.d, cfg.m, cfg.c, cfg.t_e, cfg.beta, seed, cfg.variant,
                     cfg.max_chunk_len);
      break;
    case ModelKind::Gru: {
      model.gru = gru_init(cfg.vocab, hidden, seed);
      Rng head_rng = Rng(seed).split();
      model.gru_head = uniform_affine(hidden, cfg.vocab, head_rng);
      break;
    }
    case ModelKind::Mlp:
      model.mlp = mlp_init(cfg.vocab, hidden, cfg.vocab, seed);
      break;
  }
  return model;
}

std::vector<NamedTensor> named_arrays(const Model& model) {
  switch (model.kind) {
    case ModelKind::Ffm:
      return named_arrays(model.ffm);
    case ModelKind::Gru: {
      std::vector<NamedTensor> out = named_arrays(model.gru);
      out.push_back({"head.w", model.gru_head.w});
      out.push_back({"head.b", model.gru_head.b});
      return out;
    }
    case ModelKind::Mlp:
      return named_arrays(model.mlp);
  }
  return {};
}

std::vector<Tensor> trainable_params(const Model& model) {
  std::vector<Tensor> out;
  for (const NamedTensor& nt : named_arrays(model)) {
    if (nt.t.requires_grad()) out.push_back(nt.t);
  }
  return out;
}

Tensor model_logits(const Model& model, const TaskBatch& batch,
                    std::size_t chunk) {
  const std::size_t B = batch.B, T = batch.T, v = batch.vocab;
  switch (model.kind) {
    case ModelKind::Ffm: {
      const std::size_t d = model.ffm.dims.d;
      Tensor X = padded_inputs(batch, d);
      Tensor carry = Tensor::complex({B, model.ffm.dims.m, model.ffm.dims.c});
      Tensor Y = forward_batched(model.ffm, X, carry, chunk).Y;
      if (d > v) Y = ops::narrow(Y, 2, 0, v);
      return ops::reshape(Y, {T * B, v});
    }
    case ModelKind::Gru: {
      Tensor X = padded_inputs(batch, model.gru.d);
      Tensor h0 = Tensor::real({B, model.gru.h});
      Tensor Y = gru_forward_batched(model.gru, X, h0).Y;
      Tensor flat = ops::reshape(Y, {T * B, model.gru.h});
      return ops::add(ops::matmul(flat, model.gru_head.w), model.gru_head.b);
    }
    case ModelKind::Mlp: {
      Tensor X = padded_inputs(batch, model.mlp.d);
      return mlp_forward(model.mlp, ops::reshape(X, {T * B, model.mlp.d}));
    }
  }
  throw ConfigError("unknown model kind");
}

void scored_rows(const TaskBatch& batch, std::vector<std::size_t>& targets,
                 std::vector<std::uint8_t>& mask) {
  const std::size_t B = batch.B, T = batch.T;
  targets.resize(B * T);
  mask.resize(B * T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      targets[t * B + b] = batch.targets[b * T + t];
      mask[t * B + b] = batch.mask[b * T + t];
    }
  }
}

Optimizer::Optimizer(OptKind kind, double lr, double beta1, double beta2,
                     double eps, std::vector<Tensor> params)
    : kind_(kind), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps),
      params_(std::move(params)) {
  for (const Tensor& p : params_) {
    if (!p.defined() || p.dtype() != DType::Real64) {
      throw ConfigError("optimizer: parameters must be defined real tensors");
    }
  }
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].size(), 0.0);
    v_[i].assign(params_[i].size(), 0.0);
  }
}

void Optimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    auto& val = params_[i].rdata();
    const auto& g = params_[i].rgrad();
    if (kind_ == OptKind::Sgd) {
      for (std::size_t j = 0; j < val.size(); ++j) val[j] -= lr_ * g[j];
      continue;
    }
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < val.size(); ++j) {
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Optimizer::zero_grad() {
  for (const Tensor& p : params_) p.zero_grad();
}

EvalMetrics evaluate_batch(const Model& model, const TaskBatch& batch,
                           std::size_t chunk) {
  std::vector<std::size_t> targets;
  std::vector<std::uint8_t> mask;
  scored_rows(batch, targets, mask);
  Tensor logits = model_logits(model, batch, chunk);
  EvalMetrics out;
  out.loss = ops::masked_cross_entropy(logits, targets, mask).item();
  out.accuracy = ops::masked_accuracy(logits, targets, mask);
  return out;
}

RunRecord train(const TrainConfig& cfg) {
  validate(cfg);
  Rng master(cfg.seed);
  const std::uint64_t model_seed = master.raw();
  const std::uint64_t eval_seed = master.raw();

  RunRecord rec;
  rec.config = cfg;
  rec.model = build_model(cfg, model_seed);
  Optimizer opt(cfg.opt, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                trainable_params(rec.model));

  const TaskBatch eval_set = make_batch(cfg, cfg.eval_batch, eval_seed);
  const auto start = std::chrono::steady_clock::now();
  auto record_eval = [&](std::size_t at) {
    EvalMetrics metrics = evaluate_batch(rec.model, eval_set, cfg.chunk);
    EvalPoint pt;
    pt.step = at;
    pt.loss = metrics.loss;
    pt.accuracy = metrics.accuracy;
    pt.seconds = std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - start)
                     .count();
    if (cfg.model == ModelKind::Ffm) {
      pt.t_alpha = flatten(trace_durability(rec.model.ffm, cfg.beta));
      pt.t_omega = flatten(context_period(rec.model.ffm));
    }
    rec.points.push_back(std::move(pt));
  };

  record_eval(0);
  std::vector<std::size_t> targets;
  std::vector<std::uint8_t> mask;
  for (std::size_t s = 1; s <= cfg.steps; ++s) {
    const TaskBatch batch = make_batch(cfg, cfg.batch, master.raw());
    scored_rows(batch, targets, mask);
    double loss_val = 0.0;
    {
      Tape tape;
      Tensor loss = ops::masked_cross_entropy(
          model_logits(rec.model, batch, cfg.chunk), targets, mask);
      loss_val = loss.item();
      if (!std::isfinite(loss_val)) {
        throw StabilityError("training diverged at step " + std::to_string(s));
      }
      tape.backward(loss);
    }
    opt.step();
    opt.zero_grad();
    if (s % cfg.eval_every == 0 || s == cfg.steps) record_eval(s);
  }
  return rec;
}

EvalMetrics evaluate(const Model& model, const TrainConfig& cfg) {
  validate(cfg);
  Rng master(cfg.seed);
  master.raw();  // model seed slot, unused here
  const std::uint64_t eval_seed = master.raw();
  return evaluate_batch(model, make_batch(cfg, cfg.eval_batch, eval_seed),
                        cfg.chunk);
}

std::string run_record_csv(const RunRecord& rec) {
  std::string out = "step,loss,accuracy,seconds\n";
  char buf[160];
  for (const EvalPoint& pt : rec.points) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.6f\n", pt.step, pt.loss,
                  pt.accuracy, pt.seconds);
    out += buf;
  }
  return out;
}

namespace {

const char* opt_name(OptKind k) {
  return k == OptKind::Adam ? "adam" : "sgd";
}

const char* task_name(TaskKind k) {
  return k == TaskKind::RepeatPrevious ? "repeat_previous" : "copy_first";
}

json config_to_json(const TrainConfig& cfg) {
  json j;
  j["model"] = detail::model_name(cfg.model);
  j["d"] = cfg.d;
  j["m"] = cfg.m;
  j["c"] = cfg.c;
  j["hidden"] = cfg.hidden;
  j["variant"] = detail::variant_json(cfg.variant);
  j["init"] = cfg.init == InitKind::Informed ? "informed" : "default";
  j["t_alpha"] = {cfg.t_alpha_lo, cfg.t_alpha_hi};
  j["t_omega"] = {cfg.t_omega_lo, cfg.t_omega_hi};
  j["t_e"] = cfg.t_e;
  j["beta"] = cfg.beta;
  j["max_chunk_len"] = cfg.max_chunk_len;
  j["chunk"] = cfg.chunk;
  j["task"] = json{
      {"name", task_name(cfg.task)}, {"T", cfg.T}, {"k", cfg.k},
      {"vocab", cfg.vocab}};
  j["opt"] = json{{"kind", opt_name(cfg.opt)},
                  {"lr", cfg.lr},
                  {"beta1", cfg.adam_beta1},
                  {"beta2", cfg.adam_beta2},
                  {"eps", cfg.adam_eps}};
  j["batch"] = cfg.batch;
  j["steps"] = cfg.steps;
  j["eval_every"] = cfg.eval_every;
  j["eval_batch"] = cfg.eval_batch;
  j["seed"] = cfg.seed;
  return j;
}

TrainConfig config_from_json(const json& j) {
  detail::check_keys(j,
             {"model", "d", "m", "c", "hidden", "variant", "init", "t_alpha",
              "t_omega", "t_e", "beta", "max_chunk_len", "chunk", "task",
              "opt", "batch", "steps", "eval_every", "eval_batch", "seed"},
             "config");
  TrainConfig cfg;
  if (j.contains("model")) {
    cfg.model =
        detail::model_from(j["model"].get<std::string>(), "config.model");
  }
  cfg.d = j.value("d", cfg.d);
  cfg.m = j.value("m", cfg.m);
  cfg.c = j.value("c", cfg.c);
  cfg.hidden = j.value("hidden", cfg.hidden);
  if (j.contains("variant")) cfg.variant = detail::variant_from_json(j["variant"]);
  if (j.contains("init")) {
    const std::string s = j["init"].get<std::string>();
    if (s == "default") cfg.init = InitKind::Default;
    else if (s == "informed") cfg.init = InitKind::Informed;
    else throw ConfigError("config.init: unknown value '" + s + "'");
  }
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const json& r = j[key];
    if (!r.is_array() || r.size() != 2) {
      throw ConfigError(std::string("config.") + key +
                        ": expected [lo, hi]");
    }
    lo = r[0].get<double>();
    hi = r[1].get<double>();
  };
  range("t_alpha", cfg.t_alpha_lo, cfg.t_alpha_hi);
  range("t_omega", cfg.t_omega_lo, cfg.t_omega_hi);
  cfg.t_e = j.value("t_e", cfg.t_e);
  cfg.beta = j.value("beta", cfg.beta);
  cfg.max_chunk_len = j.value("max_chunk_len", cfg.max_chunk_len);
  cfg.chunk = j.value("chunk", cfg.chunk);
  if (j.contains("task")) {
    const json& t = j["task"];
    detail::check_keys(t, {"name", "T", "k", "vocab"}, "task");
    if (t.contains("name")) {
      const std::string n = t["name"].get<std::string>();
      if (n == "repeat_previous") cfg.task = TaskKind::RepeatPrevious;
      else if (n == "copy_first") cfg.task = TaskKind::CopyFirst;
      else throw ConfigError("task.name: unknown value '" + n + "'");
    }
    cfg.T = t.value("T", cfg.T);
    cfg.k = t.value("k", cfg.k);
    cfg.vocab = t.value("vocab", cfg.vocab);
  }
  if (j.contains("opt")) {
    const json& o = j["opt"];
    detail::check_keys(o, {"kind", "lr", "beta1", "beta2", "eps"}, "opt");
    if (o.contains("kind")) {
      const std::string n = o["kind"].get<std::string>();
      if (n == "adam") cfg.opt = OptKind::Adam;
      else if (n == "sgd") cfg.opt = OptKind::Sgd;
      else throw ConfigError("opt.kind: unknown value '" + n + "'");
    }
    cfg.lr = o.value("lr", cfg.lr);
    cfg.adam_beta1 = o.value("beta1", cfg.adam_beta1);
    cfg.adam_beta2 = o.value("beta2", cfg.adam_beta2);
    cfg.adam_eps = o.value("eps", cfg.adam_eps);
  }
  cfg.batch = j.value("batch", cfg.batch);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.eval_every = j.value("eval_every", cfg.eval_every);
  cfg.eval_batch = j.value("eval_batch", cfg.eval_batch);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

}  // namespace

std::string run_record_json(const RunRecord& rec) {
  json j;
  j["config"] = config_to_json(rec.config);
  json evals = json::array();
  for (const EvalPoint& pt : rec.points) {
    json e;
    e["step"] = pt.step;
    e["loss"] = pt.loss;
    e["accuracy"] = pt.accuracy;
    e["seconds"] = pt.seconds;
    if (!pt.t_alpha.empty()) {
      e["t_alpha"] = pt.t_alpha;
      e["t_omega"] = pt.t_omega;
    }
    evals.push_back(std::move(e));
  }
  j["evals"] = std::move(evals);
  return j.dump(2);
}

std::string train_config_json(const TrainConfig& cfg) {
  return config_to_json(cfg).dump(2);
}

TrainConfig parse_train_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace ffm
