#include "icvrag/config.hpp"

#include <stdexcept>

namespace icvrag {

using nlohmann::json;

namespace {

const char* pooling_name(Pooling p) { return p == Pooling::kMean ? "mean" : "max"; }

Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::kMean;
  if (s == "max") return Pooling::kMax;
  throw std::invalid_argument("unknown pooling \"" + s + "\" (expected mean or max)");
}

const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kMomentum: return "momentum";
    case OptimizerKind::kAdam: return "adam";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "momentum") return OptimizerKind::kMomentum;
  if (s == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer \"" + s + "\" (expected sgd, momentum or adam)");
}

template <typename T>
T get(const json& j, const char* key) {
  if (!j.contains(key)) throw std::invalid_argument(std::string("config is missing \"") + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config field \"") + key + "\" has the wrong type");
  }
}

}  // namespace

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  icv.validate();
  if (db.slots < 1 || db.d_ff < 1) throw std::invalid_argument("db encoder dimensions must be >= 1");
  if (db.d_db != encoder.d_model)
    throw std::invalid_argument("d_db must equal d_model: cosine alignment and the ICV shift share one space");
  if (decoder.d_model != encoder.d_model) throw std::invalid_argument("decoder and encoder widths must match");
  if (top_n < 1) throw std::invalid_argument("top_n must be >= 1");
  if (limits.question < 1 || limits.answer < 1 || limits.document < 1)
    throw std::invalid_argument("length limits must be >= 1");
  if (static_cast<Index>(limits.question) > encoder.max_len)
    throw std::invalid_argument("max_question_len exceeds the encoder position table");
  if (static_cast<Index>(limits.answer) + 1 > decoder.max_len)
    throw std::invalid_argument("max_answer_len + 1 exceeds the decoder position table");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be finite and >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(tau > 0.0)) throw std::invalid_argument("alpha threshold tau must be > 0");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("alpha decay gamma must lie in (0, 1)");
  if (!(alpha_min >= 0.0 && alpha_min < 1.0)) throw std::invalid_argument("alpha_min must lie in [0, 1)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in [0, 1)");
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("clip_norm must be >= 0");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (eval_ks.empty()) throw std::invalid_argument("eval_ks must not be empty");
  for (auto k : eval_ks)
    if (k < 1) throw std::invalid_argument("eval_ks entries must be >= 1");
  if (retrieve_n < 1) throw std::invalid_argument("retrieve_n must be >= 1");
}

EncoderConfig reference_encoder_config(const ModelConfig& m) {
  EncoderConfig r = m.encoder;
  r.d_model = m.db.d_db;
  r.max_len = static_cast<Index>(m.limits.document);
  r.pooling = Pooling::kMean;
  r.pre_norm = false;
  return r;
}

json to_json(const ModelConfig& c) {
  return json{{"d_model", c.encoder.d_model},
              {"d_ff", c.encoder.d_ff},
              {"layers", c.encoder.layers},
              {"heads", c.encoder.heads},
              {"t_max", c.encoder.max_len},
              {"pooling", pooling_name(c.encoder.pooling)},
              {"pre_norm", c.encoder.pre_norm},
              {"slots", c.db.slots},
              {"db_d_ff", c.db.d_ff},
              {"d_db", c.db.d_db},
              {"dec_layers", c.decoder.layers},
              {"dec_max_len", c.decoder.max_len},
              {"latent_shift", c.decoder.latent_shift},
              {"key_shift", c.decoder.key_shift},
              {"icv_pooling", pooling_name(c.icv.pooling)},
              {"icv_scale", c.icv.icv_scale},
              {"train_icv_scale", c.train_icv_scale},
              {"stop_cos_gradient", c.stop_cos_gradient},
              {"top_n", c.top_n},
              {"max_question_len", c.limits.question},
              {"max_answer_len", c.limits.answer},
              {"max_doc_len", c.limits.document}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.encoder.d_model = get<Index>(j, "d_model");
  c.encoder.d_ff = get<Index>(j, "d_ff");
  c.encoder.layers = get<int>(j, "layers");
  c.encoder.heads = get<int>(j, "heads");
  c.encoder.max_len = get<Index>(j, "t_max");
  c.encoder.pooling = parse_pooling(get<std::string>(j, "pooling"));
  c.encoder.pre_norm = get<bool>(j, "pre_norm");
  c.db.slots = get<Index>(j, "slots");
  c.db.d_ff = get<Index>(j, "db_d_ff");
  c.db.d_db = get<Index>(j, "d_db");
  c.decoder.d_model = c.encoder.d_model;
  c.decoder.d_ff = c.encoder.d_ff;
  c.decoder.heads = c.encoder.heads;
  c.decoder.pre_norm = c.encoder.pre_norm;
  c.decoder.layers = get<int>(j, "dec_layers");
  c.decoder.max_len = get<Index>(j, "dec_max_len");
  c.decoder.latent_shift = get<bool>(j, "latent_shift");
  c.decoder.key_shift = get<bool>(j, "key_shift");
  c.icv.pooling = parse_pooling(get<std::string>(j, "icv_pooling"));
  c.icv.icv_scale = get<double>(j, "icv_scale");
  c.train_icv_scale = get<bool>(j, "train_icv_scale");
  c.stop_cos_gradient = get<bool>(j, "stop_cos_gradient");
  c.top_n = get<std::size_t>(j, "top_n");
  c.limits.question = get<std::size_t>(j, "max_question_len");
  c.limits.answer = get<std::size_t>(j, "max_answer_len");
  c.limits.document = get<std::size_t>(j, "max_doc_len");
  return c;
}

json to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},         {"batch_size", c.batch_size}, {"epochs", c.epochs},
              {"seed", c.seed},     {"tau", c.tau},               {"gamma", c.gamma},
              {"alpha_min", c.alpha_min}, {"optimizer", optimizer_name(c.optimizer)},
              {"momentum", c.momentum},   {"beta2", c.beta2},
              {"clip_norm", c.clip_norm}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.lr = get<double>(j, "lr");
  c.batch_size = get<std::size_t>(j, "batch_size");
  c.epochs = get<std::size_t>(j, "epochs");
  c.seed = get<std::uint64_t>(j, "seed");
  c.tau = get<double>(j, "tau");
  c.gamma = get<double>(j, "gamma");
  c.alpha_min = get<double>(j, "alpha_min");
  c.optimizer = parse_optimizer(get<std::string>(j, "optimizer"));
  c.momentum = get<double>(j, "momentum");
  c.beta2 = get<double>(j, "beta2");
  c.clip_norm = get<double>(j, "clip_norm");
  return c;
}

json to_json(const RunConfig& c) {
  json j = to_json(c.model);
  j.update(to_json(c.train));
  j["qa_path"] = c.qa_path;
  j["docs_path"] = c.docs_path;
  j["index_path"] = c.index_path;
  j["checkpoint_path"] = c.checkpoint_path;
  j["loss_log_path"] = c.loss_log_path;
  j["report_path"] = c.report_path;
  j["eval_ks"] = c.eval_ks;
  j["retrieve_n"] = c.retrieve_n;
  return j;
}

json default_run_config_json() { return to_json(RunConfig{}); }

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  const json defaults = default_run_config_json();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key())) throw std::invalid_argument("unknown config key \"" + it.key() + "\"");
  json merged = defaults;
  merged.update(j);
  RunConfig c;
  c.model = model_config_from_json(merged);
  c.train = train_config_from_json(merged);
  c.qa_path = get<std::string>(merged, "qa_path");
  c.docs_path = get<std::string>(merged, "docs_path");
  c.index_path = get<std::string>(merged, "index_path");
  c.checkpoint_path = get<std::string>(merged, "checkpoint_path");
  c.loss_log_path = get<std::string>(merged, "loss_log_path");
  c.report_path = get<std::string>(merged, "report_path");
  c.eval_ks = get<std::vector<std::size_t>>(merged, "eval_ks");
  c.retrieve_n = get<std::size_t>(merged, "retrieve_n");
  c.validate();
  return c;
}

void apply_override(json& flat, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override \"" + assignment + "\" is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  if (!default_run_config_json().contains(key)) throw std::invalid_argument("unknown config key \"" + key + "\"");
  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  flat[key] = value.is_discarded() ? json(raw) : value;
}

}  // namespace icvrag
