#pragma once

#include "icvrag/corpus.hpp"
#include "icvrag/db_encoder.hpp"
#include "icvrag/decoder.hpp"
#include "icvrag/encoder.hpp"
#include "icvrag/icv_fusion.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace icvrag {

struct ModelConfig {
  EncoderConfig encoder;
  DbEncoderConfig db;
  DecoderConfig decoder;
  IcvConfig icv;
  LengthLimits limits;
  std::size_t top_n = 5;
  bool train_icv_scale = true;
  bool stop_cos_gradient = false;  // keep L_cos from reaching the query encoder

  /// Throws std::invalid_argument on inconsistent dimensions.
  void validate() const;
};

enum class OptimizerKind { kSgd, kMomentum, kAdam };

struct TrainConfig {
  double lr = 5e-4;
  std::size_t batch_size = 10;
  std::size_t epochs = 1500;
  std::uint64_t seed = 42;
  double tau = 1.0;
  double gamma = 0.9;
  double alpha_min = 0.1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double momentum = 0.9;   // momentum coefficient; Adam beta1
  double beta2 = 0.999;    // Adam only
  double clip_norm = 0.0;  // 0 disables clipping

  void validate() const;
};

/// Everything a CLI run needs: file paths, model shape, training and eval knobs.
struct RunConfig {
  std::string qa_path = "qa.jsonl";
  std::string docs_path = "docs.jsonl";
  std::string index_path = "index.icvx";
  std::string checkpoint_path = "model.ckpt";
  std::string loss_log_path = "loss.csv";
  std::string report_path = "report.json";
  ModelConfig model;
  TrainConfig train;
  std::vector<std::size_t> eval_ks{1, 3, 5};
  std::size_t retrieve_n = 5;

  void validate() const;
};

/// Reference encoder shape used for the document index.
EncoderConfig reference_encoder_config(const ModelConfig& m);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Flat key/value JSON object; every key listed in default_run_config_json().
nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json default_run_config_json();

/// Applies "key=value" overrides. Values parse as JSON when possible, else as strings.
void apply_override(nlohmann::json& flat, const std::string& assignment);

}  // namespace icvrag
