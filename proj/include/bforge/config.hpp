#pragma once

// Run configuration: a versioned JSON document merging scene, poisoning, training, defence
// and evaluation settings.

#include "bforge/attack.hpp"
#include "bforge/defense.hpp"
#include "bforge/eval.hpp"
#include "bforge/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace bforge {

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_root = "runs";

  SceneSpec scene;
  int train_images = 500;
  int test_images = 200;
  std::uint64_t test_seed = 999;

  TriggerSpec trigger;
  PoisonConfig poison;

  TrainHparams train;
  std::uint64_t init_seed = 7;

  DefenseConfig defense;
  double clean_fraction = 0.05;

  EvalSettings eval;
  std::uint64_t trigger_seed = 5;
  double min_rma_asr = 0.8;
  double min_oda_asr = 0.7;
  double min_map_ratio = 0.9;

  void validate() const;
};

/// Parses and validates; unknown keys and type errors raise InvalidConfig naming the field path.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Fully populated JSON form (every field, canonical key order).
nlohmann::json to_json(const RunConfig& cfg);

/// Lowercase hex SHA-256 of the canonical JSON form.
std::string config_digest(const RunConfig& cfg);

}  // namespace bforge
