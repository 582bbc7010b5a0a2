#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trajmine/evaluation.hpp"
#include "trajmine/flow.hpp"
#include "trajmine/scene_features.hpp"
#include "trajmine/training.hpp"

namespace trajmine {

enum class Stage { gen, ingest, features, train, score, mine, eval, ablate };
std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);

struct SynthConfig {
  std::size_t n_examples = 2000;
  double rare_rate = 0.05;
  double noise_std = 0.05;
  int lane_count = 3;
  double duration = 8.0;
};

struct DataConfig {
  std::string source = "synth";  // synth | csv
  std::filesystem::path csv_path;
  std::string unit = "feet";     // unit of csv_path; synthetic tracks are always meters
  std::size_t stride = 50;
  SynthConfig synth;
};

struct EvalConfig {
  std::size_t random_seeds = 20;
  bool horizon_averaged = false;
  std::filesystem::path external_errors;  // optional example_index,error_m CSV
  std::size_t histogram_bins = 40;
};

struct PipelineConfig {
  DataConfig data;
  PartitionScheme scheme{PartitionMode::fix_seg_num, 5.0};
  FlowConfig flow;
  TrainConfig train;
  double lambda = 0.5;
  std::vector<double> r{0.05, 0.10, 0.15, 0.20};
  KalmanConfig kalman;
  EvalConfig eval;
  std::uint64_t seed = 1;
  std::filesystem::path out = "trajmine_out";

  void validate() const;
};

// Strict JSON reader: unknown keys and type mismatches raise ConfigError with
// the line they occur on.
PipelineConfig parse_config(const std::string& json_text, const std::string& source_name = "<config>");
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& config);

struct ConfigOverrides {
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<double>> r;
  std::optional<double> lambda;
  std::optional<std::string> scheme;
};
void apply_overrides(PipelineConfig& config, const ConfigOverrides& overrides);
std::vector<double> parse_ratio_list(const std::string& text);

// Each stage hash covers its own config section and the hash of the stage
// feeding it, so changing an upstream setting invalidates every consumer.
struct StageHashes {
  std::string gen;
  std::string ingest;
  std::string features;
  std::string train;
  std::string score;
  std::string mine;
  std::string eval;
};
StageHashes stage_hashes(const PipelineConfig& config);

struct ArtifactPaths {
  std::filesystem::path tracks, rare_flags, scene, examples, features_x, features_z, model_x, model_z, trainlog_x,
      trainlog_z, scores;
  std::filesystem::path mined_csv(double r) const;
  std::filesystem::path mined_json(double r) const;
  std::filesystem::path eval_json(double r) const;
  std::filesystem::path eval_examples_csv() const;
  std::filesystem::path histogram_csv() const;
  std::filesystem::path root;
};
ArtifactPaths artifact_paths(const std::filesystem::path& out);

// "0.05" -> "0.05", used in per-r file names.
std::string ratio_tag(double r);

struct StageResult {
  std::vector<std::filesystem::path> artifacts;
  std::vector<EvalReport> reports;  // eval and ablate
};

StageResult run_stage(Stage stage, const PipelineConfig& config);
// gen (synthetic sources only) through eval.
StageResult run_pipeline(const PipelineConfig& config);

}  // namespace trajmine
