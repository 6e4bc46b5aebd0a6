#pragma once

#include <map>
#include <string>
#include <vector>

#include "gcn/augment.hpp"
#include "gcn/training.hpp"

namespace gcn {

/// Environment variable naming the default root for run outputs.
inline constexpr const char* kOutputRootEnv = "GCN_OUTPUT_ROOT";

struct DatasetConfig {
  /// "synthetic", "mnist" or "manifest".
  std::string source = "synthetic";
  std::uint64_t seed = 1;
  Index resolution = 28;
  std::vector<std::string> transforms = transform_names();
  // glyphs
  Index identities = 10;
  Index expressions = 4;
  Index session = 0;
  Index identity_offset = 0;
  // digits
  std::vector<Index> digits{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::string> colors{"red", "green", "blue"};
  Index variants = 1;
  // mnist
  std::string mnist_images;
  std::string mnist_labels;
  Index per_digit = 100;
  // manifest
  std::string manifest;
  /// Rules as JSON objects, resolved against the schema when the dataset is built.
  Json holdout = Json::array();
};

struct ModelConfig {
  /// "full" or "compact"; ignored for a network whose explicit spec is given.
  std::string preset = "compact";
  Json generator = nullptr;
  Json classifier = nullptr;
};

struct AugmentSettings {
  Index identities = 10;
  Index expressions = 4;
  double alpha = 0.5;
  double threshold = 0.5;
};

struct RecognizerSettings {
  std::string feature = "expression";
  AdamHyper adam{0.0002, 0.9, 0.999, 1e-8, 0.0005};
  Index batch_size = 64;
  Index total_batches = 40000;
  Index halving_period = 0;
  std::uint64_t seed = 0;
  bool synthesized_includes_original = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  /// "digits" or "glyphs".
  std::string task = "digits";
  /// Empty means <$GCN_OUTPUT_ROOT or "runs">/<name>.
  std::string output_dir;
  DatasetConfig dataset;
  ModelConfig model;
  /// Per-feature classification weights by name; missing features keep 10.
  std::map<std::string, double> feature_weights;
  TrainConfig train;
  AugmentSettings augment;
  RecognizerSettings recognizer;

  void validate() const;
};

ExperimentConfig config_from_json(const Json& j);
OrderedJson to_json(const ExperimentConfig& config);

/// Applies "dotted.key=value"; the value is parsed as JSON when possible, else taken as a string.
void apply_override(Json& j, const std::string& assignment);
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

std::string resolve_output_dir(const ExperimentConfig& config);
FeatureSchema experiment_schema(const ExperimentConfig& config);
/// The full dataset before holdout rules are applied.
Dataset build_dataset(const ExperimentConfig& config);
std::vector<HoldoutRule> holdout_rules(const ExperimentConfig& config, const FeatureSchema& schema);
GeneratorSpec generator_spec(const ExperimentConfig& config, const FeatureSchema& schema);
ClassifierSpec classifier_spec(const ExperimentConfig& config, const FeatureSchema& schema);
RecognizerConfig recognizer_config(const ExperimentConfig& config);

}  // namespace gcn
