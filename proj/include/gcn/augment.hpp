#pragma once

#include <string>
#include <vector>

#include "gcn/dataset.hpp"
#include "gcn/models.hpp"
#include "gcn/optimizer.hpp"

namespace gcn {

/// alpha at a, 1 - alpha at b, zeros elsewhere.
Tensor<float> blend_identities(Index a, Index b, Index identities, double alpha = 0.5);

struct AugmentOptions {
  Index identities = 10;
  Index expressions = 4;
  double alpha = 0.5;
  std::string identity_feature = "identity";
  std::string expression_feature = "expression";
  Index batch_size = 64;
};

/// One image per ordered identity pair (a, b) per expression, P*P*E in total.
/// Self pairs use the pure one-hot. Other features are held at class 0, the
/// canonical transform. Images are clamped to [0,1]; the single label is the
/// expression and files are laid out as <expression>/<a>_<b>.ppm.
Dataset generate_augmented_dataset(const GeneratorModel<float>& gen, const AugmentOptions& options);

struct Rejection {
  std::string source;
  double probability = 0;
};

struct FilterResult {
  Dataset kept;
  std::vector<Rejection> rejected;
};

/// Keeps a sample iff the classifier's softmax probability for its labelled
/// class on `feature` is >= threshold.
FilterResult quality_filter(const Dataset& samples, const ClassifierModel<float>& cls, const std::string& feature,
                            double threshold);

/// Softmax probabilities of one head, [N, K].
Tensor<float> head_probabilities(const ClassifierModel<float>& cls, const std::vector<Sample>& samples, Index head,
                                 Index batch_size = 64);

struct RecognizerConfig {
  /// Conv stack and head width; the schema is replaced by the single target feature.
  ClassifierSpec architecture;
  std::string feature = "expression";
  AdamHyper adam{0.0002, 0.9, 0.999, 1e-8, 0.0005};
  Index batch_size = 64;
  Index total_batches = 40000;
  /// 0 keeps the learning rate constant.
  Index halving_period = 0;
  std::uint64_t seed = 0;
  /// Synthesized arm trains on original plus synthesized samples.
  bool synthesized_includes_original = false;

  void validate() const;
};

struct RecognizerResult {
  ClassifierModel<float> model;
  double accuracy = 0;
  std::vector<double> losses;
};

/// Column of `feature` labels, looked up by name in the dataset's own schema.
std::vector<Index> feature_labels(const Dataset& data, const std::string& feature);
ClassifierModel<float> build_recognizer(const RecognizerConfig& config, Index classes);
double recognizer_accuracy(const ClassifierModel<float>& model, const Dataset& test, const std::string& feature);
RecognizerResult train_recognizer(const Dataset& train, const Dataset& test, const RecognizerConfig& config);

struct AugmentationReport {
  Index generated = 0;
  Index filtered_out = 0;
  Index kept = 0;
  double original_accuracy = 0;
  double synthesized_accuracy = 0;
  std::uint64_t test_checksum = 0;
  std::uint64_t original_checksum = 0;
  std::uint64_t synthesized_checksum = 0;
  std::uint64_t seed = 0;
  Index original_size = 0;
  Index synthesized_size = 0;
  Index test_size = 0;
  Json config = Json::object();

  void validate() const;
};

/// Trains one recognizer per arm with the same config and seed and scores both
/// on the same test set. `generated`/`filtered_out` come from the augmentation step.
AugmentationReport compare_augmentation(const Dataset& original, const Dataset& synthesized, const Dataset& test,
                                        const RecognizerConfig& config, Index generated, Index filtered_out);

OrderedJson to_json(const AugmentationReport& report);
AugmentationReport augmentation_report_from_json(const Json& j, const std::string& path);

}  // namespace gcn
