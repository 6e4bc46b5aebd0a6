#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gcn/dataset.hpp"
#include "gcn/models.hpp"
#include "gcn/optimizer.hpp"

namespace gcn {

struct LossWeights {
  /// One weight per schema feature.
  std::vector<double> feature;
  double pixel = 1.0;

  static LossWeights from_schema(const FeatureSchema& schema, double pixel = 1.0) {
    return {schema.weights(), pixel};
  }

  void validate(Index features) const {
    if (static_cast<Index>(feature.size()) != features)
      throw SchemaError("loss weights: expected " + std::to_string(features) + " feature weights, got " +
                        std::to_string(feature.size()));
    bool any = pixel > 0;
    if (!(pixel >= 0) || !std::isfinite(pixel)) throw ConfigError("loss weights: pixel weight must be finite and >= 0");
    for (double w : feature) {
      if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights: feature weights must be finite and >= 0");
      any = any || w > 0;
    }
    if (!any) throw ConfigError("loss weights: at least one weight must be > 0");
  }

  /// Classification weights of 100 against a pixel weight of 1 trained poorly in the reference runs.
  bool known_unstable() const {
    if (feature.empty() || pixel != 1.0) return false;
    for (double w : feature)
      if (w != 100.0) return false;
    return true;
  }
};

struct TrainConfig {
  Index batch_size = 64;
  Index total_batches = 40000;
  Index halving_period = 1000;
  AdamHyper generator_adam;
  AdamHyper classifier_adam;
  double pixel_weight = 1.0;
  /// 0 writes checkpoints only at the end.
  Index checkpoint_every = 1000;
  std::uint64_t seed = 0;
  /// Also average the classifier's cross entropy on the real images into its update.
  bool classifier_sees_real = false;
  Index max_divergent_steps = 10;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (total_batches < 1) throw ConfigError("train.total_batches must be >= 1");
    if (halving_period < 1) throw ConfigError("train.halving_period must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (max_divergent_steps < 1) throw ConfigError("train.max_divergent_steps must be >= 1");
    generator_adam.validate();
    classifier_adam.validate();
  }
};

struct StepMetrics {
  Index batch = 0;
  double lr = 0;
  /// Squared error summed over pixels, averaged over the batch.
  double pixel_loss = 0;
  /// Cross entropy per feature on the synthesized images.
  std::vector<double> ce;
};

class TrainingDivergence : public Error {
public:
  TrainingDivergence(const std::string& what, StepMetrics metrics) : Error(what), metrics_(std::move(metrics)) {}
  const StepMetrics& metrics() const { return metrics_; }

private:
  StepMetrics metrics_;
};

/// Sum over features of weight_f times the batch-mean cross entropy of head f.
template <typename Scalar>
Var<Scalar> classifier_objective(const std::vector<Var<Scalar>>& logits, const std::vector<std::vector<Index>>& labels,
                                 const LossWeights& weights) {
  if (logits.size() != labels.size() || logits.size() != weights.feature.size())
    throw SchemaError("classifier_objective: " + std::to_string(logits.size()) + " heads, " +
                      std::to_string(labels.size()) + " label columns, " + std::to_string(weights.feature.size()) +
                      " weights");
  if (logits.empty()) throw SchemaError("classifier_objective: no features");
  Var<Scalar> total;
  for (std::size_t f = 0; f < logits.size(); ++f) {
    auto term = scale(softmax_cross_entropy(logits[f], std::span<const Index>(labels[f])),
                      static_cast<Scalar>(weights.feature[f]));
    total = f == 0 ? term : total + term;
  }
  return total;
}

template <typename Scalar>
Var<Scalar> generator_objective(const Var<Scalar>& synth, const Var<Scalar>& real, const std::vector<Var<Scalar>>& logits,
                                const std::vector<std::vector<Index>>& labels, const LossWeights& weights) {
  return scale(mse_pixel_loss(synth, real), static_cast<Scalar>(weights.pixel)) +
         classifier_objective(logits, labels, weights);
}

/// labels[f][i] from per-sample label rows.
std::vector<std::vector<Index>> label_columns(const std::vector<Sample>& samples, std::span<const std::size_t> order,
                                              Index features);

struct TrainState {
  GeneratorModel<float> generator;
  ClassifierModel<float> classifier;
  AdamState<float> generator_adam;
  AdamState<float> classifier_adam;
  /// Batches completed so far.
  Index batch = 0;

  TrainState(GeneratorModel<float> g, ClassifierModel<float> c);
};

/// Fresh networks from one seeded stream: generator first, then classifier.
TrainState init_train_state(const GeneratorSpec& generator, const ClassifierSpec& classifier, std::uint64_t seed);

/// One cooperative update on the given batch. Throws TrainingDivergence, leaving
/// every parameter untouched, when the loss is not finite.
StepMetrics train_step(TrainState& state, const std::vector<Sample>& samples, std::span<const std::size_t> order,
                       const TrainConfig& config);

/// Sample indices for batch `batch`: consecutive slices of per-epoch seeded permutations.
std::vector<std::size_t> batch_order(std::size_t dataset_size, Index batch_size, Index batch, std::uint64_t seed);

struct TrainLoopOptions {
  /// Metrics CSV path; empty disables it.
  std::string metrics_path;
  /// Directory for generator.gcn and classifier.gcn; empty disables checkpoints.
  std::string checkpoint_dir;
  /// Extra header meta stored in checkpoints.
  Json meta = Json::object();
  std::function<void(const StepMetrics&)> on_step;
};

std::string metrics_header(const FeatureSchema& schema);
std::string metrics_row(const StepMetrics& m);

/// Trains from state.batch up to config.total_batches. When resuming with a
/// metrics file, rows past state.batch are discarded first.
std::vector<StepMetrics> train_loop(TrainState& state, const Dataset& data, const TrainConfig& config,
                                    const TrainLoopOptions& options = {});

void save_train_state(const std::string& dir, const TrainState& state, const Json& meta);
TrainState load_train_state(const std::string& dir);

/// Mean per-image pixel loss of the generator over a whole dataset.
double evaluate_pixel_loss(const GeneratorModel<float>& gen, const Dataset& data, Index batch_size = 64);

}  // namespace gcn
