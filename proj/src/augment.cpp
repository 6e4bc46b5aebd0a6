#include "gcn/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gcn/training.hpp"

namespace gcn {

Tensor<float> blend_identities(Index a, Index b, Index identities, double alpha) {
  if (identities < 2) throw ConfigError("blend_identities: need at least 2 identities");
  if (a < 0 || a >= identities || b < 0 || b >= identities)
    throw LabelError("blend_identities: identity outside [0," + std::to_string(identities) + ")");
  if (a == b) throw ContractError("blend_identities: degenerate blend of identity " + std::to_string(a) + " with itself");
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("blend_identities: alpha must lie in (0,1)");
  auto v = Tensor<float>::zeros({identities});
  v[a] = static_cast<float>(alpha);
  v[b] = static_cast<float>(1.0 - alpha);
  return v;
}

namespace {

Tensor<float> clamp_unit(const Tensor<float>& t) {
  Tensor<float> out = t;
  for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

/// The dataset relabelled to a single feature.
Dataset single_feature_view(const Dataset& data, const std::string& feature) {
  const Index f = data.manifest.schema.index_of(feature);
  Dataset out;
  out.manifest = data.manifest;
  out.manifest.schema = FeatureSchema{{data.manifest.schema[f]}};
  out.manifest.holdout.clear();
  out.manifest.records.clear();
  for (const auto& s : data.samples) out.samples.push_back({s.image, {s.labels.at(static_cast<std::size_t>(f))}, s.source});
  out.sync_records();
  return out;
}

}  // namespace

Dataset generate_augmented_dataset(const GeneratorModel<float>& gen, const AugmentOptions& o) {
  const auto& schema = gen.spec.schema;
  const Index id_f = schema.index_of(o.identity_feature);
  const Index ex_f = schema.index_of(o.expression_feature);
  if (o.identities < 2 || o.identities > schema[id_f].cardinality)
    throw ConfigError("augment: identities must lie in [2," + std::to_string(schema[id_f].cardinality) + "]");
  if (o.expressions < 1 || o.expressions > schema[ex_f].cardinality)
    throw ConfigError("augment: expressions must lie in [1," + std::to_string(schema[ex_f].cardinality) + "]");
  if (!(o.alpha > 0 && o.alpha < 1)) throw ConfigError("augment: alpha must lie in (0,1)");
  if (o.batch_size < 1) throw ConfigError("augment: batch_size must be >= 1");

  Dataset out;
  out.manifest.kind = "synthesized";
  FeatureSpec expr = schema[ex_f];
  expr.cardinality = o.expressions;
  if (!expr.labels.empty()) expr.labels.resize(static_cast<std::size_t>(o.expressions));
  out.manifest.schema = FeatureSchema{{expr}};
  out.manifest.params = {{"identities", o.identities}, {"expressions", o.expressions}, {"alpha", o.alpha}};

  struct Job {
    Index e, a, b;
  };
  std::vector<Job> jobs;
  for (Index e = 0; e < o.expressions; ++e)
    for (Index a = 0; a < o.identities; ++a)
      for (Index b = 0; b < o.identities; ++b) jobs.push_back({e, a, b});

  std::vector<SampleRecord> records;
  for (std::size_t start = 0; start < jobs.size(); start += static_cast<std::size_t>(o.batch_size)) {
    const std::size_t end = std::min(jobs.size(), start + static_cast<std::size_t>(o.batch_size));
    const auto n = static_cast<Index>(end - start);
    std::vector<Tensor<float>> features;
    for (Index f = 0; f < schema.size(); ++f) features.push_back(Tensor<float>::zeros({n, schema[f].cardinality}));
    for (std::size_t j = start; j < end; ++j) {
      const auto row = static_cast<Index>(j - start);
      const Job& job = jobs[j];
      for (Index f = 0; f < schema.size(); ++f) {
        auto& t = features[static_cast<std::size_t>(f)];
        const Index k = schema[f].cardinality;
        if (f == id_f) {
          if (job.a == job.b) {
            t[row * k + job.a] = 1.0f;
          } else {
            const auto blend = blend_identities(job.a, job.b, schema[f].cardinality, o.alpha);
            std::copy(blend.data(), blend.data() + k, t.data() + row * k);
          }
        } else {
          t[row * k + (f == ex_f ? job.e : 0)] = 1.0f;
        }
      }
    }
    const auto images = generator_forward(gen, features).value();
    const Index per = images.size() / n;
    Shape shape(images.shape().begin() + 1, images.shape().end());
    for (std::size_t j = start; j < end; ++j) {
      const Job& job = jobs[j];
      Tensor<float> img(shape);
      std::copy(images.data() + static_cast<Index>(j - start) * per, images.data() + static_cast<Index>(j - start + 1) * per,
                img.data());
      const std::string name = expr.labels.empty() ? std::to_string(job.e) : expr.labels[static_cast<std::size_t>(job.e)];
      const std::string rel = name + "/" + std::to_string(job.a) + "_" + std::to_string(job.b);
      out.samples.push_back({clamp_unit(img), {job.e}, rel});
      records.push_back({rel, {job.e}, rel + (img.dim(0) == 1 ? ".pgm" : ".ppm")});
    }
  }
  out.manifest.records = std::move(records);
  return out;
}

Tensor<float> head_probabilities(const ClassifierModel<float>& cls, const std::vector<Sample>& samples, Index head,
                                 Index batch_size) {
  if (head < 0 || head >= cls.spec.schema.size()) throw SchemaError("head index out of range");
  const Index k = cls.spec.schema[head].cardinality;
  Tensor<float> out({std::max<Index>(1, static_cast<Index>(samples.size())), k});
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> order;
    for (std::size_t i = start; i < std::min(samples.size(), start + static_cast<std::size_t>(batch_size)); ++i)
      order.push_back(i);
    const auto logits = classifier_forward(cls, stack_images(samples, order));
    const auto p = softmax(logits[static_cast<std::size_t>(head)].value());
    std::copy(p.data(), p.data() + p.size(), out.data() + static_cast<Index>(start) * k);
  }
  return out;
}

FilterResult quality_filter(const Dataset& samples, const ClassifierModel<float>& cls, const std::string& feature,
                            double threshold) {
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("quality_filter: threshold must lie in [0,1]");
  const Index head = cls.spec.schema.index_of(feature);
  const auto labels = feature_labels(samples, feature);
  const Index k = cls.spec.schema[head].cardinality;
  FilterResult result;
  result.kept.manifest = samples.manifest;
  result.kept.manifest.records.clear();
  if (samples.samples.empty()) return result;
  const auto probs = head_probabilities(cls, samples.samples, head);
  for (std::size_t i = 0; i < samples.samples.size(); ++i) {
    const Index y = labels[i];
    if (y >= k) throw LabelError("quality_filter: label " + std::to_string(y) + " exceeds the classifier's head");
    const double p = probs[static_cast<Index>(i) * k + y];
    if (p >= threshold) {
      result.kept.samples.push_back(samples.samples[i]);
      if (i < samples.manifest.records.size()) result.kept.manifest.records.push_back(samples.manifest.records[i]);
    } else {
      result.rejected.push_back({samples.samples[i].source, p});
    }
  }
  if (result.kept.manifest.records.size() != result.kept.samples.size()) result.kept.sync_records();
  return result;
}

void RecognizerConfig::validate() const {
  if (batch_size < 1) throw ConfigError("recognizer.batch_size must be >= 1");
  if (total_batches < 1) throw ConfigError("recognizer.total_batches must be >= 1");
  if (halving_period < 0) throw ConfigError("recognizer.halving_period must be >= 0");
  if (feature.empty()) throw ConfigError("recognizer.feature must be set");
  adam.validate();
}

std::vector<Index> feature_labels(const Dataset& data, const std::string& feature) {
  const Index f = data.manifest.schema.index_of(feature);
  std::vector<Index> out;
  for (const auto& s : data.samples) out.push_back(s.labels.at(static_cast<std::size_t>(f)));
  return out;
}

ClassifierModel<float> build_recognizer(const RecognizerConfig& config, Index classes) {
  ClassifierSpec spec = config.architecture;
  spec.schema = FeatureSchema{{{config.feature, classes, 1.0, {}}}};
  RngState rng(mix_seed(config.seed, 0x726563));
  return build_classifier<float>(spec, rng);
}

double recognizer_accuracy(const ClassifierModel<float>& model, const Dataset& test, const std::string& feature) {
  if (test.samples.empty()) throw ConfigError("recognizer test set is empty");
  const auto labels = feature_labels(test, feature);
  const Index k = model.spec.schema[0].cardinality;
  const auto probs = head_probabilities(model, test.samples, 0);
  Index correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float* row = probs.data() + static_cast<Index>(i) * k;
    if (std::max_element(row, row + k) - row == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

RecognizerResult train_recognizer(const Dataset& train, const Dataset& test, const RecognizerConfig& config) {
  config.validate();
  if (train.samples.empty()) throw ConfigError("recognizer training set is empty");
  const Index classes = test.manifest.schema[test.manifest.schema.index_of(config.feature)].cardinality;
  const Dataset view = single_feature_view(train, config.feature);
  if (view.manifest.schema[0].cardinality != classes)
    throw SchemaError("recognizer: training and test sets disagree on the number of '" + config.feature + "' classes");

  RecognizerResult result{build_recognizer(config, classes), 0, {}};
  AdamState<float> adam(result.model.params.vars());
  for (Index batch = 0; batch < config.total_batches; ++batch) {
    const auto order = batch_order(view.samples.size(), config.batch_size, batch, mix_seed(config.seed, 0x6f7264));
    std::vector<Index> labels;
    for (auto i : order) labels.push_back(view.samples[i].labels[0]);
    const auto logits = classifier_forward(result.model, stack_images(view.samples, order));
    auto loss = softmax_cross_entropy(logits[0], std::span<const Index>(labels));
    if (!std::isfinite(loss.item())) {
      StepMetrics m;
      m.batch = batch;
      m.ce = {loss.item()};
      throw TrainingDivergence("recognizer loss became non-finite at batch " + std::to_string(batch), m);
    }
    result.losses.push_back(loss.item());
    result.model.params.zero_grads();
    backward(loss);
    const double lr = config.halving_period > 0 ? lr_schedule(config.adam.base_lr, batch, config.halving_period)
                                                : config.adam.base_lr;
    adam_step(result.model.params.vars(), adam, config.adam, lr);
  }
  result.accuracy = recognizer_accuracy(result.model, test, config.feature);
  return result;
}

void AugmentationReport::validate() const {
  if (generated < 0 || filtered_out < 0 || kept < 0) throw ConfigError("report: counts must be >= 0");
  if (kept != generated - filtered_out) throw ConfigError("report: kept must equal generated - filtered_out");
  for (double a : {original_accuracy, synthesized_accuracy})
    if (!(a >= 0 && a <= 1)) throw ConfigError("report: accuracies must lie in [0,1]");
}

AugmentationReport compare_augmentation(const Dataset& original, const Dataset& synthesized, const Dataset& test,
                                        const RecognizerConfig& config, Index generated, Index filtered_out) {
  AugmentationReport r;
  r.generated = generated;
  r.filtered_out = filtered_out;
  r.kept = generated - filtered_out;
  r.seed = config.seed;
  r.test_checksum = dataset_checksum(test);
  r.original_checksum = dataset_checksum(original);
  r.synthesized_checksum = dataset_checksum(synthesized);
  r.test_size = test.size();

  Dataset synth_arm = single_feature_view(synthesized, config.feature);
  if (config.synthesized_includes_original) {
    const Dataset orig_view = single_feature_view(original, config.feature);
    synth_arm.samples.insert(synth_arm.samples.end(), orig_view.samples.begin(), orig_view.samples.end());
    synth_arm.manifest.records.clear();
    synth_arm.sync_records();
  }
  r.original_size = original.size();
  r.synthesized_size = synth_arm.size();

  const std::uint64_t before = dataset_checksum(test);
  r.original_accuracy = train_recognizer(original, test, config).accuracy;
  r.synthesized_accuracy = train_recognizer(synth_arm, test, config).accuracy;
  if (dataset_checksum(test) != before) throw ContractError("test set changed between arms");

  r.config = {{"feature", config.feature},
              {"batch_size", config.batch_size},
              {"total_batches", config.total_batches},
              {"halving_period", config.halving_period},
              {"seed", config.seed},
              {"synthesized_includes_original", config.synthesized_includes_original},
              {"adam",
               {{"base_lr", config.adam.base_lr},
                {"beta1", config.adam.beta1},
                {"beta2", config.adam.beta2},
                {"epsilon", config.adam.epsilon},
                {"weight_decay", config.adam.weight_decay}}}};
  r.validate();
  return r;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s, const std::string& path) {
  if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos)
    throw ConfigError("bad value for '" + path + "': expected 16 lowercase hex digits");
  return std::stoull(s, nullptr, 16);
}

}  // namespace

OrderedJson to_json(const AugmentationReport& r) {
  OrderedJson j;
  j["counts"] = {{"generated", r.generated}, {"filtered_out", r.filtered_out}, {"kept", r.kept}};
  j["accuracy"] = {{"original", r.original_accuracy}, {"synthesized", r.synthesized_accuracy}};
  j["sizes"] = {{"original", r.original_size}, {"synthesized", r.synthesized_size}, {"test", r.test_size}};
  j["checksums"] = {{"original", hex64(r.original_checksum)},
                    {"synthesized", hex64(r.synthesized_checksum)},
                    {"test", hex64(r.test_checksum)}};
  j["seed"] = r.seed;
  j["config"] = OrderedJson::parse(r.config.dump());
  return j;
}

AugmentationReport augmentation_report_from_json(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  AugmentationReport out;
  {
    ObjectReader c(r.raw("counts"), r.path("counts"));
    out.generated = c.required<Index>("generated");
    out.filtered_out = c.required<Index>("filtered_out");
    out.kept = c.required<Index>("kept");
    c.finish();
  }
  {
    ObjectReader a(r.raw("accuracy"), r.path("accuracy"));
    out.original_accuracy = a.required<double>("original");
    out.synthesized_accuracy = a.required<double>("synthesized");
    a.finish();
  }
  {
    ObjectReader s(r.raw("sizes"), r.path("sizes"));
    out.original_size = s.required<Index>("original");
    out.synthesized_size = s.required<Index>("synthesized");
    out.test_size = s.required<Index>("test");
    s.finish();
  }
  {
    ObjectReader c(r.raw("checksums"), r.path("checksums"));
    out.original_checksum = parse_hex64(c.required<std::string>("original"), c.path("original"));
    out.synthesized_checksum = parse_hex64(c.required<std::string>("synthesized"), c.path("synthesized"));
    out.test_checksum = parse_hex64(c.required<std::string>("test"), c.path("test"));
    c.finish();
  }
  out.seed = r.required<std::uint64_t>("seed");
  out.config = r.required<Json>("config");
  r.finish();
  out.validate();
  return out;
}

}  // namespace gcn
