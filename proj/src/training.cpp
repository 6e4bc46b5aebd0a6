#include "gcn/training.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace gcn {

namespace fs = std::filesystem;

std::vector<std::vector<Index>> label_columns(const std::vector<Sample>& samples, std::span<const std::size_t> order,
                                              Index features) {
  std::vector<std::vector<Index>> cols(static_cast<std::size_t>(features));
  for (std::size_t i : order) {
    const auto& labels = samples.at(i).labels;
    if (static_cast<Index>(labels.size()) != features)
      throw SchemaError("sample '" + samples[i].source + "' has " + std::to_string(labels.size()) + " labels, schema has " +
                        std::to_string(features));
    for (Index f = 0; f < features; ++f) cols[static_cast<std::size_t>(f)].push_back(labels[static_cast<std::size_t>(f)]);
  }
  return cols;
}

TrainState::TrainState(GeneratorModel<float> g, ClassifierModel<float> c)
    : generator(std::move(g)),
      classifier(std::move(c)),
      generator_adam(generator.params.vars()),
      classifier_adam(classifier.params.vars()) {}

TrainState init_train_state(const GeneratorSpec& generator, const ClassifierSpec& classifier, std::uint64_t seed) {
  RngState rng(seed);
  auto g = build_generator<float>(generator, rng);
  auto c = build_classifier<float>(classifier, rng);
  return TrainState(std::move(g), std::move(c));
}

namespace {

std::vector<std::vector<Index>> label_rows(const std::vector<Sample>& samples, std::span<const std::size_t> order) {
  std::vector<std::vector<Index>> rows;
  for (std::size_t i : order) rows.push_back(samples.at(i).labels);
  return rows;
}

}  // namespace

StepMetrics train_step(TrainState& state, const std::vector<Sample>& samples, std::span<const std::size_t> order,
                       const TrainConfig& config) {
  if (order.empty()) throw ContractError("train_step: empty batch");
  const auto& schema = state.generator.spec.schema;
  const LossWeights weights = LossWeights::from_schema(schema, config.pixel_weight);
  const auto rows = label_rows(samples, order);
  for (const auto& r : rows) check_labels(r, schema);
  const auto labels = label_columns(samples, order, schema.size());

  std::vector<Var<float>> features;
  for (auto& t : one_hot_batch<float>(schema, rows)) features.push_back(Var<float>::constant(std::move(t)));
  const auto real = Var<float>::constant(stack_images(samples, order));

  const auto synth = generator_forward(state.generator, std::span<const Var<float>>(features));
  const auto logits = classifier_forward(state.classifier, synth);

  StepMetrics m;
  m.batch = state.batch;
  m.lr = lr_schedule(config.generator_adam.base_lr, state.batch, config.halving_period);
  const auto pixel = mse_pixel_loss(synth, real);
  m.pixel_loss = pixel.item();
  Var<float> total = scale(pixel, static_cast<float>(weights.pixel));
  for (std::size_t f = 0; f < logits.size(); ++f) {
    const auto ce = softmax_cross_entropy(logits[f], std::span<const Index>(labels[f]));
    m.ce.push_back(ce.item());
    total = total + scale(ce, static_cast<float>(weights.feature[f]));
  }
  if (config.classifier_sees_real) {
    // the generator never sees this term: it depends only on classifier parameters
    total = total + classifier_objective(classifier_forward(state.classifier, real), labels, weights);
  }
  if (!std::isfinite(total.item())) throw TrainingDivergence("non-finite loss at batch " + std::to_string(state.batch), m);

  state.generator.params.zero_grads();
  state.classifier.params.zero_grads();
  backward(total);
  if (config.classifier_sees_real)
    for (auto& p : state.classifier.params.vars())
      if (p.has_grad()) p.node()->grad.array() *= 0.5f;

  adam_step(state.generator.params.vars(), state.generator_adam, config.generator_adam, m.lr);
  adam_step(state.classifier.params.vars(), state.classifier_adam, config.classifier_adam,
            lr_schedule(config.classifier_adam.base_lr, state.batch, config.halving_period));
  state.batch += 1;
  return m;
}

std::vector<std::size_t> batch_order(std::size_t dataset_size, Index batch_size, Index batch, std::uint64_t seed) {
  if (dataset_size == 0) throw ContractError("batch_order: empty dataset");
  const auto n = static_cast<Index>(dataset_size);
  std::vector<std::size_t> out;
  Index cached_epoch = -1;
  std::vector<std::size_t> perm(dataset_size);
  for (Index pos = batch * batch_size; pos < (batch + 1) * batch_size; ++pos) {
    const Index epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      RngState rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
      for (std::size_t i = dataset_size - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<std::size_t>(pos % n)]);
  }
  return out;
}

std::string metrics_header(const FeatureSchema& schema) {
  std::string h = "batch,lr,pixel_loss";
  for (const auto& f : schema.features) h += ",ce_" + f.name;
  return h;
}

std::string metrics_row(const StepMetrics& m) {
  char buf[64];
  std::string row = std::to_string(m.batch);
  std::snprintf(buf, sizeof buf, ",%.9g,%.9g", m.lr, m.pixel_loss);
  row += buf;
  for (double ce : m.ce) {
    std::snprintf(buf, sizeof buf, ",%.9g", ce);
    row += buf;
  }
  return row;
}

void save_train_state(const std::string& dir, const TrainState& state, const Json& meta) {
  fs::create_directories(dir);
  Json m = meta;
  m["batch"] = state.batch;
  // write then rename, so a crash never leaves a half-written checkpoint behind
  const auto gen = (fs::path(dir) / "generator.gcn").string();
  const auto cls = (fs::path(dir) / "classifier.gcn").string();
  save_generator(gen + ".tmp", state.generator, m, &state.generator_adam);
  save_classifier(cls + ".tmp", state.classifier, m, &state.classifier_adam);
  fs::rename(gen + ".tmp", gen);
  fs::rename(cls + ".tmp", cls);
}

TrainState load_train_state(const std::string& dir) {
  std::optional<AdamState<float>> gen_adam, cls_adam;
  Json gen_meta, cls_meta;
  auto gen = load_generator<float>((fs::path(dir) / "generator.gcn").string(), &gen_adam, &gen_meta);
  auto cls = load_classifier<float>((fs::path(dir) / "classifier.gcn").string(), &cls_adam, &cls_meta);
  if (gen_meta.value("batch", Index{-1}) != cls_meta.value("batch", Index{-2}))
    throw FormatError("generator and classifier checkpoints are from different batches", 0);
  TrainState state(std::move(gen), std::move(cls));
  if (gen_adam) state.generator_adam = std::move(*gen_adam);
  if (cls_adam) state.classifier_adam = std::move(*cls_adam);
  state.batch = gen_meta.at("batch").get<Index>();
  return state;
}

namespace {

/// Keeps the header and the rows for batches below `keep`.
void truncate_metrics(const std::string& path, const std::string& header, Index keep) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string line;
  if (in && std::getline(in, line)) {
    if (line != header) throw ConfigError("metrics file '" + path + "' has a different header");
    while (static_cast<Index>(lines.size()) < keep && std::getline(in, line)) lines.push_back(line);
  }
  if (static_cast<Index>(lines.size()) != keep)
    throw ConfigError("metrics file '" + path + "' has fewer rows than the checkpoint's batch count");
  std::ofstream out(path, std::ios::trunc);
  out << header << '\n';
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

std::vector<StepMetrics> train_loop(TrainState& state, const Dataset& data, const TrainConfig& config,
                                    const TrainLoopOptions& options) {
  config.validate();
  if (data.samples.empty()) throw ConfigError("train_loop: dataset is empty");
  const auto& schema = state.generator.spec.schema;
  const std::string header = metrics_header(schema);

  std::ofstream csv;
  if (!options.metrics_path.empty()) {
    if (state.batch > 0) {
      truncate_metrics(options.metrics_path, header, state.batch);
      csv.open(options.metrics_path, std::ios::app);
    } else {
      csv.open(options.metrics_path, std::ios::trunc);
      csv << header << '\n';
    }
    if (!csv) throw Error("cannot write metrics file '" + options.metrics_path + "'");
  }

  std::vector<StepMetrics> log;
  Index divergent = 0;
  while (state.batch < config.total_batches) {
    const auto order = batch_order(data.samples.size(), config.batch_size, state.batch, config.seed);
    StepMetrics m;
    try {
      m = train_step(state, data.samples, order, config);
      divergent = 0;
    } catch (const TrainingDivergence& e) {
      m = e.metrics();
      if (csv.is_open()) csv << metrics_row(m) << '\n' << std::flush;
      if (++divergent >= config.max_divergent_steps)
        throw TrainingDivergence("loss was non-finite for " + std::to_string(divergent) + " consecutive batches (last: " +
                                     std::to_string(m.batch) + ")",
                                 m);
      // a skipped batch still advances the schedule and the data stream
      state.batch += 1;
      log.push_back(m);
      continue;
    }
    if (csv.is_open()) csv << metrics_row(m) << '\n';
    log.push_back(m);
    if (options.on_step) options.on_step(m);
    const bool last = state.batch == config.total_batches;
    if (!options.checkpoint_dir.empty() &&
        (last || (config.checkpoint_every > 0 && state.batch % config.checkpoint_every == 0))) {
      csv.flush();
      save_train_state(options.checkpoint_dir, state, options.meta);
    }
  }
  return log;
}

double evaluate_pixel_loss(const GeneratorModel<float>& gen, const Dataset& data, Index batch_size) {
  if (data.samples.empty()) throw ContractError("evaluate_pixel_loss: empty dataset");
  double total = 0;
  const std::size_t n = data.samples.size();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> order;
    for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(batch_size)); ++i) order.push_back(i);
    const auto out = generator_forward(gen, one_hot_batch<float>(gen.spec.schema, label_rows(data.samples, order)));
    const auto real = stack_images(data.samples, order);
    for (Index i = 0; i < real.size(); ++i) {
      const double d = static_cast<double>(out.value()[i]) - static_cast<double>(real[i]);
      total += d * d;
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace gcn
