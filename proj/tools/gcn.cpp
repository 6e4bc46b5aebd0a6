#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "gcn/config.hpp"
#include "gcn/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace gcn;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

void write_json(const fs::path& path, const OrderedJson& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  detail::write_file(path.string(), j.dump(2) + "\n");
}

// ---- gradcheck ----

struct GradcheckArgs {
  std::vector<std::string> layers;
  double tolerance = 1e-4;
  std::uint64_t seed = 2017;
  std::string corrupt;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  GradcheckOptions o;
  o.layers = a.layers;
  o.tolerance = a.tolerance;
  o.seed = a.seed;
  o.corrupt_layer = a.corrupt;
  const auto known = gradcheck_layers();
  for (const auto& l : o.layers)
    if (std::find(known.begin(), known.end(), l) == known.end()) throw ConfigError("unknown layer '" + l + "'");
  const auto reports = run_gradcheck_suite(o);
  bool ok = true;
  for (const auto& r : reports) {
    std::printf("%-22s %-4s cases=%d worst_rel_error=%.3e", r.layer.c_str(), r.passed ? "ok" : "FAIL", r.cases,
                r.worst_error);
    if (!r.passed)
      std::printf(" at case %d input %d index %lld", r.worst_case, r.worst_input,
                  static_cast<long long>(r.worst_element));
    std::printf("\n");
    ok = ok && r.passed;
  }
  if (!ok) std::fprintf(stderr, "gradcheck: tolerance %.1e exceeded\n", o.tolerance);
  return ok ? kOk : kFailure;
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string output;
  bool resume = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  auto config = load_config(a.config, a.overrides);
  if (!a.output.empty()) config.output_dir = a.output;
  const fs::path out = resolve_output_dir(config);

  // Everything that can fail on bad input happens before the first write.
  auto full = build_dataset(config);
  const auto& schema = full.manifest.schema;
  auto [train, holdout] = holdout_split(full, holdout_rules(config, schema));
  const auto gen_spec = generator_spec(config, schema);
  const auto cls_spec = classifier_spec(config, schema);
  gen_spec.validate();
  cls_spec.validate();
  const Index res = train.samples.front().image.dim(1);
  if (gen_spec.target_size[0] != res || gen_spec.output_channels() != train.samples.front().image.dim(0))
    throw ConfigError("generator output " + std::to_string(gen_spec.output_channels()) + "x" +
                      std::to_string(gen_spec.target_size[0]) + " does not match dataset images " +
                      shape_string(train.samples.front().image.shape()));
  if (LossWeights::from_schema(schema, config.train.pixel_weight).known_unstable())
    std::fprintf(stderr, "warning: classification weights of 100 with pixel weight 1 are known to diverge\n");

  const auto echo = to_json(config).dump(2) + "\n";
  const fs::path ckpt_dir = out / "checkpoints";
  std::optional<TrainState> state;
  if (a.resume) {
    if (!fs::exists(ckpt_dir / "generator.gcn")) throw ConfigError("no checkpoint to resume under '" + out.string() + "'");
    const auto recorded_path = (out / "config.json").string();
    if (!fs::exists(recorded_path)) throw ConfigError("'" + out.string() + "' has checkpoints but no config.json");
    Json recorded = Json::parse(detail::read_file(recorded_path)), current = Json::parse(echo);
    recorded["train"].erase("total_batches");
    current["train"].erase("total_batches");
    if (recorded != current)
      throw ConfigError("config differs from the one recorded in '" + recorded_path + "' beyond train.total_batches");
    state.emplace(load_train_state(ckpt_dir.string()));
    if (state->batch > config.train.total_batches)
      throw ConfigError("checkpoint is at batch " + std::to_string(state->batch) + ", past train.total_batches");
    detail::write_file(recorded_path, echo);
    std::fprintf(stderr, "resuming at batch %lld\n", static_cast<long long>(state->batch));
  } else {
    if (fs::exists(out / "metrics.csv"))
      throw ConfigError("'" + out.string() + "' already holds a run; pass --resume or choose another --output");
    state.emplace(init_train_state(gen_spec, cls_spec, config.train.seed));
    fs::create_directories(out);
    detail::write_file((out / "config.json").string(), echo);
    save_dataset((out / "data" / "train").string(), train);
    if (holdout.size() > 0) save_dataset((out / "data" / "holdout").string(), holdout);
  }

  TrainLoopOptions opt;
  opt.metrics_path = (out / "metrics.csv").string();
  opt.checkpoint_dir = ckpt_dir.string();
  opt.meta = {{"experiment", config.name}, {"task", config.task}};
  const Index every = std::max<Index>(1, config.train.total_batches / 20);
  if (!a.quiet)
    opt.on_step = [&](const StepMetrics& m) {
      if ((m.batch + 1) % every == 0 || m.batch + 1 == config.train.total_batches)
        std::fprintf(stderr, "batch %lld/%lld lr %.3g pixel %.5g\n", static_cast<long long>(m.batch + 1),
                     static_cast<long long>(config.train.total_batches), m.lr, m.pixel_loss);
    };
  try {
    train_loop(*state, train, config.train, opt);
  } catch (const TrainingDivergence& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kFailure;
  }
  const double final_loss = evaluate_pixel_loss(state->generator, train);
  std::printf("trained %lld batches; mean pixel loss on the training set %.6g\n",
              static_cast<long long>(state->batch), final_loss);
  std::printf("outputs in %s\n", out.string().c_str());
  return kOk;
}

// ---- generate ----

struct GenerateArgs {
  std::string checkpoint;
  std::string classifier;
  std::vector<std::string> features;
  std::string blend;
  std::string blend_feature = "identity";
  std::string output;
  std::string reference;
};

std::pair<std::string, std::string> split_once(const std::string& s, char sep, const std::string& what) {
  const auto pos = s.find(sep);
  if (pos == std::string::npos || pos == 0 || pos + 1 == s.size())
    throw ConfigError("malformed " + what + " '" + s + "'");
  return {s.substr(0, pos), s.substr(pos + 1)};
}

Tensor<float> parse_blend(const std::string& text, const FeatureSchema& schema, Index feature) {
  const Index k = schema[feature].cardinality;
  Tensor<float> v({1, k});
  double total = 0;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto [name, weight_text] = split_once(item, ':', "blend term");
    double w = 0;
    try {
      std::size_t used = 0;
      w = std::stod(weight_text, &used);
      if (used != weight_text.size()) throw std::invalid_argument(weight_text);
    } catch (const std::exception&) {
      throw ConfigError("blend weight '" + weight_text + "' is not a number");
    }
    if (!(w >= 0)) throw ConfigError("blend weights must be non-negative");
    v[schema.class_index(feature, name)] += static_cast<float>(w);
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("blend weights must sum to 1, got " + std::to_string(total));
  return v;
}

int cmd_generate(const GenerateArgs& a) {
  const auto gen = load_generator<float>(a.checkpoint);
  const auto& schema = gen.spec.schema;
  std::vector<Index> labels(static_cast<std::size_t>(schema.size()), 0);
  std::vector<bool> given(labels.size(), false);
  for (const auto& assignment : a.features) {
    auto [name, value] = split_once(assignment, '=', "feature assignment");
    const Index f = schema.index_of(name);
    labels[static_cast<std::size_t>(f)] = schema.class_index(f, value);
    given[static_cast<std::size_t>(f)] = true;
  }
  auto inputs = one_hot_batch<float>(schema, std::vector<std::vector<Index>>{labels});
  Index blend_f = -1;
  if (!a.blend.empty()) {
    blend_f = schema.index_of(a.blend_feature);
    if (given[static_cast<std::size_t>(blend_f)])
      throw ConfigError("feature '" + a.blend_feature + "' is both assigned and blended");
    inputs[static_cast<std::size_t>(blend_f)] = parse_blend(a.blend, schema, blend_f);
    given[static_cast<std::size_t>(blend_f)] = true;
  }
  for (Index f = 0; f < schema.size(); ++f)
    if (!given[static_cast<std::size_t>(f)])
      std::fprintf(stderr, "note: feature '%s' not given, using class 0\n", schema[f].name.c_str());

  const auto batch = generator_forward(gen, inputs).value();
  const Shape image_shape(batch.shape().begin() + 1, batch.shape().end());
  Tensor<float> image = batch.reshaped(image_shape);
  for (auto& x : image.values()) x = std::clamp(x, 0.0f, 1.0f);
  const fs::path out(a.output);
  const std::string want = image.dim(0) == 1 ? ".pgm" : ".ppm";
  if (out.extension() != want)
    throw ConfigError("output for a " + std::to_string(image.dim(0)) + "-channel image must end in " + want);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_netpbm(out.string(), image);
  std::printf("wrote %s\n", out.string().c_str());

  if (!a.reference.empty()) {
    const auto ref = read_netpbm(a.reference);
    if (ref.shape() != image.shape()) throw ConfigError("reference image has shape " + shape_string(ref.shape()));
    const auto written = read_netpbm(out.string());
    double se = 0;
    for (Index i = 0; i < ref.size(); ++i) se += std::pow(double(written[i]) - double(ref[i]), 2);
    std::printf("squared error to reference %.6g (rms %.4g)\n", se, std::sqrt(se / double(ref.size())));
  }

  std::string cls_path = a.classifier;
  if (cls_path.empty()) {
    const auto sibling = fs::path(a.checkpoint).parent_path() / "classifier.gcn";
    if (fs::exists(sibling)) cls_path = sibling.string();
  }
  if (!cls_path.empty()) {
    const auto cls = load_classifier<float>(cls_path);
    if (cls.spec.input_shape[0] != image.dim(0) || cls.spec.input_shape[1] != image.dim(1))
      throw ConfigError("classifier '" + cls_path + "' does not accept " + shape_string(image.shape()) + " images");
    const auto logits = classifier_forward(cls, image.reshaped(batch.shape()));
    for (Index f = 0; f < cls.spec.schema.size(); ++f) {
      const auto p = softmax(logits[static_cast<std::size_t>(f)].value());
      Index best = 0;
      for (Index c = 1; c < p.size(); ++c)
        if (p[c] > p[best]) best = c;
      const auto& spec = cls.spec.schema[f];
      const std::string name = best < static_cast<Index>(spec.labels.size()) ? spec.labels[static_cast<std::size_t>(best)]
                                                                               : std::to_string(best);
      std::printf("predicted %s = %s (p=%.3f)\n", spec.name.c_str(), name.c_str(), static_cast<double>(p[best]));
    }
  }
  return kOk;
}

// ---- augment ----

struct AugmentArgs {
  std::string checkpoint_dir;
  Index identities = 10;
  Index expressions = 4;
  double alpha = 0.5;
  double threshold = 0.5;
  std::string output;
};

int cmd_augment(const AugmentArgs& a) {
  const fs::path dir(a.checkpoint_dir);
  const auto gen = load_generator<float>((dir / "generator.gcn").string());
  const auto cls = load_classifier<float>((dir / "classifier.gcn").string());
  if (!(a.threshold >= 0 && a.threshold <= 1)) throw ConfigError("--threshold must lie in [0,1]");
  AugmentOptions o;
  o.identities = a.identities;
  o.expressions = a.expressions;
  o.alpha = a.alpha;
  auto generated = generate_augmented_dataset(gen, o);
  auto filtered = quality_filter(generated, cls, o.expression_feature, a.threshold);

  const fs::path out(a.output);
  if (fs::exists(out / "manifest.json")) throw ConfigError("'" + out.string() + "' already holds an augmented dataset");
  save_dataset(out.string(), generated);
  fs::rename(out / "manifest.json", out / "generated.json");
  const auto n_generated = generated.size();
  const auto n_filtered = static_cast<Index>(filtered.rejected.size());
  auto& kept = filtered.kept;
  kept.manifest.params["generated"] = n_generated;
  kept.manifest.params["filtered_out"] = n_filtered;
  kept.manifest.params["threshold"] = a.threshold;
  detail::write_file((out / "manifest.json").string(), to_json(kept.manifest).dump(2) + "\n");

  std::ofstream rej(out / "rejections.csv");
  rej << "source,probability\n";
  for (const auto& r : filtered.rejected) {
    char line[160];
    std::snprintf(line, sizeof line, "%s,%.9g\n", r.source.c_str(), r.probability);
    rej << line;
  }
  OrderedJson counts;
  counts["generated"] = n_generated;
  counts["filtered_out"] = n_filtered;
  counts["kept"] = kept.size();
  OrderedJson summary;
  summary["counts"] = counts;
  summary["identities"] = a.identities;
  summary["expressions"] = a.expressions;
  summary["alpha"] = a.alpha;
  summary["threshold"] = a.threshold;
  char checksum[17];
  std::snprintf(checksum, sizeof checksum, "%016llx", static_cast<unsigned long long>(dataset_checksum(kept)));
  summary["checksum"] = checksum;
  write_json(out / "augment.json", summary);
  std::printf("generated %lld, filtered out %lld, kept %lld\n", static_cast<long long>(n_generated),
              static_cast<long long>(n_filtered), static_cast<long long>(kept.size()));
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  std::string original, synthesized, test;
  std::string config;
  std::vector<std::string> overrides;
  std::string output;
};

int cmd_eval(const EvalArgs& a) {
  const auto original = load_dataset(a.original);
  const auto synthesized = load_dataset(a.synthesized);
  const auto test = load_dataset(a.test);
  if (test.size() == 0) throw ConfigError("test manifest '" + a.test + "' is empty");
  ExperimentConfig config;
  if (!a.config.empty()) {
    config = load_config(a.config, a.overrides);
  } else {
    Json j = {{"task", "glyphs"}, {"dataset", {{"resolution", test.samples.front().image.dim(1)}}}};
    for (const auto& o : a.overrides) apply_override(j, o);
    config = config_from_json(j);
  }
  const auto rc = recognizer_config(config);
  const auto& params = synthesized.manifest.params;
  const Index generated = params.contains("generated") ? params["generated"].get<Index>() : synthesized.size();
  const Index filtered = params.contains("filtered_out") ? params["filtered_out"].get<Index>() : 0;
  const auto report = compare_augmentation(original, synthesized, test, rc, generated, filtered);
  const auto j = to_json(report);
  if (!a.output.empty()) {
    write_json(a.output, j);
    std::printf("wrote %s\n", a.output.c_str());
  }
  std::printf("original accuracy %.4f, synthesized accuracy %.4f (test set %lld, checksum %016llx)\n",
              report.original_accuracy, report.synthesized_accuracy, static_cast<long long>(report.test_size),
              static_cast<unsigned long long>(report.test_checksum));
  return kOk;
}

// ---- dataset ----

struct DatasetBuildArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string output;
  bool split = false;
};

int cmd_dataset_build(const DatasetBuildArgs& a) {
  const auto config = load_config(a.config, a.overrides);
  auto data = build_dataset(config);
  const fs::path out(a.output);
  if (fs::exists(out / "manifest.json") || fs::exists(out / "train" / "manifest.json"))
    throw ConfigError("'" + out.string() + "' already holds a dataset");
  if (a.split) {
    auto [train, holdout] = holdout_split(data, holdout_rules(config, data.manifest.schema));
    save_dataset((out / "train").string(), train);
    save_dataset((out / "holdout").string(), holdout);
    std::printf("train %lld samples, holdout %lld samples\n", static_cast<long long>(train.size()),
                static_cast<long long>(holdout.size()));
  } else {
    save_dataset(out.string(), data);
    std::printf("%lld samples\n", static_cast<long long>(data.size()));
  }
  return kOk;
}

int cmd_dataset_inspect(const std::string& manifest) {
  const auto data = load_dataset(manifest);
  const auto& m = data.manifest;
  std::printf("kind      %s\nsamples   %lld\nseed      %llu\nchecksum  %016llx\n", m.kind.c_str(),
              static_cast<long long>(data.size()), static_cast<unsigned long long>(m.seed),
              static_cast<unsigned long long>(dataset_checksum(data)));
  if (data.size() > 0) std::printf("image     %s\n", shape_string(data.samples.front().image.shape()).c_str());
  for (Index f = 0; f < m.schema.size(); ++f) {
    const auto& spec = m.schema[f];
    std::vector<Index> counts(static_cast<std::size_t>(spec.cardinality), 0);
    for (const auto& s : data.samples) ++counts[static_cast<std::size_t>(s.labels[static_cast<std::size_t>(f)])];
    std::printf("feature   %s (%lld classes, weight %g):", spec.name.c_str(), static_cast<long long>(spec.cardinality),
                spec.weight);
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (c < spec.labels.size())
        std::printf(" %s=%lld", spec.labels[c].c_str(), static_cast<long long>(counts[c]));
      else
        std::printf(" %zu=%lld", c, static_cast<long long>(counts[c]));
    }
    std::printf("\n");
  }
  for (const auto& rule : m.holdout) std::printf("holdout   %s\n", to_json(rule, m.schema).dump().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative conditional image generator and multi-task classifier"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gcn 1.0");

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Check every layer's backward pass against finite differences");
  grad->add_option("--layer", ga.layers, "Restrict to these layers (repeatable)");
  grad->add_option("--tolerance", ga.tolerance, "Maximum relative error")->check(CLI::PositiveNumber);
  grad->add_option("--seed", ga.seed, "Seed for the random test shapes and values");
  grad->add_option("--corrupt", ga.corrupt)->group("");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a generator and classifier cooperatively");
  train->add_option("-c,--config", ta.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--set", ta.overrides, "Override a config key, e.g. train.total_batches=200 (repeatable)");
  train->add_option("-o,--output", ta.output, "Output directory (default: $" + std::string(kOutputRootEnv) + "/<name>)");
  train->add_flag("--resume", ta.resume, "Continue from the checkpoints in the output directory");
  train->add_flag("-q,--quiet", ta.quiet, "No progress lines");

  GenerateArgs gn;
  auto* gen = app.add_subcommand("generate", "Render one image from a generator checkpoint");
  gen->add_option("checkpoint", gn.checkpoint, "Generator checkpoint")->required()->check(CLI::ExistingFile);
  gen->add_option("-f,--feature", gn.features, "name=class, by class name or index (repeatable)");
  gen->add_option("--blend", gn.blend, "Convex mix for one feature, e.g. 3:0.5,7:0.5");
  gen->add_option("--blend-feature", gn.blend_feature, "Feature the blend applies to")->capture_default_str();
  gen->add_option("--classifier", gn.classifier, "Classifier checkpoint (default: classifier.gcn beside the generator)")
      ->check(CLI::ExistingFile);
  gen->add_option("--reference", gn.reference, "Real image to report the squared error against")
      ->check(CLI::ExistingFile);
  gen->add_option("-o,--output", gn.output, "Output .ppm or .pgm")->required();

  AugmentArgs aa;
  auto* aug = app.add_subcommand("augment", "Blend identity pairs into a synthesized dataset");
  aug->add_option("checkpoints", aa.checkpoint_dir, "Directory with generator.gcn and classifier.gcn")
      ->required()
      ->check(CLI::ExistingDirectory);
  aug->add_option("-p,--identities", aa.identities, "Identities P")->capture_default_str();
  aug->add_option("-e,--expressions", aa.expressions, "Expressions E")->capture_default_str();
  aug->add_option("--alpha", aa.alpha, "Weight of the first identity")->capture_default_str();
  aug->add_option("-t,--threshold", aa.threshold, "Quality-filter probability threshold")->capture_default_str();
  aug->add_option("-o,--output", aa.output, "Output directory")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Compare recognizers trained on original and synthesized data");
  ev->add_option("--original", ea.original, "Original training manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--synthesized", ea.synthesized, "Synthesized manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--test", ea.test, "Test manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("-c,--config", ea.config, "Experiment config supplying the recognizer settings")
      ->check(CLI::ExistingFile);
  ev->add_option("--set", ea.overrides, "Override a config key (repeatable)");
  ev->add_option("-o,--output", ea.output, "Report JSON path");

  auto* ds = app.add_subcommand("dataset", "Build or inspect dataset manifests");
  ds->require_subcommand(1);
  DatasetBuildArgs da;
  auto* build = ds->add_subcommand("build", "Render the dataset a config describes");
  build->add_option("-c,--config", da.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  build->add_option("--set", da.overrides, "Override a config key (repeatable)");
  build->add_option("-o,--output", da.output, "Output directory")->required();
  build->add_flag("--split", da.split, "Apply the holdout rules and write train/ and holdout/");
  std::string inspect_path;
  auto* inspect = ds->add_subcommand("inspect", "Summarize a manifest");
  inspect->add_option("manifest", inspect_path, "manifest.json")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*grad) return cmd_gradcheck(ga);
    if (*train) return cmd_train(ta);
    if (*gen) return cmd_generate(gn);
    if (*aug) return cmd_augment(aa);
    if (*ev) return cmd_eval(ea);
    if (*build) return cmd_dataset_build(da);
    if (*inspect) return cmd_dataset_inspect(inspect_path);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const LabelError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}
