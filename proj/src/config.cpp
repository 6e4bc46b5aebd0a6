#include "gcn/config.hpp"

#include <cstdlib>
#include <filesystem>

#include "gcn/checkpoint.hpp"

namespace gcn {

namespace fs = std::filesystem;

namespace {

AdamHyper adam_from_json(const Json& j, const std::string& path, AdamHyper out) {
  ObjectReader r(j, path);
  out.base_lr = r.optional("base_lr", out.base_lr);
  out.beta1 = r.optional("beta1", out.beta1);
  out.beta2 = r.optional("beta2", out.beta2);
  out.epsilon = r.optional("epsilon", out.epsilon);
  out.weight_decay = r.optional("weight_decay", out.weight_decay);
  r.finish();
  try {
    out.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return out;
}

OrderedJson to_json(const AdamHyper& a) {
  OrderedJson j;
  j["base_lr"] = a.base_lr;
  j["beta1"] = a.beta1;
  j["beta2"] = a.beta2;
  j["epsilon"] = a.epsilon;
  j["weight_decay"] = a.weight_decay;
  return j;
}

ColorChannel parse_color(const std::string& name) {
  if (name == "red") return ColorChannel::red;
  if (name == "green") return ColorChannel::green;
  if (name == "blue") return ColorChannel::blue;
  throw ConfigError("unknown color '" + name + "' (expected red, green or blue)");
}

std::vector<Transform> parse_transforms(const std::vector<std::string>& names) {
  std::vector<Transform> out;
  for (const auto& n : names) out.push_back(Transform::parse(n));
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name must be non-empty");
  if (task != "digits" && task != "glyphs") throw ConfigError("task must be 'digits' or 'glyphs', got '" + task + "'");
  const auto& d = dataset;
  if (d.source != "synthetic" && d.source != "mnist" && d.source != "manifest")
    throw ConfigError("dataset.source must be 'synthetic', 'mnist' or 'manifest'");
  if (d.source == "mnist" && task != "digits") throw ConfigError("dataset.source 'mnist' needs task 'digits'");
  if (d.source == "mnist" && (d.mnist_images.empty() || d.mnist_labels.empty()))
    throw ConfigError("dataset.mnist_images and dataset.mnist_labels are required for source 'mnist'");
  if (d.source == "manifest" && d.manifest.empty()) throw ConfigError("dataset.manifest is required for source 'manifest'");
  if (d.resolution < 8) throw ConfigError("dataset.resolution must be >= 8");
  if (d.transforms.empty()) throw ConfigError("dataset.transforms must be non-empty");
  for (const auto& t : d.transforms) Transform::parse(t);
  for (const auto& c : d.colors) parse_color(c);
  if (model.preset != "full" && model.preset != "compact") throw ConfigError("model.preset must be 'full' or 'compact'");
  for (const auto& [k, w] : feature_weights)
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss_weights.features." + k + " must be finite and >= 0");
  train.validate();
  if (!(augment.threshold >= 0 && augment.threshold <= 1)) throw ConfigError("augment.threshold must lie in [0,1]");
  if (!(augment.alpha > 0 && augment.alpha < 1)) throw ConfigError("augment.alpha must lie in (0,1)");
  if (augment.identities < 2 || augment.expressions < 1) throw ConfigError("augment needs >= 2 identities and >= 1 expression");
  recognizer_config(*this).validate();
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "");
  c.name = r.optional("name", c.name);
  c.task = r.required<std::string>("task");
  c.output_dir = r.optional("output_dir", c.output_dir);

  if (r.has("dataset")) {
    ObjectReader d(r.raw("dataset"), "dataset");
    auto& ds = c.dataset;
    ds.source = d.optional("source", ds.source);
    ds.seed = d.optional("seed", ds.seed);
    ds.resolution = d.optional("resolution", c.task == "glyphs" ? Index{32} : ds.resolution);
    ds.transforms = d.optional("transforms", ds.transforms);
    ds.identities = d.optional("identities", ds.identities);
    ds.expressions = d.optional("expressions", ds.expressions);
    ds.session = d.optional("session", ds.session);
    ds.identity_offset = d.optional("identity_offset", ds.identity_offset);
    ds.digits = d.optional("digits", ds.digits);
    ds.colors = d.optional("colors", ds.colors);
    ds.variants = d.optional("variants", ds.variants);
    ds.mnist_images = d.optional("mnist_images", ds.mnist_images);
    ds.mnist_labels = d.optional("mnist_labels", ds.mnist_labels);
    ds.per_digit = d.optional("per_digit", ds.per_digit);
    ds.manifest = d.optional("manifest", ds.manifest);
    if (d.has("holdout")) {
      ds.holdout = d.raw("holdout");
      if (!ds.holdout.is_array()) throw ConfigError("dataset.holdout: expected an array");
    }
    d.finish();
  } else if (c.task == "glyphs") {
    c.dataset.resolution = 32;
  }

  if (r.has("model")) {
    ObjectReader m(r.raw("model"), "model");
    c.model.preset = m.optional("preset", c.model.preset);
    if (m.has("generator")) c.model.generator = m.raw("generator");
    if (m.has("classifier")) c.model.classifier = m.raw("classifier");
    m.finish();
  }

  if (r.has("loss_weights")) {
    ObjectReader w(r.raw("loss_weights"), "loss_weights");
    c.train.pixel_weight = w.optional("pixel", c.train.pixel_weight);
    if (w.has("features")) {
      const Json& f = w.raw("features");
      if (!f.is_object()) throw ConfigError("loss_weights.features: expected an object");
      for (auto it = f.begin(); it != f.end(); ++it) {
        if (!it->is_number()) throw ConfigError("bad value for 'loss_weights.features." + it.key() + "': expected a number");
        c.feature_weights[it.key()] = it->get<double>();
      }
    }
    w.finish();
  }

  if (r.has("train")) {
    ObjectReader t(r.raw("train"), "train");
    auto& tc = c.train;
    tc.batch_size = t.optional("batch_size", tc.batch_size);
    tc.total_batches = t.optional("total_batches", tc.total_batches);
    tc.halving_period = t.optional("halving_period", tc.halving_period);
    tc.checkpoint_every = t.optional("checkpoint_every", tc.checkpoint_every);
    tc.seed = t.optional("seed", tc.seed);
    tc.classifier_sees_real = t.optional("classifier_sees_real", tc.classifier_sees_real);
    tc.max_divergent_steps = t.optional("max_divergent_steps", tc.max_divergent_steps);
    if (t.has("generator_adam")) tc.generator_adam = adam_from_json(t.raw("generator_adam"), "train.generator_adam", tc.generator_adam);
    if (t.has("classifier_adam"))
      tc.classifier_adam = adam_from_json(t.raw("classifier_adam"), "train.classifier_adam", tc.classifier_adam);
    t.finish();
  }

  if (r.has("augment")) {
    ObjectReader a(r.raw("augment"), "augment");
    c.augment.identities = a.optional("identities", c.augment.identities);
    c.augment.expressions = a.optional("expressions", c.augment.expressions);
    c.augment.alpha = a.optional("alpha", c.augment.alpha);
    c.augment.threshold = a.optional("threshold", c.augment.threshold);
    a.finish();
  }

  if (r.has("recognizer")) {
    ObjectReader a(r.raw("recognizer"), "recognizer");
    auto& rc = c.recognizer;
    rc.feature = a.optional("feature", rc.feature);
    if (a.has("adam")) rc.adam = adam_from_json(a.raw("adam"), "recognizer.adam", rc.adam);
    rc.batch_size = a.optional("batch_size", rc.batch_size);
    rc.total_batches = a.optional("total_batches", rc.total_batches);
    rc.halving_period = a.optional("halving_period", rc.halving_period);
    rc.seed = a.optional("seed", rc.seed);
    rc.synthesized_includes_original = a.optional("synthesized_includes_original", rc.synthesized_includes_original);
    a.finish();
  }
  r.finish();
  c.validate();
  return c;
}

OrderedJson to_json(const ExperimentConfig& c) {
  OrderedJson j;
  j["name"] = c.name;
  j["task"] = c.task;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  const auto& d = c.dataset;
  OrderedJson ds;
  ds["source"] = d.source;
  ds["seed"] = d.seed;
  ds["resolution"] = d.resolution;
  ds["transforms"] = d.transforms;
  ds["identities"] = d.identities;
  ds["expressions"] = d.expressions;
  ds["session"] = d.session;
  ds["identity_offset"] = d.identity_offset;
  ds["digits"] = d.digits;
  ds["colors"] = d.colors;
  ds["variants"] = d.variants;
  ds["mnist_images"] = d.mnist_images;
  ds["mnist_labels"] = d.mnist_labels;
  ds["per_digit"] = d.per_digit;
  ds["manifest"] = d.manifest;
  ds["holdout"] = OrderedJson::parse(d.holdout.dump());
  j["dataset"] = ds;
  OrderedJson m;
  m["preset"] = c.model.preset;
  if (!c.model.generator.is_null()) m["generator"] = OrderedJson::parse(c.model.generator.dump());
  if (!c.model.classifier.is_null()) m["classifier"] = OrderedJson::parse(c.model.classifier.dump());
  j["model"] = m;
  OrderedJson w;
  w["pixel"] = c.train.pixel_weight;
  w["features"] = OrderedJson::object();
  for (const auto& [k, v] : c.feature_weights) w["features"][k] = v;
  j["loss_weights"] = w;
  const auto& t = c.train;
  OrderedJson tj;
  tj["batch_size"] = t.batch_size;
  tj["total_batches"] = t.total_batches;
  tj["halving_period"] = t.halving_period;
  tj["checkpoint_every"] = t.checkpoint_every;
  tj["seed"] = t.seed;
  tj["classifier_sees_real"] = t.classifier_sees_real;
  tj["max_divergent_steps"] = t.max_divergent_steps;
  tj["generator_adam"] = to_json(t.generator_adam);
  tj["classifier_adam"] = to_json(t.classifier_adam);
  j["train"] = tj;
  OrderedJson a;
  a["identities"] = c.augment.identities;
  a["expressions"] = c.augment.expressions;
  a["alpha"] = c.augment.alpha;
  a["threshold"] = c.augment.threshold;
  j["augment"] = a;
  const auto& rc = c.recognizer;
  OrderedJson rj;
  rj["feature"] = rc.feature;
  rj["adam"] = to_json(rc.adam);
  rj["batch_size"] = rc.batch_size;
  rj["total_batches"] = rc.total_batches;
  rj["halving_period"] = rc.halving_period;
  rj["seed"] = rc.seed;
  rj["synthesized_includes_original"] = rc.synthesized_includes_original;
  j["recognizer"] = rj;
  return j;
}

void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + part + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = Json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Json j;
  try {
    j = Json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse config '" + path + "': " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

std::string resolve_output_dir(const ExperimentConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  const char* root = std::getenv(kOutputRootEnv);
  return (fs::path(root && *root ? root : "runs") / config.name).string();
}

namespace {

FeatureSchema with_weights(FeatureSchema schema, const std::map<std::string, double>& weights) {
  for (const auto& [name, w] : weights) {
    try {
      schema.features[static_cast<std::size_t>(schema.index_of(name))].weight = w;
    } catch (const SchemaError&) {
      throw ConfigError("loss_weights.features names unknown feature '" + name + "'");
    }
  }
  return schema;
}

}  // namespace

FeatureSchema experiment_schema(const ExperimentConfig& c) {
  FeatureSchema schema;
  if (c.dataset.source == "manifest") {
    Json j;
    try {
      j = Json::parse(detail::read_file(c.dataset.manifest));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("cannot parse manifest '" + c.dataset.manifest + "': " + e.what());
    }
    schema = manifest_from_json(j, "manifest").schema;
  } else if (c.task == "glyphs") {
    schema = glyph_schema(c.dataset.identities, c.dataset.expressions);
  } else {
    schema = digit_schema();
  }
  return with_weights(std::move(schema), c.feature_weights);
}

Dataset build_dataset(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  Dataset data;
  if (d.source == "manifest") {
    data = load_dataset(d.manifest);
  } else if (c.task == "glyphs") {
    GlyphOptions o;
    o.identities = d.identities;
    o.expressions = d.expressions;
    o.resolution = d.resolution;
    o.session = d.session;
    o.identity_offset = d.identity_offset;
    o.transforms = parse_transforms(d.transforms);
    data = synth_glyph_dataset(d.seed, o);
  } else {
    DigitOptions o;
    o.resolution = d.resolution;
    o.digits = d.digits;
    o.colors.clear();
    for (const auto& name : d.colors) o.colors.push_back(parse_color(name));
    o.transforms = parse_transforms(d.transforms);
    o.variants = d.variants;
    if (d.source == "mnist") {
      for (const auto& p : {d.mnist_images, d.mnist_labels})
        if (!fs::exists(p)) throw ConfigError("dataset file '" + p + "' does not exist");
      data = mnist_dataset(load_idx(d.mnist_images, d.mnist_labels), d.per_digit, o);
      data.manifest.seed = d.seed;
    } else {
      data = digit_glyph_dataset(d.seed, o);
    }
  }
  data.manifest.schema = with_weights(data.manifest.schema, c.feature_weights);
  return data;
}

std::vector<HoldoutRule> holdout_rules(const ExperimentConfig& c, const FeatureSchema& schema) {
  std::vector<HoldoutRule> out;
  for (std::size_t i = 0; i < c.dataset.holdout.size(); ++i)
    out.push_back(holdout_rule_from_json(c.dataset.holdout[i], "dataset.holdout[" + std::to_string(i) + "]", schema));
  return out;
}

GeneratorSpec generator_spec(const ExperimentConfig& c, const FeatureSchema& schema) {
  if (!c.model.generator.is_null()) return generator_spec_from_json(c.model.generator, "model.generator", schema);
  const Index res = c.dataset.resolution;
  if (c.model.preset == "compact") {
    if (res % 4 != 0) throw ConfigError("compact models need a resolution divisible by 4, got " + std::to_string(res));
    return compact_generator_spec(schema, res);
  }
  if (c.task == "digits" && res == 28) return digit_generator_spec(schema);
  if (c.task == "glyphs" && res == 158) return face_generator_spec(schema);
  throw ConfigError("the full preset needs resolution 28 (digits) or 158 (glyphs), got " + std::to_string(res));
}

ClassifierSpec classifier_spec(const ExperimentConfig& c, const FeatureSchema& schema) {
  if (!c.model.classifier.is_null()) return classifier_spec_from_json(c.model.classifier, "model.classifier", schema);
  const Index res = c.dataset.resolution;
  if (c.model.preset == "compact") {
    if (res % 4 != 0) throw ConfigError("compact models need a resolution divisible by 4, got " + std::to_string(res));
    return compact_classifier_spec(schema, res);
  }
  if (c.task == "digits" && res == 28) return digit_classifier_spec(schema);
  if (c.task == "glyphs" && res == 158) return face_classifier_spec(schema);
  throw ConfigError("the full preset needs resolution 28 (digits) or 158 (glyphs), got " + std::to_string(res));
}

RecognizerConfig recognizer_config(const ExperimentConfig& c) {
  RecognizerConfig rc;
  // the recognizer shares the GCN classifier's structure; a stand-in schema fixes its shape
  FeatureSchema stand_in{{{c.recognizer.feature, 2, 1, {}}}};
  if (c.model.classifier.is_null()) {
    rc.architecture = classifier_spec(c, stand_in);
  } else {
    Json arch = c.model.classifier;
    arch.erase("schema");
    rc.architecture = classifier_spec_from_json(arch, "model.classifier", stand_in);
  }
  rc.feature = c.recognizer.feature;
  rc.adam = c.recognizer.adam;
  rc.batch_size = c.recognizer.batch_size;
  rc.total_batches = c.recognizer.total_batches;
  rc.halving_period = c.recognizer.halving_period;
  rc.seed = c.recognizer.seed;
  rc.synthesized_includes_original = c.recognizer.synthesized_includes_original;
  return rc;
}

}  // namespace gcn
