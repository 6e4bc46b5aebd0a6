#include "gcn/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "gcn/checkpoint.hpp"

namespace gcn {

namespace fs = std::filesystem;

Transform Transform::from_index(Index i) {
  if (i < 0 || i > 7) throw LabelError("transform index " + std::to_string(i) + " outside [0,8)");
  return Transform{static_cast<int>(i % 4), i >= 4};
}

std::string Transform::name() const { return "rot" + std::to_string(90 * quarter_turns) + (mirror ? "_mirror" : ""); }

Transform Transform::parse(const std::string& name) {
  for (const auto& t : all_transforms())
    if (t.name() == name) return t;
  throw ConfigError("unknown transform '" + name + "'");
}

std::vector<Transform> all_transforms() {
  std::vector<Transform> out;
  for (Index i = 0; i < 8; ++i) out.push_back(Transform::from_index(i));
  return out;
}

std::vector<std::string> transform_names() {
  std::vector<std::string> out;
  for (const auto& t : all_transforms()) out.push_back(t.name());
  return out;
}

Tensor<float> colorize(const Tensor<float>& grey, ColorChannel channel) {
  if (grey.rank() != 3 || grey.dim(0) != 1) throw ShapeError("colorize: expected [1,H,W], got " + shape_string(grey.shape()));
  const Index plane = grey.dim(1) * grey.dim(2);
  auto out = Tensor<float>::zeros({3, grey.dim(1), grey.dim(2)});
  std::copy(grey.data(), grey.data() + plane, out.data() + static_cast<Index>(channel) * plane);
  return out;
}

namespace {

Tensor<float> rotate_ccw(const Tensor<float>& in) {
  const Index c = in.dim(0), n = in.dim(1);
  Tensor<float> out(in.shape());
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) out[(ch * n + i) * n + j] = in[(ch * n + j) * n + (n - 1 - i)];
  return out;
}

Tensor<float> flip_horizontal(const Tensor<float>& in) {
  const Index c = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor<float> out(in.shape());
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) out[(ch * h + i) * w + j] = in[(ch * h + i) * w + (w - 1 - j)];
  return out;
}

void check_image(const Tensor<float>& image, Transform t) {
  if (image.rank() != 3) throw ShapeError("transform: expected [C,H,W], got " + shape_string(image.shape()));
  if (t.quarter_turns % 2 == 1 && image.dim(1) != image.dim(2))
    throw GeometryError("transform: quarter turns need a square image, got " + shape_string(image.shape()));
}

}  // namespace

Tensor<float> apply_transform(const Tensor<float>& image, Transform t) {
  check_image(image, t);
  Tensor<float> out = image;
  for (int k = 0; k < t.quarter_turns; ++k) out = rotate_ccw(out);
  return t.mirror ? flip_horizontal(out) : out;
}

Tensor<float> invert_transform(const Tensor<float>& image, Transform t) {
  check_image(image, t);
  Tensor<float> out = t.mirror ? flip_horizontal(image) : image;
  for (int k = 0; k < (4 - t.quarter_turns) % 4; ++k) out = rotate_ccw(out);
  return out;
}

void check_labels(const std::vector<Index>& labels, const FeatureSchema& schema) {
  if (static_cast<Index>(labels.size()) != schema.size())
    throw SchemaError("expected " + std::to_string(schema.size()) + " labels, got " + std::to_string(labels.size()));
  for (Index f = 0; f < schema.size(); ++f) {
    const Index y = labels[static_cast<std::size_t>(f)];
    if (y < 0 || y >= schema[f].cardinality)
      throw LabelError("label " + std::to_string(y) + " outside [0," + std::to_string(schema[f].cardinality) +
                       ") for feature '" + schema[f].name + "'");
  }
}

std::vector<Tensor<float>> encode_features(const std::vector<Index>& labels, const FeatureSchema& schema) {
  check_labels(labels, schema);
  std::vector<Tensor<float>> out;
  for (Index f = 0; f < schema.size(); ++f) {
    auto v = Tensor<float>::zeros({schema[f].cardinality});
    v[labels[static_cast<std::size_t>(f)]] = 1.0f;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<Index> decode_features(const std::vector<Tensor<float>>& vectors, const FeatureSchema& schema) {
  if (static_cast<Index>(vectors.size()) != schema.size()) throw SchemaError("decode_features: feature count mismatch");
  std::vector<Index> out;
  for (Index f = 0; f < schema.size(); ++f) {
    const auto& v = vectors[static_cast<std::size_t>(f)];
    if (v.size() != schema[f].cardinality) throw SchemaError("decode_features: width mismatch for '" + schema[f].name + "'");
    out.push_back(std::max_element(v.data(), v.data() + v.size()) - v.data());
  }
  return out;
}

bool HoldoutRule::matches(const std::vector<Index>& labels) const {
  for (const auto& [f, y] : conditions)
    if (labels.at(static_cast<std::size_t>(f)) != y) return false;
  return true;
}

void Dataset::sync_records() {
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::string file = i < manifest.records.size() ? manifest.records[i].file : "";
    records.push_back({samples[i].source, samples[i].labels, std::move(file)});
  }
  manifest.records = std::move(records);
}

// ---- glyph faces ----

namespace {

struct Face {
  double cx, cy, rx, ry, exponent;
  std::array<double, 3> skin;
  double eye_dx, eye_y, eye_r, mouth_y, mouth_w;
};

struct Mood {
  double curve, open, brow_tilt, brow_raise, eye_scale;
};

Face face_for(std::uint64_t seed, Index identity) {
  RngState r(mix_seed(mix_seed(seed, 0x6964), static_cast<std::uint64_t>(identity)));
  Face f{};
  f.cx = r.uniform(-0.06, 0.06);
  f.cy = r.uniform(-0.04, 0.06);
  f.rx = r.uniform(0.55, 0.82);
  f.ry = r.uniform(0.66, 0.88);
  f.exponent = r.uniform(1.8, 3.6);
  for (auto& c : f.skin) c = r.uniform(0.3, 1.0);
  f.eye_dx = r.uniform(0.2, 0.36) * f.rx / 0.7;
  f.eye_y = r.uniform(-0.32, -0.14);
  f.eye_r = r.uniform(0.07, 0.12);
  f.mouth_y = r.uniform(0.28, 0.44);
  f.mouth_w = r.uniform(0.22, 0.38);
  return f;
}

Mood mood_for(std::uint64_t seed, Index expression) {
  static const Mood table[] = {
      {0.0, 0.0, 0.0, 0.0, 1.0},     // neutral
      {0.9, 0.25, 0.0, 0.05, 0.9},   // happy
      {-0.8, 0.0, 0.55, 0.0, 1.0},   // sad
      {0.0, 1.0, 0.0, 0.7, 1.35},    // surprised
      {-0.3, 0.15, -0.7, -0.2, 0.85},  // angry
  };
  if (expression < 5) return table[expression];
  RngState r(mix_seed(mix_seed(seed, 0x6578), static_cast<std::uint64_t>(expression)));
  return {r.uniform(-1, 1), r.uniform(0, 1), r.uniform(-0.7, 0.7), r.uniform(-0.2, 0.7), r.uniform(0.8, 1.3)};
}

double coverage(double distance, double aa) { return std::clamp(0.5 - distance / aa, 0.0, 1.0); }

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(px - ax - t * vx, py - ay - t * vy);
}

}  // namespace

std::vector<std::string> expression_names(Index expressions) {
  static const char* base[] = {"neutral", "happy", "sad", "surprised", "angry"};
  std::vector<std::string> out;
  for (Index e = 0; e < expressions; ++e) out.push_back(e < 5 ? base[e] : "expression" + std::to_string(e));
  return out;
}

FeatureSchema glyph_schema(Index identities, Index expressions) {
  FeatureSchema s{{{"identity", identities, 10, {}},
                   {"expression", expressions, 10, expression_names(expressions)},
                   {"transform", 8, 10, transform_names()}}};
  s.validate();
  return s;
}

Tensor<float> render_glyph(std::uint64_t seed, Index identity, Index expression, Index expressions, Index resolution,
                           Index session) {
  if (expression < 0 || expression >= expressions) throw LabelError("render_glyph: expression out of range");
  if (resolution < 8) throw GeometryError("render_glyph: resolution must be >= 8");
  Face f = face_for(seed, identity);
  Mood m = mood_for(seed, expression);
  double brightness = 1.0;
  if (session > 0) {
    RngState r(mix_seed(mix_seed(mix_seed(seed, 0x7365), static_cast<std::uint64_t>(session)),
                        static_cast<std::uint64_t>(identity * 1009 + expression)));
    f.cx += r.uniform(-0.05, 0.05);
    f.cy += r.uniform(-0.05, 0.05);
    brightness = r.uniform(0.88, 1.05);
    const double intensity = r.uniform(0.85, 1.15);
    m.curve *= intensity;
    m.open *= intensity;
    m.brow_tilt *= intensity;
  }
  const Index n = resolution;
  const double aa = 2.0 / static_cast<double>(n);
  Tensor<float> img = Tensor<float>::zeros({3, n, n});
  const double brow_half = 0.13, brow_thick = 0.03;
  const double mouth_thick = 0.035 + 0.075 * m.open;
  for (Index y = 0; y < n; ++y) {
    const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
    for (Index x = 0; x < n; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
      const double u = (px - f.cx) / f.rx, v = (py - f.cy) / f.ry;
      const double shape = std::pow(std::pow(std::abs(u), f.exponent) + std::pow(std::abs(v), f.exponent), 1.0 / f.exponent);
      const double face = coverage((shape - 1.0) * std::min(f.rx, f.ry), aa);
      if (face <= 0) continue;

      double ink = 0;
      for (int side : {-1, 1}) {
        const double ex = f.cx + side * f.eye_dx, ey = f.cy + f.eye_y;
        ink = std::max(ink, coverage(std::hypot(px - ex, py - ey) - f.eye_r * m.eye_scale, aa));
        // brows: tilt lowers the inner ends (angry) or raises them (sad)
        const double by = ey - f.eye_r * m.eye_scale - 0.1 - 0.08 * m.brow_raise;
        const double inner_x = ex - side * brow_half, outer_x = ex + side * brow_half;
        const double d = segment_distance(px, py, inner_x, by - 0.07 * m.brow_tilt, outer_x, by + 0.07 * m.brow_tilt);
        ink = std::max(ink, coverage(d - brow_thick, aa));
      }
      const double mx = px - f.cx;
      const double clamped = std::clamp(mx, -f.mouth_w, f.mouth_w);
      const double t = clamped / f.mouth_w;
      const double curve_y = f.cy + f.mouth_y + 0.18 * m.curve * (1.0 - t * t) - 0.09 * m.curve;
      const double mouth_d = std::hypot(mx - clamped, py - curve_y) - mouth_thick;
      ink = std::max(ink, coverage(mouth_d, aa));

      for (Index c = 0; c < 3; ++c) {
        const double skin = f.skin[static_cast<std::size_t>(c)] * brightness;
        const double value = face * (skin * (1.0 - ink) + 0.12 * skin * ink);
        img[(c * n + y) * n + x] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return img;
}

Dataset synth_glyph_dataset(std::uint64_t seed, const GlyphOptions& o) {
  if (o.identities < 2 || o.expressions < 2) throw ConfigError("glyph dataset needs >= 2 identities and >= 2 expressions");
  if (o.identity_offset < 0 || o.session < 0) throw ConfigError("glyph dataset: offsets must be >= 0");
  if (o.transforms.empty()) throw ConfigError("glyph dataset: no transforms selected");
  Dataset out;
  out.manifest.kind = "glyphs";
  out.manifest.schema = glyph_schema(o.identities, o.expressions);
  out.manifest.seed = seed;
  Json transforms = Json::array();
  for (const auto& t : o.transforms) transforms.push_back(t.name());
  out.manifest.params = {{"identities", o.identities}, {"expressions", o.expressions}, {"resolution", o.resolution},
                         {"session", o.session}, {"identity_offset", o.identity_offset}, {"transforms", transforms}};
  const auto names = expression_names(o.expressions);
  for (Index id = 0; id < o.identities; ++id)
    for (Index e = 0; e < o.expressions; ++e) {
      const auto base = render_glyph(seed, id + o.identity_offset, e, o.expressions, o.resolution, o.session);
      for (const auto& t : o.transforms)
        out.samples.push_back({apply_transform(base, t), {id, e, t.index()},
                               "glyph/s" + std::to_string(o.session) + "/id" + std::to_string(id + o.identity_offset) +
                                   "/" + names[static_cast<std::size_t>(e)] + "/" + t.name()});
    }
  out.sync_records();
  return out;
}

// ---- digits ----

FeatureSchema digit_schema() {
  FeatureSchema s{{{"digit", 10, 10, {}},
                   {"color", 3, 10, {"red", "green", "blue"}},
                   {"transform", 8, 10, transform_names()}}};
  s.validate();
  return s;
}

Tensor<float> render_digit(Index digit, Index resolution, RngState* jitter) {
  if (digit < 0 || digit > 9) throw LabelError("render_digit: digit must lie in [0,9]");
  if (resolution < 8) throw GeometryError("render_digit: resolution must be >= 8");
  // segments a..g of a seven-segment display
  static const char* lit[] = {"abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"};
  static const std::array<std::array<double, 4>, 7> seg = {{{-1, -1, 1, -1},
                                                            {1, -1, 1, 0},
                                                            {1, 0, 1, 1},
                                                            {-1, 1, 1, 1},
                                                            {-1, 0, -1, 1},
                                                            {-1, -1, -1, 0},
                                                            {-1, 0, 1, 0}}};
  double sx = 0.34, sy = 0.56, ox = 0, oy = 0, slant = 0, thick = 0.085;
  if (jitter) {
    sx *= jitter->uniform(0.85, 1.1);
    sy *= jitter->uniform(0.85, 1.1);
    ox = jitter->uniform(-0.08, 0.08);
    oy = jitter->uniform(-0.08, 0.08);
    slant = jitter->uniform(-0.15, 0.15);
    thick *= jitter->uniform(0.8, 1.25);
  }
  const Index n = resolution;
  const double aa = 2.0 / static_cast<double>(n);
  Tensor<float> img = Tensor<float>::zeros({1, n, n});
  for (Index y = 0; y < n; ++y) {
    const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
    for (Index x = 0; x < n; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
      double ink = 0;
      for (const char* s = lit[digit]; *s; ++s) {
        const auto& q = seg[static_cast<std::size_t>(*s - 'a')];
        const double ax = ox + sx * q[0] - slant * sy * q[1], ay = oy + sy * q[1];
        const double bx = ox + sx * q[2] - slant * sy * q[3], by = oy + sy * q[3];
        ink = std::max(ink, coverage(segment_distance(px, py, ax, ay, bx, by) - thick, aa));
      }
      img[y * n + x] = static_cast<float>(ink);
    }
  }
  return img;
}

namespace {

void add_colored(Dataset& out, const Tensor<float>& grey, Index digit, const DigitOptions& o, const std::string& source) {
  const auto& color_names = out.manifest.schema[1].labels;
  for (auto c : o.colors) {
    const auto colored = colorize(grey, c);
    for (const auto& t : o.transforms)
      out.samples.push_back({apply_transform(colored, t), {digit, static_cast<Index>(c), t.index()},
                             source + "/" + color_names[static_cast<std::size_t>(c)] + "/" + t.name()});
  }
}

Json digit_params(const DigitOptions& o) {
  Json colors = Json::array(), transforms = Json::array(), names = {"red", "green", "blue"};
  for (auto c : o.colors) colors.push_back(names[static_cast<std::size_t>(c)]);
  for (const auto& t : o.transforms) transforms.push_back(t.name());
  return {{"resolution", o.resolution}, {"digits", o.digits}, {"colors", colors},
          {"transforms", transforms},   {"variants", o.variants}};
}

void check_digit_options(const DigitOptions& o) {
  if (o.digits.empty() || o.colors.empty() || o.transforms.empty())
    throw ConfigError("digit dataset: digits, colors and transforms must be non-empty");
  for (Index d : o.digits)
    if (d < 0 || d > 9) throw ConfigError("digit dataset: digit " + std::to_string(d) + " outside [0,9]");
  if (o.variants < 1) throw ConfigError("digit dataset: variants must be >= 1");
}

}  // namespace

Dataset digit_glyph_dataset(std::uint64_t seed, const DigitOptions& o) {
  check_digit_options(o);
  Dataset out;
  out.manifest.kind = "digits";
  out.manifest.schema = digit_schema();
  out.manifest.seed = seed;
  out.manifest.params = digit_params(o);
  for (Index d : o.digits)
    for (Index k = 0; k < o.variants; ++k) {
      RngState jitter(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(d)), static_cast<std::uint64_t>(k)));
      const auto grey = render_digit(d, o.resolution, k == 0 ? nullptr : &jitter);
      add_colored(out, grey, d, o, "digit/" + std::to_string(d) + "/v" + std::to_string(k));
    }
  out.sync_records();
  return out;
}

Dataset mnist_dataset(const IdxDataset& source, Index per_digit, const DigitOptions& o) {
  check_digit_options(o);
  if (per_digit < 1) throw ConfigError("mnist: per_digit must be >= 1");
  const Index n = source.images.dim(0), h = source.images.dim(2), w = source.images.dim(3);
  Dataset out;
  out.manifest.kind = "mnist";
  out.manifest.schema = digit_schema();
  out.manifest.params = digit_params(o);
  out.manifest.params["per_digit"] = per_digit;
  out.manifest.params["resolution"] = h;
  std::array<Index, 10> taken{};
  for (Index i = 0; i < n; ++i) {
    const Index d = source.labels[static_cast<std::size_t>(i)];
    if (d < 0 || d > 9) throw LabelError("mnist: label " + std::to_string(d) + " at index " + std::to_string(i));
    if (std::find(o.digits.begin(), o.digits.end(), d) == o.digits.end() || taken[static_cast<std::size_t>(d)] >= per_digit)
      continue;
    ++taken[static_cast<std::size_t>(d)];
    Tensor<float> grey({1, h, w});
    std::copy(source.images.data() + i * h * w, source.images.data() + (i + 1) * h * w, grey.data());
    add_colored(out, grey, d, o, "mnist/" + std::to_string(i));
  }
  out.sync_records();
  return out;
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& data, const std::vector<HoldoutRule>& rules) {
  const auto& schema = data.manifest.schema;
  for (const auto& rule : rules)
    for (const auto& [f, y] : rule.conditions)
      if (f < 0 || f >= schema.size() || y < 0 || y >= schema[f].cardinality)
        throw ConfigError("holdout rule references an invalid feature or class");
  Dataset train, held;
  train.manifest = held.manifest = data.manifest;
  train.manifest.records.clear();
  held.manifest.records.clear();
  train.manifest.holdout = held.manifest.holdout = rules;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const bool out = std::any_of(rules.begin(), rules.end(), [&](const HoldoutRule& r) { return r.matches(data.samples[i].labels); });
    auto& dst = out ? held : train;
    dst.samples.push_back(data.samples[i]);
    if (i < data.manifest.records.size()) dst.manifest.records.push_back(data.manifest.records[i]);
  }
  if (train.samples.empty()) throw ConfigError("holdout rules leave the training set empty");
  train.sync_records();
  held.sync_records();
  return {std::move(train), std::move(held)};
}

Tensor<float> stack_images(const std::vector<Sample>& samples, std::span<const std::size_t> order) {
  if (order.empty()) throw ShapeError("stack_images: empty batch");
  const Shape& s = samples.at(order[0]).image.shape();
  Shape batch{static_cast<Index>(order.size())};
  batch.insert(batch.end(), s.begin(), s.end());
  Tensor<float> out(batch);
  const Index per = samples[order[0]].image.size();
  for (std::size_t b = 0; b < order.size(); ++b) {
    const auto& img = samples.at(order[b]).image;
    if (img.shape() != s) throw ShapeError("stack_images: mixed image shapes");
    std::copy(img.data(), img.data() + per, out.data() + static_cast<Index>(b) * per);
  }
  return out;
}

std::uint64_t dataset_checksum(const Dataset& data) {
  std::uint64_t h = fnv1a64("gcn-dataset");
  for (const auto& s : data.samples) {
    for (Index y : s.labels) h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&y), sizeof y), h);
    for (Index d : s.image.shape()) h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&d), sizeof d), h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(s.image.data()),
                                 static_cast<std::size_t>(s.image.size()) * sizeof(float)),
                h);
  }
  return h;
}

// ---- JSON ----

OrderedJson to_json(const HoldoutRule& rule, const FeatureSchema& schema) {
  OrderedJson j = OrderedJson::object();
  for (const auto& [f, y] : rule.conditions) {
    const auto& feat = schema[f];
    if (!feat.labels.empty())
      j[feat.name] = feat.labels[static_cast<std::size_t>(y)];
    else
      j[feat.name] = y;
  }
  return j;
}

HoldoutRule holdout_rule_from_json(const Json& j, const std::string& path, const FeatureSchema& schema) {
  if (!j.is_object() || j.empty()) throw ConfigError(path + ": a holdout rule is a non-empty object");
  HoldoutRule rule;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = path + "." + it.key();
    try {
      const Index f = schema.index_of(it.key());
      std::string value;
      if (it->is_number_integer())
        value = std::to_string(it->get<Index>());
      else if (it->is_string())
        value = it->get<std::string>();
      else
        throw ConfigError("bad value for '" + key + "': expected a class name or index");
      rule.conditions.emplace_back(f, schema.class_index(f, value));
    } catch (const SchemaError& e) {
      throw ConfigError("bad holdout rule at '" + key + "': " + e.what());
    }
  }
  std::sort(rule.conditions.begin(), rule.conditions.end());
  return rule;
}

OrderedJson to_json(const DatasetManifest& m) {
  OrderedJson j;
  j["kind"] = m.kind;
  j["seed"] = m.seed;
  j["params"] = OrderedJson::parse(m.params.dump());
  j["schema"] = to_json(m.schema);
  j["holdout"] = OrderedJson::array();
  for (const auto& r : m.holdout) j["holdout"].push_back(to_json(r, m.schema));
  j["samples"] = OrderedJson::array();
  for (const auto& r : m.records) {
    OrderedJson s;
    s["source"] = r.source;
    s["labels"] = r.labels;
    if (!r.file.empty()) s["file"] = r.file;
    j["samples"].push_back(std::move(s));
  }
  return j;
}

DatasetManifest manifest_from_json(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  DatasetManifest m;
  m.kind = r.required<std::string>("kind");
  m.seed = r.optional<std::uint64_t>("seed", 0);
  m.params = r.optional<Json>("params", Json::object());
  m.schema = schema_from_json(r.raw("schema"), r.path("schema"));
  if (r.has("holdout")) {
    const Json& rules = r.raw("holdout");
    if (!rules.is_array()) throw ConfigError(r.path("holdout") + ": expected an array");
    for (std::size_t i = 0; i < rules.size(); ++i)
      m.holdout.push_back(holdout_rule_from_json(rules[i], r.path("holdout") + "[" + std::to_string(i) + "]", m.schema));
  }
  const Json& samples = r.raw("samples");
  if (!samples.is_array()) throw ConfigError(r.path("samples") + ": expected an array");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ObjectReader s(samples[i], r.path("samples") + "[" + std::to_string(i) + "]");
    SampleRecord rec;
    rec.source = s.optional<std::string>("source", "");
    rec.labels = s.required<std::vector<Index>>("labels");
    rec.file = s.optional<std::string>("file", "");
    s.finish();
    try {
      check_labels(rec.labels, m.schema);
    } catch (const Error& e) {
      throw ConfigError(s.path("labels") + ": " + e.what());
    }
    m.records.push_back(std::move(rec));
  }
  r.finish();
  return m;
}

void save_dataset(const std::string& dir, Dataset& data) {
  data.sync_records();
  fs::create_directories(dir);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    auto& rec = data.manifest.records[i];
    if (rec.file.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "images/%06zu.%s", i, data.samples[i].image.dim(0) == 1 ? "pgm" : "ppm");
      rec.file = name;
    }
    const fs::path target = fs::path(dir) / rec.file;
    fs::create_directories(target.parent_path());
    write_netpbm(target.string(), data.samples[i].image);
  }
  detail::write_file((fs::path(dir) / "manifest.json").string(), to_json(data.manifest).dump(2) + "\n");
}

Dataset load_dataset(const std::string& manifest_path) {
  Json j;
  try {
    j = Json::parse(detail::read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse manifest '" + manifest_path + "': " + e.what());
  }
  Dataset data;
  data.manifest = manifest_from_json(j, "manifest");
  const fs::path root = fs::path(manifest_path).parent_path();
  for (const auto& rec : data.manifest.records) {
    if (rec.file.empty()) throw ConfigError("manifest '" + manifest_path + "' lists a sample without a file");
    data.samples.push_back({read_netpbm((root / rec.file).string()), rec.labels, rec.source});
  }
  return data;
}

}  // namespace gcn
