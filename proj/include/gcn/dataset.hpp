#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcn/image_io.hpp"
#include "gcn/model_spec.hpp"
#include "gcn/rng.hpp"

namespace gcn {

struct Sample {
  /// [C,H,W] in [0,1].
  Tensor<float> image;
  /// One class index per schema feature.
  std::vector<Index> labels;
  std::string source;
};

enum class ColorChannel { red = 0, green = 1, blue = 2 };

/// Counter-clockwise quarter turns, then an optional horizontal flip.
struct Transform {
  int quarter_turns = 0;
  bool mirror = false;

  /// 0..7: quarter_turns + 4 * mirror.
  Index index() const { return quarter_turns + (mirror ? 4 : 0); }
  static Transform from_index(Index i);
  std::string name() const;
  static Transform parse(const std::string& name);
  bool operator==(const Transform&) const = default;
};

/// The eight transform states, identity first.
std::vector<Transform> all_transforms();
std::vector<std::string> transform_names();

Tensor<float> colorize(const Tensor<float>& grey, ColorChannel channel);
/// Exact pixel permutation of a [C,H,W] image. Quarter turns require H == W.
Tensor<float> apply_transform(const Tensor<float>& image, Transform t);
Tensor<float> invert_transform(const Tensor<float>& image, Transform t);

std::vector<Tensor<float>> encode_features(const std::vector<Index>& labels, const FeatureSchema& schema);
/// Argmax of each vector.
std::vector<Index> decode_features(const std::vector<Tensor<float>>& vectors, const FeatureSchema& schema);
void check_labels(const std::vector<Index>& labels, const FeatureSchema& schema);

/// Matches a sample when every listed (feature, class) condition holds.
struct HoldoutRule {
  std::vector<std::pair<Index, Index>> conditions;
  bool matches(const std::vector<Index>& labels) const;
};

struct SampleRecord {
  std::string source;
  std::vector<Index> labels;
  /// Image path relative to the manifest; empty for in-memory datasets.
  std::string file;
};

struct DatasetManifest {
  /// "glyphs", "digits", "mnist" or "synthesized".
  std::string kind;
  FeatureSchema schema;
  std::uint64_t seed = 0;
  /// Generation parameters echoed for provenance.
  Json params = Json::object();
  std::vector<HoldoutRule> holdout;
  std::vector<SampleRecord> records;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;

  Index size() const { return static_cast<Index>(samples.size()); }
  /// Rebuilds manifest.records from samples.
  void sync_records();
};

// Glyph renderers. Identity picks shape, proportions and tint; expression bends
// mouth and brows; session adds small per-image jitter (session 0 has none).
struct GlyphOptions {
  Index identities = 10;
  Index expressions = 4;
  Index resolution = 32;
  Index session = 0;
  /// Identities are numbered from this offset, so disjoint people can be drawn.
  Index identity_offset = 0;
  std::vector<Transform> transforms = all_transforms();
};

FeatureSchema glyph_schema(Index identities, Index expressions);
std::vector<std::string> expression_names(Index expressions);
Tensor<float> render_glyph(std::uint64_t seed, Index identity, Index expression, Index expressions, Index resolution,
                           Index session = 0);
/// identities x expressions x transforms samples, labels (identity, expression, transform).
Dataset synth_glyph_dataset(std::uint64_t seed, const GlyphOptions& options);

struct DigitOptions {
  Index resolution = 28;
  std::vector<Index> digits{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<ColorChannel> colors{ColorChannel::red, ColorChannel::green, ColorChannel::blue};
  std::vector<Transform> transforms = all_transforms();
  /// Extra jittered renderings per digit; 1 gives the clean glyph only.
  Index variants = 1;
};

FeatureSchema digit_schema();
/// Grey seven-segment style digit, [1,R,R].
Tensor<float> render_digit(Index digit, Index resolution, RngState* jitter = nullptr);
/// digit x color x transform samples, labels (digit, color, transform).
Dataset digit_glyph_dataset(std::uint64_t seed, const DigitOptions& options);
/// First `per_digit` images of each digit in file order, colorized and transformed.
Dataset mnist_dataset(const IdxDataset& source, Index per_digit, const DigitOptions& options);

/// Splits by rules; a sample matching any rule goes to the holdout side.
std::pair<Dataset, Dataset> holdout_split(const Dataset& data, const std::vector<HoldoutRule>& rules);

/// [B,C,H,W] batch of the given samples.
Tensor<float> stack_images(const std::vector<Sample>& samples, std::span<const std::size_t> order);
std::uint64_t dataset_checksum(const Dataset& data);

OrderedJson to_json(const HoldoutRule& rule, const FeatureSchema& schema);
/// Keys are feature names, values class names or indices.
HoldoutRule holdout_rule_from_json(const Json& j, const std::string& path, const FeatureSchema& schema);
OrderedJson to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const Json& j, const std::string& path);

/// Writes manifest.json plus one PGM/PPM per sample under `dir`.
void save_dataset(const std::string& dir, Dataset& data);
/// Reads manifest.json and the images it lists.
Dataset load_dataset(const std::string& manifest_path);

}  // namespace gcn
