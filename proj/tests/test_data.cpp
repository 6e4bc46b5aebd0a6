#include "doctest.h"

#include <filesystem>
#include <set>

#include "gcn/checkpoint.hpp"
#include "gcn/dataset.hpp"

using namespace gcn;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "gcn_data_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Tensor<float> grid(std::initializer_list<float> values, Index c, Index h, Index w) {
  return Tensor<float>({c, h, w}, std::vector<float>(values));
}

std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

double l2(const Tensor<float>& a, const Tensor<float>& b) {
  double s = 0;
  for (Index i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("quantize_unit rounds half away from zero and clamps") {
  CHECK(quantize_unit(0.0f) == 0);
  CHECK(quantize_unit(1.0f) == 255);
  CHECK(quantize_unit(-0.3f) == 0);
  CHECK(quantize_unit(1.7f) == 255);
  CHECK(quantize_unit(0.5f) == 128);  // 127.5 rounds up
  CHECK(quantize_unit(1.5f / 255.0f) == 2);
  CHECK_THROWS_AS(quantize_unit(std::nanf("")), ContractError);
}

TEST_CASE("netpbm: every 8-bit level round-trips exactly") {
  Tensor<float> grey({1, 16, 16});
  for (Index i = 0; i < 256; ++i) grey[i] = static_cast<float>(i) / 255.0f;
  const auto bytes = encode_netpbm(grey);
  CHECK(bytes.substr(0, 3) == "P5\n");
  const auto back = decode_netpbm(bytes);
  CHECK(back == grey);
  CHECK(encode_netpbm(back) == bytes);

  Tensor<float> color({3, 2, 3});
  for (Index i = 0; i < color.size(); ++i) color[i] = static_cast<float>(i * 13) / 255.0f;
  const auto path = (temp_dir("pnm") / "c.ppm").string();
  write_netpbm(path, color);
  CHECK(read_netpbm(path) == color);
  CHECK(detail::read_file(path).substr(0, 9) == "P6\n3 2\n25");
}

TEST_CASE("netpbm: header comments are skipped and malformed files rejected") {
  const std::string ok = std::string("P5\n# made by hand\n2 1\n255\n") + '\x00' + '\xff';
  auto img = decode_netpbm(ok);
  CHECK(img.shape() == Shape{1, 1, 2});
  CHECK(img[1] == 1.0f);
  CHECK_THROWS_AS(decode_netpbm("P3\n1 1\n255\n0"), FormatError);
  CHECK_THROWS_AS(decode_netpbm(std::string("P5\n2 2\n255\n") + "abc"), FormatError);
  CHECK_THROWS_AS(decode_netpbm(std::string("P5\n1 1\n65535\n") + "ab"), FormatError);
  CHECK_THROWS_AS(decode_netpbm(std::string("P6\n1 1\n255\n") + "abcd"), FormatError);
  try {
    decode_netpbm(std::string("P5\n4 4\n255\n") + "xy");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 13);
  }
  CHECK_THROWS_AS(encode_netpbm(Tensor<float>({2, 2, 2})), ShapeError);
}

TEST_CASE("idx: hand-built files parse and round-trip") {
  std::string images = be32(0x00000803) + be32(1) + be32(28) + be32(28);
  for (int i = 0; i < 28 * 28; ++i) images.push_back(static_cast<char>(i % 256));
  images[16] = static_cast<char>(255);
  images[17] = 0;
  const std::string labels = be32(0x00000801) + be32(1) + std::string(1, '\x07');

  const auto dir = temp_dir("idx");
  detail::write_file((dir / "img.idx").string(), images);
  detail::write_file((dir / "lbl.idx").string(), labels);
  const auto data = load_idx((dir / "img.idx").string(), (dir / "lbl.idx").string());
  CHECK(data.images.shape() == Shape{1, 1, 28, 28});
  CHECK(data.labels == std::vector<Index>{7});
  CHECK(data.images[0] == 1.0f);
  CHECK(data.images[1] == 0.0f);

  const auto arr = decode_idx(images);
  CHECK(arr.dims == Shape{1, 28, 28});
  CHECK(encode_idx(arr) == images);
  write_idx((dir / "again.idx").string(), arr);
  CHECK(detail::read_file((dir / "again.idx").string()) == images);
}

TEST_CASE("idx: bad magic and truncation carry byte offsets") {
  std::string images = be32(0x00000803) + be32(2) + be32(2) + be32(2) + std::string(8, '\x01');
  CHECK_NOTHROW(decode_idx(images));
  try {
    decode_idx(images.substr(0, images.size() - 1));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == images.size() - 1);
  }
  CHECK_THROWS_AS(decode_idx(be32(0x01000803) + images.substr(4)), FormatError);
  CHECK_THROWS_AS(decode_idx(be32(0x00000d03) + images.substr(4)), FormatError);
  CHECK_THROWS_AS(decode_idx(images.substr(0, 6)), FormatError);
  CHECK_THROWS_AS(decode_idx(images + "x"), FormatError);
}

TEST_CASE("colorize places grey in exactly one channel") {
  auto zero = colorize(Tensor<float>::zeros({1, 3, 3}), ColorChannel::green);
  for (float v : zero.values()) CHECK(v == 0.0f);
  auto grey = Tensor<float>::zeros({1, 2, 2});
  grey[3] = 1.0f;
  auto red = colorize(grey, ColorChannel::red);
  CHECK(red[3] == 1.0f);
  CHECK(red[4 + 3] == 0.0f);
  CHECK(red[8 + 3] == 0.0f);

  RngState rng(4);
  auto g = Tensor<float>::uniform({1, 5, 5}, 0, 1, rng);
  auto sum = colorize(g, ColorChannel::red);
  for (auto c : {ColorChannel::green, ColorChannel::blue}) {
    auto part = colorize(g, c);
    for (Index i = 0; i < sum.size(); ++i) sum[i] += part[i];
  }
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < 25; ++i) CHECK(sum[c * 25 + i] == g[i]);
}

TEST_CASE("apply_transform: hand permutation and group laws") {
  const auto m = grid({1, 2, 3, 4}, 1, 2, 2);
  CHECK(apply_transform(m, Transform{}) == m);
  CHECK(apply_transform(m, Transform{1, false}) == grid({2, 4, 1, 3}, 1, 2, 2));
  CHECK(apply_transform(m, Transform{0, true}) == grid({2, 1, 4, 3}, 1, 2, 2));

  RngState rng(5);
  const auto img = Tensor<float>::uniform({3, 6, 6}, 0, 1, rng);
  auto r = img;
  for (int k = 0; k < 4; ++k) r = apply_transform(r, Transform{1, false});
  CHECK(r == img);
  std::set<std::vector<float>> distinct;
  for (const auto& t : all_transforms()) {
    const auto out = apply_transform(img, t);
    CHECK(invert_transform(out, t) == img);
    distinct.insert(std::vector<float>(out.data(), out.data() + out.size()));
    CHECK(Transform::parse(t.name()) == t);
    CHECK(Transform::from_index(t.index()) == t);
  }
  CHECK(distinct.size() == 8);
  CHECK(all_transforms().front() == Transform{});

  const auto wide = Tensor<float>::zeros({1, 2, 3});
  CHECK_THROWS_AS(apply_transform(wide, Transform{1, false}), GeometryError);
  CHECK_NOTHROW(apply_transform(wide, Transform{2, true}));
}

TEST_CASE("encode_features: one-hot vectors that decode back") {
  const auto schema = glyph_schema(70, 4);
  const std::vector<Index> y{2, 3, 5};
  const auto v = encode_features(y, schema);
  REQUIRE(v.size() == 3);
  CHECK(v[0].shape() == Shape{70});
  CHECK(v[0][2] == 1.0f);
  for (const auto& t : v) {
    float s = 0;
    for (float x : t.values()) {
      CHECK(x >= 0.0f);
      s += x;
    }
    CHECK(s == 1.0f);
  }
  CHECK(decode_features(v, schema) == y);
  CHECK_THROWS_AS(encode_features({70, 0, 0}, schema), LabelError);
  CHECK_THROWS_AS(encode_features({1, 1}, schema), SchemaError);
}

TEST_CASE("synth_glyph_dataset: count, determinism, distinct pairs") {
  GlyphOptions o;
  o.identities = 3;
  o.expressions = 2;
  o.resolution = 16;
  const auto a = synth_glyph_dataset(9, o);
  CHECK(a.size() == 3 * 2 * 8);
  const auto b = synth_glyph_dataset(9, o);
  CHECK(dataset_checksum(a) == dataset_checksum(b));
  for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(encode_netpbm(a.samples[i].image) == encode_netpbm(b.samples[i].image));
  CHECK(dataset_checksum(synth_glyph_dataset(10, o)) != dataset_checksum(a));

  for (const auto& s : a.samples) {
    check_labels(s.labels, a.manifest.schema);
    for (float v : s.image.values()) REQUIRE((v >= 0.0f && v <= 1.0f));
  }

  GlyphOptions canon = o;
  canon.identities = 4;
  canon.expressions = 5;
  canon.transforms = {Transform{}};
  const auto c = synth_glyph_dataset(9, canon);
  for (std::size_t i = 0; i < c.samples.size(); ++i)
    for (std::size_t j = i + 1; j < c.samples.size(); ++j) CHECK(l2(c.samples[i].image, c.samples[j].image) > 0);

  GlyphOptions other = canon;
  other.session = 1;
  const auto d = synth_glyph_dataset(9, other);
  CHECK(dataset_checksum(d) != dataset_checksum(c));
  CHECK_THROWS_AS(synth_glyph_dataset(1, GlyphOptions{1, 4}), ConfigError);
}

TEST_CASE("digit datasets: labels, colors and MNIST subsetting") {
  DigitOptions o;
  o.transforms = {Transform{}};
  const auto d = digit_glyph_dataset(3, o);
  CHECK(d.size() == 30);
  for (const auto& s : d.samples) {
    CHECK(s.image.shape() == Shape{3, 28, 28});
    const Index c = s.labels[1];
    for (Index ch = 0; ch < 3; ++ch) {
      double mass = 0;
      for (Index i = 0; i < 28 * 28; ++i) mass += s.image[ch * 28 * 28 + i];
      CHECK((ch == c) == (mass > 0));
    }
  }

  IdxDataset src{Tensor<float>({25, 1, 4, 4}), {}};
  for (Index i = 0; i < 25; ++i) {
    src.labels.push_back(i % 5);
    for (Index p = 0; p < 16; ++p) src.images[i * 16 + p] = static_cast<float>(i) / 25.0f;
  }
  DigitOptions mo;
  mo.digits = {0, 1, 2, 3, 4};
  mo.colors = {ColorChannel::blue};
  mo.transforms = {Transform{}, Transform{2, false}};
  const auto m = mnist_dataset(src, 2, mo);
  CHECK(m.size() == 5 * 2 * 2);
  std::set<std::string> sources;
  for (const auto& s : m.samples) sources.insert(s.source.substr(0, s.source.find("/blue")));
  CHECK(sources == std::set<std::string>{"mnist/0", "mnist/1", "mnist/2", "mnist/3", "mnist/4", "mnist/5", "mnist/6",
                                         "mnist/7", "mnist/8", "mnist/9"});
}

TEST_CASE("holdout_split: set semantics") {
  DigitOptions o;
  o.transforms = {Transform{}, Transform{2, false}};
  const auto d = digit_glyph_dataset(3, o);

  auto [all, none] = holdout_split(d, {});
  CHECK(all.size() == d.size());
  CHECK(none.size() == 0);

  HoldoutRule red_two{{{0, 2}, {1, 0}}};
  auto [train, held] = holdout_split(d, {red_two});
  CHECK(held.size() == 2);
  CHECK(train.size() + held.size() == d.size());
  for (const auto& s : held.samples) CHECK(red_two.matches(s.labels));
  for (const auto& s : train.samples) CHECK_FALSE(red_two.matches(s.labels));

  // every color of a rotated seven
  std::vector<HoldoutRule> sevens;
  for (Index c = 0; c < 3; ++c) sevens.push_back({{{0, 7}, {1, c}, {2, 2}}});
  auto [t2, h2] = holdout_split(d, sevens);
  CHECK(h2.size() == 3);
  for (const auto& s : t2.samples) CHECK_FALSE((s.labels[0] == 7 && s.labels[2] == 2));

  CHECK_THROWS_AS(holdout_split(d, {HoldoutRule{{{0, 10}}}}), ConfigError);
  std::vector<HoldoutRule> everything;
  for (Index k = 0; k < 10; ++k) everything.push_back({{{0, k}}});
  CHECK_THROWS_AS(holdout_split(d, everything), ConfigError);
}

TEST_CASE("manifest: JSON round trip, named rules and image files") {
  GlyphOptions o;
  o.identities = 2;
  o.expressions = 2;
  o.resolution = 12;
  o.transforms = {Transform{}, Transform{1, true}};
  auto data = synth_glyph_dataset(4, o);
  const auto schema = data.manifest.schema;
  data.manifest.holdout.push_back(holdout_rule_from_json(Json{{"identity", 1}, {"expression", "happy"}}, "rule", schema));
  CHECK(data.manifest.holdout[0].conditions == std::vector<std::pair<Index, Index>>{{0, 1}, {1, 1}});
  CHECK_THROWS_AS(holdout_rule_from_json(Json{{"expression", "bored"}}, "rule", schema), ConfigError);
  CHECK_THROWS_AS(holdout_rule_from_json(Json{{"mood", 1}}, "rule", schema), ConfigError);

  const auto dir = temp_dir("manifest");
  save_dataset(dir.string(), data);
  const auto back = load_dataset((dir / "manifest.json").string());
  CHECK(back.size() == data.size());
  CHECK(dataset_checksum(back) != 0);
  for (std::size_t i = 0; i < back.samples.size(); ++i) {
    CHECK(back.samples[i].labels == data.samples[i].labels);
    CHECK(encode_netpbm(back.samples[i].image) == encode_netpbm(data.samples[i].image));
  }
  CHECK(to_json(back.manifest).dump() == to_json(data.manifest).dump());

  Json bad = to_json(data.manifest);
  bad["extra"] = 1;
  CHECK_THROWS_AS(manifest_from_json(bad, "manifest"), ConfigError);
  bad = to_json(data.manifest);
  bad["samples"][0]["labels"] = {0, 5, 0};
  CHECK_THROWS_AS(manifest_from_json(bad, "manifest"), ConfigError);
}
